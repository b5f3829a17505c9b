use crate::analytics;
use crate::error::{Error, Result};
use crate::error_models::ScalarKernel;
use crate::exec::try_map_indices;
use crate::pipeline::Construction;

use super::bias::{combine_with_role, replicate_summary, TrialContext};
use super::stats::{mean, std_error, variance};
use super::{tags, EstimateResult, ExperimentConfig};

/// Per trial: (mean, sample variance) of the replicates of each construction,
/// from a common Transform stage.
fn paired_trials(cfg: &ExperimentConfig) -> Result<Vec<[f64; 4]>> {
    let ctx = TrialContext::new(&cfg.scenario)?;
    try_map_indices(cfg.trials, cfg.execution, |i| {
        let base = cfg.trial_stream(tags::COMBINE, i);
        let t = ctx.transform(cfg, &base)?;
        let (mc, vc) = replicate_summary(&combine_with_role(&t, Construction::Current, &base)?);
        let (ma, va) = replicate_summary(&combine_with_role(&t, Construction::Alternative, &base)?);
        Ok([mc, vc, ma, va])
    })
}

fn column(rows: &[[f64; 4]], c: usize) -> Vec<f64> {
    rows.iter().map(|r| r[c]).collect()
}

/// `V̂[X] − V̂[W]` for paired samples, with the standard error of the
/// difference from the paired influence values `(x − x̄)² − (w − w̄)²`.
fn paired_variance_gap(x: &[f64], w: &[f64]) -> (f64, f64, f64, f64) {
    let (vx, vw) = (variance(x), variance(w));
    let (mx, mw) = (mean(x), mean(w));
    let d: Vec<f64> = x
        .iter()
        .zip(w)
        .map(|(a, b)| (a - mx) * (a - mx) - (b - mw) * (b - mw))
        .collect();
    (vx - vw, std_error(&d), vx, vw)
}

/// `V[M̄^C] − V[M̄^A]` across trials.
pub fn estimate_mean_variance(cfg: &ExperimentConfig) -> Result<EstimateResult> {
    cfg.validate()?;
    let rows = paired_trials(cfg)?;
    let (gap, se, vc, va) = paired_variance_gap(&column(&rows, 0), &column(&rows, 2));
    let reference = match analytics::mean_variance_gap(&cfg.scenario) {
        Ok(v) => Some(v),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(EstimateResult::new("mean_variance_gap", gap, se, cfg.trials, reference)
        .scenario_params(&cfg.scenario)
        .component("var_mean_current", vc)
        .component("var_mean_alternative", va))
}

fn reldiff(vc: f64, va: f64) -> f64 {
    let denom = vc + va;
    if denom > 0.0 {
        (vc - va) / denom
    } else {
        0.0
    }
}

/// `(V̂[S²_{M^C}] − V̂[S²_{M^A}]) / (V̂[S²_{M^C}] + V̂[S²_{M^A}])` over trials;
/// the standard error comes from the spread of the same ratio over
/// `cfg.blocks` disjoint blocks of trials.
pub fn estimate_vardiff(cfg: &ExperimentConfig) -> Result<EstimateResult> {
    cfg.validate()?;
    let rows = paired_trials(cfg)?;
    let (sc, sa) = (column(&rows, 1), column(&rows, 3));
    let (gap, gap_se, va, vc) = paired_variance_gap(&sa, &sc);
    let point = reldiff(vc, va);

    let n = cfg.trials;
    let b = cfg.blocks;
    let per_block: Vec<f64> = (0..b)
        .map(|k| {
            let (lo, hi) = (k * n / b, (k + 1) * n / b);
            reldiff(variance(&sc[lo..hi]), variance(&sa[lo..hi]))
        })
        .collect();
    let se = std_error(&per_block);

    let reference = match cfg.scenario.kernel {
        ScalarKernel::Additive => Some(0.0),
        _ => None,
    };
    let mut r = EstimateResult::new("vardiff_reldiff", point, se, n, reference)
        .scenario_params(&cfg.scenario)
        .component("var_s2_current", vc)
        .component("var_s2_alternative", va)
        .component("var_s2_gap", gap)
        .component("var_s2_gap_se", gap_se)
        .component("blocks", b as f64);
    if let Ok(v) = analytics::vardiff_sample_variances(&cfg.scenario) {
        r = r.component("var_s2_gap_leading_order", v);
    }
    Ok(r)
}
