use crate::analytics::{self, ScalarScenario};
use crate::error::{Error, Result};
use crate::error_models::apply_scalar;
use crate::exec::try_map_indices;
use crate::rng::RngStream;

use super::bias::TrialContext;
use super::stats::{mean, std_error, CrossMoments};
use super::{tags, EstimateResult, ExperimentConfig};

const PILOT: usize = 1000;

/// Columns: F(Y, ν), F(Y, S), F(Y, S′), F(Y′, S).
type Draw = [f64; 4];

fn draw(ctx: &TrialContext, s: &ScalarScenario, rng: &mut RngStream) -> Result<Draw> {
    let mut v = [0.0; 4];
    for (i, x) in v.iter_mut().enumerate() {
        let d = if i < 2 { &ctx.y } else { &ctx.s };
        d.draw_into(rng, std::slice::from_mut(x));
    }
    let [y, y2, e, e2] = v;
    let f = |a, b| apply_scalar(&s.kernel, a, b);
    Ok([f(y, ctx.nu[0])?, f(y, e)?, f(y, e2)?, f(y2, e)?])
}

struct Terms {
    psi: f64,
    phi: f64,
    target: f64,
    relbias: f64,
}

fn terms(m: &CrossMoments<4>, j: usize) -> Terms {
    let jf = j as f64;
    let var_f = (m.cov(1, 1) + m.cov(2, 2) + m.cov(3, 3)) / 3.0;
    let var_mean_given_y = m.cov(1, 2);
    let var_mean_given_s = m.cov(1, 3);
    let psi = m.cov(0, 0) - var_mean_given_y;
    let phi = var_f - var_mean_given_s - var_mean_given_y;
    let target = var_f / jf + (jf - 1.0) / jf * var_mean_given_s;
    Terms {
        psi,
        phi,
        target,
        relbias: psi / jf / target,
    }
}

/// Plain MC estimates of `Ψ`, `Φ`, the target variance and the current
/// relative bias from `cfg.trials` joint draws of `(Y, Y′, S, S′)`:
///
/// * `Ψ = V[F(Y,ν)] − Cov[F(Y,S), F(Y,S′)]`
/// * `Φ = V[F] − Cov[F(Y,S), F(Y′,S)] − Cov[F(Y,S), F(Y,S′)]`
///
/// Point estimates use all draws; standard errors come from batch means over
/// `cfg.blocks` blocks, which keeps memory flat for very large draw counts.
pub fn estimate_bias_terms(cfg: &ExperimentConfig) -> Result<Vec<EstimateResult>> {
    cfg.validate()?;
    let s = &cfg.scenario;
    let ctx = TrialContext::new(s)?;
    let base = cfg.trial_stream(tags::BIAS_TERMS, 0);

    let mut pilot = base.substream(u64::MAX);
    let mut shift = [0.0; 4];
    for _ in 0..PILOT {
        let d = draw(&ctx, s, &mut pilot)?;
        for (acc, v) in shift.iter_mut().zip(d) {
            *acc += v / PILOT as f64;
        }
    }

    let (n, b) = (cfg.trials, cfg.blocks);
    let blocks = try_map_indices(b, cfg.execution, |k| {
        let mut rng = base.substream(k as u64);
        let (lo, hi) = (k * n / b, (k + 1) * n / b);
        let mut acc = CrossMoments::new(shift);
        for _ in lo..hi {
            acc.push(draw(&ctx, s, &mut rng)?);
        }
        Ok(acc)
    })?;
    let mut all = CrossMoments::new(shift);
    for blk in &blocks {
        all.merge(blk);
    }
    let whole = terms(&all, s.j);
    if !(whole.target > 0.0) {
        return Err(Error::Numerical("estimated target variance is not positive".into()));
    }
    let per: Vec<Terms> = blocks.iter().map(|m| terms(m, s.j)).collect();
    let se = |f: fn(&Terms) -> f64| std_error(&per.iter().map(f).collect::<Vec<_>>());

    let reference = match analytics::bias_report(s) {
        Ok(r) => Some(r),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e),
    };
    let make = |label: &str, point: f64, se: f64, r: Option<f64>| {
        EstimateResult::new(label, point, se, n, r)
            .scenario_params(s)
            .component("blocks", b as f64)
    };
    let block_mean_relbias = mean(&per.iter().map(|t| t.relbias).collect::<Vec<_>>());
    Ok(vec![
        make("psi", whole.psi, se(|t| t.psi), reference.map(|r| r.psi)),
        make("phi", whole.phi, se(|t| t.phi), reference.map(|r| r.phi)),
        make("target_variance", whole.target, se(|t| t.target), reference.map(|r| r.target_var)),
        make(
            "relbias_current",
            whole.relbias,
            se(|t| t.relbias),
            reference.map(|r| r.relbias_current),
        )
        .component("block_mean", block_mean_relbias),
    ])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lab::Estimand;

    #[test]
    fn phase_extremal_terms() {
        let s = ScalarScenario::phase_extremal(4, 1);
        let cfg = ExperimentConfig::new(s, Estimand::BiasTerms, 200_000, 2);
        for r in estimate_bias_terms(&cfg).unwrap() {
            assert!(r.within(4.0), "{r:?}");
        }
    }

    #[test]
    fn exponential_cell() {
        let s = ScalarScenario::exponential(0.0, 2.0, 0.95, 2, 1);
        let cfg = ExperimentConfig::new(s, Estimand::BiasTerms, 200_000, 4);
        for r in estimate_bias_terms(&cfg).unwrap() {
            assert!(r.within(4.0), "{r:?}");
        }
    }
}
