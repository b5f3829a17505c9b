use crate::analytics::{self, ScalarScenario};
use crate::error::{Error, Result};
use crate::error_models::{apply_scalar, PreparedDist, TransformSpec};
use crate::exec::try_map_indices;
use crate::pipeline::{combine, transform_stage, CombineOutput, Construction, DataBatch, ErrorBatch, TransformOutput};
use crate::rng::RngStream;

use super::stats::{mean, std_error, variance, variance_std_error};
use super::{roles, tags, Estimand, EstimateResult, ExperimentConfig};

/// Laws and transform prepared once per experiment.
pub(crate) struct TrialContext {
    pub spec: TransformSpec,
    pub y: PreparedDist,
    pub s: PreparedDist,
    pub nu: Vec<f64>,
}

impl TrialContext {
    pub fn new(s: &ScalarScenario) -> Result<Self> {
        Ok(TrialContext {
            spec: TransformSpec::new(s.kernel.clone()),
            y: s.y_dist.prepare()?,
            s: s.s_dist.prepare()?,
            nu: s.s_dist.mean(),
        })
    }

    /// Fresh `Y_1..Y_J` and shared `S_1..S_Q` through the Transform stage.
    pub fn transform(&self, cfg: &ExperimentConfig, base: &RngStream) -> Result<TransformOutput> {
        let data = self.y.sample(cfg.scenario.j, &mut base.substream(roles::Y));
        let errors = self.s.sample(cfg.scenario.q, &mut base.substream(roles::S));
        transform_stage(&DataBatch::new(data)?, &ErrorBatch::shared(errors)?, &self.spec, &self.nu)
    }
}

pub(crate) fn combine_with_role(t: &TransformOutput, c: Construction, base: &RngStream) -> Result<CombineOutput> {
    let role = match c {
        Construction::Current => roles::Z_CURRENT,
        Construction::Alternative => roles::Z_ALTERNATIVE,
    };
    combine(t, c, &mut base.substream(role))
}

/// Mean and sample variance of the scalar replicates.
pub(crate) fn replicate_summary(out: &CombineOutput) -> (f64, f64) {
    let col = out.replicates.as_slice();
    (mean(col), variance(col))
}

fn unsupported_as_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Unsupported(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Average replicate sample variance over independent pipelines, reported
/// as relative bias against the target variance (analytic when available,
/// otherwise the brute-force oracle on its own substreams).
pub fn estimate_combine_bias(cfg: &ExperimentConfig) -> Result<EstimateResult> {
    cfg.validate()?;
    let construction = match cfg.estimand {
        Estimand::CombineBiasCurrent => Construction::Current,
        Estimand::CombineBiasAlternative => Construction::Alternative,
        other => return Err(Error::config(format!("{other:?} is not a combine-bias estimand"))),
    };
    let ctx = TrialContext::new(&cfg.scenario)?;
    let s2 = try_map_indices(cfg.trials, cfg.execution, |i| {
        let base = cfg.trial_stream(tags::COMBINE, i);
        let t = ctx.transform(cfg, &base)?;
        Ok(replicate_summary(&combine_with_role(&t, construction, &base)?).1)
    })?;
    let (avg, avg_se) = (mean(&s2), std_error(&s2));

    let (target, target_se, from_oracle) = match unsupported_as_none(analytics::target_variance(&cfg.scenario))? {
        Some(t) => (t, 0.0, false),
        None => {
            let o = estimate_target_variance_oracle(cfg)?;
            (o.point, o.std_error, true)
        }
    };
    if !(target > 0.0) {
        return Err(Error::Numerical("target variance is not positive".into()));
    }
    let relbias = avg / target - 1.0;
    let se = ((avg_se / target).powi(2) + (avg * target_se / (target * target)).powi(2)).sqrt();
    let reference = unsupported_as_none(match construction {
        Construction::Current => analytics::relbias_current(&cfg.scenario),
        Construction::Alternative => analytics::relbias_alternative(&cfg.scenario),
    })?;
    let label = match construction {
        Construction::Current => "relbias_current",
        Construction::Alternative => "relbias_alternative",
    };
    Ok(EstimateResult::new(label, relbias, se, cfg.trials, reference)
        .scenario_params(&cfg.scenario)
        .component("mean_sample_variance", avg)
        .component("mean_sample_variance_se", avg_se)
        .component("target_variance", target)
        .component("target_variance_se", target_se)
        .component("target_from_oracle", if from_oracle { 1.0 } else { 0.0 }))
}

/// One bias estimate per `Q`, each on its own substreams.
pub fn bias_sweep(cfg: &ExperimentConfig, qs: &[usize]) -> Result<Vec<EstimateResult>> {
    qs.iter()
        .map(|&q| {
            let mut c = cfg.clone();
            c.scenario.q = q;
            estimate_combine_bias(&c)
        })
        .collect()
}

/// Brute-force `V[F̄(Y_•, S)]`: each trial draws a fresh data batch and a
/// single error shared by all its members.
pub fn estimate_target_variance_oracle(cfg: &ExperimentConfig) -> Result<EstimateResult> {
    cfg.validate()?;
    let s = &cfg.scenario;
    let ctx = TrialContext::new(s)?;
    let xs = try_map_indices(cfg.trials, cfg.execution, |i| {
        let base = cfg.trial_stream(tags::TARGET, i);
        let data = ctx.y.sample(s.j, &mut base.substream(roles::Y));
        let err = ctx.s.draw(&mut base.substream(roles::S))[0];
        let mut acc = 0.0;
        for &y in data.as_slice() {
            acc += apply_scalar(&s.kernel, y, err)?;
        }
        Ok(acc / s.j as f64)
    })?;
    let reference = unsupported_as_none(analytics::target_variance(s))?;
    Ok(
        EstimateResult::new("target_variance", variance(&xs), variance_std_error(&xs), cfg.trials, reference)
            .param("j", s.j as f64),
    )
}
