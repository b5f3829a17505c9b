//! Seeded Monte Carlo experiments for scalar scenarios.
//!
//! Every trial draws from its own substream, addressed by
//! `master_seed → [experiment tag, J, Q, trial] → role`, with roles
//! `0 = Y`, `1 = S`, `2 = Z (current)`, `3 = Z (alternative)`. Experiments
//! comparing the two constructions therefore share `Y` and `S` but never the
//! synthetic noise. Per-trial statistics are collected in trial order and
//! reduced sequentially, so results are bitwise identical for any number of
//! worker threads.

mod bias;
mod lemmas;
mod maps;
mod oracle;
pub mod stats;
mod variability;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::analytics::ScalarScenario;
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::rng::RngStream;

pub use bias::{bias_sweep, estimate_combine_bias, estimate_target_variance_oracle};
pub use lemmas::verify_lemma;
pub use maps::{map_scenario, run_map, MapCell};
pub use oracle::estimate_bias_terms;
pub use variability::{estimate_mean_variance, estimate_vardiff};

pub const DEFAULT_BIAS_TRIALS: usize = 10_000;
pub const DEFAULT_VARDIFF_TRIALS: usize = 100_000;
pub const DEFAULT_BLOCKS: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimand {
    CombineBiasCurrent,
    CombineBiasAlternative,
    TargetVariance,
    MeanVariance,
    VardiffReldiff,
    LemmaCheck(u8),
    /// MC estimates of `Ψ`, `Φ` and the current relative bias.
    BiasTerms,
    PsiMap,
    RelbiasMap,
}

/// `n` evenly spaced points from `lo` to `hi` inclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisRange {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl AxisRange {
    pub fn new(lo: f64, hi: f64, n: usize) -> Self {
        AxisRange { lo, hi, n }
    }

    pub fn points(&self) -> Vec<f64> {
        if self.n == 1 {
            return vec![self.lo];
        }
        let step = (self.hi - self.lo) / (self.n - 1) as f64;
        (0..self.n)
            .map(|i| if i + 1 == self.n { self.hi } else { self.lo + step * i as f64 })
            .collect()
    }

    fn validate(&self) -> Result<()> {
        if self.n == 0 || !self.lo.is_finite() || !self.hi.is_finite() || self.hi < self.lo {
            return Err(Error::config(format!(
                "invalid grid axis {}:{}:{}",
                self.lo, self.hi, self.n
            )));
        }
        Ok(())
    }
}

/// Data-law grid for the maps: `Y ~ Unif[a, b]` over all `a < b` on the
/// `a` and `b` axes, one sheet per error half-width `α`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub a: AxisRange,
    pub b: AxisRange,
    pub alphas: Vec<f64>,
}

impl GridSpec {
    pub fn square(lo: f64, hi: f64, n: usize, alphas: Vec<f64>) -> Self {
        let axis = AxisRange::new(lo, hi, n);
        GridSpec {
            a: axis,
            b: axis,
            alphas,
        }
    }
}

/// Parameters of the sample-variance check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaParams {
    pub sigma2: f64,
    pub u2: f64,
    pub n: usize,
}

impl Default for LemmaParams {
    fn default() -> Self {
        LemmaParams {
            sigma2: 1.0,
            u2: 0.0,
            n: 2,
        }
    }
}

fn default_blocks() -> usize {
    DEFAULT_BLOCKS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub scenario: ScalarScenario,
    pub trials: usize,
    pub estimand: Estimand,
    pub master_seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lemma: Option<LemmaParams>,
    /// Independent blocks for block-based standard errors.
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    #[serde(skip)]
    pub execution: Execution,
}

impl ExperimentConfig {
    pub fn new(scenario: ScalarScenario, estimand: Estimand, trials: usize, master_seed: u64) -> Self {
        ExperimentConfig {
            scenario,
            trials,
            estimand,
            master_seed,
            grid: None,
            lemma: None,
            blocks: DEFAULT_BLOCKS,
            execution: Execution::default(),
        }
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn with_grid(mut self, grid: GridSpec) -> Self {
        self.grid = Some(grid);
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().map_err(as_config)?;
        let maps = matches!(self.estimand, Estimand::PsiMap | Estimand::RelbiasMap);
        if !maps && self.trials < 2 {
            return Err(Error::config("trials must be at least 2"));
        }
        match self.estimand {
            Estimand::CombineBiasCurrent
            | Estimand::CombineBiasAlternative
            | Estimand::MeanVariance
            | Estimand::VardiffReldiff
                if self.scenario.q < 2 =>
            {
                Err(Error::config("replicate statistics need Q >= 2"))
            }
            Estimand::VardiffReldiff | Estimand::BiasTerms
                if self.blocks < 2 || self.blocks > self.trials / 2 =>
            {
                Err(Error::config(format!(
                    "need 2 <= blocks <= trials/2, got {} blocks for {} trials",
                    self.blocks, self.trials
                )))
            }
            Estimand::LemmaCheck(id) if !(1..=5).contains(&id) => {
                Err(Error::config(format!("unknown lemma id {id} (expected 1..5)")))
            }
            Estimand::LemmaCheck(5) => {
                let p = self.lemma.unwrap_or_default();
                if p.n < 2 || !(p.sigma2 >= 0.0) || !(p.u2 >= 0.0) {
                    return Err(Error::config("sample-variance check needs N >= 2, sigma2 >= 0, u2 >= 0"));
                }
                Ok(())
            }
            Estimand::PsiMap | Estimand::RelbiasMap => {
                let g = self
                    .grid
                    .as_ref()
                    .ok_or_else(|| Error::config("maps need grid parameters"))?;
                g.a.validate()?;
                g.b.validate()?;
                if g.alphas.is_empty() || g.alphas.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
                    return Err(Error::config("map alphas must be positive"));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub(crate) fn trial_stream(&self, tag: u64, trial: usize) -> RngStream {
        RngStream::at_path(
            self.master_seed,
            vec![tag, self.scenario.j as u64, self.scenario.q as u64, trial as u64],
        )
    }
}

fn as_config(e: Error) -> Error {
    match e {
        Error::Domain(m) | Error::Dimension(m) => Error::Config(m),
        other => other,
    }
}

pub(crate) mod tags {
    pub const COMBINE: u64 = 1;
    pub const TARGET: u64 = 2;
    pub const LEMMA: u64 = 3;
    pub const BIAS_TERMS: u64 = 4;
}

pub(crate) mod roles {
    pub const Y: u64 = 0;
    pub const S: u64 = 1;
    pub const Z_CURRENT: u64 = 2;
    pub const Z_ALTERNATIVE: u64 = 3;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateResult {
    pub label: String,
    /// Experiment coordinates (J, Q, ...).
    pub parameters: BTreeMap<String, f64>,
    pub point: f64,
    pub std_error: f64,
    pub trials: usize,
    pub analytic_reference: Option<f64>,
    pub z_score: Option<f64>,
    /// Intermediate estimates.
    pub components: BTreeMap<String, f64>,
}

impl EstimateResult {
    pub fn new(label: impl Into<String>, point: f64, std_error: f64, trials: usize, reference: Option<f64>) -> Self {
        EstimateResult {
            label: label.into(),
            parameters: BTreeMap::new(),
            point,
            std_error,
            trials,
            analytic_reference: reference,
            z_score: reference.and_then(|r| stats::z_score(point, r, std_error)),
            components: BTreeMap::new(),
        }
    }

    pub fn param(mut self, key: &str, value: f64) -> Self {
        self.parameters.insert(key.to_string(), value);
        self
    }

    pub fn component(mut self, key: &str, value: f64) -> Self {
        self.components.insert(key.to_string(), value);
        self
    }

    pub(crate) fn scenario_params(self, s: &ScalarScenario) -> Self {
        self.param("j", s.j as f64).param("q", s.q as f64)
    }

    /// `|point − reference| ≤ k · std_error`; false without a reference.
    pub fn within(&self, k: f64) -> bool {
        match self.analytic_reference {
            Some(r) => (self.point - r).abs() <= k * self.std_error,
            None => false,
        }
    }
}

/// Dispatch on the configured estimand. Maps are rejected here; use
/// [`run_map`].
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<EstimateResult>> {
    Ok(match cfg.estimand {
        Estimand::CombineBiasCurrent | Estimand::CombineBiasAlternative => vec![estimate_combine_bias(cfg)?],
        Estimand::TargetVariance => vec![estimate_target_variance_oracle(cfg)?],
        Estimand::MeanVariance => vec![estimate_mean_variance(cfg)?],
        Estimand::VardiffReldiff => vec![estimate_vardiff(cfg)?],
        Estimand::LemmaCheck(id) => vec![verify_lemma(id, cfg)?],
        Estimand::BiasTerms => estimate_bias_terms(cfg)?,
        Estimand::PsiMap | Estimand::RelbiasMap => {
            return Err(Error::config("map estimands produce grids; use run_map"))
        }
    })
}

/// Round-trip-safe float text: 17 significant digits.
pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        x.to_string()
    }
}

fn format_opt(x: Option<f64>) -> String {
    x.map(format_float).unwrap_or_default()
}

/// One row per result: label, the union of parameter keys, then estimate,
/// standard error, reference, z-score and trial count.
pub fn write_results_csv<W: Write>(results: &[EstimateResult], out: W) -> Result<()> {
    let mut keys: Vec<&String> = results.iter().flat_map(|r| r.parameters.keys()).collect();
    keys.sort();
    keys.dedup();
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["label".to_string()];
    header.extend(keys.iter().map(|k| k.to_string()));
    header.extend(["estimate", "std_error", "analytic_reference", "z_score", "trials"].map(String::from));
    w.write_record(&header).map_err(csv_err)?;
    for r in results {
        let mut row = vec![r.label.clone()];
        row.extend(keys.iter().map(|k| format_opt(r.parameters.get(*k).copied())));
        row.push(format_float(r.point));
        row.push(format_float(r.std_error));
        row.push(format_opt(r.analytic_reference));
        row.push(format_opt(r.z_score));
        row.push(r.trials.to_string());
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_map_csv<W: Write>(cells: &[MapCell], value_name: &str, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["alpha", "a", "b", "j", value_name]).map_err(csv_err)?;
    for c in cells {
        w.write_record([
            format_float(c.alpha),
            format_float(c.a),
            format_float(c.b),
            c.j.to_string(),
            format_float(c.value),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(e.to_string())
}
