//! Empirical checks of the covariance identities the bias analysis rests on.
//! Each check builds a random instance satisfying the identity's hypotheses
//! (from a setup substream), then estimates both sides over `cfg.trials`
//! independent instances.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::analytics::{conditional_mean_given_y, conditional_terms, var_of_sample_variance_normal};
use crate::error::{Error, Result};
use crate::error_models::apply_scalar;
use crate::exec::{map_indices, try_map_indices};
use crate::linalg::{sample_covariance, Mat};
use crate::rng::RngStream;

use super::bias::TrialContext;
use super::stats::{centered_products, mean, std_error, variance, variance_std_error, z_score};
use super::{roles, tags, EstimateResult, ExperimentConfig};

const SETUP: u64 = u64::MAX;

fn setup_stream(cfg: &ExperimentConfig, id: u8) -> RngStream {
    RngStream::at_path(cfg.master_seed, vec![tags::LEMMA, id as u64, SETUP])
}

fn trial_stream(cfg: &ExperimentConfig, id: u8, i: usize) -> RngStream {
    RngStream::at_path(cfg.master_seed, vec![tags::LEMMA, id as u64, i as u64])
}

fn normal(rng: &mut RngStream) -> f64 {
    rng.sample(StandardNormal)
}

pub fn verify_lemma(id: u8, cfg: &ExperimentConfig) -> Result<EstimateResult> {
    if !(1..=5).contains(&id) {
        return Err(Error::config(format!("unknown lemma id {id} (expected 1..5)")));
    }
    if cfg.trials < 2 {
        return Err(Error::config("trials must be at least 2"));
    }
    let r = match id {
        1 => sample_covariance_bias(cfg)?,
        2 => noise_variance(cfg),
        3 => noise_covariance(cfg),
        4 => repeated_data_covariance(cfg)?,
        _ => sample_variance_variance(cfg)?,
    };
    Ok(r.param("lemma", id as f64))
}

/// `X_j = A w + B e_j`: exchangeable with `Σ = AAᵀ + BBᵀ`, `Σ′ = AAᵀ`, so
/// `E[Σ̂] = Σ − Σ′ = BBᵀ`. Reports the entry with the largest `|z|`.
fn sample_covariance_bias(cfg: &ExperimentConfig) -> Result<EstimateResult> {
    let mut setup = setup_stream(cfg, 1);
    let n = setup.random_range(2..=6usize);
    let a = Mat::from_vec(2, 2, (0..4).map(|_| normal(&mut setup)).collect())?;
    let b = Mat::from_vec(2, 2, (0..4).map(|_| normal(&mut setup)).collect())?;
    let expected = b.matmul(&b.transpose())?;

    let est = try_map_indices(cfg.trials, cfg.execution, |i| {
        let mut rng = trial_stream(cfg, 1, i);
        let w = [normal(&mut rng), normal(&mut rng)];
        let mut x = Mat::zeros(n, 2);
        for j in 0..n {
            let e = [normal(&mut rng), normal(&mut rng)];
            let row = x.row_mut(j);
            a.mul_vec_add_into(&w, 1.0, row);
            b.mul_vec_add_into(&e, 1.0, row);
        }
        let c = sample_covariance(&x)?;
        Ok([c[(0, 0)], c[(0, 1)], c[(1, 1)]])
    })?;
    let entries = [(0, 0), (0, 1), (1, 1)];
    let mut worst: Option<EstimateResult> = None;
    let mut comps = Vec::new();
    for (e, &(r, c)) in entries.iter().enumerate() {
        let xs: Vec<f64> = est.iter().map(|v| v[e]).collect();
        let res = EstimateResult::new("lemma_sample_covariance_bias", mean(&xs), std_error(&xs), cfg.trials, Some(expected[(r, c)]));
        comps.push((format!("z_{r}{c}"), res.z_score.unwrap_or(f64::NAN)));
        let worse = match &worst {
            None => true,
            Some(w) => res.z_score.map_or(f64::INFINITY, f64::abs) > w.z_score.map_or(f64::INFINITY, f64::abs),
        };
        if worse {
            worst = Some(res);
        }
    }
    let mut r = worst.expect("three entries").component("n", n as f64);
    for (k, v) in comps {
        r = r.component(&k, v);
    }
    Ok(r)
}

/// `V[A + BZ] = V[A] + E[B²]` with `B` a function of `A` and `Z ⟂ (A, B)`.
fn noise_variance(cfg: &ExperimentConfig) -> EstimateResult {
    let mut setup = setup_stream(cfg, 2);
    let (m, s) = (normal(&mut setup), 0.5 + setup.random::<f64>());
    let (b0, b1) = (0.2 + setup.random::<f64>(), setup.random::<f64>());
    let rows = map_indices(cfg.trials, cfg.execution, |i| {
        let mut rng = trial_stream(cfg, 2, i);
        let g = normal(&mut rng);
        let a = m + s * g;
        let b = b0 + b1 * g * g;
        let z = normal(&mut rng);
        [a + b * z, a, b]
    });
    let (x, a, b): (Vec<f64>, Vec<f64>, Vec<f64>) = (
        rows.iter().map(|r| r[0]).collect(),
        rows.iter().map(|r| r[1]).collect(),
        rows.iter().map(|r| r[2]).collect(),
    );
    let (mx, ma) = (mean(&x), mean(&a));
    let infl: Vec<f64> = (0..x.len())
        .map(|i| (x[i] - mx).powi(2) - (a[i] - ma).powi(2) - b[i] * b[i])
        .collect();
    let lhs = variance(&x);
    let rhs = variance(&a) + b.iter().map(|v| v * v).sum::<f64>() / b.len() as f64;
    EstimateResult::new("lemma_noise_variance", lhs - rhs, std_error(&infl), cfg.trials, Some(0.0))
        .component("lhs", lhs)
        .component("rhs", rhs)
}

/// `Cov[A₁ + BZ₁, A₂ + BZ₂] = Cov[A₁, A₂]` for independent `Z₁, Z₂`.
fn noise_covariance(cfg: &ExperimentConfig) -> EstimateResult {
    let mut setup = setup_stream(cfg, 3);
    let rho = 2.0 * setup.random::<f64>() - 1.0;
    let c = 0.5 + setup.random::<f64>();
    let rows = map_indices(cfg.trials, cfg.execution, |i| {
        let mut rng = trial_stream(cfg, 3, i);
        let (g1, g2) = (normal(&mut rng), normal(&mut rng));
        let (a1, a2) = (g1, rho * g1 + c * g2);
        let b = 1.0 + g1.abs();
        let (z1, z2) = (normal(&mut rng), normal(&mut rng));
        [a1 + b * z1, a2 + b * z2, a1, a2]
    });
    let col = |k: usize| -> Vec<f64> { rows.iter().map(|r| r[k]).collect() };
    let (x1, x2, a1, a2) = (col(0), col(1), col(2), col(3));
    let px = centered_products(&x1, &x2);
    let pa = centered_products(&a1, &a2);
    let infl: Vec<f64> = px.iter().zip(&pa).map(|(x, a)| x - a).collect();
    let scale = cfg.trials as f64 / (cfg.trials as f64 - 1.0);
    let (lhs, rhs) = (mean(&px) * scale, mean(&pa) * scale);
    EstimateResult::new("lemma_noise_covariance", lhs - rhs, std_error(&infl), cfg.trials, Some(0.0))
        .component("lhs", lhs)
        .component("rhs", rhs)
}

/// `Cov[F(Y, S), F(Y, S′)] = V[E[F(Y, S) | Y]]` for the configured scenario.
/// The right side is analytic when available, otherwise estimated from the
/// same draws of `Y`.
fn repeated_data_covariance(cfg: &ExperimentConfig) -> Result<EstimateResult> {
    let s = &cfg.scenario;
    s.validate()?;
    let ctx = TrialContext::new(s)?;
    let analytic = match conditional_terms(s) {
        Ok(t) => Some(t.var_mean_given_y),
        Err(Error::Unsupported(_)) => None,
        Err(e) => return Err(e),
    };
    let rows = try_map_indices(cfg.trials, cfg.execution, |i| {
        let base = trial_stream(cfg, 4, i);
        let y = ctx.y.draw(&mut base.substream(roles::Y))[0];
        let mut es = base.substream(roles::S);
        let (s1, s2) = (ctx.s.draw(&mut es)[0], ctx.s.draw(&mut es)[0]);
        let h = match analytic {
            Some(_) => 0.0,
            None => conditional_mean_given_y(&s.kernel, y, &s.s_dist)?,
        };
        Ok([apply_scalar(&s.kernel, y, s1)?, apply_scalar(&s.kernel, y, s2)?, h])
    })?;
    let col = |k: usize| -> Vec<f64> { rows.iter().map(|r| r[k]).collect() };
    let (x1, x2, h) = (col(0), col(1), col(2));
    let px = centered_products(&x1, &x2);
    let lhs = mean(&px) * cfg.trials as f64 / (cfg.trials as f64 - 1.0);
    Ok(match analytic {
        Some(rhs) => EstimateResult::new("lemma_repeated_data_covariance", lhs, std_error(&px), cfg.trials, Some(rhs))
            .component("lhs", lhs)
            .component("rhs", rhs),
        None => {
            let ph = centered_products(&h, &h);
            let infl: Vec<f64> = px.iter().zip(&ph).map(|(a, b)| a - b).collect();
            let rhs = variance(&h);
            EstimateResult::new("lemma_repeated_data_covariance", lhs - rhs, std_error(&infl), cfg.trials, Some(0.0))
                .component("lhs", lhs)
                .component("rhs", rhs)
        }
    }
    .scenario_params(s))
}

/// `V[S²] = 2σ⁴/(N−1) + 4σ²u²/(N−1)` for `N` normals with common variance
/// `σ²` around fixed means whose sample variance is `u²`.
fn sample_variance_variance(cfg: &ExperimentConfig) -> Result<EstimateResult> {
    let p = cfg.lemma.unwrap_or_default();
    let expected = var_of_sample_variance_normal(p.sigma2, p.u2, p.n).map_err(|e| Error::config(e.to_string()))?;
    let centre = (p.n as f64 - 1.0) / 2.0;
    let spread = p.n as f64 * (p.n as f64 + 1.0) / 12.0;
    let scale = (p.u2 / spread).sqrt();
    let means: Vec<f64> = (0..p.n).map(|i| scale * (i as f64 - centre)).collect();
    let sigma = p.sigma2.sqrt();
    let s2 = map_indices(cfg.trials, cfg.execution, |i| {
        let mut rng = trial_stream(cfg, 5, i);
        let x: Vec<f64> = means.iter().map(|m| m + sigma * normal(&mut rng)).collect();
        variance(&x)
    });
    let est = variance(&s2);
    let se = variance_std_error(&s2);
    let mut r = EstimateResult::new("lemma_sample_variance_variance", est, se, cfg.trials, Some(expected))
        .param("sigma2", p.sigma2)
        .param("u2", p.u2)
        .param("n", p.n as f64)
        .component("means_sample_variance", variance(&means));
    r.z_score = z_score(est, expected, se);
    Ok(r)
}
