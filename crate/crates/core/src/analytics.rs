//! Closed-form and quadrature evaluation of the bias and variability
//! quantities of the two replicate constructions, for scalar scenarios.
//!
//! Everything reduces to four conditional second moments of `F(Y, S)`:
//!
//! * `V[F(Y, ν)]` — spread of the nominals,
//! * `V[E[F | Y]]` — spread of the conditional means given the data,
//! * `E[V[F | S]]` — average spread across data at fixed error,
//! * `V[E[F | S]]` — spread of the conditional means given the error.
//!
//! From these, `Ψ = V[F(Y,ν)] − V[E[F|Y]]`, `Φ = E[V[F|S]] − V[E[F|Y]]` and
//! the target variance `V[F̄(Y_•, S)] = E[V[F|S]]/J + V[E[F|S]]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_models::{apply_scalar, moments, DistSpec, MomentSet, ScalarKernel};
use crate::quadrature::Measure;

/// Default Gauss–Legendre node count for product quadrature over uniform
/// laws. Integrals over the exponent law of the exponential kernel use half
/// of it.
pub const DEFAULT_NODES: usize = 256;

/// `(f, Y law, S law, J, Q)` with scalar laws.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalarScenario {
    pub kernel: ScalarKernel,
    pub y_dist: DistSpec,
    pub s_dist: DistSpec,
    pub j: usize,
    pub q: usize,
}

impl ScalarScenario {
    pub fn new(kernel: ScalarKernel, y_dist: DistSpec, s_dist: DistSpec, j: usize, q: usize) -> Self {
        ScalarScenario {
            kernel,
            y_dist,
            s_dist,
            j,
            q,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.j < 2 {
            return Err(Error::domain(format!("J must exceed 1, got {}", self.j)));
        }
        if self.q < 1 {
            return Err(Error::domain("Q must be at least 1"));
        }
        self.y_dist.validate()?;
        self.s_dist.validate()?;
        if self.y_dist.dim() != 1 || self.s_dist.dim() != 1 {
            return Err(Error::domain("scalar scenario needs K = 1 laws"));
        }
        Ok(())
    }

    pub fn with_q(&self, q: usize) -> Self {
        ScalarScenario { q, ..self.clone() }
    }

    pub fn with_j(&self, j: usize) -> Self {
        ScalarScenario { j, ..self.clone() }
    }

    /// Standard normal data and errors.
    pub fn standard_normal(kernel: ScalarKernel, j: usize, q: usize) -> Self {
        let n = DistSpec::normal_scalar(0.0, 1.0);
        ScalarScenario::new(kernel, n.clone(), n, j, q)
    }

    /// Phase error with `S ~ Unif(−π, π)` and data `±π/2` equiprobable.
    pub fn phase_extremal(j: usize, q: usize) -> Self {
        use std::f64::consts::PI;
        ScalarScenario::new(
            ScalarKernel::Phase,
            DistSpec::phase_extremal_data(),
            DistSpec::uniform_scalar(-PI, PI),
            j,
            q,
        )
    }

    /// Exponential error, `Y ~ Unif[a, b]`, `S ~ Unif[1 − α, 1 + α]`.
    pub fn exponential(a: f64, b: f64, alpha: f64, j: usize, q: usize) -> Self {
        ScalarScenario::new(
            ScalarKernel::Exponential,
            DistSpec::uniform_scalar(a, b),
            DistSpec::uniform_scalar(1.0 - alpha, 1.0 + alpha),
            j,
            q,
        )
    }

    fn nu(&self) -> f64 {
        self.s_dist.mean()[0]
    }
}

/// The four conditional second moments, plus `E[F]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalTerms {
    pub mean: f64,
    /// `V[F(Y, ν)]`
    pub nominal_var: f64,
    /// `V[E[F | Y]]`
    pub var_mean_given_y: f64,
    /// `E[V[F | S]]`
    pub mean_var_given_s: f64,
    /// `V[E[F | S]]`
    pub var_mean_given_s: f64,
}

pub fn conditional_terms(s: &ScalarScenario) -> Result<ConditionalTerms> {
    conditional_terms_with(s, DEFAULT_NODES)
}

/// [`conditional_terms`] at an explicit quadrature resolution.
pub fn conditional_terms_with(s: &ScalarScenario, nodes: usize) -> Result<ConditionalTerms> {
    s.validate()?;
    match &s.kernel {
        ScalarKernel::Additive => {
            let (y, e) = (moments(&s.y_dist)?, moments(&s.s_dist)?);
            Ok(ConditionalTerms {
                mean: y.mean + e.mean,
                nominal_var: y.var,
                var_mean_given_y: y.var,
                mean_var_given_s: y.var,
                var_mean_given_s: e.var,
            })
        }
        ScalarKernel::Multiplicative => {
            let (y, e) = (moments(&s.y_dist)?, moments(&s.s_dist)?);
            let nominal = e.mean * e.mean * y.var;
            Ok(ConditionalTerms {
                mean: y.mean * e.mean,
                nominal_var: nominal,
                var_mean_given_y: nominal,
                mean_var_given_s: (e.var + e.mean * e.mean) * y.var,
                var_mean_given_s: y.mean * y.mean * e.var,
            })
        }
        ScalarKernel::Exponential => exponential_terms(s, nodes),
        ScalarKernel::Phase | ScalarKernel::Custom(_) => product_terms(s, nodes),
    }
}

/// Generic route: both laws replaced by quadrature measures and every
/// expectation taken as a double sum.
fn product_terms(s: &ScalarScenario, nodes: usize) -> Result<ConditionalTerms> {
    let my = Measure::of(&s.y_dist, nodes).map_err(|e| pairing(s, e))?;
    let ms = Measure::of(&s.s_dist, nodes).map_err(|e| pairing(s, e))?;
    let nu = s.nu();
    let (ny, ns) = (my.atoms.len(), ms.atoms.len());
    let mut table = vec![0.0; ny * ns];
    let mut nominal = vec![0.0; ny];
    for (i, &(y, _)) in my.atoms.iter().enumerate() {
        nominal[i] = apply_scalar(&s.kernel, y, nu)?;
        for (k, &(sv, _)) in ms.atoms.iter().enumerate() {
            table[i * ns + k] = apply_scalar(&s.kernel, y, sv)?;
        }
    }
    let wy: Vec<f64> = my.atoms.iter().map(|a| a.1).collect();
    let ws: Vec<f64> = ms.atoms.iter().map(|a| a.1).collect();

    let weighted_var = |vals: &[f64], w: &[f64]| -> (f64, f64) {
        let m: f64 = vals.iter().zip(w).map(|(v, w)| v * w).sum();
        let v: f64 = vals.iter().zip(w).map(|(v, w)| w * (v - m) * (v - m)).sum();
        (m, v)
    };

    let (_, nominal_var) = weighted_var(&nominal, &wy);
    let g: Vec<f64> = (0..ny)
        .map(|i| (0..ns).map(|k| ws[k] * table[i * ns + k]).sum())
        .collect();
    let (mean, var_mean_given_y) = weighted_var(&g, &wy);

    let mut h = vec![0.0; ns];
    let mut mean_var_given_s = 0.0;
    let mut column = vec![0.0; ny];
    for k in 0..ns {
        for i in 0..ny {
            column[i] = table[i * ns + k];
        }
        let (m, v) = weighted_var(&column, &wy);
        h[k] = m;
        mean_var_given_s += ws[k] * v;
    }
    let (_, var_mean_given_s) = weighted_var(&h, &ws);
    Ok(ConditionalTerms {
        mean,
        nominal_var,
        var_mean_given_y,
        mean_var_given_s,
        var_mean_given_s,
    })
}

/// Exponential kernel: every term is an integral over the exponent law of
/// the closed-form data moment `m(t) = E[Y^t]`.
fn exponential_terms(s: &ScalarScenario, nodes: usize) -> Result<ConditionalTerms> {
    let moment = data_power_moment(&s.y_dist).map_err(|e| pairing(s, e))?;
    let s_nodes = (nodes / 2).max(1);
    let ms = Measure::of(&s.s_dist, s_nodes).map_err(|e| pairing(s, e))?;
    if ms.atoms.iter().any(|&(t, _)| t < 0.0) {
        return Err(Error::unsupported(
            "exponential kernel analytics need non-negative exponents",
        ));
    }
    let pair = Measure::of_pair_sum(&s.s_dist, s_nodes)?;
    let nu = s.nu();

    let m_nu = moment(nu);
    let nominal_var = (moment(2.0 * nu) - m_nu * m_nu).max(0.0);
    let mean = ms.expect(&moment);
    // V[k(Y)] = E[m(S + S')] − E[m(S)]²
    let var_mean_given_y = (pair.expect(&moment) - mean * mean).max(0.0);
    let mean_var_given_s = ms.expect(|t| {
        let m = moment(t);
        (moment(2.0 * t) - m * m).max(0.0)
    });
    let var_mean_given_s = ms.variance(&moment);
    Ok(ConditionalTerms {
        mean,
        nominal_var,
        var_mean_given_y,
        mean_var_given_s,
        var_mean_given_s,
    })
}

/// `t ↦ E[Y^t]` for the data laws the exponential kernel supports.
fn data_power_moment(y: &DistSpec) -> Result<Box<dyn Fn(f64) -> f64 + Send + Sync>> {
    match y {
        DistSpec::Uniform { lo, hi } => {
            let (a, b) = (lo[0], hi[0]);
            if a < 0.0 {
                return Err(Error::unsupported("exponential kernel needs data support in [0, ∞)"));
            }
            if a == b {
                if a == 0.0 {
                    return Err(Error::domain("exponential kernel with data identically 0"));
                }
                return Ok(Box::new(move |t: f64| a.powf(t)));
            }
            Ok(Box::new(move |t: f64| {
                let e = t + 1.0;
                (b.powf(e) - a.powf(e)) / (e * (b - a))
            }))
        }
        DistSpec::TwoPoint { a, b, p } => {
            let (a, b, p) = (a[0], b[0], *p);
            if a <= 0.0 || b <= 0.0 {
                return Err(Error::unsupported("exponential kernel needs positive data atoms"));
            }
            Ok(Box::new(move |t: f64| p * a.powf(t) + (1.0 - p) * b.powf(t)))
        }
        DistSpec::Normal { .. } => Err(Error::unsupported(
            "exponential kernel needs bounded positive data (uniform or two-point)",
        )),
    }
}

fn pairing(s: &ScalarScenario, e: Error) -> Error {
    match e {
        Error::Unsupported(msg) => Error::Unsupported(format!("{} kernel: {msg}", s.kernel.name())),
        other => other,
    }
}

/// `Ψ = V[F(Y, ν)] − V[E[F(Y, S) | Y]]`.
pub fn psi(s: &ScalarScenario) -> Result<f64> {
    Ok(psi_from(s, &conditional_terms(s)?))
}

fn psi_from(s: &ScalarScenario, t: &ConditionalTerms) -> f64 {
    match s.kernel {
        // E[F | Y] = F(Y, ν) for both
        ScalarKernel::Additive | ScalarKernel::Multiplicative => 0.0,
        _ => t.nominal_var - t.var_mean_given_y,
    }
}

/// `Φ = E[V[F(Y, S) | S]] − V[E[F(Y, S) | Y]]`.
pub fn phi(s: &ScalarScenario) -> Result<f64> {
    Ok(phi_from(s, &conditional_terms(s)?)?)
}

fn phi_from(s: &ScalarScenario, t: &ConditionalTerms) -> Result<f64> {
    Ok(match s.kernel {
        ScalarKernel::Additive => 0.0,
        ScalarKernel::Multiplicative => moments(&s.s_dist)?.var * moments(&s.y_dist)?.var,
        _ => t.mean_var_given_s - t.var_mean_given_y,
    })
}

/// `V[F̄(Y_•, S)] = E[V[F|S]]/J + V[E[F|S]]`.
pub fn target_variance(s: &ScalarScenario) -> Result<f64> {
    let t = conditional_terms(s)?;
    Ok(target_from(s, &t))
}

fn target_from(s: &ScalarScenario, t: &ConditionalTerms) -> f64 {
    t.mean_var_given_s / s.j as f64 + t.var_mean_given_s
}

/// Relative bias `(Ψ/J) / V[F̄]` of the current construction's sample
/// covariance.
pub fn relbias_current(s: &ScalarScenario) -> Result<f64> {
    let t = conditional_terms(s)?;
    let target = target_from(s, &t);
    if !(target > 0.0) {
        return Err(Error::domain("target variance is zero"));
    }
    Ok(psi_from(s, &t) / s.j as f64 / target)
}

/// Relative bias `Φ / (JQ · V[F̄])` of the alternative construction,
/// evaluated as `(Φ / (E[V[F|S]] + J·V[E[F|S]])) / Q`, which keeps the
/// result inside `[0, 1/Q]` under rounding whenever `Φ ≥ 0`.
pub fn relbias_alternative(s: &ScalarScenario) -> Result<f64> {
    let t = conditional_terms(s)?;
    relbias_alternative_from(s, &t)
}

fn relbias_alternative_from(s: &ScalarScenario, t: &ConditionalTerms) -> Result<f64> {
    let denom = t.mean_var_given_s + s.j as f64 * t.var_mean_given_s;
    if !(denom > 0.0) {
        return Err(Error::domain("target variance is zero"));
    }
    Ok(phi_from(s, t)? / denom / s.q as f64)
}

/// `V[M̄^C] − V[M̄^A] = Ψ/(JQ) − Φ/(JQ²)`.
pub fn mean_variance_gap(s: &ScalarScenario) -> Result<f64> {
    let t = conditional_terms(s)?;
    let (j, q) = (s.j as f64, s.q as f64);
    Ok(psi_from(s, &t) / (j * q) - phi_from(s, &t)? / (j * q * q))
}

/// Variance of the sample variance of `N` independent normals with common
/// variance `σ²` and fixed means whose own sample variance is `u²`.
pub fn var_of_sample_variance_normal(sigma2: f64, u2: f64, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::domain("sample variance needs N >= 2"));
    }
    if sigma2 < 0.0 || u2 < 0.0 {
        return Err(Error::domain("variances must be non-negative"));
    }
    let m = (n - 1) as f64;
    Ok(2.0 / m * sigma2 * sigma2 + 4.0 / m * sigma2 * u2)
}

/// `V[S²_{M̄_{j•}}] − V[S²_{N_j}]`: the difference between the variances of
/// the sample variance of the per-data-vector MC means and of the nominals.
pub fn sample_variance_variability_gap(s: &ScalarScenario) -> Result<f64> {
    s.validate()?;
    match s.kernel {
        ScalarKernel::Additive => Ok(0.0),
        ScalarKernel::Multiplicative => {
            let m = MomentSet::new(&s.y_dist, &s.s_dist)?;
            Ok(multiplicative_variability_gap(&m, s.j, s.q))
        }
        _ => Err(Error::unsupported(format!(
            "sample-variance variability gap has no closed form for the {} kernel",
            s.kernel.name()
        ))),
    }
}

/// Multiplicative-error closed form of [`sample_variance_variability_gap`]:
///
/// `σ⁴·V[S̄²] + (E[S̄⁴] − ν⁴)·V[S²_Y]`, with `S̄` the mean of `Q` errors and
/// `S²_Y` the sample variance of `J` data values.
///
/// Evaluated over the common denominator `Q³·J(J−1)`, so moment sets with
/// small integer moments give a correctly rounded result.
pub fn multiplicative_variability_gap(m: &MomentSet, j: usize, q: usize) -> f64 {
    let (nu, tau2, omega3, psi4) = (m.error.mean, m.error.var, m.error.third, m.error.fourth);
    let (sigma2, phi4) = (m.data.var, m.data.fourth);
    let (jf, qf) = (j as f64, q as f64);
    let tau4 = tau2 * tau2;
    let sigma4 = sigma2 * sigma2;
    let excess = psi4 - 3.0 * tau4;
    // Q³·V[S̄²] and Q³·(E[S̄⁴] − ν⁴)
    let var_mean_sq = (4.0 * nu * nu * tau2 * qf + 2.0 * tau4 + 4.0 * nu * omega3) * qf + excess;
    let fourth_excess = (6.0 * nu * nu * tau2 * qf + 3.0 * tau4 + 4.0 * nu * omega3) * qf + excess;
    // J(J−1)·V[S²_Y]
    let var_sample_var = (phi4 - sigma4) * (jf - 1.0) + 2.0 * sigma4;
    let jj = jf * (jf - 1.0);
    (sigma4 * var_mean_sq * jj + fourth_excess * var_sample_var) / (qf * qf * qf * jj)
}

/// Leading-order `V[S²_{M^A}] − V[S²_{M^C}] ≈ gap / J²`.
pub fn vardiff_sample_variances(s: &ScalarScenario) -> Result<f64> {
    let j = s.j as f64;
    Ok(sample_variance_variability_gap(s)? / (j * j))
}

/// `k(y) = E[y^S]` for `S ~ Unif[1 − α, 1 + α]`:
/// `y · sinh(α ln y) / (α ln y)`.
pub fn exponential_k(y: f64, alpha: f64) -> Result<f64> {
    if !(y > 0.0) || !y.is_finite() {
        return Err(Error::domain(format!("k(y) needs y > 0, got {y}")));
    }
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::domain(format!("k(y) needs 0 < alpha <= 1, got {alpha}")));
    }
    let x = alpha * y.ln();
    if x.abs() < 1e-6 {
        let x2 = x * x;
        return Ok(y * (1.0 + x2 / 6.0 + x2 * x2 / 120.0));
    }
    Ok(y * x.sinh() / x)
}

/// E[F(y, S) | Y = y] for a fixed data value.
pub fn conditional_mean_given_y(kernel: &ScalarKernel, y: f64, s_dist: &DistSpec) -> Result<f64> {
    let e = moments(s_dist)?;
    match kernel {
        ScalarKernel::Additive => Ok(y + e.mean),
        ScalarKernel::Multiplicative => Ok(y * e.mean),
        ScalarKernel::Phase if matches!(s_dist, DistSpec::Normal { .. }) => {
            Ok((y + e.mean).sin() * (-0.5 * e.var).exp())
        }
        _ => {
            let ms = Measure::of(s_dist, DEFAULT_NODES)?;
            let mut acc = 0.0;
            for &(sv, w) in &ms.atoms {
                acc += w * apply_scalar(kernel, y, sv)?;
            }
            Ok(acc)
        }
    }
}

/// Every analytic bias quantity of a scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub psi: f64,
    pub phi: f64,
    pub target_var: f64,
    pub relbias_current: f64,
    pub relbias_alternative: f64,
    pub mean_var_gap: f64,
}

pub fn bias_report(s: &ScalarScenario) -> Result<BiasReport> {
    let t = conditional_terms(s)?;
    let target = target_from(s, &t);
    if !(target > 0.0) {
        return Err(Error::domain("target variance is zero"));
    }
    let (j, q) = (s.j as f64, s.q as f64);
    let psi = psi_from(s, &t);
    let phi = phi_from(s, &t)?;
    Ok(BiasReport {
        psi,
        phi,
        target_var: target,
        relbias_current: psi / j / target,
        relbias_alternative: relbias_alternative_from(s, &t)?,
        mean_var_gap: psi / (j * q) - phi / (j * q * q),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate;
    use std::f64::consts::{E, PI};

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol * b.abs().max(1.0)
    }

    #[test]
    fn additive_is_bias_free() {
        let s = ScalarScenario::new(
            ScalarKernel::Additive,
            DistSpec::uniform_scalar(-2.0, 5.0),
            DistSpec::two_point_scalar(0.0, 3.0, 0.3),
            3,
            7,
        );
        assert_eq!(psi(&s).unwrap(), 0.0);
        assert_eq!(phi(&s).unwrap(), 0.0);
        assert_eq!(relbias_current(&s).unwrap(), 0.0);
        assert_eq!(relbias_alternative(&s).unwrap(), 0.0);
        assert_eq!(mean_variance_gap(&s).unwrap(), 0.0);
        assert_eq!(vardiff_sample_variances(&s).unwrap(), 0.0);
    }

    #[test]
    fn additive_target() {
        for j in [2, 4, 9] {
            let s = ScalarScenario::standard_normal(ScalarKernel::Additive, j, 10);
            assert!(close(target_variance(&s).unwrap(), 1.0 / j as f64 + 1.0, 1e-15));
        }
    }

    #[test]
    fn multiplicative_standard_normal() {
        let s = ScalarScenario::standard_normal(ScalarKernel::Multiplicative, 4, 10);
        assert_eq!(psi(&s).unwrap(), 0.0);
        assert_eq!(phi(&s).unwrap(), 1.0);
        assert_eq!(target_variance(&s).unwrap(), 0.25);
        for q in [1, 3, 10, 100, 300] {
            assert_eq!(relbias_alternative(&s.with_q(q)).unwrap(), 1.0 / q as f64);
        }
        assert!(close(mean_variance_gap(&s).unwrap(), -0.0025, 1e-15));
    }

    #[test]
    fn multiplicative_nonzero_means_below_bound() {
        let s = ScalarScenario::new(
            ScalarKernel::Multiplicative,
            DistSpec::normal_scalar(1.0, 1.0),
            DistSpec::normal_scalar(1.0, 1.0),
            4,
            100,
        );
        // (1/Q) · V[S]V[Ȳ] / (V[S]V[Ȳ] + V[S]E²[Y] + V[Ȳ]E²[S])
        let v_ybar = 1.0 / 4.0;
        let direct = v_ybar / (v_ybar + 1.0 + v_ybar) / 100.0;
        let got = relbias_alternative(&s).unwrap();
        assert!(close(got, direct, 1e-14));
        assert!(got < 0.01);
    }

    #[test]
    fn phase_extremal_values() {
        for j in [2, 4, 8] {
            let s = ScalarScenario::phase_extremal(j, 100);
            let r = bias_report(&s).unwrap();
            assert!(close(r.psi, 1.0, 1e-12), "psi {}", r.psi);
            assert!(close(r.target_var, 0.5 / j as f64, 1e-12));
            assert!(close(r.relbias_current, 2.0, 1e-12));
            assert!(close(r.phi, 0.5, 1e-12));
        }
    }

    #[test]
    fn phase_uniform_data_matches_closed_form() {
        // Ψ = (1 − sin²δ/δ²) V[sin Y], V[sin Y] for Y ~ Unif[a, b]
        let (a, b, d) = (-0.3, 1.7, 1.2);
        let s = ScalarScenario::new(
            ScalarKernel::Phase,
            DistSpec::uniform_scalar(a, b),
            DistSpec::uniform_scalar(-d, d),
            3,
            5,
        );
        let w = b - a;
        let m1 = (a.cos() - b.cos()) / w;
        let m2 = 0.5 - ((2.0 * b).sin() - (2.0 * a).sin()) / (4.0 * w);
        let want = (1.0 - (d.sin() / d).powi(2)) * (m2 - m1 * m1);
        assert!(close(psi(&s).unwrap(), want, 1e-13));
        assert!(phi(&s).unwrap() > 0.0);
    }

    #[test]
    fn mean_variance_gap_phase() {
        let s = ScalarScenario::phase_extremal(4, 100);
        let got = mean_variance_gap(&s).unwrap();
        assert!(close(got, 1.0 / 400.0 - 0.5 / 40000.0, 1e-12));
    }

    #[test]
    fn lemma5_formula() {
        assert_eq!(var_of_sample_variance_normal(1.0, 0.0, 2).unwrap(), 2.0);
        assert_eq!(var_of_sample_variance_normal(0.0, 3.0, 7).unwrap(), 0.0);
        assert!(close(var_of_sample_variance_normal(1.0, 2.0, 11).unwrap(), 1.0, 1e-15));
        assert!(var_of_sample_variance_normal(1.0, 0.0, 1).is_err());
    }

    #[test]
    fn variability_gap_standard_normal() {
        for q in [1, 2, 5, 50, 500] {
            let s = ScalarScenario::standard_normal(ScalarKernel::Multiplicative, 4, q);
            let g = sample_variance_variability_gap(&s).unwrap();
            let qf = q as f64;
            assert_eq!(g, 4.0 / (qf * qf), "q={q}");
            assert_eq!(vardiff_sample_variances(&s).unwrap(), 4.0 / (qf * qf) / 16.0);
        }
        let p = ScalarScenario::phase_extremal(4, 5);
        assert!(matches!(
            sample_variance_variability_gap(&p),
            Err(Error::Unsupported(_))
        ));
    }

    #[test]
    fn variability_gap_general_moments() {
        // term-by-term form of the same expression
        let m = MomentSet::new(&DistSpec::uniform_scalar(-1.0, 3.0), &DistSpec::two_point_scalar(0.5, 2.0, 0.3)).unwrap();
        let (nu, t2, w3, p4) = (m.error.mean, m.error.var, m.error.third, m.error.fourth);
        let (s2, f4) = (m.data.var, m.data.fourth);
        for (j, q) in [(2, 3), (4, 10), (7, 200)] {
            let (jf, qf) = (j as f64, q as f64);
            let vs = (f4 - s2 * s2) / jf + 2.0 * s2 * s2 / (jf * (jf - 1.0));
            let a = 4.0 * nu * nu * t2 / qf + (2.0 * t2 * t2 + 4.0 * nu * w3) / qf.powi(2) + (p4 - 3.0 * t2 * t2) / qf.powi(3);
            let b = 6.0 * nu * nu * t2 / qf + (3.0 * t2 * t2 + 4.0 * nu * w3) / qf.powi(2) + (p4 - 3.0 * t2 * t2) / qf.powi(3);
            let want = s2 * s2 * a + b * vs;
            assert!(close(multiplicative_variability_gap(&m, j, q), want, 1e-13));
        }
    }

    #[test]
    fn k_function() {
        assert_eq!(exponential_k(1.0, 0.5).unwrap(), 1.0);
        let k = exponential_k(E, 1.0).unwrap();
        assert!(close(k, E * 1f64.sinh(), 1e-15));
        assert!((k - 3.19452).abs() < 1e-5);
        // E[e^S] for S ~ Unif[0, 2]
        let quad = integrate(0.0, 2.0, 64, |s| E.powf(s)) / 2.0;
        assert!(close(k, quad, 1e-14));
        assert!(close(exponential_k(3.0, 1e-9).unwrap(), 3.0, 1e-15));
        // series branch agrees with the direct formula just outside it
        let y = (2e-6_f64).exp();
        let direct = y * (y.ln()).sinh() / y.ln();
        assert!(close(exponential_k(y, 1.0).unwrap(), direct, 1e-14));
        assert!(exponential_k(0.0, 0.5).is_err());
        assert!(exponential_k(2.0, 0.0).is_err());
        assert!(exponential_k(2.0, 1.5).is_err());
    }

    #[test]
    fn exponential_terms_match_k_route() {
        // V[k(Y)] two ways for a > 0 where Y-quadrature of k is smooth
        let (a, b, alpha) = (0.5, 4.0, 0.8);
        let s = ScalarScenario::exponential(a, b, alpha, 2, 10);
        let t = conditional_terms(&s).unwrap();
        let mean_k = integrate(a, b, 256, |y| exponential_k(y, alpha).unwrap()) / (b - a);
        let mean_k2 = integrate(a, b, 256, |y| exponential_k(y, alpha).unwrap().powi(2)) / (b - a);
        assert!(close(t.var_mean_given_y, mean_k2 - mean_k * mean_k, 1e-12));
        assert!(close(t.nominal_var, (b - a).powi(2) / 12.0, 1e-12));
        assert!(close(t.mean, mean_k, 1e-13));
    }

    #[test]
    fn exponential_node_doubling() {
        for (a, b, alpha) in [(0.0, 8.0, 0.95), (0.0, 0.3, 0.95), (2.0, 2.5, 0.35), (0.0, 1.0, 1.0)] {
            let s = ScalarScenario::exponential(a, b, alpha, 2, 10);
            let p1 = conditional_terms_with(&s, 256).map(|t| t.nominal_var - t.var_mean_given_y).unwrap();
            let p2 = conditional_terms_with(&s, 512).map(|t| t.nominal_var - t.var_mean_given_y).unwrap();
            assert!((p1 - p2).abs() <= 1e-8 * p2.abs(), "{a} {b} {alpha}: {p1} vs {p2}");
        }
    }

    #[test]
    fn unsupported_pairings() {
        let s = ScalarScenario::new(
            ScalarKernel::Phase,
            DistSpec::normal_scalar(0.0, 1.0),
            DistSpec::uniform_scalar(-1.0, 1.0),
            2,
            3,
        );
        assert!(matches!(psi(&s), Err(Error::Unsupported(_))));
        let e = ScalarScenario::new(
            ScalarKernel::Exponential,
            DistSpec::uniform_scalar(-1.0, 1.0),
            DistSpec::uniform_scalar(0.5, 1.5),
            2,
            3,
        );
        assert!(psi(&e).is_err());
        assert!(ScalarScenario::standard_normal(ScalarKernel::Additive, 1, 3)
            .validate()
            .is_err());
    }

    #[test]
    fn conditional_mean_routes() {
        let u = DistSpec::uniform_scalar(-PI, PI);
        let got = conditional_mean_given_y(&ScalarKernel::Phase, PI / 2.0, &u).unwrap();
        assert!(got.abs() < 1e-14);
        let d = 0.7;
        let u = DistSpec::uniform_scalar(-d, d);
        let got = conditional_mean_given_y(&ScalarKernel::Phase, 0.4, &u).unwrap();
        assert!(close(got, 0.4f64.sin() * d.sin() / d, 1e-14));
        let s = DistSpec::uniform_scalar(0.05, 1.95);
        let got = conditional_mean_given_y(&ScalarKernel::Exponential, 3.0, &s).unwrap();
        assert!(close(got, exponential_k(3.0, 0.95).unwrap(), 1e-13));
    }
}
