//! Error models: the componentwise transformation `F(y, s)` with its scalar
//! kernels, and the distributions of the data and systematic errors.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rand::distr::Open01;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{scaled_rotation_factor, Mat};
use crate::rng::RngStream;

/// User-supplied scalar kernel. Must be pure and deterministic.
#[derive(Clone)]
pub struct CustomKernel {
    pub name: String,
    pub f: Arc<dyn Fn(f64, f64) -> f64 + Send + Sync>,
}

impl CustomKernel {
    pub fn new(name: impl Into<String>, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        CustomKernel {
            name: name.into(),
            f: Arc::new(f),
        }
    }
}

impl fmt::Debug for CustomKernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "CustomKernel({})", self.name)
    }
}

impl PartialEq for CustomKernel {
    fn eq(&self, other: &Self) -> bool {
        self.name == other.name && Arc::ptr_eq(&self.f, &other.f)
    }
}

/// The scalar function `f(y, s)` applied componentwise by `F`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScalarKernel {
    /// `y + s`
    Additive,
    /// `y · s`
    Multiplicative,
    /// `sin(y + s)`
    Phase,
    /// `y^s`, defined for `y > 0`
    Exponential,
    /// Not representable in config files.
    #[serde(skip)]
    Custom(CustomKernel),
}

impl ScalarKernel {
    pub fn name(&self) -> &str {
        match self {
            ScalarKernel::Additive => "additive",
            ScalarKernel::Multiplicative => "multiplicative",
            ScalarKernel::Phase => "phase",
            ScalarKernel::Exponential => "exponential",
            ScalarKernel::Custom(c) => &c.name,
        }
    }
}

impl std::str::FromStr for ScalarKernel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "additive" => Ok(ScalarKernel::Additive),
            "multiplicative" => Ok(ScalarKernel::Multiplicative),
            "phase" => Ok(ScalarKernel::Phase),
            "exponential" => Ok(ScalarKernel::Exponential),
            other => Err(Error::config(format!("unknown model `{other}`"))),
        }
    }
}

/// `f(y, s)` for one component.
#[inline]
pub fn apply_scalar(kernel: &ScalarKernel, y: f64, s: f64) -> Result<f64> {
    match kernel {
        ScalarKernel::Additive => Ok(y + s),
        ScalarKernel::Multiplicative => Ok(y * s),
        ScalarKernel::Phase => Ok((y + s).sin()),
        ScalarKernel::Exponential => {
            if y > 0.0 {
                Ok(y.powf(s))
            } else {
                Err(Error::domain(format!(
                    "exponential kernel needs y > 0, got {y}"
                )))
            }
        }
        ScalarKernel::Custom(c) => Ok((c.f)(y, s)),
    }
}

/// Kernel plus the optional `T_Y`, `T_S` pre-transforms (identity when
/// absent).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformSpec {
    pub kernel: ScalarKernel,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_y: Option<Mat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub t_s: Option<Mat>,
}

impl TransformSpec {
    pub fn new(kernel: ScalarKernel) -> Self {
        TransformSpec {
            kernel,
            t_y: None,
            t_s: None,
        }
    }

    pub fn validate(&self, k: usize) -> Result<()> {
        for (name, m) in [("t_y", &self.t_y), ("t_s", &self.t_s)] {
            if let Some(m) = m {
                if m.rows() != k || m.cols() != k {
                    return Err(Error::dim(format!(
                        "{name} is {}x{}, expected {k}x{k}",
                        m.rows(),
                        m.cols()
                    )));
                }
                if !m.is_finite() {
                    return Err(Error::domain(format!("{name} has non-finite entries")));
                }
            }
        }
        Ok(())
    }
}

/// `F(y, s)` evaluated into `out`. Allocation-free when no `T` matrices
/// are set.
pub fn apply_vector_into(spec: &TransformSpec, y: &[f64], s: &[f64], out: &mut [f64]) -> Result<()> {
    if y.len() != s.len() || y.len() != out.len() {
        return Err(Error::dim(format!(
            "F(y, s) with |y| = {}, |s| = {}",
            y.len(),
            s.len()
        )));
    }
    let ty;
    let y = match &spec.t_y {
        Some(m) => {
            ty = m.mul_vec(y)?;
            &ty[..]
        }
        None => y,
    };
    let ts;
    let s = match &spec.t_s {
        Some(m) => {
            ts = m.mul_vec(s)?;
            &ts[..]
        }
        None => s,
    };
    for ((o, &yk), &sk) in out.iter_mut().zip(y).zip(s) {
        *o = apply_scalar(&spec.kernel, yk, sk)?;
    }
    Ok(())
}

/// `F(y, s)`: the kernel applied componentwise to `(T_Y y, T_S s)`.
pub fn apply_vector(spec: &TransformSpec, y: &[f64], s: &[f64]) -> Result<Vec<f64>> {
    let mut out = vec![0.0; y.len()];
    apply_vector_into(spec, y, s, &mut out)?;
    Ok(out)
}

/// Distribution of a data vector `Y_j` or an error vector `S_q`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DistSpec {
    Normal { mean: Vec<f64>, cov: Mat },
    /// Independent components, `lo[k] ≤ x[k] ≤ hi[k]`.
    Uniform { lo: Vec<f64>, hi: Vec<f64> },
    /// The whole vector equals `a` with probability `p`, otherwise `b`.
    TwoPoint { a: Vec<f64>, b: Vec<f64>, p: f64 },
}

impl DistSpec {
    pub fn normal_scalar(mean: f64, var: f64) -> Self {
        DistSpec::Normal {
            mean: vec![mean],
            cov: Mat::diag(&[var]),
        }
    }

    pub fn uniform_scalar(lo: f64, hi: f64) -> Self {
        DistSpec::Uniform {
            lo: vec![lo],
            hi: vec![hi],
        }
    }

    pub fn two_point_scalar(a: f64, b: f64, p: f64) -> Self {
        DistSpec::TwoPoint {
            a: vec![a],
            b: vec![b],
            p,
        }
    }

    /// The extremal phase data law: `±π/2` with equal probability.
    pub fn phase_extremal_data() -> Self {
        Self::two_point_scalar(-PI / 2.0, PI / 2.0, 0.5)
    }

    pub fn dim(&self) -> usize {
        match self {
            DistSpec::Normal { mean, .. } => mean.len(),
            DistSpec::Uniform { lo, .. } => lo.len(),
            DistSpec::TwoPoint { a, .. } => a.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |v: &[f64]| v.iter().all(|x| x.is_finite());
        match self {
            DistSpec::Normal { mean, cov } => {
                if mean.is_empty() {
                    return Err(Error::domain("normal law with empty mean"));
                }
                if cov.rows() != mean.len() || cov.cols() != mean.len() {
                    return Err(Error::dim(format!(
                        "normal law: mean has length {}, cov is {}x{}",
                        mean.len(),
                        cov.rows(),
                        cov.cols()
                    )));
                }
                if !finite(mean) || !cov.is_finite() {
                    return Err(Error::domain("normal law with non-finite parameters"));
                }
                if !cov.is_symmetric() {
                    return Err(Error::domain("normal law covariance is not symmetric"));
                }
                scaled_rotation_factor(cov)
                    .map_err(|_| Error::domain("normal law covariance is not PSD"))?;
            }
            DistSpec::Uniform { lo, hi } => {
                if lo.is_empty() || lo.len() != hi.len() {
                    return Err(Error::dim("uniform law bounds have mismatched lengths"));
                }
                if !finite(lo) || !finite(hi) {
                    return Err(Error::domain("uniform law with non-finite bounds"));
                }
                if lo.iter().zip(hi).any(|(l, h)| l > h) {
                    return Err(Error::domain("uniform law needs lo <= hi"));
                }
            }
            DistSpec::TwoPoint { a, b, p } => {
                if a.is_empty() || a.len() != b.len() {
                    return Err(Error::dim("two-point law atoms have mismatched lengths"));
                }
                if !finite(a) || !finite(b) {
                    return Err(Error::domain("two-point law with non-finite atoms"));
                }
                if !(*p > 0.0 && *p < 1.0) {
                    return Err(Error::domain(format!("two-point law needs 0 < p < 1, got {p}")));
                }
            }
        }
        Ok(())
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            DistSpec::Normal { mean, .. } => mean.clone(),
            DistSpec::Uniform { lo, hi } => lo.iter().zip(hi).map(|(l, h)| 0.5 * (l + h)).collect(),
            DistSpec::TwoPoint { a, b, p } => {
                a.iter().zip(b).map(|(x, y)| p * x + (1.0 - p) * y).collect()
            }
        }
    }

    pub fn covariance(&self) -> Mat {
        match self {
            DistSpec::Normal { cov, .. } => cov.clone(),
            DistSpec::Uniform { lo, hi } => {
                let d: Vec<f64> = lo.iter().zip(hi).map(|(l, h)| (h - l).powi(2) / 12.0).collect();
                Mat::diag(&d)
            }
            DistSpec::TwoPoint { a, b, p } => {
                let k = a.len();
                let w = p * (1.0 - p);
                let mut m = Mat::zeros(k, k);
                for i in 0..k {
                    for j in 0..k {
                        m[(i, j)] = w * (b[i] - a[i]) * (b[j] - a[j]);
                    }
                }
                m
            }
        }
    }

    /// Precompute whatever sampling needs (the normal factor).
    pub fn prepare(&self) -> Result<PreparedDist> {
        self.validate()?;
        let factor = match self {
            DistSpec::Normal { cov, .. } => Some(scaled_rotation_factor(cov)?),
            _ => None,
        };
        Ok(PreparedDist {
            spec: self.clone(),
            factor,
        })
    }
}

/// A validated [`DistSpec`] ready for repeated sampling.
#[derive(Debug, Clone)]
pub struct PreparedDist {
    spec: DistSpec,
    factor: Option<Mat>,
}

impl PreparedDist {
    pub fn spec(&self) -> &DistSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim()
    }

    /// One draw written into `out`.
    pub fn draw_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match &self.spec {
            DistSpec::Normal { mean, .. } => {
                let factor = self.factor.as_ref().expect("prepared normal has a factor");
                let k = mean.len();
                if k == 1 {
                    let z: f64 = rng.sample(StandardNormal);
                    out[0] = mean[0] + factor[(0, 0)] * z;
                } else {
                    let z: Vec<f64> = (0..k).map(|_| rng.sample(StandardNormal)).collect();
                    out.copy_from_slice(mean);
                    factor.mul_vec_add_into(&z, 1.0, out);
                }
            }
            DistSpec::Uniform { lo, hi } => {
                // open interval: endpoints are never produced, so y > 0 holds
                // for Unif[0, b] data under the exponential kernel
                for ((o, l), h) in out.iter_mut().zip(lo).zip(hi) {
                    let u: f64 = rng.sample(Open01);
                    *o = l + (h - l) * u;
                }
            }
            DistSpec::TwoPoint { a, b, p } => {
                let u: f64 = rng.random();
                out.copy_from_slice(if u < *p { a } else { b });
            }
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.draw_into(rng, &mut out);
        out
    }

    /// `n` i.i.d. draws as rows of an `n × K` matrix.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Mat {
        let k = self.dim();
        let mut m = Mat::zeros(n, k);
        for i in 0..n {
            self.draw_into(rng, m.row_mut(i));
        }
        m
    }
}

/// `n` i.i.d. draws from `dist`, one per row.
pub fn sample(dist: &DistSpec, n: usize, stream: &mut RngStream) -> Result<Mat> {
    if n == 0 {
        return Err(Error::domain("sample size must be at least 1"));
    }
    Ok(dist.prepare()?.sample(n, stream))
}

/// Mean and central moments of a scalar law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CentralMoments {
    pub mean: f64,
    /// second central moment
    pub var: f64,
    /// third central moment
    pub third: f64,
    /// fourth central moment
    pub fourth: f64,
}

/// Moments of the error law (ν, τ², ω³, ψ⁴) together with those of the
/// data law (σ², φ⁴) as used by the sample-variance variability formulas.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub error: CentralMoments,
    pub data: CentralMoments,
}

impl MomentSet {
    pub fn new(data: &DistSpec, error: &DistSpec) -> Result<Self> {
        Ok(MomentSet {
            error: moments(error)?,
            data: moments(data)?,
        })
    }
}

/// Exact moments of a scalar (K = 1) law.
pub fn moments(dist: &DistSpec) -> Result<CentralMoments> {
    dist.validate()?;
    if dist.dim() != 1 {
        return Err(Error::unsupported(format!(
            "closed-form moments only for scalar laws, got K = {}",
            dist.dim()
        )));
    }
    Ok(match dist {
        DistSpec::Normal { mean, cov } => {
            let v = cov[(0, 0)];
            CentralMoments {
                mean: mean[0],
                var: v,
                third: 0.0,
                fourth: 3.0 * v * v,
            }
        }
        DistSpec::Uniform { lo, hi } => {
            let w = hi[0] - lo[0];
            CentralMoments {
                mean: 0.5 * (lo[0] + hi[0]),
                var: w * w / 12.0,
                third: 0.0,
                fourth: w.powi(4) / 80.0,
            }
        }
        DistSpec::TwoPoint { a, b, p } => {
            // X = a + d·B with B ~ Bernoulli(q), q = 1 - p
            let (p, q) = (*p, 1.0 - *p);
            let d = b[0] - a[0];
            let pq = p * q;
            CentralMoments {
                mean: p * a[0] + q * b[0],
                var: d * d * pq,
                third: d.powi(3) * pq * (p - q),
                fourth: d.powi(4) * pq * (1.0 - 3.0 * pq),
            }
        }
    })
}
