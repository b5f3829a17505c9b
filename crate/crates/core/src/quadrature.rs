//! Gauss–Legendre quadrature and discrete quadrature measures for scalar laws.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::error_models::DistSpec;

/// Nodes and weights on `[-1, 1]`.
#[derive(Debug, Clone)]
pub struct GaussLegendre {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl GaussLegendre {
    /// Newton iteration on `P_n` from the Tricomi initial guesses.
    fn compute(n: usize) -> Self {
        assert!(n >= 1, "Gauss-Legendre rule needs at least one node");
        let mut nodes = vec![0.0; n];
        let mut weights = vec![0.0; n];
        let m = n.div_ceil(2);
        let nf = n as f64;
        for i in 0..m {
            let mut x = (PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
            let mut dp = 0.0;
            for _ in 0..100 {
                let (p, d) = legendre_with_derivative(n, x);
                dp = d;
                let dx = p / d;
                x -= dx;
                if dx.abs() <= 1e-16 * x.abs().max(1.0) {
                    break;
                }
            }
            let (_, d) = legendre_with_derivative(n, x);
            if d.is_finite() {
                dp = d;
            }
            let w = 2.0 / ((1.0 - x * x) * dp * dp);
            nodes[i] = -x;
            nodes[n - 1 - i] = x;
            weights[i] = w;
            weights[n - 1 - i] = w;
        }
        if n % 2 == 1 {
            nodes[n / 2] = 0.0;
        }
        GaussLegendre { nodes, weights }
    }

    /// Cached rule with `n` nodes.
    pub fn rule(n: usize) -> Arc<GaussLegendre> {
        static CACHE: OnceLock<Mutex<HashMap<usize, Arc<GaussLegendre>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let mut guard = cache.lock().unwrap_or_else(|e| e.into_inner());
        guard
            .entry(n)
            .or_insert_with(|| Arc::new(GaussLegendre::compute(n)))
            .clone()
    }

    /// Nodes and weights mapped onto `[a, b]`.
    pub fn mapped(&self, a: f64, b: f64) -> impl Iterator<Item = (f64, f64)> + '_ {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&x, &w)| (mid + half * x, half * w))
    }

    pub fn integrate(&self, a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
        self.mapped(a, b).map(|(x, w)| w * f(x)).sum()
    }
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let p = if n == 0 { 1.0 } else { p1 };
    let prev = if n == 0 { 0.0 } else { p0 };
    let d = n as f64 * (x * p - prev) / (x * x - 1.0);
    (p, d)
}

/// `∫_a^b f` with an `n`-node Gauss–Legendre rule.
pub fn integrate(a: f64, b: f64, n: usize, f: impl Fn(f64) -> f64) -> f64 {
    GaussLegendre::rule(n).integrate(a, b, f)
}

/// A probability law replaced by weighted atoms: exact for two-point laws,
/// Gauss–Legendre for uniform laws.
#[derive(Debug, Clone, PartialEq)]
pub struct Measure {
    pub atoms: Vec<(f64, f64)>,
}

impl Measure {
    /// Quadrature measure for a scalar law; uniform laws use `n` nodes.
    pub fn of(dist: &DistSpec, n: usize) -> Result<Measure> {
        dist.validate()?;
        if dist.dim() != 1 {
            return Err(Error::unsupported("quadrature measures are scalar only"));
        }
        let atoms = match dist {
            DistSpec::Uniform { lo, hi } => {
                let (a, b) = (lo[0], hi[0]);
                if a == b {
                    vec![(a, 1.0)]
                } else {
                    let scale = 1.0 / (b - a);
                    GaussLegendre::rule(n)
                        .mapped(a, b)
                        .map(|(x, w)| (x, w * scale))
                        .collect()
                }
            }
            DistSpec::TwoPoint { a, b, p } => vec![(a[0], *p), (b[0], 1.0 - *p)],
            DistSpec::Normal { .. } => {
                return Err(Error::unsupported(
                    "no quadrature measure for normal laws (uniform and two-point only)",
                ))
            }
        };
        Ok(Measure { atoms })
    }

    /// Law of `S + S'` for independent copies `S, S'` of `dist`.
    ///
    /// For a uniform law the sum has a triangular density; each linear half
    /// gets its own `n`-node rule so the integrand stays polynomial-friendly.
    pub fn of_pair_sum(dist: &DistSpec, n: usize) -> Result<Measure> {
        dist.validate()?;
        if dist.dim() != 1 {
            return Err(Error::unsupported("quadrature measures are scalar only"));
        }
        match dist {
            DistSpec::Uniform { lo, hi } if lo[0] < hi[0] => {
                let (c, d) = (lo[0], hi[0]);
                let w2 = (d - c) * (d - c);
                let rule = GaussLegendre::rule(n);
                let mut atoms = Vec::with_capacity(2 * n);
                atoms.extend(rule.mapped(2.0 * c, c + d).map(|(t, w)| (t, w * (t - 2.0 * c) / w2)));
                atoms.extend(rule.mapped(c + d, 2.0 * d).map(|(t, w)| (t, w * (2.0 * d - t) / w2)));
                Ok(Measure { atoms })
            }
            _ => {
                let m = Measure::of(dist, n)?;
                let mut atoms = Vec::with_capacity(m.atoms.len().pow(2));
                for &(x, wx) in &m.atoms {
                    for &(y, wy) in &m.atoms {
                        atoms.push((x + y, wx * wy));
                    }
                }
                Ok(Measure { atoms })
            }
        }
    }

    pub fn expect(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.atoms.iter().map(|&(x, w)| w * f(x)).sum()
    }

    /// Variance of `f(X)`, computed in centered form.
    pub fn variance(&self, f: impl Fn(f64) -> f64) -> f64 {
        let vals: Vec<f64> = self.atoms.iter().map(|&(x, _)| f(x)).collect();
        let mean: f64 = self.atoms.iter().zip(&vals).map(|(&(_, w), v)| w * v).sum();
        self.atoms
            .iter()
            .zip(&vals)
            .map(|(&(_, w), v)| w * (v - mean) * (v - mean))
            .sum()
    }
}
