//! Small sample-statistics helpers. All reductions run left to right over the
//! slice, so results only depend on the order of the input.

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() as f64 - 1.0)
}

/// Unbiased sample covariance.
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    debug_assert_eq!(xs.len(), ys.len());
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() as f64 - 1.0)
}

/// Standard error of the sample mean.
pub fn std_error(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Standard error of the sample variance from its influence function
/// `(x − x̄)²`.
pub fn variance_std_error(xs: &[f64]) -> f64 {
    let m = mean(xs);
    let sq: Vec<f64> = xs.iter().map(|x| (x - m) * (x - m)).collect();
    std_error(&sq)
}

/// Centered products `(x − x̄)(y − ȳ)`, the influence values of a sample
/// covariance.
pub fn centered_products(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let (mx, my) = (mean(xs), mean(ys));
    xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).collect()
}

/// `(point − reference) / se`; `0` when both the gap and `se` vanish,
/// undefined when only `se` does.
pub fn z_score(point: f64, reference: f64, se: f64) -> Option<f64> {
    let gap = point - reference;
    if se > 0.0 {
        Some(gap / se)
    } else if gap == 0.0 {
        Some(0.0)
    } else {
        None
    }
}

/// Shifted running sums of `N` jointly observed values, enough to recover
/// every sample covariance. Merging is plain addition.
#[derive(Debug, Clone)]
pub struct CrossMoments<const N: usize> {
    shift: [f64; N],
    n: usize,
    sum: [f64; N],
    prod: [[f64; N]; N],
}

impl<const N: usize> CrossMoments<N> {
    pub fn new(shift: [f64; N]) -> Self {
        CrossMoments {
            shift,
            n: 0,
            sum: [0.0; N],
            prod: [[0.0; N]; N],
        }
    }

    pub fn push(&mut self, x: [f64; N]) {
        let mut d = [0.0; N];
        for a in 0..N {
            d[a] = x[a] - self.shift[a];
            self.sum[a] += d[a];
        }
        for a in 0..N {
            for b in a..N {
                self.prod[a][b] += d[a] * d[b];
            }
        }
        self.n += 1;
    }

    pub fn merge(&mut self, other: &Self) {
        debug_assert_eq!(self.shift, other.shift);
        self.n += other.n;
        for a in 0..N {
            self.sum[a] += other.sum[a];
            for b in a..N {
                self.prod[a][b] += other.prod[a][b];
            }
        }
    }

    pub fn count(&self) -> usize {
        self.n
    }

    pub fn cov(&self, a: usize, b: usize) -> f64 {
        let (a, b) = if a <= b { (a, b) } else { (b, a) };
        let n = self.n as f64;
        (self.prod[a][b] - self.sum[a] * self.sum[b] / n) / (n - 1.0)
    }
}
