//! Dense matrix kernels and sampling statistics.
//!
//! Vectors are plain `Vec<f64>` / `&[f64]`. A [`Mat`] is row-major and doubles
//! as a batch of observations: each row is one measurement vector.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JACOBI_MAX_SWEEPS: usize = 100;
const JACOBI_REL_TOL: f64 = 1e-14;
const SYMMETRY_REL_TOL: f64 = 1e-10;
const EIGEN_CLAMP_REL: f64 = 1e-10;

/// Row-major dense matrix. Serializes as an array of rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<f64>>", into = "Vec<Vec<f64>>")]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Mat {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Mat::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Mat::zeros(d.len(), d.len());
        for (i, &v) in d.iter().enumerate() {
            m[(i, i)] = v;
        }
        m
    }

    /// Build from row-major storage.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows * cols != data.len() {
            return Err(Error::dim(format!(
                "{rows}x{cols} matrix needs {} entries, got {}",
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Stack equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map(|r| r.as_ref().len()).unwrap_or(0);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(Error::dim(format!(
                    "row {i} has length {}, expected {cols}",
                    r.len()
                )));
            }
            data.extend_from_slice(r);
        }
        Ok(Mat {
            rows: rows.len(),
            cols,
            data,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        let c = self.cols;
        &mut self.data[i * c..(i + 1) * c]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[f64]> + '_ {
        // chunks_exact(0) panics, and a 0-column matrix has no meaningful rows
        let c = self.cols.max(1);
        self.data.chunks_exact(c).take(self.rows)
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.row_iter().map(<[f64]>::to_vec).collect()
    }

    pub fn transpose(&self) -> Mat {
        let mut t = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn matmul(&self, other: &Mat) -> Result<Mat> {
        if self.cols != other.rows {
            return Err(Error::dim(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Mat::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        Ok(out)
    }

    /// `self · v`.
    pub fn mul_vec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.cols != v.len() {
            return Err(Error::dim(format!(
                "{}x{} matrix times length-{} vector",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// Accumulate `out += scale · self · v` without allocating.
    pub fn mul_vec_add_into(&self, v: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(self.cols, v.len());
        debug_assert_eq!(self.rows, out.len());
        for (o, r) in out.iter_mut().zip(self.row_iter()) {
            *o += scale * dot(r, v);
        }
    }

    /// Largest absolute entry (the max-norm).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// Induced infinity norm (max absolute row sum).
    pub fn norm_inf(&self) -> f64 {
        self.row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn norm_frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sub(&self, other: &Mat) -> Result<Mat> {
        if self.rows != other.rows || self.cols != other.cols {
            return Err(Error::dim("matrix subtraction shape mismatch"));
        }
        let data = self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a - b)
            .collect();
        Ok(Mat {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Symmetric within `SYMMETRY_REL_TOL` relative to the largest entry.
    pub fn is_symmetric(&self) -> bool {
        if !self.is_square() {
            return false;
        }
        let tol = SYMMETRY_REL_TOL * self.max_abs();
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                if (self[(i, j)] - self[(j, i)]).abs() > tol {
                    return false;
                }
            }
        }
        true
    }
}

impl TryFrom<Vec<Vec<f64>>> for Mat {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        Mat::from_rows(&rows)
    }
}

impl From<Mat> for Vec<Vec<f64>> {
    fn from(m: Mat) -> Self {
        m.to_rows()
    }
}

impl std::ops::Index<(usize, usize)> for Mat {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Mat {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Componentwise arithmetic mean of the rows.
pub fn sample_mean(rows: &Mat) -> Result<Vec<f64>> {
    if rows.rows() == 0 {
        return Err(Error::domain("sample mean of an empty batch"));
    }
    let mut mean = vec![0.0; rows.cols()];
    for r in rows.row_iter() {
        for (m, v) in mean.iter_mut().zip(r) {
            *m += v;
        }
    }
    let n = rows.rows() as f64;
    mean.iter_mut().for_each(|m| *m /= n);
    // one refinement pass; also makes the mean of a constant column exact
    let mut resid = vec![0.0; rows.cols()];
    for r in rows.row_iter() {
        for ((e, v), m) in resid.iter_mut().zip(r).zip(&mean) {
            *e += v - m;
        }
    }
    for (m, e) in mean.iter_mut().zip(resid) {
        *m += e / n;
    }
    Ok(mean)
}

/// Unbiased (1/(n-1)) sample covariance of the rows. The result is exactly
/// symmetric: only the upper triangle is accumulated and then mirrored.
pub fn sample_covariance(rows: &Mat) -> Result<Mat> {
    if rows.rows() < 2 {
        return Err(Error::domain(format!(
            "sample covariance needs at least 2 rows, got {}",
            rows.rows()
        )));
    }
    let mean = sample_mean(rows)?;
    let k = rows.cols();
    let mut cov = Mat::zeros(k, k);
    let mut dev = vec![0.0; k];
    for r in rows.row_iter() {
        for ((d, v), m) in dev.iter_mut().zip(r).zip(&mean) {
            *d = v - m;
        }
        for a in 0..k {
            for b in a..k {
                cov[(a, b)] += dev[a] * dev[b];
            }
        }
    }
    let denom = (rows.rows() - 1) as f64;
    for a in 0..k {
        for b in a..k {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    Ok(cov)
}

/// Sample cross-covariance `(1/(n-1)) Σ (a_i - ā)(b_i - b̄)ᵀ`.
pub fn cross_covariance(rows_a: &Mat, rows_b: &Mat) -> Result<Mat> {
    if rows_a.rows() != rows_b.rows() {
        return Err(Error::domain(format!(
            "cross covariance of {} and {} observations",
            rows_a.rows(),
            rows_b.rows()
        )));
    }
    if rows_a.rows() < 2 {
        return Err(Error::domain("cross covariance needs at least 2 rows"));
    }
    let ma = sample_mean(rows_a)?;
    let mb = sample_mean(rows_b)?;
    let (ka, kb) = (rows_a.cols(), rows_b.cols());
    let mut out = Mat::zeros(ka, kb);
    for (ra, rb) in rows_a.row_iter().zip(rows_b.row_iter()) {
        for a in 0..ka {
            let da = ra[a] - ma[a];
            for b in 0..kb {
                out[(a, b)] += da * (rb[b] - mb[b]);
            }
        }
    }
    let denom = (rows_a.rows() - 1) as f64;
    out.data.iter_mut().for_each(|v| *v /= denom);
    Ok(out)
}

/// Eigendecomposition `m = u · diag(d) · uᵀ` of a real symmetric matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    /// Orthogonal matrix whose columns are eigenvectors.
    pub u: Mat,
    /// Eigenvalues in descending order.
    pub d: Vec<f64>,
}

impl EigenPair {
    pub fn reconstruct(&self) -> Mat {
        let n = self.d.len();
        let mut out = Mat::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                out[(i, j)] = (0..n).map(|k| self.u[(i, k)] * self.d[k] * self.u[(j, k)]).sum();
            }
        }
        out
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Iterates until the off-diagonal Frobenius norm drops to
/// `1e-14 · ‖m‖_F` (at most 100 sweeps). Eigenvalues come back sorted in
/// descending order; each eigenvector has its largest-magnitude component
/// made positive.
pub fn sym_eigendecompose(m: &Mat) -> Result<EigenPair> {
    if !m.is_square() {
        return Err(Error::domain(format!(
            "eigendecomposition of non-square {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    if !m.is_finite() {
        return Err(Error::Numerical("non-finite entries in matrix".into()));
    }
    if !m.is_symmetric() {
        return Err(Error::domain("matrix is not symmetric"));
    }
    let n = m.rows();
    let mut a = m.clone();
    // symmetrize exactly so rotations see a consistent matrix
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
    let mut v = Mat::identity(n);
    let target = JACOBI_REL_TOL * m.norm_frobenius();

    let off_norm = |a: &Mat| -> f64 {
        let mut s = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                s += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        s.sqrt()
    };

    let mut converged = off_norm(&a) <= target;
    let mut sweeps = 0;
    while !converged && sweeps < JACOBI_MAX_SWEEPS {
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let (app, aqq) = (a[(p, p)], a[(q, q)]);
                let theta = (aqq - app) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                // theta == 0 gives signum 1, the 45 degree rotation
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);

                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r != p && r != q {
                        let arp = a[(r, p)];
                        let arq = a[(r, q)];
                        let np = arp - s * (arq + tau * arp);
                        let nq = arq + s * (arp - tau * arq);
                        a[(r, p)] = np;
                        a[(p, r)] = np;
                        a[(r, q)] = nq;
                        a[(q, r)] = nq;
                    }
                }
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = vrp - s * (vrq + tau * vrp);
                    v[(r, q)] = vrq + s * (vrp - tau * vrq);
                }
            }
        }
        sweeps += 1;
        converged = off_norm(&a) <= target;
    }
    if !converged {
        return Err(Error::Numerical(format!(
            "Jacobi iteration did not converge in {JACOBI_MAX_SWEEPS} sweeps"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));
    let d: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut u = Mat::zeros(n, n);
    for (col, &src) in order.iter().enumerate() {
        let mut big = 0.0_f64;
        for r in 0..n {
            if v[(r, src)].abs() > big.abs() {
                big = v[(r, src)];
            }
        }
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            u[(r, col)] = sign * v[(r, src)];
        }
    }
    Ok(EigenPair { u, d })
}

/// `U · diag(√max(d, 0))` for the symmetric PSD covariance `cov = U D Uᵀ`.
///
/// Eigenvalues down to `-1e-10 · max|d|` are rounding noise and clamp to
/// zero; anything more negative means the covariance is corrupt.
pub fn scaled_rotation_factor(cov: &Mat) -> Result<Mat> {
    let n = cov.rows();
    // 1x1 shortcut: same clamp rule, no Jacobi needed
    if n == 1 && cov.is_square() {
        let c = cov[(0, 0)];
        if !c.is_finite() {
            return Err(Error::Numerical("non-finite covariance".into()));
        }
        if c < -EIGEN_CLAMP_REL * c.abs() {
            return Err(Error::Numerical(format!(
                "covariance has negative eigenvalue {c}"
            )));
        }
        return Mat::from_vec(1, 1, vec![c.max(0.0).sqrt()]);
    }
    let eig = sym_eigendecompose(cov)?;
    let scale = eig.d.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let floor = -EIGEN_CLAMP_REL * scale;
    let mut factor = eig.u;
    for (k, &dk) in eig.d.iter().enumerate() {
        if dk < floor {
            return Err(Error::Numerical(format!(
                "covariance has negative eigenvalue {dk} (largest magnitude {scale})"
            )));
        }
        let root = dk.max(0.0).sqrt();
        for r in 0..n {
            factor[(r, k)] *= root;
        }
    }
    Ok(factor)
}
