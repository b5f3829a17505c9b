//! The two-stage scenario: a bank of Transform evaluations followed by the
//! Combine stage, with both replicate constructions.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::error_models::{apply_vector_into, TransformSpec};
use crate::linalg::{sample_covariance, sample_mean, scaled_rotation_factor, Mat};
use crate::rng::RngStream;

/// `J > 1` data vectors `Y_j`, one per row.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBatch {
    rows: Mat,
}

impl DataBatch {
    pub fn new(rows: Mat) -> Result<Self> {
        if rows.rows() < 2 {
            return Err(Error::domain(format!(
                "need J > 1 data vectors, got {}",
                rows.rows()
            )));
        }
        if rows.cols() == 0 {
            return Err(Error::domain("data vectors must have length K >= 1"));
        }
        if !rows.is_finite() {
            return Err(Error::domain("data contain non-finite values"));
        }
        Ok(DataBatch { rows })
    }

    pub fn rows(&self) -> &Mat {
        &self.rows
    }

    pub fn j(&self) -> usize {
        self.rows.rows()
    }

    pub fn k(&self) -> usize {
        self.rows.cols()
    }
}

/// Systematic-error draws `S_q`, one per row.
///
/// With `shared` set, the same `Q` rows serve every data vector. Otherwise
/// the batch holds `J·Q` rows and data vector `j` uses rows `j·Q .. (j+1)·Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorBatch {
    rows: Mat,
    shared: bool,
}

impl ErrorBatch {
    pub fn shared(rows: Mat) -> Result<Self> {
        Self::new(rows, true)
    }

    pub fn unshared(rows: Mat) -> Result<Self> {
        Self::new(rows, false)
    }

    pub fn new(rows: Mat, shared: bool) -> Result<Self> {
        if rows.rows() == 0 {
            return Err(Error::domain("error batch is empty"));
        }
        if !rows.is_finite() {
            return Err(Error::domain("error draws contain non-finite values"));
        }
        Ok(ErrorBatch { rows, shared })
    }

    pub fn rows(&self) -> &Mat {
        &self.rows
    }

    pub fn is_shared(&self) -> bool {
        self.shared
    }
}

/// Transform outputs: nominals `N_j = F(Y_j, ν)` and replicates
/// `M_jq = F(Y_j, S_q)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformOutput {
    j: usize,
    q: usize,
    k: usize,
    nominals: Mat,
    // J·Q·K, index ((j·Q) + q)·K + k
    replicates: Vec<f64>,
}

impl TransformOutput {
    /// Assemble from raw parts; `replicates[j][q]` must all have length K.
    pub fn from_parts(nominals: Mat, replicates: Vec<Vec<Vec<f64>>>) -> Result<Self> {
        let (j, k) = (nominals.rows(), nominals.cols());
        if replicates.len() != j {
            return Err(Error::dim("replicate tensor needs one block per nominal"));
        }
        if j == 0 || k == 0 {
            return Err(Error::dim("transform output needs J >= 1 and K >= 1"));
        }
        let q = replicates.first().map_or(0, Vec::len);
        if q == 0 {
            return Err(Error::dim("transform output needs Q >= 1"));
        }
        let mut flat = Vec::with_capacity(j * q * k);
        for block in &replicates {
            if block.len() != q {
                return Err(Error::dim("ragged replicate tensor"));
            }
            for r in block {
                if r.len() != k {
                    return Err(Error::dim("replicate length differs from K"));
                }
                flat.extend_from_slice(r);
            }
        }
        Ok(TransformOutput {
            j,
            q,
            k,
            nominals,
            replicates: flat,
        })
    }

    pub fn j(&self) -> usize {
        self.j
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn nominals(&self) -> &Mat {
        &self.nominals
    }

    pub fn replicate(&self, j: usize, q: usize) -> &[f64] {
        let start = (j * self.q + q) * self.k;
        &self.replicates[start..start + self.k]
    }

    /// `M̄_{j•}`: per-data-vector mean over the Q replicates (J × K).
    pub fn mc_means(&self) -> Mat {
        let mut out = Mat::zeros(self.j, self.k);
        for j in 0..self.j {
            let row = out.row_mut(j);
            for q in 0..self.q {
                let start = (j * self.q + q) * self.k;
                for (o, v) in row.iter_mut().zip(&self.replicates[start..start + self.k]) {
                    *o += v;
                }
            }
            row.iter_mut().for_each(|v| *v /= self.q as f64);
        }
        out
    }

    /// `M̄_{•q}`: mean over the data vectors for each replicate index (Q × K).
    pub fn replicate_means(&self) -> Mat {
        let mut out = Mat::zeros(self.q, self.k);
        for j in 0..self.j {
            for q in 0..self.q {
                let start = (j * self.q + q) * self.k;
                for (o, v) in out.row_mut(q).iter_mut().zip(&self.replicates[start..start + self.k]) {
                    *o += v;
                }
            }
        }
        let jf = self.j as f64;
        for q in 0..self.q {
            out.row_mut(q).iter_mut().for_each(|v| *v /= jf);
        }
        out
    }
}

/// Transform stage: nominals at `nu` and replicates at every `S_q`.
pub fn transform_stage(
    data: &DataBatch,
    errors: &ErrorBatch,
    spec: &TransformSpec,
    nu: &[f64],
) -> Result<TransformOutput> {
    let (j, k) = (data.j(), data.k());
    spec.validate(k)?;
    if nu.len() != k {
        return Err(Error::dim(format!("nu has length {}, expected {k}", nu.len())));
    }
    if errors.rows().cols() != k {
        return Err(Error::dim(format!(
            "error vectors have length {}, data have {k}",
            errors.rows().cols()
        )));
    }
    let q = if errors.is_shared() {
        errors.rows().rows()
    } else {
        let n = errors.rows().rows();
        if n % j != 0 || n / j == 0 {
            return Err(Error::dim(format!(
                "unshared errors need J·Q rows, got {n} for J = {j}"
            )));
        }
        n / j
    };

    let mut nominals = Mat::zeros(j, k);
    let mut replicates = vec![0.0; j * q * k];
    for (jj, y) in data.rows().row_iter().enumerate() {
        apply_vector_into(spec, y, nu, nominals.row_mut(jj))?;
        let offset = if errors.is_shared() { 0 } else { jj * q };
        for qq in 0..q {
            let s = errors.rows().row(offset + qq);
            let start = (jj * q + qq) * k;
            apply_vector_into(spec, y, s, &mut replicates[start..start + k])?;
        }
    }
    Ok(TransformOutput {
        j,
        q,
        k,
        nominals,
        replicates,
    })
}

/// `N^C`: mean of the Transform nominals.
pub fn combine_nominal(t: &TransformOutput) -> Vec<f64> {
    sample_mean(&t.nominals).expect("TransformOutput always has J >= 1 nominals")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Construction {
    /// Spread from the sample covariance of the nominals.
    Current,
    /// Spread from the sample covariance of the per-data-vector MC means.
    Alternative,
}

impl std::str::FromStr for Construction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "current" => Ok(Construction::Current),
            "alternative" => Ok(Construction::Alternative),
            other => Err(Error::config(format!("unknown construction `{other}`"))),
        }
    }
}

/// Combine-stage output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CombineOutput {
    pub nominal: Vec<f64>,
    /// Q × K synthesized replicates.
    pub replicates: Mat,
    pub construction: Construction,
    /// Covariance whose eigendecomposition scaled the synthetic noise.
    pub input_cov: Mat,
}

/// Current construction: `M_q = M̄_{•q} + J^{-1/2} U √D Z_q` with `U D Uᵀ`
/// the sample covariance of the nominals.
pub fn combine_current(t: &TransformOutput, stream: &mut RngStream) -> Result<CombineOutput> {
    if t.j < 2 {
        return Err(Error::domain("combine needs J > 1"));
    }
    if t.q < 1 {
        return Err(Error::domain("combine needs Q >= 1"));
    }
    let input_cov = sample_covariance(&t.nominals)?;
    synthesize(t, input_cov, Construction::Current, stream)
}

/// Alternative construction: as [`combine_current`] but with the sample
/// covariance of the per-data-vector MC means `M̄_{j•}`.
pub fn combine_alternative(t: &TransformOutput, stream: &mut RngStream) -> Result<CombineOutput> {
    if t.j < 2 {
        return Err(Error::domain("combine needs J > 1"));
    }
    if t.q < 2 {
        return Err(Error::domain("alternative construction needs Q >= 2"));
    }
    let input_cov = sample_covariance(&t.mc_means())?;
    synthesize(t, input_cov, Construction::Alternative, stream)
}

pub fn combine(
    t: &TransformOutput,
    construction: Construction,
    stream: &mut RngStream,
) -> Result<CombineOutput> {
    match construction {
        Construction::Current => combine_current(t, stream),
        Construction::Alternative => combine_alternative(t, stream),
    }
}

fn synthesize(
    t: &TransformOutput,
    input_cov: Mat,
    construction: Construction,
    stream: &mut RngStream,
) -> Result<CombineOutput> {
    let factor = scaled_rotation_factor(&input_cov)?;
    let scale = 1.0 / (t.j as f64).sqrt();
    let mut replicates = t.replicate_means();
    let mut z = vec![0.0; t.k];
    for q in 0..t.q {
        z.iter_mut().for_each(|v| *v = stream.sample(StandardNormal));
        factor.mul_vec_add_into(&z, scale, replicates.row_mut(q));
    }
    Ok(CombineOutput {
        nominal: combine_nominal(t),
        replicates,
        construction,
        input_cov,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error_models::{apply_vector, sample, DistSpec, ScalarKernel};

    fn col(v: &[f64]) -> Mat {
        Mat::from_rows(&v.iter().map(|x| vec![*x]).collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn additive_transform_example() {
        let data = DataBatch::new(col(&[0.0, 1.0])).unwrap();
        let errs = ErrorBatch::shared(col(&[10.0, 20.0])).unwrap();
        let t = transform_stage(&data, &errs, &TransformSpec::new(ScalarKernel::Additive), &[15.0]).unwrap();
        assert_eq!(t.nominals().as_slice(), &[15.0, 16.0]);
        assert_eq!(t.replicate(0, 0), &[10.0]);
        assert_eq!(t.replicate(0, 1), &[20.0]);
        assert_eq!(t.replicate(1, 0), &[11.0]);
        assert_eq!(t.replicate(1, 1), &[21.0]);
        assert_eq!(combine_nominal(&t), vec![15.5]);
    }

    #[test]
    fn multiplicative_unit_mean_nominals_equal_data() {
        let mut s = RngStream::new(4);
        let y = sample(&DistSpec::normal_scalar(2.0, 3.0), 6, &mut s).unwrap();
        let e = sample(&DistSpec::normal_scalar(1.0, 1.0), 5, &mut s).unwrap();
        let data = DataBatch::new(y.clone()).unwrap();
        let t = transform_stage(
            &data,
            &ErrorBatch::shared(e).unwrap(),
            &TransformSpec::new(ScalarKernel::Multiplicative),
            &[1.0],
        )
        .unwrap();
        assert_eq!(t.nominals(), &y);
    }

    #[test]
    fn phase_transform_matches_direct_evaluation() {
        let mut s = RngStream::new(8);
        let y = sample(&DistSpec::uniform_scalar(-2.0, 2.0), 5, &mut s).unwrap();
        let e = sample(&DistSpec::uniform_scalar(-1.0, 1.0), 7, &mut s).unwrap();
        let spec = TransformSpec::new(ScalarKernel::Phase);
        let t = transform_stage(
            &DataBatch::new(y.clone()).unwrap(),
            &ErrorBatch::shared(e.clone()).unwrap(),
            &spec,
            &[0.0],
        )
        .unwrap();
        for j in 0..5 {
            assert_eq!(t.nominals().row(j), &apply_vector(&spec, y.row(j), &[0.0]).unwrap()[..]);
            for q in 0..7 {
                assert_eq!(t.replicate(j, q), &apply_vector(&spec, y.row(j), e.row(q)).unwrap()[..]);
            }
        }
    }

    #[test]
    fn transform_errors() {
        let data = DataBatch::new(col(&[1.0, 2.0, 3.0])).unwrap();
        let spec = TransformSpec::new(ScalarKernel::Additive);
        let unshared = ErrorBatch::unshared(col(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        assert!(matches!(
            transform_stage(&data, &unshared, &spec, &[0.0]),
            Err(Error::Dimension(_))
        ));
        let wide = ErrorBatch::shared(Mat::zeros(3, 2)).unwrap();
        assert!(transform_stage(&data, &wide, &spec, &[0.0]).is_err());
        let ok = ErrorBatch::shared(col(&[1.0])).unwrap();
        assert!(transform_stage(&data, &ok, &spec, &[0.0, 1.0]).is_err());
        assert!(DataBatch::new(col(&[1.0])).is_err());
        let exp = TransformSpec::new(ScalarKernel::Exponential);
        let neg = DataBatch::new(col(&[1.0, -1.0])).unwrap();
        assert!(matches!(
            transform_stage(&neg, &ok, &exp, &[1.0]),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn unshared_blocks() {
        let data = DataBatch::new(col(&[0.0, 100.0])).unwrap();
        let errs = ErrorBatch::unshared(col(&[1.0, 2.0, 3.0, 4.0])).unwrap();
        let t = transform_stage(&data, &errs, &TransformSpec::new(ScalarKernel::Additive), &[0.0]).unwrap();
        assert_eq!(t.q(), 2);
        assert_eq!(t.replicate(0, 1), &[2.0]);
        assert_eq!(t.replicate(1, 0), &[103.0]);
    }

    #[test]
    fn zero_spread_current_equals_replicate_means() {
        let data = DataBatch::new(col(&[1.0, 1.0, 1.0])).unwrap();
        let errs = ErrorBatch::shared(col(&[0.1, 0.2, 0.3])).unwrap();
        let t = transform_stage(&data, &errs, &TransformSpec::new(ScalarKernel::Phase), &[0.0]).unwrap();
        let out = combine_current(&t, &mut RngStream::new(1)).unwrap();
        assert_eq!(out.replicates, t.replicate_means());
        assert_eq!(out.input_cov.max_abs(), 0.0);
        assert_eq!(out.construction, Construction::Current);
    }

    #[test]
    fn alternative_uses_mc_means_covariance() {
        // replicates constant in q: the MC means are the replicates themselves
        let data = DataBatch::new(col(&[0.5, 1.5, 4.0])).unwrap();
        let errs = ErrorBatch::shared(col(&[2.0, 2.0, 2.0, 2.0])).unwrap();
        let t = transform_stage(&data, &errs, &TransformSpec::new(ScalarKernel::Multiplicative), &[1.0]).unwrap();
        let out = combine_alternative(&t, &mut RngStream::new(2)).unwrap();
        let column: Vec<Vec<f64>> = (0..3).map(|j| t.replicate(j, 0).to_vec()).collect();
        assert_eq!(out.input_cov, sample_covariance(&Mat::from_rows(&column).unwrap()).unwrap());
        assert_eq!(t.mc_means(), Mat::from_rows(&column).unwrap());
        assert_eq!(out.replicates.rows(), 4);
    }

    #[test]
    fn q_requirements() {
        let data = DataBatch::new(col(&[0.0, 1.0])).unwrap();
        let errs = ErrorBatch::shared(col(&[0.0])).unwrap();
        let t = transform_stage(&data, &errs, &TransformSpec::new(ScalarKernel::Additive), &[0.0]).unwrap();
        assert!(combine_current(&t, &mut RngStream::new(0)).is_ok());
        assert!(matches!(
            combine_alternative(&t, &mut RngStream::new(0)),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn synthesis_is_seeded() {
        let mut s = RngStream::new(12);
        let dist = DistSpec::Normal {
            mean: vec![0.0; 3],
            cov: Mat::identity(3),
        };
        let y = sample(&dist, 4, &mut s).unwrap();
        let e = sample(&dist, 9, &mut s).unwrap();
        let t = transform_stage(
            &DataBatch::new(y).unwrap(),
            &ErrorBatch::shared(e).unwrap(),
            &TransformSpec::new(ScalarKernel::Phase),
            &[0.0; 3],
        )
        .unwrap();
        let a = combine_alternative(&t, &mut RngStream::new(5)).unwrap();
        let b = combine_alternative(&t, &mut RngStream::new(5)).unwrap();
        assert_eq!(a, b);
        let c = combine_alternative(&t, &mut RngStream::new(6)).unwrap();
        assert_ne!(a.replicates, c.replicates);
        let json = serde_json::to_string(&a).unwrap();
        let back: CombineOutput = serde_json::from_str(&json).unwrap();
        assert_eq!(back, a);
    }
}
