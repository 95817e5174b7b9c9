//! Numerical primitives shared by the analyses.

mod dist;
mod eigen;
mod minimize;
mod ranks;
mod sample;

pub use dist::{
    chi2_sf, lognormal_sf, normal_cdf, normal_quantile, normal_two_sided_p, student_t_two_sided_p,
};
pub use eigen::{eigen_sym, SymEigen};
pub use minimize::{minimize, Bounds, MinimizeOptions, MinimizerResult, Termination};
pub use ranks::{midranks, tie_counts};
pub use sample::{likert_thresholds, sample_factor_model, sample_mvn, seeded_rng, stream_rng, FactorModelSpec, Rng};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Serde adapter that stores a `DMatrix<f64>` as a list of rows.
pub mod rows {
    use nalgebra::DMatrix;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(m: &DMatrix<f64>, s: S) -> Result<S::Ok, S::Error> {
        let rows: Vec<Vec<f64>> = m.row_iter().map(|r| r.iter().copied().collect()).collect();
        rows.serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DMatrix<f64>, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(serde::de::Error::custom("ragged matrix rows"));
        }
        Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
    }
}

/// Smallest eigenvalue accepted by [`inverse_spd`].
pub const SPD_EIGEN_FLOOR: f64 = 1e-10;

/// A dense symmetric matrix. Symmetry is exact: every constructor mirrors
/// the upper triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn from_fn(p: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(p, p);
        for i in 0..p {
            for j in i..p {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        SymMatrix(m)
    }

    pub fn identity(p: usize) -> Self {
        SymMatrix(DMatrix::identity(p, p))
    }

    /// Accepts a square finite matrix whose asymmetry is within rounding
    /// (1e-9 relative) and averages the two triangles.
    pub fn from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::invalid(format!("matrix is {}x{}, not square", m.nrows(), m.ncols())));
        }
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("matrix has non-finite entries"));
        }
        let scale = m.iter().fold(1.0_f64, |a, &b| a.max(b.abs()));
        let p = m.nrows();
        for i in 0..p {
            for j in (i + 1)..p {
                if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                    return Err(Error::invalid(format!("matrix is not symmetric at ({i}, {j})")));
                }
            }
        }
        Ok(Self::from_fn(p, |i, j| 0.5 * (m[(i, j)] + m[(j, i)])))
    }

    pub fn order(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    pub fn diagonal(&self) -> Vec<f64> {
        (0..self.order()).map(|i| self.0[(i, i)]).collect()
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }

    /// Rescales a covariance matrix to unit diagonal.
    pub fn to_correlation(&self) -> Result<SymMatrix> {
        let d = self.diagonal();
        if let Some(i) = d.iter().position(|&v| v <= 0.0) {
            return Err(Error::ZeroVariance { items: vec![format!("#{i}")] });
        }
        let s: Vec<f64> = d.iter().map(|v| v.sqrt()).collect();
        Ok(Self::from_fn(self.order(), |i, j| {
            if i == j {
                1.0
            } else {
                (self.0[(i, j)] / (s[i] * s[j])).clamp(-1.0, 1.0)
            }
        }))
    }

    /// Log-determinant through the Cholesky factor; fails unless the matrix
    /// is positive definite.
    pub fn ln_det(&self) -> Result<f64> {
        let chol = self.0.clone().cholesky().ok_or_else(|| Error::Singular {
            min_eigenvalue: eigen_sym(self).map(|e| *e.values.last().unwrap_or(&0.0)).unwrap_or(f64::NAN),
        })?;
        let l = chol.l_dirty();
        Ok(2.0 * (0..self.order()).map(|i| l[(i, i)].ln()).sum::<f64>())
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let p = rows.len();
        if rows.iter().any(|r| r.len() != p) {
            return Err(Error::invalid("ragged matrix rows"));
        }
        SymMatrix::from_matrix(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
    }
}

/// Column indices whose sample variance is zero.
pub fn zero_variance_columns(x: &DMatrix<f64>) -> Vec<usize> {
    (0..x.ncols())
        .filter(|&j| {
            let col = x.column(j);
            let first = col.iter().next().copied().unwrap_or(0.0);
            col.iter().all(|&v| v == first)
        })
        .collect()
}

fn column_label(labels: &[String], j: usize) -> String {
    labels.get(j).cloned().unwrap_or_else(|| format!("#{j}"))
}

/// Sample covariance with the n - 1 denominator.
pub fn covariance_matrix(x: &DMatrix<f64>) -> Result<SymMatrix> {
    let n = x.nrows();
    if n < 2 {
        return Err(Error::invalid(format!("covariance needs at least 2 rows, got {n}")));
    }
    let means: Vec<f64> = (0..x.ncols()).map(|j| x.column(j).mean()).collect();
    let mut centered = x.clone();
    for j in 0..x.ncols() {
        centered.column_mut(j).add_scalar_mut(-means[j]);
    }
    let cross = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok(SymMatrix::from_fn(x.ncols(), |i, j| cross[(i, j)]))
}

/// Pearson correlation matrix of the columns of `x`. `labels` name the
/// columns in the zero-variance error.
pub fn correlation_matrix(x: &DMatrix<f64>, labels: &[String]) -> Result<SymMatrix> {
    let zero = zero_variance_columns(x);
    if !zero.is_empty() {
        return Err(Error::ZeroVariance { items: zero.iter().map(|&j| column_label(labels, j)).collect() });
    }
    covariance_matrix(x)?.to_correlation()
}

/// Inverse of a symmetric positive definite matrix.
pub fn inverse_spd(m: &SymMatrix) -> Result<SymMatrix> {
    let eig = eigen_sym(m)?;
    let min = eig.values.last().copied().unwrap_or(0.0);
    if min <= SPD_EIGEN_FLOOR {
        return Err(Error::Singular { min_eigenvalue: min });
    }
    let inv = match m.matrix().clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => return Err(Error::Singular { min_eigenvalue: min }),
    };
    Ok(SymMatrix::from_fn(m.order(), |i, j| 0.5 * (inv[(i, j)] + inv[(j, i)])))
}

/// Pearson correlation of two equal-length slices; `None` when either side
/// has zero variance.
pub fn pearson(a: &[f64], b: &[f64]) -> Option<f64> {
    let n = a.len();
    if n != b.len() || n < 2 {
        return None;
    }
    let ma = a.iter().sum::<f64>() / n as f64;
    let mb = b.iter().sum::<f64>() / n as f64;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return None;
    }
    Some((sab / (saa * sbb).sqrt()).clamp(-1.0, 1.0))
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
pub fn std_dev(v: &[f64]) -> f64 {
    variance(v).sqrt()
}

pub fn variance(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}
