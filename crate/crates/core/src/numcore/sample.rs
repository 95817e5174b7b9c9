//! Seeded samplers for synthetic data.
//!
//! All randomness comes from ChaCha20. A run seeded with `seed` uses stream
//! 0; parallel workers use `stream_rng(seed, k)` with distinct `k`, which
//! gives independent, reproducible sequences regardless of thread timing.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{normal_quantile, SymMatrix};
use crate::error::{Error, Result};

pub type Rng = ChaCha20Rng;

pub fn seeded_rng(seed: u64) -> Rng {
    ChaCha20Rng::seed_from_u64(seed)
}

pub fn stream_rng(seed: u64, stream: u64) -> Rng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Draws `n` rows from N(0, cov).
pub fn sample_mvn(cov: &SymMatrix, n: usize, rng: &mut Rng) -> Result<DMatrix<f64>> {
    let p = cov.order();
    let chol = cov
        .matrix()
        .clone()
        .cholesky()
        .ok_or(Error::Singular { min_eigenvalue: f64::NAN })?;
    let l = chol.l();
    let z = DMatrix::<f64>::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    Ok(z * l.transpose())
}

/// Common-factor model: `loadings` is p x k, `phi` the k x k factor
/// correlation matrix. Unique variances make every item variance 1.
#[derive(Debug, Clone)]
pub struct FactorModelSpec {
    pub loadings: DMatrix<f64>,
    pub phi: SymMatrix,
}

impl FactorModelSpec {
    /// Builds a simple-structure model: item `i` loads `loading` on factor
    /// `assignment[i]`; all factor correlations equal `factor_corr`.
    pub fn simple(assignment: &[usize], k: usize, loading: f64, factor_corr: f64) -> Self {
        let loadings = DMatrix::from_fn(assignment.len(), k, |i, j| if assignment[i] == j { loading } else { 0.0 });
        let phi = SymMatrix::from_fn(k, |a, b| if a == b { 1.0 } else { factor_corr });
        Self { loadings, phi }
    }

    /// Population covariance (= correlation) matrix of the continuous items.
    pub fn implied(&self) -> Result<SymMatrix> {
        let common = &self.loadings * self.phi.matrix() * self.loadings.transpose();
        let p = common.nrows();
        let mut bad = Vec::new();
        for i in 0..p {
            if 1.0 - common[(i, i)] <= 0.0 {
                bad.push(format!("#{i}"));
            }
        }
        if !bad.is_empty() {
            return Err(Error::invalid(format!(
                "unique variance is not positive for item(s) {}",
                bad.join(", ")
            )));
        }
        Ok(SymMatrix::from_fn(p, |i, j| if i == j { 1.0 } else { common[(i, j)] }))
    }
}

/// Equal-probability thresholds on the standard normal for a scale with
/// `categories` points.
pub fn likert_thresholds(categories: usize) -> Vec<f64> {
    (1..categories).map(|c| normal_quantile(c as f64 / categories as f64)).collect()
}

/// Samples `n` continuous rows from the factor model and discretizes each
/// value onto `scale_min..=scale_max` by equal-probability thresholds.
pub fn sample_factor_model(
    spec: &FactorModelSpec,
    n: usize,
    seed: u64,
    scale_min: i32,
    scale_max: i32,
) -> Result<Vec<Vec<i32>>> {
    if scale_max <= scale_min {
        return Err(Error::invalid("scale_max must exceed scale_min"));
    }
    let sigma = spec.implied()?;
    let mut rng = seeded_rng(seed);
    let z = sample_mvn(&sigma, n, &mut rng)?;
    let thresholds = likert_thresholds((scale_max - scale_min + 1) as usize);
    Ok((0..n)
        .map(|r| {
            (0..sigma.order())
                .map(|c| {
                    let v = z[(r, c)];
                    scale_min + thresholds.iter().filter(|&&t| v > t).count() as i32
                })
                .collect()
        })
        .collect())
}
