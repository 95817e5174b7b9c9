//! Henze-Zirkler multivariate normality test with the lognormal
//! approximation to the null distribution of the statistic.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{eigen_sym, lognormal_sf, zero_variance_columns, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HzResult {
    pub statistic: f64,
    pub p: f64,
    pub beta: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Rows of `x` are observations. `labels` name the columns in errors.
pub fn henze_zirkler(x: &DMatrix<f64>, labels: &[String]) -> Result<HzResult> {
    let (n, p) = x.shape();
    if n < 2 || p == 0 {
        return Err(Error::invalid(format!("Henze-Zirkler needs at least 2 rows and 1 column, got {n}x{p}")));
    }
    let label = |j: usize| labels.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
    let zero = zero_variance_columns(x);
    if !zero.is_empty() {
        return Err(Error::ZeroVariance { items: zero.into_iter().map(label).collect() });
    }

    let means: Vec<f64> = (0..p).map(|j| x.column(j).mean()).collect();
    let centered = DMatrix::from_fn(n, p, |i, j| x[(i, j)] - means[j]);
    // maximum-likelihood covariance (divisor n)
    let s = SymMatrix::from_matrix(centered.transpose() * &centered / n as f64)?;
    let eig = eigen_sym(&s)?;
    let (max, min) = (eig.values[0], eig.values[p - 1]);
    if min <= 1e-10 * max.max(1.0) {
        let v = eig.vectors.column(p - 1);
        let items = (0..p).filter(|&j| v[j].abs() > 0.1).map(label).collect();
        return Err(Error::Collinear { items, min_eigenvalue: min });
    }
    let chol = s.matrix().clone().cholesky().ok_or(Error::Singular { min_eigenvalue: min })?;
    // y_i = L^{-1} (x_i - mean), so squared distances are Mahalanobis distances
    let y = chol.l().solve_lower_triangular(&centered.transpose()).ok_or(Error::Singular { min_eigenvalue: min })?;

    let pf = p as f64;
    let nf = n as f64;
    let beta = ((2.0 * pf + 1.0) * nf / 4.0).powf(1.0 / (pf + 4.0)) / 2f64.sqrt();
    let b2 = beta * beta;

    let mut pair_sum = 0.0;
    for i in 0..n {
        let yi = y.column(i);
        for j in (i + 1)..n {
            let d = (yi - y.column(j)).norm_squared();
            pair_sum += (-b2 * d / 2.0).exp();
        }
    }
    // diagonal terms contribute exp(0) = 1 each
    let pair_sum = 2.0 * pair_sum + nf;
    let center_sum: f64 = (0..n).map(|i| (-b2 * y.column(i).norm_squared() / (2.0 * (1.0 + b2))).exp()).sum();
    let statistic =
        pair_sum / nf - 2.0 * (1.0 + b2).powf(-pf / 2.0) * center_sum + nf * (1.0 + 2.0 * b2).powf(-pf / 2.0);

    let a = 1.0 + 2.0 * b2;
    let wb = (1.0 + b2) * (1.0 + 3.0 * b2);
    let b4 = b2 * b2;
    let b8 = b4 * b4;
    let mu = 1.0 - a.powf(-pf / 2.0) * (1.0 + pf * b2 / a + pf * (pf + 2.0) * b4 / (2.0 * a * a));
    let si2 = 2.0 * (1.0 + 4.0 * b2).powf(-pf / 2.0)
        + 2.0 * a.powf(-pf) * (1.0 + 2.0 * pf * b4 / (a * a) + 3.0 * pf * (pf + 2.0) * b8 / (4.0 * a.powi(4)))
        - 4.0 * wb.powf(-pf / 2.0) * (1.0 + 3.0 * pf * b4 / (2.0 * wb) + pf * (pf + 2.0) * b8 / (2.0 * wb * wb));
    let pmu = (mu.powi(4) / (si2 + mu * mu)).sqrt().ln();
    let psi = ((si2 + mu * mu) / (mu * mu)).ln().sqrt();
    let pval = lognormal_sf(statistic, pmu, psi);

    let warning = (n <= p).then(|| format!("n = {n} does not exceed p = {p}; the test is unreliable"));
    Ok(HzResult { statistic, p: pval, beta, warning })
}
