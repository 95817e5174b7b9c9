use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{chi2_sf, inverse_spd, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BartlettResult {
    pub chi2: f64,
    pub df: f64,
    pub p: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Bartlett's test that `r` is an identity matrix, for a sample of `n`.
pub fn bartlett_sphericity(r: &SymMatrix, n: usize) -> Result<BartlettResult> {
    let p = r.order();
    if p < 2 {
        return Err(Error::invalid("Bartlett's test needs at least 2 variables"));
    }
    let ln_det = r.ln_det()?;
    let multiplier = n as f64 - 1.0 - (2.0 * p as f64 + 5.0) / 6.0;
    let chi2 = -multiplier * ln_det;
    let df = (p * (p - 1)) as f64 / 2.0;
    let warning = (multiplier <= 0.0 || n <= p).then(|| format!("n too small: n = {n} for {p} variables"));
    Ok(BartlettResult { chi2, df, p: chi2_sf(chi2, df), warning })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmoResult {
    pub overall: f64,
    pub per_item: Vec<f64>,
}

/// Kaiser-Meyer-Olkin measure of sampling adequacy.
pub fn kmo(r: &SymMatrix) -> Result<KmoResult> {
    let p = r.order();
    if p < 2 {
        return Err(Error::invalid("KMO needs at least 2 variables"));
    }
    let u = inverse_spd(r)?;
    let mut r2_total = 0.0;
    let mut q2_total = 0.0;
    let mut per_item = Vec::with_capacity(p);
    for i in 0..p {
        let (mut r2, mut q2) = (0.0, 0.0);
        for j in (0..p).filter(|&j| j != i) {
            let q = -u.get(i, j) / (u.get(i, i) * u.get(j, j)).sqrt();
            r2 += r.get(i, j).powi(2);
            q2 += q * q;
        }
        per_item.push(ratio(r2, q2));
        r2_total += r2;
        q2_total += q2;
    }
    Ok(KmoResult { overall: ratio(r2_total, q2_total), per_item })
}

fn ratio(r2: f64, q2: f64) -> f64 {
    if r2 + q2 == 0.0 {
        0.0
    } else {
        r2 / (r2 + q2)
    }
}

/// Squared multiple correlation of each variable with all others.
pub fn smc(r: &SymMatrix) -> Result<Vec<f64>> {
    let u = inverse_spd(r)?;
    Ok((0..r.order()).map(|i| (1.0 - 1.0 / u.get(i, i)).max(0.0)).collect())
}

/// Acceptable SMC range; values above are multicollinear, below are
/// outlier variables.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmcBand {
    pub lower: f64,
    pub upper: f64,
}

impl SmcBand {
    pub const STRICT: SmcBand = SmcBand { lower: 0.1, upper: 0.9 };
    pub const LENIENT: SmcBand = SmcBand { lower: 0.01, upper: 0.99 };
}

impl Default for SmcBand {
    fn default() -> Self {
        Self::STRICT
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SmcFlags {
    pub multicollinear: Vec<String>,
    pub outliers: Vec<String>,
}

pub fn smc_flags(values: &[f64], labels: &[String], band: SmcBand) -> SmcFlags {
    let label = |i: usize| labels.get(i).cloned().unwrap_or_else(|| format!("#{i}"));
    SmcFlags {
        multicollinear: (0..values.len()).filter(|&i| values[i] > band.upper).map(label).collect(),
        outliers: (0..values.len()).filter(|&i| values[i] < band.lower).map(label).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::FactorModelSpec;
    use proptest::prelude::*;

    fn two(r: f64) -> SymMatrix {
        SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { r })
    }

    /// Gauss-Jordan inverse with partial pivoting, independent of the
    /// library's eigen/Cholesky route.
    fn gj_inverse(a: &SymMatrix) -> Vec<Vec<f64>> {
        let p = a.order();
        let mut m: Vec<Vec<f64>> =
            (0..p).map(|i| (0..2 * p).map(|j| if j < p { a.get(i, j) } else if j - p == i { 1.0 } else { 0.0 }).collect()).collect();
        for c in 0..p {
            let piv = (c..p).max_by(|&x, &y| m[x][c].abs().total_cmp(&m[y][c].abs())).unwrap();
            m.swap(c, piv);
            let d = m[c][c];
            for v in m[c].iter_mut() {
                *v /= d;
            }
            for r in 0..p {
                if r != c {
                    let f = m[r][c];
                    let row_c = m[c].clone();
                    for (v, w) in m[r].iter_mut().zip(row_c) {
                        *v -= f * w;
                    }
                }
            }
        }
        m.into_iter().map(|row| row[p..].to_vec()).collect()
    }

    #[test]
    fn bartlett_identity() {
        let b = bartlett_sphericity(&SymMatrix::identity(3), 100).unwrap();
        assert!(b.chi2.abs() < 1e-12);
        assert_eq!(b.df, 3.0);
        assert!((b.p - 1.0).abs() < 1e-12);
        assert!(b.warning.is_none());
    }

    #[test]
    fn bartlett_two_variables() {
        let b = bartlett_sphericity(&two(0.5), 100).unwrap();
        let expected = -97.5 * 0.75f64.ln();
        assert!((b.chi2 - expected).abs() < 1e-10);
        assert!((b.chi2 - 28.05).abs() < 0.01);
        assert_eq!(b.df, 1.0);
        assert!(b.p < 1e-6);
    }

    #[test]
    fn bartlett_tiny_n_warns() {
        let b = bartlett_sphericity(&SymMatrix::identity(60), 2).unwrap();
        assert!(b.warning.as_deref().unwrap().contains("n too small"));
        assert_eq!(b.df, 1770.0);
    }

    #[test]
    fn bartlett_singular_errors() {
        let r = SymMatrix::from_fn(3, |i, j| if i == j || (i < 2 && j < 2) { 1.0 } else { 0.3 });
        assert!(bartlett_sphericity(&r, 50).is_err());
    }

    #[test]
    fn kmo_near_identity_is_unacceptable() {
        // partial correlations match the raw ones to first order, so the
        // ratio sits at one half rather than above the 0.6 cut
        let r = SymMatrix::from_fn(6, |i, j| if i == j { 1.0 } else { 1e-4 * ((i + j) % 3) as f64 });
        let k = kmo(&r).unwrap().overall;
        assert!((k - 0.5).abs() < 0.01, "{k}");
        assert!(k < 0.6);
    }

    #[test]
    fn kmo_one_factor_against_direct_formula() {
        let r = FactorModelSpec::simple(&[0; 10], 1, 0.8, 0.0).implied().unwrap();
        let u = gj_inverse(&r);
        let (mut sr, mut sq) = (0.0, 0.0);
        for i in 0..10 {
            for j in 0..10 {
                if i != j {
                    sr += r.get(i, j).powi(2);
                    sq += (u[i][j] / (u[i][i] * u[j][j]).sqrt()).powi(2);
                }
            }
        }
        let k = kmo(&r).unwrap();
        assert!((k.overall - sr / (sr + sq)).abs() < 1e-10);
        assert!(k.overall > 0.9);
    }

    #[test]
    fn smc_examples() {
        let s = smc(&two(0.6)).unwrap();
        assert!((s[0] - 0.36).abs() < 1e-12 && (s[1] - 0.36).abs() < 1e-12);
        let s = smc(&SymMatrix::identity(4)).unwrap();
        assert!(s.iter().all(|&v| v.abs() < 1e-12));
        let flags = smc_flags(&s, &[], SmcBand::STRICT);
        assert_eq!(flags.outliers.len(), 4);
        let flags = smc_flags(&[0.95, 0.5, 0.05], &["a".into(), "b".into(), "c".into()], SmcBand::STRICT);
        assert_eq!(flags.multicollinear, vec!["a"]);
        assert_eq!(flags.outliers, vec!["c"]);
        let loose = smc_flags(&[0.95, 0.5, 0.05], &[], SmcBand::LENIENT);
        assert!(loose.multicollinear.is_empty() && loose.outliers.is_empty());
    }

    fn random_corr(seed: u64, p: usize) -> SymMatrix {
        use rand::Rng;
        let mut rng = crate::numcore::seeded_rng(seed);
        let x = nalgebra::DMatrix::<f64>::from_fn(p + 20, p, |_, _| rng.random_range(-1.0..1.0));
        crate::numcore::correlation_matrix(&x, &[]).unwrap()
    }

    proptest! {
        #[test]
        fn kmo_bounds_and_p2(seed in any::<u64>(), p in 2usize..8, r in -0.99f64..0.99) {
            let k = kmo(&random_corr(seed, p)).unwrap();
            prop_assert!((0.0..=1.0).contains(&k.overall));
            prop_assert!(k.per_item.iter().all(|v| (0.0..=1.0).contains(v)));
            if r.abs() > 1e-6 {
                prop_assert!((kmo(&two(r)).unwrap().overall - 0.5).abs() < 1e-12);
            }
        }

        #[test]
        fn bartlett_nonnegative_smc_below_one(seed in any::<u64>(), p in 2usize..8) {
            let r = random_corr(seed, p);
            prop_assert!(bartlett_sphericity(&r, 200).unwrap().chi2 >= 0.0);
            prop_assert!(smc(&r).unwrap().iter().all(|&v| (0.0..1.0).contains(&v)));
        }

        #[test]
        fn smc_is_r_squared_for_two(r in -0.99f64..0.99) {
            let s = smc(&two(r)).unwrap();
            prop_assert!((s[0] - r * r).abs() < 1e-10);
        }
    }
}
