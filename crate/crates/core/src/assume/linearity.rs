//! Quadratic-term screen for curvilinear item pairs.
//!
//! For an ordered pair (x, y) both columns are standardized and
//! y = a + b·x + c·x² is fitted by least squares. A pair is flagged when the
//! quadratic term is significant and large.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, Matrix3, Vector3};
use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::numcore::{seeded_rng, student_t_two_sided_p};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LinearityOptions {
    /// Ordered pairs examined; all of them when there are fewer.
    pub max_pairs: usize,
    pub alpha: f64,
    /// Minimum |c| on the standardized scale.
    pub min_quadratic: f64,
    pub seed: u64,
    /// Flagged pairs listed in the summary.
    pub report_top: usize,
}

impl Default for LinearityOptions {
    fn default() -> Self {
        Self { max_pairs: 500, alpha: 0.01, min_quadratic: 0.1, seed: 0, report_top: 10 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvilinearPair {
    pub x: String,
    pub y: String,
    pub x_index: usize,
    pub y_index: usize,
    /// Quadratic coefficient in standardized units.
    pub quadratic: f64,
    pub p: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearityReport {
    pub pairs_tested: usize,
    pub flagged_count: usize,
    /// Largest |quadratic| first, at most `report_top` entries.
    pub worst: Vec<CurvilinearPair>,
}

impl LinearityReport {
    pub fn acceptable(&self) -> bool {
        self.flagged_count == 0
    }
}

pub fn linearity_diagnostics(x: &DMatrix<f64>, labels: &[String], options: &LinearityOptions) -> LinearityReport {
    let (n, p) = x.shape();
    let label = |j: usize| labels.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
    let total = p * p.saturating_sub(1);
    let pairs: Vec<(usize, usize)> = if total <= options.max_pairs {
        (0..p).flat_map(|i| (0..p).filter(move |&j| j != i).map(move |j| (i, j))).collect()
    } else {
        let mut rng = seeded_rng(options.seed);
        let mut picked: Vec<usize> = sample(&mut rng, total, options.max_pairs).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|k| (k / (p - 1), k % (p - 1))).map(|(i, j)| (i, if j >= i { j + 1 } else { j })).collect()
    };

    let std_cols: Vec<Option<Vec<f64>>> = (0..p).map(|j| standardize(x.column(j).iter().copied())).collect();
    let mut flagged = Vec::new();
    let mut tested = 0;
    if n > 3 {
        for &(i, j) in &pairs {
            let (Some(xs), Some(ys)) = (&std_cols[i], &std_cols[j]) else { continue };
            tested += 1;
            if let Some((c, pval)) = quadratic_term(xs, ys) {
                if pval < options.alpha && c.abs() > options.min_quadratic {
                    flagged.push(CurvilinearPair { x: label(i), y: label(j), x_index: i, y_index: j, quadratic: c, p: pval });
                }
            }
        }
    }
    flagged.sort_by(|a, b| b.quadratic.abs().total_cmp(&a.quadratic.abs()));
    let flagged_count = flagged.len();
    flagged.truncate(options.report_top);
    LinearityReport { pairs_tested: tested, flagged_count, worst: flagged }
}

fn standardize(values: impl Iterator<Item = f64>) -> Option<Vec<f64>> {
    let v: Vec<f64> = values.collect();
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|a| (a - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    (sd > 0.0).then(|| v.iter().map(|a| (a - m) / sd).collect())
}

/// Least-squares quadratic coefficient and its two-sided p-value, or `None`
/// when x takes fewer than three distinct values.
fn quadratic_term(x: &[f64], y: &[f64]) -> Option<(f64, f64)> {
    let n = x.len();
    let mut xtx = Matrix3::<f64>::zeros();
    let mut xty = Vector3::<f64>::zeros();
    for (&a, &b) in x.iter().zip(y) {
        let row = Vector3::new(1.0, a, a * a);
        xtx += row * row.transpose();
        xty += row * b;
    }
    let inv = xtx.try_inverse()?;
    // reject near-degenerate designs (two distinct x values)
    if !(inv[(2, 2)].is_finite()) || inv[(2, 2)] * xtx[(2, 2)] > 1e10 {
        return None;
    }
    let coef = inv * xty;
    let rss: f64 = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| (b - coef[0] - coef[1] * a - coef[2] * a * a).powi(2))
        .sum();
    let c = coef[2];
    let sigma2 = rss / (n as f64 - 3.0);
    let se = (sigma2 * inv[(2, 2)]).sqrt();
    if !se.is_finite() || !c.is_finite() {
        return None;
    }
    let p = if se <= 1e-12 * c.abs().max(1.0) {
        if c.abs() > 1e-9 { 0.0 } else { 1.0 }
    } else {
        student_t_two_sided_p(c / se, n as f64 - 3.0)
    };
    Some((c, p))
}

/// Writes `x,y,count` rows (Likert data repeats points heavily) for one
/// pair to `<dir>/<x>__<y>.csv` and returns the path.
pub fn write_scatter_csv(x: &DMatrix<f64>, pair: &CurvilinearPair, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir)?;
    let path = dir.join(format!("{}__{}.csv", sanitize(&pair.x), sanitize(&pair.y)));
    let mut counts: BTreeMap<(i64, i64), usize> = BTreeMap::new();
    let scale = 1e6;
    for r in 0..x.nrows() {
        let key = ((x[(r, pair.x_index)] * scale).round() as i64, (x[(r, pair.y_index)] * scale).round() as i64);
        *counts.entry(key).or_default() += 1;
    }
    let mut f = std::io::BufWriter::new(std::fs::File::create(&path)?);
    writeln!(f, "{},{},count", pair.x, pair.y)?;
    for ((a, b), c) in counts {
        writeln!(f, "{},{},{c}", a as f64 / scale, b as f64 / scale)?;
    }
    f.flush()?;
    Ok(path)
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' }).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn two_columns(n: usize, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
        let mut rng = seeded_rng(4);
        let xs: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        DMatrix::from_fn(n, 2, |i, j| if j == 0 { xs[i] } else { f(xs[i]) })
    }

    #[test]
    fn exact_line_not_flagged() {
        let x = two_columns(200, |v| 3.0 * v - 1.0);
        let r = linearity_diagnostics(&x, &[], &LinearityOptions::default());
        assert_eq!(r.pairs_tested, 2);
        assert!(r.acceptable());
    }

    #[test]
    fn parabola_is_flagged() {
        let x = two_columns(200, |v| v * v);
        let r = linearity_diagnostics(&x, &["x".into(), "y".into()], &LinearityOptions::default());
        assert!(!r.acceptable());
        assert_eq!((r.worst[0].x.as_str(), r.worst[0].y.as_str()), ("x", "y"));
        let dir = tempfile::tempdir().unwrap();
        let path = write_scatter_csv(&x, &r.worst[0], dir.path()).unwrap();
        let text = std::fs::read_to_string(path).unwrap();
        assert!(text.starts_with("x,y,count\n"));
        assert_eq!(text.lines().count(), 201);
    }

    #[test]
    fn noisy_monotone_likert_unflagged() {
        let mut rng = seeded_rng(8);
        let n = 400;
        let x = DMatrix::from_fn(n, 2, |_, _| 0.0);
        let mut x = x;
        for i in 0..n {
            let t: f64 = rng.random_range(-1.5..1.5);
            let e: f64 = rng.random_range(-1.0..1.0);
            x[(i, 0)] = (3.0 + t).round().clamp(1.0, 5.0);
            x[(i, 1)] = (3.0 + t + e).round().clamp(1.0, 5.0);
        }
        let r = linearity_diagnostics(&x, &[], &LinearityOptions::default());
        assert!(r.acceptable(), "{r:?}");
    }

    #[test]
    fn sampling_caps_pairs_deterministically() {
        let mut rng = seeded_rng(1);
        let x = DMatrix::from_fn(50, 30, |_, _| rng.random_range(0.0..1.0));
        let opts = LinearityOptions { max_pairs: 40, ..LinearityOptions::default() };
        let a = linearity_diagnostics(&x, &[], &opts);
        assert_eq!(a.pairs_tested, 40);
        assert_eq!(a, linearity_diagnostics(&x, &[], &opts));
    }

    #[test]
    fn binary_x_is_skipped_not_flagged() {
        let x = DMatrix::from_fn(20, 2, |i, j| if j == 0 { (i % 2) as f64 } else { (i % 3) as f64 });
        assert!(linearity_diagnostics(&x, &[], &LinearityOptions::default()).worst.iter().all(|p| p.x_index != 0));
    }
}
