//! Direct quartimin (oblimin with γ = 0) by gradient projection on the
//! oblique manifold: T has unit-length columns, the rotated pattern is
//! A·(Tᵀ)⁻¹ and the factor correlations are TᵀT.

use nalgebra::DMatrix;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numcore::{self, stream_rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RotationOptions {
    pub max_iter: usize,
    /// Stop when the Frobenius norm of the projected gradient falls below this.
    pub tol: f64,
    /// Random starts in addition to the identity start.
    pub random_starts: usize,
    pub seed: u64,
}

impl Default for RotationOptions {
    fn default() -> Self {
        Self { max_iter: 1000, tol: 1e-6, random_starts: 10, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rotation {
    #[serde(with = "numcore::rows")]
    pub pattern: DMatrix<f64>,
    #[serde(with = "numcore::rows")]
    pub phi: DMatrix<f64>,
    /// The rotation matrix, columns of unit length.
    #[serde(with = "numcore::rows")]
    pub t: DMatrix<f64>,
    pub criterion: f64,
    pub iterations: usize,
    pub converged: bool,
    /// 0 is the identity start, 1.. the seeded random starts.
    pub start: usize,
}

/// Quartimin criterion Q = Σ_i Σ_{j<l} λ²_ij λ²_il and its gradient
/// dQ/dλ_ij = 2 λ_ij Σ_{l≠j} λ²_il.
pub fn quartimin(l: &DMatrix<f64>) -> (f64, DMatrix<f64>) {
    let (p, k) = l.shape();
    let mut q = 0.0;
    let mut g = DMatrix::zeros(p, k);
    for i in 0..p {
        let row_sq: f64 = (0..k).map(|j| l[(i, j)].powi(2)).sum();
        for j in 0..k {
            let others = row_sq - l[(i, j)].powi(2);
            q += l[(i, j)].powi(2) * others;
            g[(i, j)] = 2.0 * l[(i, j)] * others;
        }
    }
    (q / 2.0, g)
}

/// Rotates the unrotated loadings `a` (p x k). For k = 1 the input comes
/// back with phi = [1].
pub fn rotate_oblique(a: &DMatrix<f64>, options: &RotationOptions) -> Rotation {
    let k = a.ncols();
    if k < 2 {
        return Rotation {
            pattern: a.clone(),
            phi: DMatrix::identity(k, k),
            t: DMatrix::identity(k, k),
            criterion: quartimin(a).0,
            iterations: 0,
            converged: true,
            start: 0,
        };
    }
    let starts: Vec<DMatrix<f64>> = (0..=options.random_starts)
        .map(|s| if s == 0 { DMatrix::identity(k, k) } else { random_start(k, options.seed, s as u64) })
        .collect();
    let runs: Vec<Rotation> = starts
        .into_par_iter()
        .enumerate()
        .map(|(s, t0)| {
            let mut r = gpa(a, t0, options);
            r.start = s;
            r
        })
        .collect();
    // lowest criterion wins; ties go to the earliest start
    let best = runs
        .into_iter()
        .reduce(|best, r| if r.criterion < best.criterion - 1e-12 { r } else { best })
        .expect("at least the identity start");
    normalize(best)
}

fn random_start(k: usize, seed: u64, stream: u64) -> DMatrix<f64> {
    let mut rng = stream_rng(seed, stream);
    let z = DMatrix::<f64>::from_fn(k, k, |_, _| StandardNormal.sample(&mut rng));
    let q = z.qr().q();
    unit_columns(q)
}

fn unit_columns(mut x: DMatrix<f64>) -> DMatrix<f64> {
    for mut c in x.column_iter_mut() {
        let n = c.norm();
        c /= n;
    }
    x
}

fn rotated(a: &DMatrix<f64>, t: &DMatrix<f64>) -> Option<(DMatrix<f64>, DMatrix<f64>)> {
    let t_inv = t.clone().try_inverse()?;
    Some((a * t_inv.transpose(), t_inv))
}

fn gpa(a: &DMatrix<f64>, t0: DMatrix<f64>, options: &RotationOptions) -> Rotation {
    let mut t = t0;
    let (mut l, mut t_inv) = rotated(a, &t).expect("start matrix is invertible");
    let (mut f, mut gq) = quartimin(&l);
    let mut g = -(l.transpose() * &gq * &t_inv).transpose();
    let mut alpha = 1.0;
    let mut converged = false;
    let mut iterations = 0;
    for it in 0..=options.max_iter {
        let col_dots: Vec<f64> = (0..t.ncols()).map(|j| t.column(j).dot(&g.column(j))).collect();
        let gp = &g - &t * DMatrix::from_diagonal(&nalgebra::DVector::from_vec(col_dots));
        let s = gp.norm();
        iterations = it;
        if s < options.tol {
            converged = true;
            break;
        }
        if it == options.max_iter {
            break;
        }
        alpha *= 2.0;
        let mut accepted = None;
        for _ in 0..20 {
            let tt = unit_columns(&t - alpha * &gp);
            if let Some((lt, tt_inv)) = rotated(a, &tt) {
                let (ft, gqt) = quartimin(&lt);
                if ft < f - 0.5 * s * s * alpha {
                    accepted = Some((tt, lt, tt_inv, ft, gqt));
                    break;
                }
            }
            alpha /= 2.0;
        }
        let Some((tt, lt, tt_inv, ft, gqt)) = accepted else {
            // no decrease available at any step size: stationary to working precision
            converged = s < options.tol.sqrt();
            break;
        };
        t = tt;
        l = lt;
        t_inv = tt_inv;
        f = ft;
        gq = gqt;
        g = -(l.transpose() * &gq * &t_inv).transpose();
    }
    let phi = t.transpose() * &t;
    Rotation { pattern: l, phi, t, criterion: f, iterations, converged, start: 0 }
}

/// Reflects factors so each pattern column sums to a non-negative value and
/// orders factors by decreasing sum of squared pattern loadings.
fn normalize(mut r: Rotation) -> Rotation {
    let k = r.pattern.ncols();
    for j in 0..k {
        if r.pattern.column(j).sum() < 0.0 {
            r.pattern.column_mut(j).neg_mut();
            r.t.column_mut(j).neg_mut();
        }
    }
    let ss: Vec<f64> = (0..k).map(|j| r.pattern.column(j).norm_squared()).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&x, &y| ss[y].total_cmp(&ss[x]));
    r.pattern = r.pattern.select_columns(&order);
    r.t = r.t.select_columns(&order);
    r.phi = r.t.transpose() * &r.t;
    for j in 0..k {
        r.phi[(j, j)] = 1.0;
    }
    r
}
