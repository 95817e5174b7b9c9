//! Exploratory factor analysis: eigenvalues and the Kaiser count, principal
//! axis factoring, quartimin rotation, loading graphs and congruence.

mod rotation;
mod svg;

pub use rotation::{quartimin, rotate_oblique, Rotation, RotationOptions};
pub use svg::{graph_svg, scree_svg};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::assume::smc;
use crate::error::{Error, Result};
use crate::numcore::{self, eigen_sym, SymMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scree {
    pub eigenvalues: Vec<f64>,
    pub kaiser_count: usize,
}

pub fn scree(r: &SymMatrix) -> Result<Scree> {
    let eig = eigen_sym(r)?;
    let kaiser_count = eig.values.iter().filter(|&&v| v > 1.0).count();
    Ok(Scree { eigenvalues: eig.values, kaiser_count })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PafOptions {
    pub max_iter: usize,
    pub tol: f64,
}

impl Default for PafOptions {
    fn default() -> Self {
        Self { max_iter: 100, tol: 1e-4 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PafResult {
    #[serde(with = "numcore::rows")]
    pub loadings: DMatrix<f64>,
    pub communalities: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// Negative eigenvalues of the reduced matrix set to zero in the last pass.
    pub clamped_eigenvalues: usize,
    /// Items whose communality exceeded 1 and was capped.
    pub capped_items: Vec<usize>,
}

/// Principal axis factoring with `k` factors, starting from SMCs.
pub fn paf(r: &SymMatrix, k: usize, options: &PafOptions) -> Result<PafResult> {
    let p = r.order();
    if k == 0 || k >= p {
        return Err(Error::invalid(format!("factor count {k} must be between 1 and {}", p.saturating_sub(1))));
    }
    let mut h2 = smc(r)?;
    let mut result = None;
    for it in 1..=options.max_iter {
        let reduced = SymMatrix::from_fn(p, |i, j| if i == j { h2[i] } else { r.get(i, j) });
        let eig = eigen_sym(&reduced)?;
        let clamped = eig.values[..k].iter().filter(|&&v| v < 0.0).count();
        let loadings = DMatrix::from_fn(p, k, |i, j| eig.vectors[(i, j)] * eig.values[j].max(0.0).sqrt());
        let mut capped = Vec::new();
        let new_h2: Vec<f64> = (0..p)
            .map(|i| {
                let v = loadings.row(i).norm_squared();
                if v > 1.0 {
                    capped.push(i);
                    1.0
                } else {
                    v
                }
            })
            .collect();
        let delta = h2.iter().zip(&new_h2).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        h2 = new_h2;
        let converged = delta <= options.tol;
        result = Some(PafResult {
            loadings,
            communalities: h2.clone(),
            iterations: it,
            converged,
            clamped_eigenvalues: clamped,
            capped_items: capped,
        });
        if converged {
            break;
        }
    }
    result.ok_or_else(|| Error::invalid("PAF needs at least one iteration"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSolution {
    pub k: usize,
    pub item_ids: Vec<String>,
    /// Eigenvalues of the correlation matrix, descending.
    pub eigenvalues: Vec<f64>,
    pub kaiser_count: usize,
    #[serde(with = "numcore::rows")]
    pub pattern: DMatrix<f64>,
    #[serde(with = "numcore::rows")]
    pub structure: DMatrix<f64>,
    #[serde(with = "numcore::rows")]
    pub phi: DMatrix<f64>,
    pub communalities: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub rotation_iterations: usize,
    pub rotation_converged: bool,
    pub rotation_criterion: f64,
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EfaOptions {
    /// Factor count; the Kaiser count when unset.
    pub factors: Option<usize>,
    pub paf: PafOptions,
    pub rotation: RotationOptions,
}

/// Scree, PAF and rotation on a correlation matrix.
pub fn efa(r: &SymMatrix, item_ids: &[String], options: &EfaOptions) -> Result<FactorSolution> {
    let p = r.order();
    if item_ids.len() != p {
        return Err(Error::invalid(format!("{} item ids for a {p}x{p} matrix", item_ids.len())));
    }
    let sc = scree(r)?;
    let k = options.factors.unwrap_or(sc.kaiser_count);
    if k == 0 {
        return Err(Error::invalid("no eigenvalue exceeds 1; no factors to extract"));
    }
    let extracted = paf(r, k, &options.paf)?;
    let rot = rotate_oblique(&extracted.loadings, &options.rotation);
    let structure = &rot.pattern * &rot.phi;
    let mut notes = Vec::new();
    if !extracted.converged {
        notes.push(format!("PAF stopped after {} iterations without converging", extracted.iterations));
    }
    if extracted.clamped_eigenvalues > 0 {
        notes.push(format!("{} negative eigenvalue(s) of the reduced matrix set to 0", extracted.clamped_eigenvalues));
    }
    if !extracted.capped_items.is_empty() {
        let ids: Vec<&str> = extracted.capped_items.iter().map(|&i| item_ids[i].as_str()).collect();
        notes.push(format!("communality above 1 capped for {}", ids.join(", ")));
    }
    if !rot.converged {
        notes.push(format!("rotation did not converge in {} iterations; best solution returned", rot.iterations));
    }
    Ok(FactorSolution {
        k,
        item_ids: item_ids.to_vec(),
        eigenvalues: sc.eigenvalues,
        kaiser_count: sc.kaiser_count,
        pattern: rot.pattern,
        structure,
        phi: rot.phi,
        communalities: extracted.communalities,
        iterations: extracted.iterations,
        converged: extracted.converged,
        rotation_iterations: rot.iterations,
        rotation_converged: rot.converged,
        rotation_criterion: rot.criterion,
        notes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub item: String,
    pub factor: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorGraph {
    pub threshold: f64,
    pub k: usize,
    pub items: Vec<String>,
    pub edges: Vec<Edge>,
    pub isolated: Vec<String>,
}

pub const DEFAULT_LOADING_THRESHOLD: f64 = 0.4;

/// Edges for every structure loading with |value| ≥ `threshold`.
pub fn factor_graph(solution: &FactorSolution, threshold: f64) -> FactorGraph {
    graph_from_loadings(&solution.structure, &solution.item_ids, threshold)
}

pub fn graph_from_loadings(loadings: &DMatrix<f64>, item_ids: &[String], threshold: f64) -> FactorGraph {
    let mut edges = Vec::new();
    let mut isolated = Vec::new();
    for (i, id) in item_ids.iter().enumerate() {
        let before = edges.len();
        for j in 0..loadings.ncols() {
            let w = loadings[(i, j)];
            if w.abs() >= threshold {
                edges.push(Edge { item: id.clone(), factor: j, weight: w });
            }
        }
        if edges.len() == before {
            isolated.push(id.clone());
        }
    }
    FactorGraph { threshold, k: loadings.ncols(), items: item_ids.to_vec(), edges, isolated }
}

/// Binary target: item i loads 1 on factor `assignment[i]`.
pub fn target_from_assignment(assignment: &[usize], k: usize) -> DMatrix<f64> {
    DMatrix::from_fn(assignment.len(), k, |i, j| if assignment[i] == j { 1.0 } else { 0.0 })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub a: usize,
    pub b: usize,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Congruence {
    /// `coefficients[i][j]` compares column i of A with column j of B;
    /// `None` where either column is all zeros.
    pub coefficients: Vec<Vec<Option<f64>>>,
    /// Greedy one-to-one matching by largest |coefficient|.
    pub matching: Vec<Match>,
}

impl Congruence {
    /// Column of B matched to column `a` of A.
    pub fn matched(&self, a: usize) -> Option<usize> {
        self.matching.iter().find(|m| m.a == a).map(|m| m.b)
    }
}

/// Tucker congruence between the columns of two p-row loading matrices.
pub fn congruence(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<Congruence> {
    if a.nrows() != b.nrows() {
        return Err(Error::invalid(format!("loading matrices have {} and {} rows", a.nrows(), b.nrows())));
    }
    let coefficients: Vec<Vec<Option<f64>>> = (0..a.ncols())
        .map(|i| {
            (0..b.ncols())
                .map(|j| {
                    let (x, y) = (a.column(i), b.column(j));
                    let denom = (x.norm_squared() * y.norm_squared()).sqrt();
                    (denom > 0.0).then(|| (x.dot(&y) / denom).clamp(-1.0, 1.0))
                })
                .collect()
        })
        .collect();
    let mut cells: Vec<(usize, usize, f64)> = coefficients
        .iter()
        .enumerate()
        .flat_map(|(i, row)| row.iter().enumerate().filter_map(move |(j, c)| c.map(|c| (i, j, c))))
        .collect();
    cells.sort_by(|x, y| y.2.abs().total_cmp(&x.2.abs()).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
    let mut used_a = vec![false; a.ncols()];
    let mut used_b = vec![false; b.ncols()];
    let mut matching = Vec::new();
    for (i, j, c) in cells {
        if !used_a[i] && !used_b[j] {
            used_a[i] = true;
            used_b[j] = true;
            matching.push(Match { a: i, b: j, coefficient: c });
        }
    }
    matching.sort_by_key(|m| m.a);
    Ok(Congruence { coefficients, matching })
}

/// Number of items whose loading on the factor matched to their target
/// dimension is at least `threshold`. Columns are matched by congruence with
/// the binary target; the matched column's sign is aligned first.
pub fn items_recovered(loadings: &DMatrix<f64>, assignment: &[usize], k_target: usize, threshold: f64) -> Result<usize> {
    let target = target_from_assignment(assignment, k_target);
    let cong = congruence(&target, loadings)?;
    let mut count = 0;
    for (i, &d) in assignment.iter().enumerate() {
        if let Some(m) = cong.matching.iter().find(|m| m.a == d) {
            let v = loadings[(i, m.b)] * m.coefficient.signum();
            if v >= threshold {
                count += 1;
            }
        }
    }
    Ok(count)
}
