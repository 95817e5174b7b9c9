//! Maximum-likelihood confirmatory factor analysis for congeneric models.
//!
//! Every item loads on exactly one factor, factor variances are fixed to 1,
//! and the free parameters are the p loadings, the k(k-1)/2 factor
//! correlations and the p residual variances, packed in that order.
//!
//! Model files list factor blocks:
//!
//! ```toml
//! [factors]
//! "Openness" = ["h1", "h7", "h13"]
//! "Conscientiousness" = ["h2", "h8", "h14"]
//! ```

use std::fmt;
use std::path::Path;

use indexmap::IndexMap;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::Instrument;
use crate::numcore::{chi2_sf, minimize, Bounds, MinimizeOptions, SymMatrix, Termination};

/// Lower bound on residual variances in the bounded refit.
pub const BOUNDED_PSI_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ModelFile", into = "ModelFile")]
pub struct CfaModel {
    item_ids: Vec<String>,
    factor_names: Vec<String>,
    assignment: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelFile {
    factors: IndexMap<String, Vec<String>>,
}

impl TryFrom<ModelFile> for CfaModel {
    type Error = Error;

    fn try_from(f: ModelFile) -> Result<Self> {
        CfaModel::from_blocks(f.factors)
    }
}

impl From<CfaModel> for ModelFile {
    fn from(m: CfaModel) -> Self {
        let mut factors: IndexMap<String, Vec<String>> =
            m.factor_names.iter().map(|f| (f.clone(), Vec::new())).collect();
        for (id, &a) in m.item_ids.iter().zip(&m.assignment) {
            factors[a].push(id.clone());
        }
        ModelFile { factors }
    }
}

impl CfaModel {
    pub fn new(item_ids: Vec<String>, factor_names: Vec<String>, assignment: Vec<usize>) -> Result<Self> {
        if item_ids.len() != assignment.len() {
            return Err(Error::invalid(format!("{} items but {} assignments", item_ids.len(), assignment.len())));
        }
        if factor_names.is_empty() {
            return Err(Error::invalid("model has no factors"));
        }
        let mut seen = std::collections::HashSet::new();
        if let Some(dup) = item_ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::invalid(format!("item {dup} appears more than once")));
        }
        if let Some(&a) = assignment.iter().find(|&&a| a >= factor_names.len()) {
            return Err(Error::invalid(format!("assignment to factor {a} but only {} factors", factor_names.len())));
        }
        for (f, name) in factor_names.iter().enumerate() {
            if !assignment.contains(&f) {
                return Err(Error::invalid(format!("factor {name} has no items")));
            }
        }
        Ok(Self { item_ids, factor_names, assignment })
    }

    /// Builds a model from named blocks of item ids; items are ordered as
    /// they appear.
    pub fn from_blocks(blocks: IndexMap<String, Vec<String>>) -> Result<Self> {
        let mut ids = Vec::new();
        let mut assignment = Vec::new();
        for (f, items) in blocks.values().enumerate() {
            for id in items {
                ids.push(id.clone());
                assignment.push(f);
            }
        }
        Self::new(ids, blocks.into_keys().collect(), assignment)
    }

    /// The instrument's own dimensions as factors, in item order.
    pub fn from_instrument(instrument: &Instrument) -> Result<Self> {
        Self::new(
            instrument.item_ids(),
            instrument.dimensions.iter().map(|d| d.name.clone()).collect(),
            instrument.assignment().to_vec(),
        )
    }

    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::invalid(format!("model file: {e}")))
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("model serializes")
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn factor_names(&self) -> &[String] {
        &self.factor_names
    }

    pub fn assignment(&self) -> &[usize] {
        &self.assignment
    }

    pub fn p(&self) -> usize {
        self.item_ids.len()
    }

    pub fn k(&self) -> usize {
        self.factor_names.len()
    }

    pub fn n_params(&self) -> usize {
        let (p, k) = (self.p(), self.k());
        2 * p + k * (k - 1) / 2
    }

    /// Degrees of freedom; negative when the model is underidentified.
    pub fn df(&self) -> i64 {
        let p = self.p() as i64;
        p * (p + 1) / 2 - self.n_params() as i64
    }

    /// Drops the listed items. Factors left without items are removed.
    pub fn without_items(&self, drop: &[String]) -> Result<Self> {
        let mut ids = Vec::new();
        let mut old = Vec::new();
        for (id, &a) in self.item_ids.iter().zip(&self.assignment) {
            if !drop.contains(id) {
                ids.push(id.clone());
                old.push(a);
            }
        }
        let kept: Vec<usize> = (0..self.k()).filter(|f| old.contains(f)).collect();
        let assignment = old.iter().map(|a| kept.iter().position(|k| k == a).unwrap()).collect();
        Self::new(ids, kept.iter().map(|&f| self.factor_names[f].clone()).collect(), assignment)
    }

    /// Picks the model's items out of a matrix whose rows and columns are
    /// labelled `ids`, in model order.
    pub fn select(&self, s: &SymMatrix, ids: &[String]) -> Result<SymMatrix> {
        if ids.len() != s.order() {
            return Err(Error::invalid(format!("{} labels for a matrix of order {}", ids.len(), s.order())));
        }
        let idx = self
            .item_ids
            .iter()
            .map(|id| ids.iter().position(|x| x == id).ok_or_else(|| Error::invalid(format!("item {id} not in data"))))
            .collect::<Result<Vec<_>>>()?;
        Ok(SymMatrix::from_fn(idx.len(), |i, j| s.get(idx[i], idx[j])))
    }

    fn phi_index(&self) -> Vec<(usize, usize)> {
        let k = self.k();
        (0..k).flat_map(|a| ((a + 1)..k).map(move |b| (a, b))).collect()
    }

    fn unpack(&self, theta: &[f64]) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
        let (p, k) = (self.p(), self.k());
        let mut lambda = DMatrix::zeros(p, k);
        for i in 0..p {
            lambda[(i, self.assignment[i])] = theta[i];
        }
        let mut phi = DMatrix::identity(k, k);
        for (m, &(a, b)) in self.phi_index().iter().enumerate() {
            phi[(a, b)] = theta[p + m];
            phi[(b, a)] = theta[p + m];
        }
        let psi = theta[p + k * (k - 1) / 2..].to_vec();
        (lambda, phi, psi)
    }

    /// Model-implied covariance ΛΦΛᵀ + Ψ.
    pub fn implied(&self, theta: &[f64]) -> DMatrix<f64> {
        let (lambda, phi, psi) = self.unpack(theta);
        let mut sigma = &lambda * phi * lambda.transpose();
        for (i, v) in psi.iter().enumerate() {
            sigma[(i, i)] += v;
        }
        sigma
    }

    /// Deterministic start: loadings 0.7·√s_ii, residuals 0.5·s_ii, factor
    /// correlations 0.
    pub fn start_values(&self, s: &SymMatrix) -> Vec<f64> {
        let d = s.diagonal();
        let mut theta: Vec<f64> = d.iter().map(|v| 0.7 * v.sqrt()).collect();
        theta.extend(std::iter::repeat_n(0.0, self.k() * (self.k() - 1) / 2));
        theta.extend(d.iter().map(|v| 0.5 * v));
        theta
    }

    fn bounds(&self) -> Vec<(f64, f64)> {
        let (p, k) = (self.p(), self.k());
        let mut b = vec![(f64::NEG_INFINITY, f64::INFINITY); p];
        b.extend(std::iter::repeat_n((-1.0, 1.0), k * (k - 1) / 2));
        b.extend(std::iter::repeat_n((BOUNDED_PSI_FLOOR, f64::INFINITY), p));
        b
    }
}

/// Loads a model file, TOML unless the extension is `.json`.
pub fn load_model(path: &Path) -> Result<CfaModel> {
    let text = std::fs::read_to_string(path)?;
    let load_err = |message: String| Error::Load { path: path.to_path_buf(), message };
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
        serde_json::from_str(&text).map_err(|e| load_err(e.to_string()))
    } else {
        toml::from_str(&text).map_err(|e| load_err(e.to_string()))
    }
}

/// ML discrepancy between a sample covariance and a model.
pub struct Discrepancy<'a> {
    model: &'a CfaModel,
    s: DMatrix<f64>,
    ln_det_s: f64,
}

impl<'a> Discrepancy<'a> {
    pub fn new(model: &'a CfaModel, s: &SymMatrix) -> Result<Self> {
        if s.order() != model.p() {
            return Err(Error::invalid(format!("covariance of order {} for a model with {} items", s.order(), model.p())));
        }
        let ln_det_s = s.ln_det()?;
        Ok(Self { model, s: s.matrix().clone(), ln_det_s })
    }

    /// F = ln|Σ| + tr(SΣ⁻¹) − ln|S| − p, with its gradient written to
    /// `grad`. Returns +∞ when Σ is not positive definite.
    pub fn value_and_gradient(&self, theta: &[f64], grad: &mut [f64]) -> f64 {
        let m = self.model;
        let p = m.p();
        let sigma = m.implied(theta);
        let Some(chol) = sigma.cholesky() else {
            grad.fill(f64::NAN);
            return f64::INFINITY;
        };
        let l = chol.l_dirty();
        let ln_det: f64 = 2.0 * (0..p).map(|i| l[(i, i)].ln()).sum::<f64>();
        let inv = chol.inverse();
        let inv_s = &inv * &self.s;
        let f = ln_det + inv_s.trace() - self.ln_det_s - p as f64;

        let g = &inv - &inv_s * &inv;
        let (lambda, phi, _) = m.unpack(theta);
        let glp = &g * &lambda * &phi;
        for i in 0..p {
            grad[i] = 2.0 * glp[(i, m.assignment[i])];
        }
        let ltgl = lambda.transpose() * &g * &lambda;
        let pairs = m.phi_index();
        for (k, &(a, b)) in pairs.iter().enumerate() {
            grad[p + k] = 2.0 * ltgl[(a, b)];
        }
        for i in 0..p {
            grad[p + pairs.len() + i] = g[(i, i)];
        }
        f
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let mut g = vec![0.0; theta.len()];
        self.value_and_gradient(theta, &mut g)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfaStatus {
    ConvergedProper,
    ImproperHeywood,
    ImproperPhi,
    Nonconverged,
}

impl CfaStatus {
    pub fn is_proper(self) -> bool {
        self == CfaStatus::ConvergedProper
    }
}

impl fmt::Display for CfaStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CfaStatus::ConvergedProper => "converged_proper",
            CfaStatus::ImproperHeywood => "improper_heywood",
            CfaStatus::ImproperPhi => "improper_phi",
            CfaStatus::Nonconverged => "nonconverged",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitIndices {
    pub srmr: f64,
    pub rmsea: f64,
    pub cfi: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Baseline {
    pub chi2: f64,
    pub df: usize,
}

/// Independence model Σ = diag(S): χ²_b = −(n−1)·ln|R|.
pub fn baseline_model(s: &SymMatrix, n: usize) -> Result<Baseline> {
    let r = s.to_correlation()?;
    let p = s.order();
    Ok(Baseline { chi2: -(n as f64 - 1.0) * r.ln_det()?, df: p * p.saturating_sub(1) / 2 })
}

/// RMSEA, CFI and SRMR for a fitted model with implied covariance `sigma_hat`.
pub fn fit_indices(chi2: f64, df: usize, n: usize, s: &SymMatrix, sigma_hat: &DMatrix<f64>, baseline: Baseline) -> FitIndices {
    let excess = (chi2 - df as f64).max(0.0);
    let rmsea = if excess == 0.0 { 0.0 } else { (excess / (df as f64 * (n as f64 - 1.0))).sqrt() };
    let denom = (baseline.chi2 - baseline.df as f64).max(excess);
    let cfi = if denom <= 0.0 { 1.0 } else { (1.0 - excess / denom).clamp(0.0, 1.0) };
    let p = s.order();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..p {
        for j in 0..=i {
            let scale = (s.get(i, i) * s.get(j, j)).sqrt();
            sum += ((s.get(i, j) - sigma_hat[(i, j)]) / scale).powi(2);
            count += 1;
        }
    }
    FitIndices { srmr: (sum / count.max(1) as f64).sqrt(), rmsea, cfi }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CfaOptions {
    pub minimize: MinimizeOptions,
    /// Fit the correlation matrix instead of the covariance matrix.
    pub correlation: bool,
    /// Also refit with ψ ≥ 1e-8 and |φ| ≤ 1 and attach the result.
    pub bounded_refit: bool,
}

impl Default for CfaOptions {
    fn default() -> Self {
        Self { minimize: MinimizeOptions::default(), correlation: false, bounded_refit: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoadingEstimate {
    pub item: String,
    pub factor: String,
    pub estimate: f64,
    /// Loading divided by the implied item standard deviation.
    pub standardized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEstimate {
    pub a: String,
    pub b: String,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResidualEstimate {
    pub item: String,
    pub estimate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfaEstimates {
    pub loadings: Vec<LoadingEstimate>,
    pub factor_correlations: Vec<CorrelationEstimate>,
    pub residual_variances: Vec<ResidualEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CfaFit {
    pub status: CfaStatus,
    pub interpretation: String,
    pub n: usize,
    pub input: String,
    pub estimates: CfaEstimates,
    /// Packed parameter vector: loadings, factor correlations, residuals.
    pub theta: Vec<f64>,
    pub f_min: f64,
    pub chi2: f64,
    pub df: usize,
    pub p_value: f64,
    pub baseline: Baseline,
    /// Indices as computed, whatever the status.
    pub raw_indices: FitIndices,
    /// `None` unless the solution converged and is proper.
    pub indices: Option<FitIndices>,
    pub iterations: usize,
    pub termination: Termination,
    pub grad_norm: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bounded_refit: Option<Box<CfaFit>>,
}

impl CfaFit {
    pub fn is_interpretable(&self) -> bool {
        self.indices.is_some()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("fit serializes")
    }
}

/// Fits `model` to the covariance `s` of a sample of size `n`.
pub fn fit_cfa(s: &SymMatrix, n: usize, model: &CfaModel, options: &CfaOptions) -> Result<CfaFit> {
    let s = if options.correlation { s.to_correlation()? } else { s.clone() };
    let start = model.start_values(&s);
    let mut fit = fit_from(&s, n, model, &start, None, &options.minimize)?;
    if options.correlation {
        fit.input = "correlation".into();
    }
    if options.bounded_refit {
        let bounds = model.bounds();
        let mut refit = fit_from(&s, n, model, &start, Some(&bounds), &options.minimize)?;
        refit.input = fit.input.clone();
        fit.bounded_refit = Some(Box::new(refit));
    }
    Ok(fit)
}

/// Fits from an explicit start vector, without bounds.
pub fn fit_cfa_from(s: &SymMatrix, n: usize, model: &CfaModel, start: &[f64], options: &MinimizeOptions) -> Result<CfaFit> {
    if start.len() != model.n_params() {
        return Err(Error::invalid(format!("{} start values for {} parameters", start.len(), model.n_params())));
    }
    fit_from(s, n, model, start, None, options)
}

fn fit_from(
    s: &SymMatrix,
    n: usize,
    model: &CfaModel,
    start: &[f64],
    bounds: Option<&Bounds>,
    options: &MinimizeOptions,
) -> Result<CfaFit> {
    let df = model.df();
    if df < 1 {
        return Err(Error::invalid(format!("model has {df} degrees of freedom; at least 1 is needed")));
    }
    if n < 2 {
        return Err(Error::invalid("CFA needs n of at least 2"));
    }
    let df = df as usize;
    let disc = Discrepancy::new(model, s)?;
    let res = minimize(|x, g| disc.value_and_gradient(x, g), start, bounds, options)?;
    let (p, k) = (model.p(), model.k());
    let theta = res.x.clone();
    let psi = &theta[p + k * (k - 1) / 2..];
    let phi = &theta[p..p + k * (k - 1) / 2];
    let status = if !res.converged {
        CfaStatus::Nonconverged
    } else if psi.iter().any(|&v| v < 0.0) {
        CfaStatus::ImproperHeywood
    } else if phi.iter().any(|&v| v.abs() > 1.0) {
        CfaStatus::ImproperPhi
    } else {
        CfaStatus::ConvergedProper
    };

    let f_min = res.value.max(0.0);
    let chi2 = (n as f64 - 1.0) * f_min;
    let sigma_hat = model.implied(&theta);
    let baseline = baseline_model(s, n)?;
    let raw = fit_indices(chi2, df, n, s, &sigma_hat, baseline);
    let indices = status.is_proper().then_some(raw);

    let names = model.factor_names();
    let estimates = CfaEstimates {
        loadings: (0..p)
            .map(|i| LoadingEstimate {
                item: model.item_ids[i].clone(),
                factor: names[model.assignment[i]].clone(),
                estimate: theta[i],
                standardized: theta[i] / sigma_hat[(i, i)].max(f64::MIN_POSITIVE).sqrt(),
            })
            .collect(),
        factor_correlations: model
            .phi_index()
            .iter()
            .zip(phi)
            .map(|(&(a, b), &v)| CorrelationEstimate { a: names[a].clone(), b: names[b].clone(), estimate: v })
            .collect(),
        residual_variances: (0..p)
            .map(|i| ResidualEstimate { item: model.item_ids[i].clone(), estimate: psi[i] })
            .collect(),
    };
    let interpretation = interpret(status, &estimates, chi2, df, &raw);
    Ok(CfaFit {
        status,
        interpretation,
        n,
        input: "covariance".into(),
        estimates,
        theta,
        f_min,
        chi2,
        df,
        p_value: chi2_sf(chi2, df as f64),
        baseline,
        raw_indices: raw,
        indices,
        iterations: res.iterations,
        termination: res.termination,
        grad_norm: res.grad_norm,
        bounded_refit: None,
    })
}

fn interpret(status: CfaStatus, est: &CfaEstimates, chi2: f64, df: usize, ix: &FitIndices) -> String {
    match status {
        CfaStatus::ConvergedProper => format!(
            "converged to a proper solution: chi2({df}) = {chi2:.2}, SRMR = {:.3}, RMSEA = {:.3}, CFI = {:.3}",
            ix.srmr, ix.rmsea, ix.cfi
        ),
        CfaStatus::ImproperHeywood => {
            let items: Vec<&str> =
                est.residual_variances.iter().filter(|r| r.estimate < 0.0).map(|r| r.item.as_str()).collect();
            format!(
                "improper solution (Heywood case: negative residual variance for {}); fit indices cannot be interpreted",
                items.join(", ")
            )
        }
        CfaStatus::ImproperPhi => {
            let pairs: Vec<String> = est
                .factor_correlations
                .iter()
                .filter(|c| c.estimate.abs() > 1.0)
                .map(|c| format!("{}~{} = {:.2}", c.a, c.b, c.estimate))
                .collect();
            format!(
                "improper solution (factor correlation above 1: {}); fit indices cannot be interpreted",
                pairs.join(", ")
            )
        }
        CfaStatus::Nonconverged => "estimation did not converge; fit indices cannot be interpreted".into(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{covariance_matrix, sample_mvn, seeded_rng, FactorModelSpec};
    use rand::Rng;

    fn model(k: usize, per: usize) -> CfaModel {
        let assignment: Vec<usize> = (0..k * per).map(|i| i / per).collect();
        CfaModel::new(
            (0..k * per).map(|i| format!("i{i}")).collect(),
            (0..k).map(|f| format!("F{f}")).collect(),
            assignment,
        )
        .unwrap()
    }

    /// F_ML written out with explicit inverse and determinant.
    fn f_direct(s: &DMatrix<f64>, sigma: &DMatrix<f64>) -> f64 {
        let inv = sigma.clone().try_inverse().unwrap();
        sigma.determinant().ln() + (s * inv).trace() - s.determinant().ln() - s.nrows() as f64
    }

    fn sym(m: DMatrix<f64>) -> SymMatrix {
        SymMatrix::from_matrix(m).unwrap()
    }

    #[test]
    fn df_and_params() {
        let m = model(6, 10);
        assert_eq!(m.n_params(), 135);
        assert_eq!(m.df(), 1830 - 135);
        assert_eq!(model(1, 3).df(), 0);
    }

    #[test]
    fn model_file_round_trip() {
        let text = "[factors]\nA = [\"a1\", \"a2\", \"a3\"]\nB = [\"b1\", \"b2\", \"b3\"]\n";
        let m = CfaModel::from_toml_str(text).unwrap();
        assert_eq!(m.k(), 2);
        assert_eq!(m.assignment(), &[0, 0, 0, 1, 1, 1]);
        assert_eq!(CfaModel::from_toml_str(&m.to_toml_string()).unwrap(), m);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        std::fs::write(&path, serde_json::to_string(&m).unwrap()).unwrap();
        assert_eq!(load_model(&path).unwrap(), m);
        assert!(CfaModel::from_toml_str("[factors]\nA = []\n").is_err());
    }

    #[test]
    fn without_items_drops_empty_factors() {
        let m = model(3, 2);
        let r = m.without_items(&["i2".into(), "i3".into()]).unwrap();
        assert_eq!(r.factor_names(), &["F0".to_string(), "F2".to_string()]);
        assert_eq!(r.assignment(), &[0, 0, 1, 1]);
    }

    #[test]
    fn objective_matches_direct_formula() {
        let m = model(2, 3);
        let s = sym(FactorModelSpec::simple(m.assignment(), 2, 0.6, 0.4).implied().unwrap().into_matrix());
        let d = Discrepancy::new(&m, &s).unwrap();
        let theta = m.start_values(&s);
        let direct = f_direct(s.matrix(), &m.implied(&theta));
        assert!((d.value(&theta) - direct).abs() < 1e-10);
    }

    #[test]
    fn gradient_matches_central_differences() {
        let m = model(3, 4);
        let mut rng = seeded_rng(11);
        let s = {
            let x = DMatrix::<f64>::from_fn(60, 12, |_, _| rng.random_range(-1.0..1.0));
            covariance_matrix(&(&x + x.column(0) * DMatrix::from_element(1, 12, 0.5))).unwrap()
        };
        let d = Discrepancy::new(&m, &s).unwrap();
        let mut checked = 0;
        while checked < 20 {
            let mut theta: Vec<f64> = (0..m.n_params()).map(|_| rng.random_range(0.1..0.9)).collect();
            for v in &mut theta[12..15] {
                *v = rng.random_range(-0.5..0.5);
            }
            let mut g = vec![0.0; theta.len()];
            if !d.value_and_gradient(&theta, &mut g).is_finite() {
                continue;
            }
            let h = 1e-6;
            for j in 0..theta.len() {
                let mut up = theta.clone();
                up[j] += h;
                let mut dn = theta.clone();
                dn[j] -= h;
                let fd = (d.value(&up) - d.value(&dn)) / (2.0 * h);
                let rel = (fd - g[j]).abs() / g[j].abs().max(1e-3);
                assert!(rel <= 1e-5, "param {j}: analytic {} vs fd {fd}", g[j]);
            }
            checked += 1;
        }
    }

    #[test]
    fn exact_model_implied_input_fits_perfectly() {
        let m = model(3, 4);
        let mut spec = FactorModelSpec::simple(m.assignment(), 3, 0.7, 0.3);
        spec.loadings[(0, 0)] = 0.5;
        let s = spec.implied().unwrap();
        let fit = fit_cfa(&s, 300, &m, &CfaOptions::default()).unwrap();
        assert_eq!(fit.status, CfaStatus::ConvergedProper);
        assert!(fit.f_min < 1e-10 && fit.chi2 < 1e-7, "{}", fit.f_min);
        let ix = fit.indices.unwrap();
        assert!(ix.srmr < 1e-5 && ix.rmsea == 0.0 && ix.cfi == 1.0);
        assert!((fit.theta[0] - 0.5).abs() < 1e-4);
        assert!((fit.theta[12] - 0.3).abs() < 1e-4);
    }

    #[test]
    fn fit_index_formulas() {
        let s = SymMatrix::identity(3);
        let b = Baseline { chi2: 2000.0, df: 120 };
        let ix = fit_indices(200.0, 100, 401, &s, s.matrix(), b);
        assert!((ix.rmsea - 0.05).abs() < 1e-12);
        assert!((ix.cfi - (1.0 - 100.0 / 1880.0)).abs() < 1e-12);
        assert!((ix.cfi - 0.947).abs() < 1e-3);
        assert_eq!(ix.srmr, 0.0);
        let ix = fit_indices(80.0, 100, 401, &s, s.matrix(), b);
        assert_eq!((ix.rmsea, ix.cfi), (0.0, 1.0));
        // SRMR over the lower triangle with the diagonal
        let shifted = s.matrix().map(|v| v + 0.1);
        let ix = fit_indices(1.0, 1, 10, &s, &shifted, b);
        assert!((ix.srmr - 0.1).abs() < 1e-12);
    }

    #[test]
    fn baseline_examples() {
        let two = SymMatrix::from_fn(2, |i, j| if i == j { 1.0 } else { 0.5 });
        let b = baseline_model(&two, 101).unwrap();
        assert!((b.chi2 - (-100.0 * 0.75f64.ln())).abs() < 1e-10);
        assert!((b.chi2 - 28.77).abs() < 0.01);
        assert_eq!(b.df, 1);
        let diag = SymMatrix::from_fn(3, |i, j| if i == j { (i + 1) as f64 } else { 0.0 });
        assert!(baseline_model(&diag, 50).unwrap().chi2.abs() < 1e-12);
        assert!(baseline_model(&SymMatrix::identity(4), 7).unwrap().chi2.abs() < 1e-12);
    }

    #[test]
    fn non_spd_input_errors() {
        let m = model(2, 3);
        let s = SymMatrix::from_fn(6, |i, j| if i == j || (i < 2 && j < 2) { 1.0 } else { 0.2 });
        assert!(fit_cfa(&s, 100, &m, &CfaOptions::default()).is_err());
        assert!(fit_cfa(&SymMatrix::identity(3), 100, &model(1, 3), &CfaOptions::default()).is_err());
    }

    fn synthetic(n: usize, seed: u64) -> (CfaModel, SymMatrix) {
        let m = model(3, 5);
        let pop = FactorModelSpec::simple(m.assignment(), 3, 0.7, 0.3).implied().unwrap();
        let x = sample_mvn(&pop, n, &mut seeded_rng(seed)).unwrap();
        (m, covariance_matrix(&x).unwrap())
    }

    #[test]
    fn recovers_generating_model() {
        let (m, s) = synthetic(2000, 5);
        let fit = fit_cfa(&s, 2000, &m, &CfaOptions::default()).unwrap();
        assert_eq!(fit.status, CfaStatus::ConvergedProper);
        let ix = fit.indices.unwrap();
        assert!(ix.cfi >= 0.97 && ix.rmsea <= 0.03 && ix.srmr <= 0.04, "{ix:?}");
        for l in &fit.estimates.loadings {
            assert!((l.standardized - 0.7).abs() <= 0.05, "{l:?}");
        }
    }

    #[test]
    fn refit_from_optimum_is_stable_and_deterministic() {
        let (m, s) = synthetic(500, 9);
        let fit = fit_cfa(&s, 500, &m, &CfaOptions::default()).unwrap();
        let again = fit_cfa_from(&s, 500, &m, &fit.theta, &MinimizeOptions::default()).unwrap();
        assert!((again.f_min - fit.f_min).abs() <= 1e-9);
        assert_eq!(fit, fit_cfa(&s, 500, &m, &CfaOptions::default()).unwrap());
    }

    /// Two factors of three items plus a near-duplicate pair (r = .95)
    /// split across them; the pair correlates with the other items more
    /// than those correlate among themselves.
    fn near_duplicate_population() -> (CfaModel, SymMatrix) {
        let assign = vec![0, 0, 0, 0, 1, 1, 1, 1];
        let dup = |i: usize| i == 0 || i == 4;
        let lam = |i: usize| if dup(i) { 1.05 } else { 0.6 };
        let phi = 0.95 / (1.05 * 1.05);
        let pop = SymMatrix::from_fn(8, |i, j| {
            if i == j {
                1.0
            } else {
                lam(i) * lam(j) * if assign[i] == assign[j] { 1.0 } else { phi }
            }
        });
        let ids = ["a", "c1", "c2", "c3", "a2", "d1", "d2", "d3"].map(String::from).to_vec();
        (CfaModel::new(ids, vec!["F1".into(), "F2".into()], assign).unwrap(), pop)
    }

    #[test]
    fn near_duplicate_pair_gives_heywood_case() {
        let (m, pop) = near_duplicate_population();
        assert!((pop.get(0, 4) - 0.95).abs() < 1e-12);
        let x = sample_mvn(&pop, 500, &mut seeded_rng(2)).unwrap();
        let s = covariance_matrix(&x).unwrap();
        let fit = fit_cfa(&s, 500, &m, &CfaOptions { bounded_refit: true, ..CfaOptions::default() }).unwrap();
        assert_eq!(fit.status, CfaStatus::ImproperHeywood, "{}", fit.interpretation);
        assert!(fit.estimates.residual_variances.iter().any(|r| r.estimate < 0.0));
        assert!(fit.indices.is_none());
        assert!(fit.interpretation.contains("cannot be interpreted"));
        let refit = fit.bounded_refit.as_ref().unwrap();
        assert!(refit.theta[9..].iter().all(|&v| v >= BOUNDED_PSI_FLOOR));
        assert!(refit.theta[8].abs() <= 1.0);
        assert!(refit.f_min >= fit.f_min - 1e-9);
        let json: serde_json::Value = serde_json::from_str(&fit.to_json()).unwrap();
        assert_eq!(json["status"], "improper_heywood");
        assert!(json["indices"].is_null());
    }
}
