//! Assumption battery run before any factor analysis.
//!
//! Failures are report content, not errors: a constant item or a singular
//! correlation matrix yields a report whose affected checks are `NA`.

mod factorability;
mod linearity;
mod normality;

pub use factorability::{bartlett_sphericity, kmo, smc, smc_flags, BartlettResult, KmoResult, SmcBand, SmcFlags};
pub use linearity::{linearity_diagnostics, write_scatter_csv, CurvilinearPair, LinearityOptions, LinearityReport};
pub use normality::{henze_zirkler, HzResult};

use std::path::PathBuf;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::ResponseMatrix;
use crate::numcore::{correlation_matrix, zero_variance_columns};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BatteryOptions {
    pub alpha: f64,
    pub kmo_min: f64,
    pub smc_band: SmcBand,
    pub linearity: LinearityOptions,
    /// Scatter CSVs for flagged pairs are written here when set.
    pub scatter_dir: Option<PathBuf>,
}

impl Default for BatteryOptions {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            kmo_min: 0.6,
            smc_band: SmcBand::STRICT,
            linearity: LinearityOptions::default(),
            scatter_dir: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CheckStatus {
    #[serde(rename = "✓")]
    Met,
    #[serde(rename = "✗")]
    Violated,
    #[serde(rename = "NA")]
    Incomputable,
}

impl CheckStatus {
    fn from_bool(ok: bool) -> Self {
        if ok {
            Self::Met
        } else {
            Self::Violated
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            Self::Met => "✓",
            Self::Violated => "✗",
            Self::Incomputable => "NA",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckRow {
    pub check: String,
    pub status: CheckStatus,
    pub detail: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub n: usize,
    pub p: usize,
    pub zero_variance_items: Vec<String>,
    pub linearity: Option<LinearityReport>,
    pub hz: Option<HzResult>,
    pub bartlett: Option<BartlettResult>,
    pub kmo: Option<KmoResult>,
    pub smc: Option<Vec<f64>>,
    pub flags: SmcFlags,
    /// True when the correlation matrix could not be inverted.
    pub singular: bool,
    pub factorable: bool,
    pub fa_possible: bool,
    pub table: Vec<CheckRow>,
    pub notes: Vec<String>,
}

impl AssumptionReport {
    pub fn status(&self, check: &str) -> Option<CheckStatus> {
        self.table.iter().find(|r| r.check == check).map(|r| r.status)
    }

    pub fn to_markdown(&self) -> String {
        let mut s = String::from("| Check | Status | Detail |\n|---|---|---|\n");
        for row in &self.table {
            s.push_str(&format!("| {} | {} | {} |\n", row.check, row.status.symbol(), row.detail));
        }
        s
    }
}

pub const CHECK_LINEARITY: &str = "Linearity";
pub const CHECK_NORMALITY: &str = "Multivariate normality (p > .05)";
pub const CHECK_BARTLETT: &str = "Bartlett's test of sphericity (p < .05)";
pub const CHECK_KMO: &str = "KMO index (> 0.6)";
pub const CHECK_MULTICOLLINEARITY: &str = "No multicollinearity (all SMC < upper bound)";
pub const CHECK_OUTLIERS: &str = "No outlier variables (all SMC > lower bound)";

pub fn run_battery_matrix(m: &ResponseMatrix, options: &BatteryOptions) -> AssumptionReport {
    run_battery(&m.to_f64(), m.item_ids(), options)
}

/// Runs every check on the n x p data `x`. Never fails.
pub fn run_battery(x: &DMatrix<f64>, labels: &[String], options: &BatteryOptions) -> AssumptionReport {
    let (n, p) = x.shape();
    let label = |j: usize| labels.get(j).cloned().unwrap_or_else(|| format!("#{j}"));
    let mut rep = AssumptionReport { n, p, ..AssumptionReport::default() };
    let row = |check: &str, status: CheckStatus, detail: String| CheckRow { check: check.into(), status, detail };

    if n < 3 || p < 2 {
        rep.notes.push(format!("need at least 3 rows and 2 columns, got {n}x{p}"));
        for c in [CHECK_LINEARITY, CHECK_NORMALITY, CHECK_BARTLETT, CHECK_KMO, CHECK_MULTICOLLINEARITY, CHECK_OUTLIERS] {
            rep.table.push(row(c, CheckStatus::Incomputable, "too little data".into()));
        }
        return rep;
    }

    let zero = zero_variance_columns(x);
    rep.zero_variance_items = zero.iter().map(|&j| label(j)).collect();
    let keep: Vec<usize> = (0..p).filter(|j| !zero.contains(j)).collect();
    let (xv, lv): (DMatrix<f64>, Vec<String>) = if zero.is_empty() {
        (x.clone(), (0..p).map(label).collect())
    } else {
        rep.notes.push(format!(
            "zero variance in {} item(s): {}; factor analysis is impossible",
            zero.len(),
            rep.zero_variance_items.join(", ")
        ));
        (x.select_columns(&keep), keep.iter().map(|&j| label(j)).collect())
    };

    // Linearity and normality still run on the non-constant items.
    if xv.ncols() >= 2 {
        let lin = linearity_diagnostics(&xv, &lv, &options.linearity);
        if let Some(dir) = &options.scatter_dir {
            for pair in &lin.worst {
                if let Err(e) = write_scatter_csv(&xv, pair, dir) {
                    rep.notes.push(format!("could not write scatter data: {e}"));
                }
            }
        }
        let detail = format!("{} of {} item pairs show curvilinearity", lin.flagged_count, lin.pairs_tested);
        rep.table.push(row(CHECK_LINEARITY, CheckStatus::from_bool(lin.acceptable()), detail));
        rep.linearity = Some(lin);
    } else {
        rep.table.push(row(CHECK_LINEARITY, CheckStatus::Incomputable, "fewer than 2 non-constant items".into()));
    }
    match henze_zirkler(&xv, &lv) {
        Ok(hz) => {
            let detail = format!("HZ = {:.3}, p = {}", hz.statistic, fmt_p(hz.p));
            if let Some(w) = &hz.warning {
                rep.notes.push(w.clone());
            }
            rep.table.push(row(CHECK_NORMALITY, CheckStatus::from_bool(hz.p > options.alpha), detail));
            rep.hz = Some(hz);
        }
        Err(e) => {
            rep.notes.push(format!("Henze-Zirkler: {e}"));
            rep.table.push(row(CHECK_NORMALITY, CheckStatus::Incomputable, e.to_string()));
        }
    }

    if !zero.is_empty() {
        for c in [CHECK_BARTLETT, CHECK_KMO, CHECK_MULTICOLLINEARITY, CHECK_OUTLIERS] {
            rep.table.push(row(c, CheckStatus::Incomputable, "zero-variance items".into()));
        }
        return rep;
    }

    let r = match correlation_matrix(x, labels) {
        Ok(r) => r,
        Err(e) => {
            rep.notes.push(format!("correlation matrix: {e}"));
            for c in [CHECK_BARTLETT, CHECK_KMO, CHECK_MULTICOLLINEARITY, CHECK_OUTLIERS] {
                rep.table.push(row(c, CheckStatus::Incomputable, e.to_string()));
            }
            return rep;
        }
    };

    let bartlett = bartlett_sphericity(&r, n);
    let kmo_res = kmo(&r);
    let smc_res = smc(&r);
    if let (Err(Error::Singular { min_eigenvalue }), _) | (_, Err(Error::Singular { min_eigenvalue })) = (&bartlett, &smc_res) {
        rep.singular = true;
        rep.notes.push(format!(
            "correlation matrix is singular (smallest eigenvalue {min_eigenvalue:e}); items are perfectly multicollinear"
        ));
        rep.table.push(row(CHECK_BARTLETT, CheckStatus::Incomputable, "singular correlation matrix".into()));
        rep.table.push(row(CHECK_KMO, CheckStatus::Incomputable, "singular correlation matrix".into()));
        rep.table.push(row(CHECK_MULTICOLLINEARITY, CheckStatus::Violated, "singular correlation matrix".into()));
        rep.table.push(row(CHECK_OUTLIERS, CheckStatus::Incomputable, "singular correlation matrix".into()));
        return rep;
    }
    rep.fa_possible = true;

    match bartlett {
        Ok(b) => {
            let detail = format!("χ²({}) = {:.2}, p = {}", b.df, b.chi2, fmt_p(b.p));
            if let Some(w) = &b.warning {
                rep.notes.push(w.clone());
            }
            rep.table.push(row(CHECK_BARTLETT, CheckStatus::from_bool(b.p < options.alpha), detail));
            rep.bartlett = Some(b);
        }
        Err(e) => rep.table.push(row(CHECK_BARTLETT, CheckStatus::Incomputable, e.to_string())),
    }
    match kmo_res {
        Ok(k) => {
            let detail = format!("KMO = {:.3}", k.overall);
            rep.table.push(row(CHECK_KMO, CheckStatus::from_bool(k.overall > options.kmo_min), detail));
            rep.kmo = Some(k);
        }
        Err(e) => rep.table.push(row(CHECK_KMO, CheckStatus::Incomputable, e.to_string())),
    }
    match smc_res {
        Ok(values) => {
            let flags = smc_flags(&values, labels, options.smc_band);
            let (lo, hi) = (options.smc_band.lower, options.smc_band.upper);
            rep.table.push(row(
                CHECK_MULTICOLLINEARITY,
                CheckStatus::from_bool(flags.multicollinear.is_empty()),
                format!("{} item(s) with SMC > {hi}", flags.multicollinear.len()),
            ));
            rep.table.push(row(
                CHECK_OUTLIERS,
                CheckStatus::from_bool(flags.outliers.is_empty()),
                format!("{} item(s) with SMC < {lo}", flags.outliers.len()),
            ));
            rep.flags = flags;
            rep.smc = Some(values);
        }
        Err(e) => {
            rep.table.push(row(CHECK_MULTICOLLINEARITY, CheckStatus::Incomputable, e.to_string()));
            rep.table.push(row(CHECK_OUTLIERS, CheckStatus::Incomputable, e.to_string()));
        }
    }

    rep.factorable = matches!((&rep.bartlett, &rep.kmo), (Some(b), Some(k)) if b.p < options.alpha && k.overall > options.kmo_min);
    rep
}

fn fmt_p(p: f64) -> String {
    if p < 0.001 {
        "< .001".into()
    } else {
        format!("{p:.3}")
    }
}

/// Convenience for callers that want an error instead of a report state.
pub fn require_factorable(report: &AssumptionReport) -> Result<()> {
    if !report.fa_possible {
        return Err(Error::invalid(format!("factor analysis impossible: {}", report.notes.join("; "))));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{sample_factor_model, sample_mvn, seeded_rng, FactorModelSpec, SymMatrix};

    fn likert(rows: Vec<Vec<i32>>) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows[0].len(), |i, j| rows[i][j] as f64)
    }

    #[test]
    fn constant_column_short_circuits() {
        let spec = FactorModelSpec::simple(&[0, 0, 0, 0], 1, 0.7, 0.0);
        let mut x = likert(sample_factor_model(&spec, 200, 1, 1, 5).unwrap());
        x.column_mut(2).fill(1.0);
        let labels: Vec<String> = (1..=4).map(|k| format!("i{k}")).collect();
        let rep = run_battery(&x, &labels, &BatteryOptions::default());
        assert!(!rep.fa_possible && !rep.factorable);
        assert_eq!(rep.zero_variance_items, vec!["i3"]);
        assert_eq!(rep.status(CHECK_BARTLETT), Some(CheckStatus::Incomputable));
        assert_eq!(rep.status(CHECK_KMO), Some(CheckStatus::Incomputable));
        assert!(rep.status(CHECK_NORMALITY).is_some());
        let json = serde_json::to_value(&rep).unwrap();
        assert_eq!(json["table"][2]["status"], "NA");
    }

    #[test]
    fn one_factor_data_is_factorable() {
        let spec = FactorModelSpec::simple(&[0; 8], 1, 0.7, 0.0);
        let x = likert(sample_factor_model(&spec, 300, 3, 1, 5).unwrap());
        let rep = run_battery(&x, &[], &BatteryOptions::default());
        assert!(rep.fa_possible && rep.factorable, "{:?}", rep.table);
        assert_eq!(rep.status(CHECK_NORMALITY), Some(CheckStatus::Violated));
        assert_eq!(rep.status(CHECK_KMO), Some(CheckStatus::Met));
    }

    #[test]
    fn independent_noise_is_not_factorable() {
        let mut rng = seeded_rng(11);
        let x = sample_mvn(&SymMatrix::identity(6), 300, &mut rng).unwrap();
        let rep = run_battery(&x, &[], &BatteryOptions::default());
        assert!(rep.fa_possible);
        assert!(!rep.factorable);
        assert!(rep.kmo.as_ref().unwrap().overall <= 0.6);
    }

    #[test]
    fn singular_r_is_a_report_state() {
        let mut rng = seeded_rng(2);
        let z = sample_mvn(&SymMatrix::identity(3), 100, &mut rng).unwrap();
        let x = DMatrix::from_fn(100, 4, |i, j| if j < 3 { z[(i, j)] } else { z[(i, 0)] - z[(i, 2)] });
        let rep = run_battery(&x, &[], &BatteryOptions::default());
        assert!(rep.singular && !rep.fa_possible && !rep.factorable);
        assert_eq!(rep.status(CHECK_MULTICOLLINEARITY), Some(CheckStatus::Violated));
        assert!(require_factorable(&rep).is_err());
    }

    #[test]
    fn degenerate_shapes_do_not_panic() {
        let rep = run_battery(&DMatrix::from_element(2, 5, 1.0), &[], &BatteryOptions::default());
        assert!(!rep.fa_possible);
        let rep = run_battery(&DMatrix::from_fn(10, 1, |i, _| i as f64), &[], &BatteryOptions::default());
        assert!(!rep.fa_possible);
        let rep = run_battery(&DMatrix::from_element(10, 3, 2.0), &[], &BatteryOptions::default());
        assert!(!rep.fa_possible);
        assert!(rep.to_markdown().contains("NA"));
    }
}
