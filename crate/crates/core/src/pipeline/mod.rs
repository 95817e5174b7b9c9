//! End-to-end validation of one group's responses: zero-variance gate,
//! assumption battery, CFA of the theoretical structure, EFA fallback, and
//! the factor graph. Also the multi-group report and the temperature sweep.

mod report;
mod sweep;

pub use report::{compare_groups, CompareOptions, ComparisonReport, GroupData};
pub use sweep::{sweep_study, SweepRow, SweepStudy};

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assume::{run_battery, AssumptionReport, BatteryOptions};
use crate::cfa::{fit_cfa, CfaFit, CfaModel, CfaOptions};
use crate::collect::CollectionConfig;
use crate::efa::{
    congruence, efa, factor_graph, graph_svg, items_recovered, scree_svg, target_from_assignment, Congruence,
    EfaOptions, FactorGraph, FactorSolution, DEFAULT_LOADING_THRESHOLD,
};
use crate::error::{Error, Result};
use crate::instrument::{reverse_score, Instrument, ResponseMatrix};
use crate::numcore::covariance_matrix;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitGates {
    pub srmr_max: f64,
    pub rmsea_max: f64,
    pub cfi_min: f64,
}

impl Default for FitGates {
    fn default() -> Self {
        Self { srmr_max: 0.08, rmsea_max: 0.06, cfi_min: 0.90 }
    }
}

impl FitGates {
    /// True when the fit is proper and every index passes its gate.
    pub fn supports(&self, fit: &CfaFit) -> bool {
        fit.indices.is_some_and(|ix| ix.srmr <= self.srmr_max && ix.rmsea <= self.rmsea_max && ix.cfi >= self.cfi_min)
    }
}

/// Everything configurable about a pipeline run, loadable from TOML.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub battery: BatteryOptions,
    pub cfa: CfaOptions,
    pub gates: FitGates,
    pub efa: EfaOptions,
    pub loading_threshold: f64,
    /// Run EFA even when the CFA supports the theoretical structure.
    pub force_efa: bool,
    /// Share of reverse-coded items among a factor's salient items above
    /// which the factor is flagged.
    pub reverse_dominance: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collection: Option<CollectionConfig>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            battery: BatteryOptions::default(),
            cfa: CfaOptions::default(),
            gates: FitGates::default(),
            efa: EfaOptions::default(),
            loading_threshold: DEFAULT_LOADING_THRESHOLD,
            force_efa: false,
            reverse_dominance: 0.7,
            collection: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::invalid(format!("pipeline config: {e}")))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        toml::from_str(&text).map_err(|e| Error::Load { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Sets the seed used by every randomized step.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.efa.rotation.seed = seed;
        self.battery.linearity.seed = seed;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    FaImpossible,
    NotFactorable,
    CfaRejectedEfaRun,
    CfaSupported,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::FaImpossible => "fa_impossible",
            Stage::NotFactorable => "not_factorable",
            Stage::CfaRejectedEfaRun => "cfa_rejected_efa_run",
            Stage::CfaSupported => "cfa_supported",
        })
    }
}

/// Reverse-coded share among one factor's salient items.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReverseShare {
    pub factor: usize,
    pub salient_items: usize,
    pub reverse_items: usize,
    pub share: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub group: String,
    pub instrument_id: String,
    pub n: usize,
    pub stage: Stage,
    pub assumptions: AssumptionReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cfa: Option<CfaFit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub efa: Option<FactorSolution>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub graph: Option<FactorGraph>,
    /// Theoretical binary pattern (rows) against EFA pattern columns.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub congruence: Option<Congruence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items_recovered: Option<usize>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub reverse_shares: Vec<ReverseShare>,
    pub summary: Vec<String>,
}

/// Runs the validation flow. Failures of individual steps end up in the
/// verdict rather than as errors; only a matrix that does not belong to the
/// instrument is rejected.
pub fn run_pipeline(
    matrix: &ResponseMatrix,
    instrument: &Instrument,
    model: &CfaModel,
    config: &PipelineConfig,
) -> Result<Verdict> {
    matrix.check_instrument(instrument)?;
    let scored = if matrix.is_reverse_scored() { matrix.clone() } else { reverse_score(matrix, instrument)? };
    let x = scored.to_f64();
    let ids = scored.item_ids();
    let assumptions = run_battery(&x, ids, &config.battery);
    let mut v = Verdict {
        group: matrix.group.clone(),
        instrument_id: instrument.id.clone(),
        n: scored.n(),
        stage: Stage::FaImpossible,
        assumptions,
        cfa: None,
        efa: None,
        graph: None,
        congruence: None,
        items_recovered: None,
        reverse_shares: Vec::new(),
        summary: Vec::new(),
    };
    let label = format!("{} / {}", v.group, v.instrument_id);

    if !v.assumptions.zero_variance_items.is_empty() {
        v.summary.push(format!(
            "{label}: {} item(s) without variance ({}); factor analysis is impossible",
            v.assumptions.zero_variance_items.len(),
            v.assumptions.zero_variance_items.join(", ")
        ));
        return Ok(v);
    }
    if !v.assumptions.factorable {
        v.stage = Stage::NotFactorable;
        let why = if v.assumptions.singular {
            "the correlation matrix is singular".to_string()
        } else {
            let b = v.assumptions.bartlett.as_ref().map_or("NA".into(), |b| format!("{:.3}", b.p));
            let k = v.assumptions.kmo.as_ref().map_or("NA".into(), |k| format!("{:.3}", k.overall));
            format!("Bartlett p = {b}, KMO = {k}")
        };
        v.summary.push(format!("{label}: factor analysis cannot be justified ({why})"));
        return Ok(v);
    }

    let supported = match run_cfa(&scored, model, config) {
        Ok(fit) => {
            let ok = config.gates.supports(&fit);
            v.summary.push(format!("{label}: CFA {}", fit.interpretation));
            if fit.status.is_proper() && !ok {
                v.summary.push(format!("{label}: fit falls short of the configured gates"));
            }
            v.cfa = Some(fit);
            ok
        }
        Err(e) => {
            v.summary.push(format!("{label}: CFA could not be run: {e}"));
            false
        }
    };
    v.stage = if supported { Stage::CfaSupported } else { Stage::CfaRejectedEfaRun };
    if supported && !config.force_efa {
        v.summary.push(format!("{label}: theoretical structure supported"));
        return Ok(v);
    }

    let r = match scored.correlation() {
        Ok(r) => r,
        Err(e) => {
            v.summary.push(format!("{label}: EFA could not be run: {e}"));
            return Ok(v);
        }
    };
    match efa(&r, ids, &config.efa) {
        Ok(sol) => {
            v.summary.push(format!(
                "{label}: EFA extracted {} factor(s) (Kaiser count {})",
                sol.k, sol.kaiser_count
            ));
            let graph = factor_graph(&sol, config.loading_threshold);
            let assignment: Vec<usize> = model_assignment(model, ids);
            let k_theory = model.k();
            if assignment.len() == ids.len() {
                let target = target_from_assignment(&assignment, k_theory);
                v.congruence = congruence(&target, &sol.pattern).ok();
                v.items_recovered = items_recovered(&sol.pattern, &assignment, k_theory, config.loading_threshold).ok();
                if let Some(c) = v.items_recovered {
                    v.summary.push(format!("{label}: {c}/{} items load on their theoretical factor", ids.len()));
                }
            }
            v.reverse_shares = reverse_shares(&sol, instrument, config);
            for s in v.reverse_shares.iter().filter(|s| s.flagged) {
                v.summary.push(format!(
                    "{label}: factor {} is dominated by reverse-coded items ({}/{})",
                    s.factor + 1,
                    s.reverse_items,
                    s.salient_items
                ));
            }
            v.graph = Some(graph);
            v.efa = Some(sol);
        }
        Err(e) => v.summary.push(format!("{label}: EFA could not be run: {e}")),
    }
    Ok(v)
}

fn run_cfa(scored: &ResponseMatrix, model: &CfaModel, config: &PipelineConfig) -> Result<CfaFit> {
    let s = covariance_matrix(&scored.to_f64())?;
    let s = model.select(&s, scored.item_ids())?;
    fit_cfa(&s, scored.n(), model, &config.cfa)
}

/// Theoretical factor of each data column, empty if any column is missing
/// from the model.
fn model_assignment(model: &CfaModel, ids: &[String]) -> Vec<usize> {
    ids.iter()
        .map_while(|id| model.item_ids().iter().position(|m| m == id).map(|i| model.assignment()[i]))
        .collect()
}

fn reverse_shares(sol: &FactorSolution, instrument: &Instrument, config: &PipelineConfig) -> Vec<ReverseShare> {
    let reverse = instrument.reverse_coded();
    (0..sol.k)
        .map(|j| {
            let salient: Vec<&String> = sol
                .item_ids
                .iter()
                .enumerate()
                .filter(|&(i, _)| sol.structure[(i, j)].abs() >= config.loading_threshold)
                .map(|(_, id)| id)
                .collect();
            let rev = salient.iter().filter(|id| reverse.contains(id.as_str())).count();
            let share = if salient.is_empty() { 0.0 } else { rev as f64 / salient.len() as f64 };
            ReverseShare {
                factor: j,
                salient_items: salient.len(),
                reverse_items: rev,
                share,
                flagged: share > config.reverse_dominance,
            }
        })
        .collect()
}

/// Writes every artifact of a verdict into `dir` and returns the paths.
pub fn write_verdict(v: &Verdict, instrument: &Instrument, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    let mut put = |name: &str, body: String| -> Result<()> {
        let path = dir.join(name);
        std::fs::write(&path, body)?;
        written.push(path);
        Ok(())
    };
    put("verdict.json", serde_json::to_string_pretty(v)?)?;
    put("assumptions.md", v.assumptions.to_markdown())?;
    put("summary.md", format!("# {} / {}\n\nstage: {}\n\n{}\n", v.group, v.instrument_id, v.stage, bullet(&v.summary)))?;
    if let Some(fit) = &v.cfa {
        put("cfa.json", fit.to_json())?;
    }
    if let Some(sol) = &v.efa {
        put("efa.json", serde_json::to_string_pretty(sol)?)?;
        put("scree.svg", scree_svg(&sol.eigenvalues, &format!("{} / {}: scree", v.group, v.instrument_id)))?;
    }
    if let Some(g) = &v.graph {
        let names: Vec<String> = instrument.dimensions.iter().map(|d| d.name.clone()).collect();
        let dim_of: Vec<usize> =
            g.items.iter().map(|id| instrument.item_index(id).map_or(0, |i| instrument.assignment()[i])).collect();
        put("graph.svg", graph_svg(g, &dim_of, &names, &format!("{} / {}", v.group, v.instrument_id)))?;
    }
    Ok(written)
}

fn bullet(lines: &[String]) -> String {
    lines.iter().map(|l| format!("- {l}")).collect::<Vec<_>>().join("\n")
}
