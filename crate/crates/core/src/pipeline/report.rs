use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{run_pipeline, write_verdict, PipelineConfig, Stage, Verdict};
use crate::cfa::CfaModel;
use crate::compare::{correlation_table, descriptives, CorrelationTable, DescriptiveTable, GroupScores};
use crate::error::{Error, Result};
use crate::instrument::{composite_scores, reverse_score, Instrument, ResponseMatrix};

/// One group's raw responses, one matrix per instrument in the order the
/// instruments are given.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupData {
    pub group: String,
    pub matrices: Vec<ResponseMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareOptions {
    pub reference: String,
    /// Dimension correlated with every dimension of the other instruments.
    pub anchor: Option<String>,
    pub level: f64,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self { reference: "human".into(), anchor: None, level: 0.95 }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub dir: PathBuf,
    pub input_hash: String,
    pub verdicts: Vec<Verdict>,
    pub descriptives: DescriptiveTable,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correlations: Option<CorrelationTable>,
    pub svgs: Vec<PathBuf>,
}

fn input_hash(groups: &[GroupData], instruments: &[Instrument], config: &PipelineConfig, options: &CompareOptions) -> Result<String> {
    let mut h = Sha256::new();
    h.update(serde_json::to_vec(groups)?);
    h.update(serde_json::to_vec(instruments)?);
    h.update(serde_json::to_vec(config)?);
    h.update(serde_json::to_vec(options)?);
    Ok(hex::encode(h.finalize()))
}

/// Runs the pipeline for every group and instrument and bundles the
/// verdicts with the descriptive and correlation tables in
/// `<out_root>/report-<hash>`, where the hash covers all inputs.
pub fn compare_groups(
    groups: &[GroupData],
    instruments: &[Instrument],
    config: &PipelineConfig,
    options: &CompareOptions,
    out_root: &Path,
) -> Result<ComparisonReport> {
    if groups.is_empty() {
        return Err(Error::invalid("no groups to compare"));
    }
    for g in groups {
        if g.matrices.len() != instruments.len() {
            return Err(Error::invalid(format!(
                "group {} has {} response matrices for {} instruments",
                g.group,
                g.matrices.len(),
                instruments.len()
            )));
        }
        for (m, inst) in g.matrices.iter().zip(instruments) {
            m.check_instrument(inst).map_err(|_| {
                Error::invalid(format!("group {}: responses for {} where {} was expected", g.group, m.instrument_id, inst.id))
            })?;
        }
    }
    let models = instruments.iter().map(CfaModel::from_instrument).collect::<Result<Vec<_>>>()?;

    let jobs: Vec<(usize, usize)> = (0..groups.len()).flat_map(|g| (0..instruments.len()).map(move |i| (g, i))).collect();
    let verdicts = jobs
        .par_iter()
        .map(|&(g, i)| {
            let m = groups[g].matrices[i].clone().with_group(&groups[g].group);
            run_pipeline(&m, &instruments[i], &models[i], config)
        })
        .collect::<Result<Vec<_>>>()?;

    let scores = groups
        .iter()
        .map(|g| {
            let comps = g
                .matrices
                .iter()
                .zip(instruments)
                .map(|(m, inst)| {
                    let scored = if m.is_reverse_scored() { m.clone() } else { reverse_score(m, inst)? };
                    composite_scores(&scored, inst)
                })
                .collect::<Result<Vec<_>>>()?;
            GroupScores::from_composites(&g.group, &comps.iter().collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let reference = scores.iter().any(|g| g.group == options.reference).then_some(options.reference.as_str());
    let desc = descriptives(&scores, reference)?;

    let correlations = match (&options.anchor, reference) {
        (Some(anchor), Some(r)) => {
            let home = instruments
                .iter()
                .position(|i| i.dimension(anchor).is_some())
                .ok_or_else(|| Error::invalid(format!("anchor dimension {anchor} is in no instrument")))?;
            let targets: Vec<String> = instruments
                .iter()
                .enumerate()
                .filter(|&(i, _)| i != home)
                .flat_map(|(_, inst)| inst.dimensions.iter().map(|d| d.name.clone()))
                .collect();
            Some(correlation_table(&scores, r, anchor, &targets, options.level)?)
        }
        _ => None,
    };

    let hash = input_hash(groups, instruments, config, options)?;
    let dir = out_root.join(format!("report-{}", &hash[..16]));
    std::fs::create_dir_all(&dir)?;
    let mut svgs = Vec::new();
    for v in &verdicts {
        let inst = instruments.iter().find(|i| i.id == v.instrument_id).expect("verdict instrument");
        let sub = dir.join("verdicts").join(slug(&v.group)).join(slug(&v.instrument_id));
        svgs.extend(write_verdict(v, inst, &sub)?.into_iter().filter(|p| p.extension().is_some_and(|e| e == "svg")));
    }
    std::fs::write(dir.join("descriptives.md"), desc.to_markdown())?;
    std::fs::write(dir.join("descriptives.json"), desc.to_json())?;
    if let Some(c) = &correlations {
        std::fs::write(dir.join("correlations.md"), c.to_markdown())?;
        std::fs::write(dir.join("correlations.json"), c.to_json())?;
    }
    let congruences: Vec<serde_json::Value> = verdicts
        .iter()
        .filter_map(|v| {
            v.congruence.as_ref().map(|c| serde_json::json!({ "group": v.group, "instrument": v.instrument_id, "congruence": c }))
        })
        .collect();
    std::fs::write(dir.join("congruence.json"), serde_json::to_string_pretty(&congruences)?)?;
    let report = ComparisonReport { dir: dir.clone(), input_hash: hash, verdicts, descriptives: desc, correlations, svgs };
    std::fs::write(dir.join("README.md"), overview(&report))?;
    Ok(report)
}

fn slug(s: &str) -> String {
    s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' || c == '.' { c } else { '_' }).collect()
}

fn overview(r: &ComparisonReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# Comparison report\n\ninput hash: `{}`\n\n## Verdicts\n", r.input_hash);
    let _ = writeln!(s, "| Group | Instrument | n | Stage |\n|---|---|---|---|");
    for v in &r.verdicts {
        let _ = writeln!(s, "| {} | {} | {} | {} |", v.group, v.instrument_id, v.n, v.stage);
    }
    let _ = writeln!(s, "\n## Group means (SD)\n\n{}", r.descriptives.to_markdown());
    if let Some(c) = &r.correlations {
        let _ = writeln!(s, "\n## Correlations\n\n{}", c.to_markdown());
    }
    let _ = writeln!(s, "\n## Notes\n");
    for v in &r.verdicts {
        for line in &v.summary {
            let _ = writeln!(s, "- {line}");
        }
    }
    let efa_groups = r.verdicts.iter().filter(|v| v.stage == Stage::CfaRejectedEfaRun).count();
    let _ = writeln!(s, "\n{efa_groups} analysis(es) fell back to EFA; graphs are under `verdicts/`.");
    s
}
