use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{reverse_shares, PipelineConfig};
use crate::assume::run_battery;
use crate::cfa::CfaModel;
use crate::efa::{congruence, efa, items_recovered, target_from_assignment};
use crate::error::Result;
use crate::instrument::{reverse_score, Instrument, ResponseMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub temperature: f64,
    pub n: usize,
    pub zero_variance_items: usize,
    pub factorable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kaiser_count: Option<usize>,
    /// Mean |congruence| of the theoretical factors with their matched EFA
    /// factors.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_congruence: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub items_recovered: Option<usize>,
    /// Reverse-coded share among the salient items of the first factor.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dominant_reverse_share: Option<f64>,
    pub reverse_dominated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepStudy {
    pub instrument_id: String,
    pub rows: Vec<SweepRow>,
}

impl SweepStudy {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| Temperature | n | Factorable | Kaiser | Congruence | Recovered | Reverse share |");
        let _ = writeln!(s, "|---|---|---|---|---|---|---|");
        let opt = |v: Option<String>| v.unwrap_or_else(|| "NA".into());
        for r in &self.rows {
            let _ = writeln!(
                s,
                "| {:.2} | {} | {} | {} | {} | {} | {}{} |",
                r.temperature,
                r.n,
                if r.factorable { "yes" } else { "no" },
                opt(r.kaiser_count.map(|k| k.to_string())),
                opt(r.mean_congruence.map(|c| format!("{c:.2}"))),
                opt(r.items_recovered.map(|c| c.to_string())),
                opt(r.dominant_reverse_share.map(|c| format!("{c:.2}"))),
                if r.reverse_dominated { " (!)" } else { "" }
            );
        }
        let counts: Vec<usize> = self.rows.iter().filter_map(|r| r.kaiser_count).collect();
        if let (Some(lo), Some(hi)) = (counts.iter().min(), counts.iter().max()) {
            let _ = writeln!(s, "\nKaiser count ranges from {lo} to {hi} across {} factorable matrices.", counts.len());
        }
        s
    }
}

/// EFA summary per temperature for matrices collected at fixed
/// temperatures.
pub fn sweep_study(
    matrices: &[(f64, ResponseMatrix)],
    instrument: &Instrument,
    model: &CfaModel,
    config: &PipelineConfig,
) -> Result<SweepStudy> {
    let rows = matrices
        .par_iter()
        .map(|(t, m)| sweep_row(*t, m, instrument, model, config))
        .collect::<Result<Vec<_>>>()?;
    Ok(SweepStudy { instrument_id: instrument.id.clone(), rows })
}

fn sweep_row(t: f64, m: &ResponseMatrix, instrument: &Instrument, model: &CfaModel, config: &PipelineConfig) -> Result<SweepRow> {
    m.check_instrument(instrument)?;
    let scored = if m.is_reverse_scored() { m.clone() } else { reverse_score(m, instrument)? };
    let battery = run_battery(&scored.to_f64(), scored.item_ids(), &config.battery);
    let mut row = SweepRow {
        temperature: t,
        n: scored.n(),
        zero_variance_items: battery.zero_variance_items.len(),
        factorable: battery.factorable,
        kaiser_count: None,
        mean_congruence: None,
        items_recovered: None,
        dominant_reverse_share: None,
        reverse_dominated: false,
        note: None,
    };
    if !battery.factorable {
        row.note = Some(if battery.zero_variance_items.is_empty() { "not factorable" } else { "zero-variance items" }.into());
        return Ok(row);
    }
    let sol = match scored.correlation().and_then(|r| efa(&r, scored.item_ids(), &config.efa)) {
        Ok(s) => s,
        Err(e) => {
            row.note = Some(e.to_string());
            return Ok(row);
        }
    };
    row.kaiser_count = Some(sol.kaiser_count);
    let assignment: Vec<usize> = scored
        .item_ids()
        .iter()
        .filter_map(|id| model.item_ids().iter().position(|x| x == id).map(|i| model.assignment()[i]))
        .collect();
    if assignment.len() == scored.p() {
        let target = target_from_assignment(&assignment, model.k());
        if let Ok(c) = congruence(&target, &sol.pattern) {
            let vals: Vec<f64> = c.matching.iter().map(|m| m.coefficient.abs()).collect();
            let missing = model.k() - vals.len();
            row.mean_congruence = Some(vals.iter().sum::<f64>() / (vals.len() + missing) as f64);
        }
        row.items_recovered = items_recovered(&sol.pattern, &assignment, model.k(), config.loading_threshold).ok();
    }
    let shares = reverse_shares(&sol, instrument, config);
    if let Some(first) = shares.first() {
        row.dominant_reverse_share = Some(first.share);
        row.reverse_dominated = first.flagged;
    }
    Ok(row)
}
