use std::io::{Read, Write};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::Instrument;
use crate::error::{Error, Result};
use crate::numcore::{self, SymMatrix};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RowMeta {
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub duration_seconds: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attention_pass: Option<bool>,
}

impl RowMeta {
    pub fn source(id: impl Into<String>) -> Self {
        Self { source_id: id.into(), ..Self::default() }
    }
}

/// n x p Likert responses for one instrument and one group. Columns follow
/// the instrument's item order and every value is inside its scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseMatrix {
    pub group: String,
    pub instrument_id: String,
    item_ids: Vec<String>,
    scale: (i32, i32),
    rows: Vec<Vec<i32>>,
    meta: Vec<RowMeta>,
    reverse_scored: bool,
}

impl ResponseMatrix {
    pub fn new(group: impl Into<String>, instrument: &Instrument, rows: Vec<Vec<i32>>, meta: Vec<RowMeta>) -> Result<Self> {
        if rows.len() != meta.len() {
            return Err(Error::invalid(format!("{} rows but {} metadata records", rows.len(), meta.len())));
        }
        let p = instrument.len();
        for (r, row) in rows.iter().enumerate() {
            if row.len() != p {
                return Err(Error::invalid(format!("row {r} has {} values, expected {p}", row.len())));
            }
            if let Some(c) = row.iter().position(|&v| !instrument.in_range(v)) {
                return Err(Error::invalid(format!(
                    "row {r}: value {} for item {} is outside {}..={}",
                    row[c],
                    instrument.items[c].id,
                    instrument.scale_min(),
                    instrument.scale_max()
                )));
            }
        }
        Ok(Self {
            group: group.into(),
            instrument_id: instrument.id.clone(),
            item_ids: instrument.item_ids(),
            scale: (instrument.scale_min(), instrument.scale_max()),
            rows,
            meta,
            reverse_scored: false,
        })
    }

    /// Rows labelled `row0000`, `row0001`, ...
    pub fn unlabelled(group: impl Into<String>, instrument: &Instrument, rows: Vec<Vec<i32>>) -> Result<Self> {
        let meta = (0..rows.len()).map(|i| RowMeta::source(format!("row{i:04}"))).collect();
        Self::new(group, instrument, rows, meta)
    }

    pub fn n(&self) -> usize {
        self.rows.len()
    }

    pub fn p(&self) -> usize {
        self.item_ids.len()
    }

    pub fn item_ids(&self) -> &[String] {
        &self.item_ids
    }

    pub fn rows(&self) -> &[Vec<i32>] {
        &self.rows
    }

    pub fn meta(&self) -> &[RowMeta] {
        &self.meta
    }

    pub fn is_reverse_scored(&self) -> bool {
        self.reverse_scored
    }

    pub fn with_group(mut self, group: impl Into<String>) -> Self {
        self.group = group.into();
        self
    }

    pub fn check_instrument(&self, instrument: &Instrument) -> Result<()> {
        if self.instrument_id != instrument.id || self.item_ids != instrument.item_ids() {
            return Err(Error::invalid(format!(
                "responses for {} do not match instrument {}",
                self.instrument_id, instrument.id
            )));
        }
        Ok(())
    }

    pub fn to_f64(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n(), self.p(), |i, j| self.rows[i][j] as f64)
    }

    /// Item ids of columns without any variation.
    pub fn zero_variance_items(&self) -> Vec<String> {
        numcore::zero_variance_columns(&self.to_f64()).into_iter().map(|j| self.item_ids[j].clone()).collect()
    }

    pub fn correlation(&self) -> Result<SymMatrix> {
        numcore::correlation_matrix(&self.to_f64(), &self.item_ids)
    }

    pub fn covariance(&self) -> Result<SymMatrix> {
        numcore::covariance_matrix(&self.to_f64())
    }

    /// Keeps the rows whose index satisfies `keep`.
    pub fn filter_rows(&self, mut keep: impl FnMut(usize, &RowMeta) -> bool) -> Self {
        let mut out = self.clone();
        out.rows.clear();
        out.meta.clear();
        for (i, (row, meta)) in self.rows.iter().zip(&self.meta).enumerate() {
            if keep(i, meta) {
                out.rows.push(row.clone());
                out.meta.push(meta.clone());
            }
        }
        out
    }

    /// Writes `source_id,temperature,<item ids...>` rows.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["source_id".to_string(), "temperature".to_string()];
        header.extend(self.item_ids.iter().cloned());
        w.write_record(&header)?;
        for (row, meta) in self.rows.iter().zip(&self.meta) {
            let mut rec = vec![meta.source_id.clone(), meta.temperature.map(|t| t.to_string()).unwrap_or_default()];
            rec.extend(row.iter().map(|v| v.to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads the format produced by [`ResponseMatrix::write_csv`]. The item
    /// columns must match the instrument exactly.
    pub fn read_csv<R: Read>(reader: R, group: &str, instrument: &Instrument) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let expected_items = instrument.item_ids();
        if header.len() != expected_items.len() + 2
            || header[0] != "source_id"
            || header[1] != "temperature"
            || header[2..] != expected_items[..]
        {
            return Err(Error::invalid(format!(
                "response file header does not match instrument {} (expected source_id,temperature,<{} item ids>)",
                instrument.id,
                expected_items.len()
            )));
        }
        let mut rows = Vec::new();
        let mut meta = Vec::new();
        for (line, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let temperature = match rec.get(1).unwrap_or("") {
                "" => None,
                t => Some(t.parse::<f64>().map_err(|_| Error::invalid(format!("row {line}: bad temperature {t:?}")))?),
            };
            let values = rec
                .iter()
                .skip(2)
                .map(|v| v.trim().parse::<i32>().map_err(|_| Error::invalid(format!("row {line}: bad value {v:?}"))))
                .collect::<Result<Vec<_>>>()?;
            rows.push(values);
            meta.push(RowMeta { source_id: rec[0].to_string(), temperature, ..RowMeta::default() });
        }
        ResponseMatrix::new(group, instrument, rows, meta)
    }
}

/// Recodes reverse-keyed items as `scale_min + scale_max - x`. Applying it
/// twice restores the input.
pub fn reverse_score(matrix: &ResponseMatrix, instrument: &Instrument) -> Result<ResponseMatrix> {
    matrix.check_instrument(instrument)?;
    let total = instrument.scale_min() + instrument.scale_max();
    let flags: Vec<bool> = instrument.items.iter().map(|i| i.reverse).collect();
    let mut out = matrix.clone();
    for row in &mut out.rows {
        for (v, &rev) in row.iter_mut().zip(&flags) {
            if rev {
                *v = total - *v;
            }
        }
    }
    out.reverse_scored = !matrix.reverse_scored;
    Ok(out)
}

/// Per-respondent mean score on every dimension.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeScores {
    pub group: String,
    pub instrument_id: String,
    pub dimensions: Vec<String>,
    /// `scores[row][dimension]`
    pub scores: Vec<Vec<f64>>,
    pub source_ids: Vec<String>,
}

impl CompositeScores {
    pub fn column(&self, dimension: &str) -> Option<Vec<f64>> {
        let d = self.dimensions.iter().position(|n| n == dimension)?;
        Some(self.scores.iter().map(|r| r[d]).collect())
    }
}

pub fn composite_scores(matrix: &ResponseMatrix, instrument: &Instrument) -> Result<CompositeScores> {
    matrix.check_instrument(instrument)?;
    let dims: Vec<Vec<usize>> = (0..instrument.dimensions.len()).map(|d| instrument.dimension_indices(d)).collect();
    if let Some(d) = dims.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("dimension {} is empty", instrument.dimensions[d].name)));
    }
    let scores = matrix
        .rows
        .iter()
        .map(|row| dims.iter().map(|idx| idx.iter().map(|&k| row[k] as f64).sum::<f64>() / idx.len() as f64).collect())
        .collect();
    Ok(CompositeScores {
        group: matrix.group.clone(),
        instrument_id: instrument.id.clone(),
        dimensions: instrument.dimensions.iter().map(|d| d.name.clone()).collect(),
        scores,
        source_ids: matrix.meta.iter().map(|m| m.source_id.clone()).collect(),
    })
}
