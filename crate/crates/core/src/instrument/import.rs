//! Human questionnaire export: one row per participant with the columns
//! `participant_id, age, sex, duration_seconds, attention_pass` followed by
//! one column per item id, instruments in the order given.

use std::fmt;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Instrument, ResponseMatrix, RowMeta};
use crate::error::{Error, Result};

const FIXED_COLUMNS: [&str; 5] = ["participant_id", "age", "sex", "duration_seconds", "attention_pass"];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HumanImportFilter {
    pub min_duration_seconds: f64,
    pub require_attention_pass: bool,
}

impl Default for HumanImportFilter {
    fn default() -> Self {
        Self { min_duration_seconds: 360.0, require_attention_pass: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ExclusionReason {
    AttentionFailed,
    TooFast { duration_seconds: f64 },
    Missing { item: String },
    OutOfRange { item: String, value: i32 },
    Malformed { message: String },
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::AttentionFailed => write!(f, "failed attention check"),
            Self::TooFast { duration_seconds } => write!(f, "too fast ({duration_seconds} s)"),
            Self::Missing { item } => write!(f, "missing response for {item}"),
            Self::OutOfRange { item, value } => write!(f, "value {value} out of range for {item}"),
            Self::Malformed { message } => write!(f, "malformed row: {message}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exclusion {
    /// 1-based data row (the header is row 0).
    pub row: usize,
    pub participant_id: String,
    pub reason: ExclusionReason,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HumanImport {
    pub input_rows: usize,
    /// One matrix per instrument, rows aligned across matrices.
    pub matrices: Vec<ResponseMatrix>,
    pub exclusions: Vec<Exclusion>,
}

impl HumanImport {
    pub fn retained(&self) -> usize {
        self.matrices.first().map_or(0, ResponseMatrix::n)
    }
}

pub fn import_human_csv(path: &Path, instruments: &[Instrument], filter: &HumanImportFilter) -> Result<HumanImport> {
    let file = std::fs::File::open(path).map_err(|e| Error::Load { path: path.into(), message: e.to_string() })?;
    import_human_reader(file, instruments, filter).map_err(|e| match e {
        Error::InvalidInput(message) => Error::Load { path: path.into(), message },
        other => other,
    })
}

pub fn import_human_reader<R: Read>(reader: R, instruments: &[Instrument], filter: &HumanImportFilter) -> Result<HumanImport> {
    if instruments.is_empty() {
        return Err(Error::invalid("no instruments given"));
    }
    if filter.min_duration_seconds < 0.0 {
        return Err(Error::invalid("min_duration_seconds must be non-negative"));
    }
    let mut rdr = csv::ReaderBuilder::new().flexible(true).from_reader(reader);
    let header: Vec<String> = rdr.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut expected: Vec<String> = FIXED_COLUMNS.iter().map(|s| s.to_string()).collect();
    for inst in instruments {
        expected.extend(inst.item_ids());
    }
    if header != expected {
        let first_diff = header.iter().zip(&expected).position(|(a, b)| a != b).unwrap_or(header.len().min(expected.len()));
        return Err(Error::invalid(format!(
            "header mismatch at column {first_diff}: expected {:?}, found {:?} ({} columns expected, {} found)",
            expected.get(first_diff),
            header.get(first_diff),
            expected.len(),
            header.len()
        )));
    }

    let mut per_instrument: Vec<Vec<Vec<i32>>> = vec![Vec::new(); instruments.len()];
    let mut meta = Vec::new();
    let mut exclusions = Vec::new();
    let mut input_rows = 0;

    for (k, rec) in rdr.records().enumerate() {
        input_rows += 1;
        let row = k + 1;
        let rec = match rec {
            Ok(r) => r,
            Err(e) => {
                exclusions.push(Exclusion {
                    row,
                    participant_id: String::new(),
                    reason: ExclusionReason::Malformed { message: e.to_string() },
                });
                continue;
            }
        };
        let pid = rec.get(0).unwrap_or("").trim().to_string();
        match parse_row(&rec, instruments, filter, expected.len()) {
            Ok((values, duration, attention)) => {
                for (slot, v) in per_instrument.iter_mut().zip(values) {
                    slot.push(v);
                }
                meta.push(RowMeta {
                    source_id: pid,
                    temperature: None,
                    duration_seconds: Some(duration),
                    attention_pass: Some(attention),
                });
            }
            Err(reason) => exclusions.push(Exclusion { row, participant_id: pid, reason }),
        }
    }
    for e in &exclusions {
        log::debug!("excluded row {} ({}): {}", e.row, e.participant_id, e.reason);
    }

    let matrices = instruments
        .iter()
        .zip(per_instrument)
        .map(|(inst, rows)| ResponseMatrix::new("human", inst, rows, meta.clone()))
        .collect::<Result<Vec<_>>>()?;
    Ok(HumanImport { input_rows, matrices, exclusions })
}

fn parse_row(
    rec: &csv::StringRecord,
    instruments: &[Instrument],
    filter: &HumanImportFilter,
    width: usize,
) -> std::result::Result<(Vec<Vec<i32>>, f64, bool), ExclusionReason> {
    if rec.len() != width {
        return Err(ExclusionReason::Malformed { message: format!("{} fields, expected {width}", rec.len()) });
    }
    let attention = match rec[4].trim() {
        "1" | "true" | "TRUE" => true,
        "0" | "false" | "FALSE" => false,
        other => return Err(ExclusionReason::Malformed { message: format!("attention_pass {other:?} is not 0/1") }),
    };
    let duration: f64 = rec[3]
        .trim()
        .parse()
        .map_err(|_| ExclusionReason::Malformed { message: format!("duration_seconds {:?} is not a number", &rec[3]) })?;
    if filter.require_attention_pass && !attention {
        return Err(ExclusionReason::AttentionFailed);
    }
    if duration < filter.min_duration_seconds {
        return Err(ExclusionReason::TooFast { duration_seconds: duration });
    }

    let mut col = FIXED_COLUMNS.len();
    let mut out = Vec::with_capacity(instruments.len());
    for inst in instruments {
        let mut values = Vec::with_capacity(inst.len());
        for item in &inst.items {
            let raw = rec[col].trim();
            col += 1;
            if raw.is_empty() || raw.eq_ignore_ascii_case("na") {
                return Err(ExclusionReason::Missing { item: item.id.clone() });
            }
            let v: i32 = raw.parse().map_err(|_| ExclusionReason::Malformed {
                message: format!("{}: {raw:?} is not an integer", item.id),
            })?;
            if !inst.in_range(v) {
                return Err(ExclusionReason::OutOfRange { item: item.id.clone(), value: v });
            }
            values.push(v);
        }
        out.push(values);
    }
    Ok((out, duration, attention))
}
