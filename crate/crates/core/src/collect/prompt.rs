//! Pseudo-code prompt and answer parser.
//!
//! The prompt wraps each questionnaire in a `questionnaire <ID> { ... }`
//! block and asks for one `item_id: value` line per item after an
//! `ANSWERS:` marker. The parser also accepts `N. value` numbered lines,
//! numbered over all items in prompt order.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instrument::Instrument;

const BLOCK_OPEN: &str = "questionnaire ";
const FORMAT_BLOCK: &str = "response_format {";

pub fn build_prompt(instruments: &[Instrument]) -> Result<String> {
    if instruments.is_empty() {
        return Err(Error::invalid("a prompt needs at least one instrument"));
    }
    let mut s = String::new();
    let total: usize = instruments.iter().map(Instrument::len).sum();
    for inst in instruments {
        let _ = writeln!(s, "{BLOCK_OPEN}{} {{", inst.id);
        if !inst.name.is_empty() {
            let _ = writeln!(s, "  name = {};", quote(&inst.name));
        }
        let _ = writeln!(s, "  instructions = {};", quote(&inst.instructions));
        let _ = writeln!(s, "  scale = [{}..{}];", inst.scale_min(), inst.scale_max());
        let labels = &inst.scale.labels;
        let points = (inst.scale_max() - inst.scale_min() + 1) as usize;
        if labels.len() == points {
            for (k, label) in labels.iter().enumerate() {
                let _ = writeln!(s, "  // {} = {}", inst.scale_min() + k as i32, quote(label));
            }
        } else if labels.len() == 2 {
            let _ = writeln!(s, "  // {} = {}", inst.scale_min(), quote(&labels[0]));
            let _ = writeln!(s, "  // {} = {}", inst.scale_max(), quote(&labels[1]));
        }
        let _ = writeln!(s, "  items = [");
        for item in &inst.items {
            let _ = writeln!(s, "    {}: {},", item.id, quote(&item.text));
        }
        let _ = writeln!(s, "  ];");
        let _ = writeln!(s, "}}\n");
    }
    let _ = writeln!(s, "{FORMAT_BLOCK}");
    let _ = writeln!(s, "  // Answer every item of every questionnaire above ({total} items in total).");
    let _ = writeln!(s, "  // Write one line per item, in the order listed: <item_id>: <integer>");
    let _ = writeln!(s, "  // Each integer must lie inside that questionnaire's scale.");
    let _ = writeln!(s, "  // Do not repeat the questionnaire and do not add commentary.");
    let first = &instruments[0];
    let _ = writeln!(s, "  example = \"{}: {}\";", first.items[0].id, first.scale_min());
    let _ = writeln!(s, "}}\n");
    s.push_str("ANSWERS:\n");
    Ok(s)
}

fn quote(text: &str) -> String {
    format!("\"{}\"", text.replace('\\', "\\\\").replace('"', "\\\""))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InvalidReason {
    Refusal,
    Echo,
    Incomplete,
    OutOfRange,
    Unparseable,
}

impl fmt::Display for InvalidReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Refusal => "refusal",
            Self::Echo => "echo",
            Self::Incomplete => "incomplete",
            Self::OutOfRange => "out_of_range",
            Self::Unparseable => "unparseable",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "snake_case")]
pub enum ParseOutcome {
    /// One value per item over all instruments, in prompt order.
    Valid { values: Vec<i32> },
    Invalid { reason: InvalidReason, detail: String },
}

impl ParseOutcome {
    pub fn is_valid(&self) -> bool {
        matches!(self, Self::Valid { .. })
    }

    pub fn invalid_reason(&self) -> Option<InvalidReason> {
        match self {
            Self::Valid { .. } => None,
            Self::Invalid { reason, .. } => Some(*reason),
        }
    }

    fn invalid(reason: InvalidReason, detail: impl Into<String>) -> Self {
        Self::Invalid { reason, detail: detail.into() }
    }
}

fn id_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?m)^[ \t>*_`-]*([A-Za-z][A-Za-z0-9_.-]*)[*_`]*[ \t]*[:=][ \t]*[*_`]*(-?\d+(?:\.\d+)?)[*_`]*[ \t]*[,;]?[ \t]*(?:\(.*\)|//.*)?$")
            .expect("valid regex")
    })
}

fn numbered_line() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?m)^[ \t]*(\d+)[.)][ \t]+(-?\d+(?:\.\d+)?)[ \t]*$").expect("valid regex"))
}

fn refusal() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r"(?i)\b(i\s+(can['’]?t|cannot|can not|won['’]?t|will not|am unable|am not able|do not have|don['’]?t have)|i['’]m (sorry|unable|not able)|as an ai|language model|i apologi[sz]e)",
        )
        .expect("valid regex")
    })
}

/// Pure function of the text: extracts one in-range integer per item.
pub fn parse_completion(text: &str, instruments: &[Instrument]) -> ParseOutcome {
    if text.contains(BLOCK_OPEN) && text.contains("items = [") || text.contains(FORMAT_BLOCK) {
        return ParseOutcome::invalid(InvalidReason::Echo, "completion repeats the prompt");
    }

    let mut order: Vec<(&str, &Instrument)> = Vec::new();
    for inst in instruments {
        for item in &inst.items {
            order.push((item.id.as_str(), inst));
        }
    }
    let position: HashMap<&str, usize> = order.iter().enumerate().map(|(k, (id, _))| (*id, k)).collect();
    let mut values: Vec<Option<f64>> = vec![None; order.len()];

    let mut conflict = None;
    let mut record = |k: usize, v: f64, values: &mut Vec<Option<f64>>| match values[k] {
        Some(old) if old != v => conflict = Some(k),
        _ => values[k] = Some(v),
    };
    let mut by_id = 0;
    for cap in id_line().captures_iter(text) {
        let Some(&k) = position.get(&cap[1]) else { continue };
        let v: f64 = cap[2].parse().expect("regex guarantees a number");
        record(k, v, &mut values);
        by_id += 1;
    }
    if by_id == 0 {
        for cap in numbered_line().captures_iter(text) {
            let Ok(n) = cap[1].parse::<usize>() else { continue };
            if n == 0 || n > order.len() {
                continue;
            }
            let v: f64 = cap[2].parse().expect("regex guarantees a number");
            record(n - 1, v, &mut values);
        }
    }
    if let Some(k) = conflict {
        return ParseOutcome::invalid(InvalidReason::Unparseable, format!("conflicting answers for {}", order[k].0));
    }

    let found = values.iter().filter(|v| v.is_some()).count();
    if found == 0 {
        if refusal().is_match(text) {
            return ParseOutcome::invalid(InvalidReason::Refusal, "declined to answer");
        }
        return ParseOutcome::invalid(InvalidReason::Unparseable, "no answer lines found");
    }
    for (k, v) in values.iter().enumerate() {
        let Some(v) = *v else { continue };
        let (id, inst) = order[k];
        if v.fract() != 0.0 {
            return ParseOutcome::invalid(InvalidReason::Unparseable, format!("{id}: {v} is not an integer"));
        }
        if !inst.in_range(v as i32) || v.abs() > i32::MAX as f64 {
            return ParseOutcome::invalid(
                InvalidReason::OutOfRange,
                format!("{id}: {v} outside {}..={}", inst.scale_min(), inst.scale_max()),
            );
        }
    }
    if found < order.len() {
        let missing: Vec<&str> = values
            .iter()
            .enumerate()
            .filter(|(_, v)| v.is_none())
            .map(|(k, _)| order[k].0)
            .take(5)
            .collect();
        return ParseOutcome::invalid(
            InvalidReason::Incomplete,
            format!("{found} of {} items answered; missing {}", order.len(), missing.join(", ")),
        );
    }
    ParseOutcome::Valid { values: values.into_iter().map(|v| v.expect("all present") as i32).collect() }
}
