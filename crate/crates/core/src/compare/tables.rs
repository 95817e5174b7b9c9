use std::fmt::Write as _;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use super::{dunn_posthoc, kruskal_wallis, pearson_by_dimension, zou_corr_diff, CorrDiffResult, KruskalWallis};
use crate::error::{Error, Result};
use crate::instrument::CompositeScores;
use crate::numcore::{mean, std_dev};

/// Composite scores of one group, keyed by dimension name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupScores {
    pub group: String,
    pub dimensions: IndexMap<String, Vec<f64>>,
}

impl GroupScores {
    /// Merges composites from several instruments answered by the same
    /// respondents in the same row order.
    pub fn from_composites(group: &str, composites: &[&CompositeScores]) -> Result<Self> {
        let mut dimensions = IndexMap::new();
        let mut n = None;
        for c in composites {
            if *n.get_or_insert(c.scores.len()) != c.scores.len() {
                return Err(Error::invalid(format!("{group}: instruments have different respondent counts")));
            }
            for (d, name) in c.dimensions.iter().enumerate() {
                let col = c.scores.iter().map(|r| r[d]).collect();
                if dimensions.insert(name.clone(), col).is_some() {
                    return Err(Error::invalid(format!("{group}: dimension {name} appears twice")));
                }
            }
        }
        Ok(Self { group: group.to_string(), dimensions })
    }

    pub fn n(&self) -> usize {
        self.dimensions.values().next().map_or(0, Vec::len)
    }
}

fn check_dimensions(groups: &[GroupScores]) -> Result<Vec<String>> {
    let first = groups.first().ok_or_else(|| Error::invalid("no groups"))?;
    let names: Vec<String> = first.dimensions.keys().cloned().collect();
    for g in &groups[1..] {
        if g.dimensions.keys().ne(names.iter()) {
            return Err(Error::invalid(format!(
                "group {} has different dimensions from group {}",
                g.group, first.group
            )));
        }
    }
    Ok(names)
}

fn reference_index(groups: &[GroupScores], reference: Option<&str>) -> Result<Option<usize>> {
    reference
        .map(|r| {
            groups.iter().position(|g| g.group == r).ok_or_else(|| Error::invalid(format!("unknown reference group {r}")))
        })
        .transpose()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stars {
    None,
    /// p < .05
    One,
    /// p < .001
    Two,
}

impl Stars {
    pub fn from_p(p: f64) -> Self {
        if p < 0.001 {
            Stars::Two
        } else if p < 0.05 {
            Stars::One
        } else {
            Stars::None
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Stars::None => "",
            Stars::One => "*",
            Stars::Two => "**",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveCell {
    pub group: String,
    pub n: usize,
    pub mean: f64,
    pub sd: f64,
    pub zero_sd: bool,
    /// From the Bonferroni-adjusted Dunn p-value against the reference.
    pub stars: Stars,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_raw: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_adjusted: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveRow {
    pub dimension: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kruskal: Option<KruskalWallis>,
    pub cells: Vec<DescriptiveCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptiveTable {
    pub groups: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    pub rows: Vec<DescriptiveRow>,
}

/// Mean (SD) per group and dimension. With a reference group and a
/// significant Kruskal-Wallis test, cells get stars from Dunn's test
/// against the reference.
pub fn descriptives(groups: &[GroupScores], reference: Option<&str>) -> Result<DescriptiveTable> {
    let names = check_dimensions(groups)?;
    let ref_idx = reference_index(groups, reference)?;
    let mut rows = Vec::with_capacity(names.len());
    for name in &names {
        let cols: Vec<&[f64]> = groups.iter().map(|g| g.dimensions[name].as_slice()).collect();
        if let Some(g) = cols.iter().position(|c| c.is_empty()) {
            return Err(Error::invalid(format!("group {} has no scores", groups[g].group)));
        }
        let mut cells: Vec<DescriptiveCell> = groups
            .iter()
            .zip(&cols)
            .map(|(g, c)| {
                let sd = if c.len() > 1 { std_dev(c) } else { 0.0 };
                DescriptiveCell {
                    group: g.group.clone(),
                    n: c.len(),
                    mean: mean(c),
                    sd,
                    zero_sd: sd == 0.0,
                    stars: Stars::None,
                    p_raw: None,
                    p_adjusted: None,
                }
            })
            .collect();
        let kruskal = if groups.len() >= 2 { Some(kruskal_wallis(&cols)?) } else { None };
        if let (Some(r), Some(kw)) = (ref_idx, kruskal) {
            let pairs = dunn_posthoc(&cols)?;
            for pair in pairs.iter().filter(|p| p.a == r || p.b == r) {
                let other = if pair.a == r { pair.b } else { pair.a };
                let cell = &mut cells[other];
                cell.p_raw = pair.p_raw;
                cell.p_adjusted = pair.p_bonferroni;
                let comparable = !cell.zero_sd && cols[r].len() > 1 && std_dev(cols[r]) > 0.0;
                if kw.p < 0.05 && comparable {
                    cell.stars = pair.p_bonferroni.map_or(Stars::None, Stars::from_p);
                }
            }
        }
        rows.push(DescriptiveRow { dimension: name.clone(), kruskal, cells });
    }
    Ok(DescriptiveTable { groups: groups.iter().map(|g| g.group.clone()).collect(), reference: reference.map(String::from), rows })
}

impl DescriptiveTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "| Dimension | {} |", self.groups.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.groups.len()));
        for row in &self.rows {
            let cells: Vec<String> = row
                .cells
                .iter()
                .map(|c| {
                    let mark = if c.zero_sd { "^a" } else { c.stars.as_str() };
                    format!("{:.2} ({:.2}){mark}", c.mean, c.sd)
                })
                .collect();
            let _ = writeln!(s, "| {} | {} |", row.dimension, cells.join(" | "));
        }
        if let Some(r) = &self.reference {
            let _ = writeln!(
                s,
                "\n\\* = different from {r} at p < .05; \\*\\* = at p < .001 (Dunn, Bonferroni-adjusted, after a significant Kruskal-Wallis test); ^a = SD is zero, scores cannot be compared."
            );
        }
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationCell {
    pub group: String,
    pub r: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
    /// Zou interval for this group's r minus the reference group's r.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub difference: Option<CorrDiffResult>,
}

impl CorrelationCell {
    pub fn significant(&self) -> bool {
        self.difference.is_some_and(|d| d.significant)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub dimension: String,
    pub cells: Vec<CorrelationCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationTable {
    pub anchor: String,
    pub groups: Vec<String>,
    pub reference: String,
    pub level: f64,
    pub rows: Vec<CorrelationRow>,
}

/// Correlations of `anchor` with each of `targets` per group, each compared
/// with the reference group's correlation by Zou's interval.
pub fn correlation_table(
    groups: &[GroupScores],
    reference: &str,
    anchor: &str,
    targets: &[String],
    level: f64,
) -> Result<CorrelationTable> {
    check_dimensions(groups)?;
    let r_idx = reference_index(groups, Some(reference))?.expect("reference given");
    fn column<'a>(g: &'a GroupScores, d: &str) -> Result<&'a [f64]> {
        g.dimensions.get(d).map(Vec::as_slice).ok_or_else(|| Error::invalid(format!("unknown dimension {d}")))
    }
    let mut rows = Vec::with_capacity(targets.len());
    for t in targets {
        let values = groups
            .iter()
            .map(|g| pearson_by_dimension(column(g, anchor)?, column(g, t)?))
            .collect::<Result<Vec<_>>>()?;
        let reference_r = values[r_idx].r.filter(|r| r.abs() < 1.0);
        let cells = groups
            .iter()
            .zip(&values)
            .enumerate()
            .map(|(i, (g, v))| {
                let difference = match (i != r_idx, v.r.filter(|r| r.abs() < 1.0), reference_r) {
                    (true, Some(r), Some(r0)) if v.n > 3 && values[r_idx].n > 3 => {
                        Some(zou_corr_diff(r, v.n, r0, values[r_idx].n, level)?)
                    }
                    _ => None,
                };
                Ok(CorrelationCell { group: g.group.clone(), r: v.r, n: v.n, note: v.note.clone(), difference })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(CorrelationRow { dimension: t.clone(), cells });
    }
    Ok(CorrelationTable {
        anchor: anchor.to_string(),
        groups: groups.iter().map(|g| g.group.clone()).collect(),
        reference: reference.to_string(),
        level,
        rows,
    })
}

impl CorrelationTable {
    pub fn to_markdown(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "Correlations with {}\n", self.anchor);
        let _ = writeln!(s, "| Dimension | {} |", self.groups.join(" | "));
        let _ = writeln!(s, "|---|{}", "---|".repeat(self.groups.len()));
        for row in &self.rows {
            let cells: Vec<String> = row
                .cells
                .iter()
                .map(|c| match c.r {
                    Some(r) => format!("{r:.2}{}", if c.significant() { "*" } else { "" }),
                    None => "NA^a".into(),
                })
                .collect();
            let _ = writeln!(s, "| {} | {} |", row.dimension, cells.join(" | "));
        }
        let _ = writeln!(
            s,
            "\n\\* = {:.0}% interval for the difference from {} excludes 0; ^a = correlation cannot be computed as SD is zero.",
            self.level * 100.0,
            self.reference
        );
        s
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}
