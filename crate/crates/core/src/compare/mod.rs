//! Group comparisons on composite scores: rank tests, reliability,
//! correlations and confidence intervals for correlation differences.

mod tables;

pub use tables::{
    correlation_table, descriptives, CorrelationCell, CorrelationRow, CorrelationTable, DescriptiveCell, DescriptiveRow,
    DescriptiveTable, GroupScores, Stars,
};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{chi2_sf, midranks, normal_quantile, normal_two_sided_p, pearson, tie_counts, variance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: usize,
    pub p: f64,
}

fn tie_sum(pooled: &[f64]) -> f64 {
    tie_counts(pooled).iter().map(|&t| (t as f64).powi(3) - t as f64).sum()
}

/// Kruskal-Wallis H with the tie correction.
pub fn kruskal_wallis(groups: &[&[f64]]) -> Result<KruskalWallis> {
    if groups.len() < 2 {
        return Err(Error::invalid("Kruskal-Wallis needs at least 2 groups"));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::invalid("Kruskal-Wallis group is empty"));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len() as f64;
    let df = groups.len() - 1;
    let correction = 1.0 - tie_sum(&pooled) / (n.powi(3) - n);
    if correction <= 0.0 {
        return Ok(KruskalWallis { h: 0.0, df, p: 1.0 });
    }
    let ranks = midranks(&pooled);
    let mut offset = 0;
    let mut sum = 0.0;
    for g in groups {
        let r: f64 = ranks[offset..offset + g.len()].iter().sum();
        sum += r * r / g.len() as f64;
        offset += g.len();
    }
    let h = ((12.0 / (n * (n + 1.0)) * sum - 3.0 * (n + 1.0)) / correction).max(0.0);
    Ok(KruskalWallis { h, df, p: chi2_sf(h, df as f64) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DunnPair {
    pub a: usize,
    pub b: usize,
    /// Mean rank of `a` minus mean rank of `b`, standardized; `None` when
    /// every pooled value is tied.
    pub z: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_bonferroni: Option<f64>,
}

/// Dunn's pairwise test for every pair a < b, Bonferroni-adjusted over all
/// pairs.
pub fn dunn_posthoc(groups: &[&[f64]]) -> Result<Vec<DunnPair>> {
    let k = groups.len();
    if k < 2 {
        return Err(Error::invalid("Dunn's test needs at least 2 groups"));
    }
    if groups.iter().any(|g| g.is_empty()) {
        return Err(Error::invalid("Dunn's test group is empty"));
    }
    let pooled: Vec<f64> = groups.iter().flat_map(|g| g.iter().copied()).collect();
    let n = pooled.len() as f64;
    let ranks = midranks(&pooled);
    let mut means = Vec::with_capacity(k);
    let mut offset = 0;
    for g in groups {
        means.push(ranks[offset..offset + g.len()].iter().sum::<f64>() / g.len() as f64);
        offset += g.len();
    }
    let var = n * (n + 1.0) / 12.0 - tie_sum(&pooled) / (12.0 * (n - 1.0));
    let m = (k * (k - 1) / 2) as f64;
    let mut out = Vec::new();
    for a in 0..k {
        for b in (a + 1)..k {
            let z = (var > 1e-12).then(|| {
                let se = (var * (1.0 / groups[a].len() as f64 + 1.0 / groups[b].len() as f64)).sqrt();
                (means[a] - means[b]) / se
            });
            let p_raw = z.map(normal_two_sided_p);
            out.push(DunnPair { a, b, z, p_raw, p_bonferroni: p_raw.map(|p| (p * m).min(1.0)) });
        }
    }
    Ok(out)
}

/// Cronbach's alpha for the columns of `items` (rows are respondents).
/// `None` when the total score has zero variance.
pub fn cronbach_alpha(items: &DMatrix<f64>) -> Result<Option<f64>> {
    let (n, k) = items.shape();
    if k < 2 {
        return Err(Error::invalid("alpha needs at least 2 items"));
    }
    if n < 2 {
        return Err(Error::invalid("alpha needs at least 2 respondents"));
    }
    let item_var: f64 = (0..k).map(|j| variance(items.column(j).as_slice())).sum();
    let totals: Vec<f64> = (0..n).map(|i| items.row(i).sum()).collect();
    let total_var = variance(&totals);
    if total_var <= 0.0 {
        return Ok(None);
    }
    let k = k as f64;
    Ok(Some(k / (k - 1.0) * (1.0 - item_var / total_var)))
}

/// A correlation that may be undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrValue {
    pub r: Option<f64>,
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

/// Pearson r between two score vectors from the same respondents.
pub fn pearson_by_dimension(a: &[f64], b: &[f64]) -> Result<CorrValue> {
    if a.len() != b.len() {
        return Err(Error::invalid(format!("score vectors differ in length ({} vs {})", a.len(), b.len())));
    }
    if a.len() < 3 {
        return Err(Error::invalid("correlation needs at least 3 respondents"));
    }
    Ok(match pearson(a, b) {
        Some(r) => CorrValue { r: Some(r.clamp(-1.0, 1.0)), n: a.len(), note: None },
        None => CorrValue { r: None, n: a.len(), note: Some("correlation cannot be computed as SD is zero".into()) },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorrDiffResult {
    pub r1: f64,
    pub r2: f64,
    pub n1: usize,
    pub n2: usize,
    pub level: f64,
    pub ci_lower: f64,
    pub ci_upper: f64,
    pub significant: bool,
}

fn fisher_ci(r: f64, n: usize, z: f64) -> (f64, f64) {
    let c = r.atanh();
    let half = z / (n as f64 - 3.0).sqrt();
    ((c - half).tanh(), (c + half).tanh())
}

/// Zou's interval for r1 - r2 from independent samples.
pub fn zou_corr_diff(r1: f64, n1: usize, r2: f64, n2: usize, level: f64) -> Result<CorrDiffResult> {
    if !(r1.abs() < 1.0 && r2.abs() < 1.0) {
        return Err(Error::invalid("correlations must lie strictly between -1 and 1"));
    }
    if n1 <= 3 || n2 <= 3 {
        return Err(Error::invalid("each sample needs n > 3"));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::invalid("confidence level must be in (0, 1)"));
    }
    let z = normal_quantile(1.0 - (1.0 - level) / 2.0);
    let (l1, u1) = fisher_ci(r1, n1, z);
    let (l2, u2) = fisher_ci(r2, n2, z);
    let d = r1 - r2;
    let ci_lower = d - ((r1 - l1).powi(2) + (u2 - r2).powi(2)).sqrt();
    let ci_upper = d + ((u1 - r1).powi(2) + (r2 - l2).powi(2)).sqrt();
    Ok(CorrDiffResult { r1, r2, n1, n2, level, ci_lower, ci_upper, significant: ci_lower > 0.0 || ci_upper < 0.0 })
}
