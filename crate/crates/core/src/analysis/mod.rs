//! Questionnaire scoring and the rank-based group comparison used on it.

mod report;
pub mod special;

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::patterns::PatternKind;
pub use report::{read_responses, report_table, write_responses, Report, ReportRow, RESPONSES_HEADER};
use special::{chi2_sf, normal_sf};

pub const ITEMS: usize = 12;
/// Items 1..=5 ask about distrust and are reverse coded.
pub const DISTRUST_ITEMS: usize = 5;
pub const LIKERT_MAX: u8 = 7;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikertResponse {
    pub participant: String,
    pub condition: PatternKind,
    pub items: [u8; ITEMS],
    /// Coins inserted in the trust game; `None` if the participant did not play.
    pub coins: Option<u32>,
}

impl LikertResponse {
    pub fn validate(&self) -> Result<()> {
        for (i, &v) in self.items.iter().enumerate() {
            if !(1..=LIKERT_MAX).contains(&v) {
                return Err(invalid(format!(
                    "participant {}: item {} = {v} outside 1..={LIKERT_MAX}",
                    self.participant,
                    i + 1
                )));
            }
        }
        Ok(())
    }
}

/// Trust score in [1, 7]: mean of the twelve items after reverse coding the
/// distrust block.
pub fn tpa_score(resp: &LikertResponse) -> Result<f64> {
    resp.validate()?;
    let reversed: u32 = resp.items[..DISTRUST_ITEMS].iter().map(|&v| u32::from(LIKERT_MAX + 1 - v)).sum();
    let direct: u32 = resp.items[DISTRUST_ITEMS..].iter().map(|&v| u32::from(v)).sum();
    Ok(f64::from(reversed + direct) / ITEMS as f64)
}

/// Midranks (1-based) of `values` and the tie term Σ(t³ − t) over tie groups.
pub fn midranks(values: &[f64]) -> (Vec<f64>, f64) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = 0.0;
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        let t = (end - start) as f64;
        ties += t * t * t - t;
        start = end;
    }
    (ranks, ties)
}

struct Pooled {
    n: usize,
    sizes: Vec<usize>,
    mean_ranks: Vec<f64>,
    ties: f64,
}

fn pool(groups: &[Vec<f64>]) -> Result<Pooled> {
    if groups.len() < 2 {
        return Err(invalid("need at least two groups"));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::InsufficientData("every group needs at least one value".into()));
    }
    let values: Vec<f64> = groups.iter().flatten().copied().collect();
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(invalid(format!("non-finite value {v}")));
    }
    let (ranks, ties) = midranks(&values);
    let mut offset = 0;
    let mut mean_ranks = Vec::with_capacity(groups.len());
    for g in groups {
        mean_ranks.push(ranks[offset..offset + g.len()].iter().sum::<f64>() / g.len() as f64);
        offset += g.len();
    }
    Ok(Pooled { n: values.len(), sizes: groups.iter().map(Vec::len).collect(), mean_ranks, ties })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KruskalWallis {
    pub h: f64,
    pub df: usize,
    pub p: f64,
    pub n: usize,
    pub mean_ranks: Vec<f64>,
    /// All values identical; H and p are set to 0 and 1.
    pub degenerate: bool,
}

pub fn kruskal_wallis(groups: &[Vec<f64>]) -> Result<KruskalWallis> {
    let pooled = pool(groups)?;
    let n = pooled.n as f64;
    let df = groups.len() - 1;
    let n3 = n * n * n - n;
    if pooled.ties >= n3 {
        return Ok(KruskalWallis { h: 0.0, df, p: 1.0, n: pooled.n, mean_ranks: pooled.mean_ranks, degenerate: true });
    }
    let grand = (n + 1.0) / 2.0;
    let spread: f64 = pooled
        .sizes
        .iter()
        .zip(&pooled.mean_ranks)
        .map(|(&ni, &r)| ni as f64 * (r - grand) * (r - grand))
        .sum();
    let h = 12.0 * spread / (n * (n + 1.0)) / (1.0 - pooled.ties / n3);
    Ok(KruskalWallis {
        h,
        df,
        p: chi2_sf(h, df as f64),
        n: pooled.n,
        mean_ranks: pooled.mean_ranks,
        degenerate: false,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectSize {
    Negligible,
    Small,
    Medium,
    Large,
}

/// η² = (H − k + 1)/(n − k).
pub fn eta_squared(h: f64, k: usize, n: usize) -> Result<f64> {
    if n <= k {
        return Err(invalid(format!("eta squared needs n > k (n={n}, k={k})")));
    }
    Ok((h - k as f64 + 1.0) / (n - k) as f64)
}

/// Cohen's bands for η².
pub fn classify_eta(eta2: f64) -> EffectSize {
    if eta2 > 0.1379 {
        EffectSize::Large
    } else if eta2 > 0.0588 {
        EffectSize::Medium
    } else if eta2 > 0.0099 {
        EffectSize::Small
    } else {
        EffectSize::Negligible
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DunnPair {
    pub i: usize,
    pub j: usize,
    /// Positive when group `i` ranks higher than group `j`.
    pub z: f64,
    pub p: f64,
    pub p_adjusted: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dunn {
    /// Pairs (i, j) with i < j in lexicographic order.
    pub pairs: Vec<DunnPair>,
    pub degenerate: bool,
}

impl Dunn {
    pub fn pair(&self, i: usize, j: usize) -> Option<DunnPair> {
        self.pairs.iter().find(|p| p.i == i && p.j == j).copied()
    }
}

/// Dunn's pairwise test on pooled midranks with Bonferroni adjustment.
pub fn dunn(groups: &[Vec<f64>], tie_correction: bool) -> Result<Dunn> {
    let pooled = pool(groups)?;
    let n = pooled.n as f64;
    let tie_term = if tie_correction && pooled.n > 1 { pooled.ties / (12.0 * (n - 1.0)) } else { 0.0 };
    let variance = n * (n + 1.0) / 12.0 - tie_term;
    let degenerate = variance <= 0.0 || pooled.ties >= n * n * n - n;
    let k = groups.len();
    let comparisons = (k * (k - 1) / 2) as f64;
    let mut pairs = Vec::with_capacity(k * (k - 1) / 2);
    for i in 0..k {
        for j in i + 1..k {
            let (z, p) = if degenerate {
                (0.0, 1.0)
            } else {
                let se = (variance * (1.0 / pooled.sizes[i] as f64 + 1.0 / pooled.sizes[j] as f64)).sqrt();
                let z = (pooled.mean_ranks[i] - pooled.mean_ranks[j]) / se;
                (z, (2.0 * normal_sf(z.abs())).min(1.0))
            };
            pairs.push(DunnPair { i, j, z, p, p_adjusted: (p * comparisons).min(1.0) });
        }
    }
    Ok(Dunn { pairs, degenerate })
}

/// Omnibus plus post hoc result for one variable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub eta_squared: f64,
    pub pairwise: Vec<DunnPair>,
    pub degenerate: bool,
}

pub fn compare_groups(groups: &[Vec<f64>], tie_correction: bool) -> Result<TestResult> {
    let kw = kruskal_wallis(groups)?;
    let post = dunn(groups, tie_correction)?;
    let eta = if kw.n > groups.len() { eta_squared(kw.h, groups.len(), kw.n)? } else { f64::NAN };
    Ok(TestResult {
        statistic: kw.h,
        df: kw.df,
        p_value: kw.p,
        eta_squared: eta,
        pairwise: post.pairs,
        degenerate: kw.degenerate || post.degenerate,
    })
}

/// Sample Pearson correlation.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(invalid(format!("length mismatch {} vs {}", x.len(), y.len())));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientData("pearson needs at least three pairs".into()));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("zero variance, correlation undefined".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Significance stars for the usual .05/.01/.001 levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Quantile with linear interpolation between order statistics (type 7).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub(crate) fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap_or(Ordering::Equal));
    v
}
