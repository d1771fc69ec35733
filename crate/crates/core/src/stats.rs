//! Rank test and histogram mode.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StatsError {
    #[error("no values")]
    Empty,
    #[error("bin width must be a positive finite number, got {0}")]
    BadBinWidth(f64),
    #[error("non-finite value in input")]
    NonFinite,
}

/// Samples with both sides at most this large use the exact null distribution.
pub const EXACT_MAX_PER_SIDE: usize = 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MannWhitneyMethod {
    /// Exact permutation distribution of the (mid)rank sum.
    Exact,
    /// Normal approximation with tie and continuity corrections.
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: MannWhitneyMethod,
}

/// Midranks (1-based) of the pooled sample, first `a` then `b`.
fn midranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut order: Vec<usize> = (0..pooled.len()).collect();
    order.sort_by(|&i, &j| pooled[i].total_cmp(&pooled[j]));
    let mut ranks = vec![0.0; pooled.len()];
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && pooled[order[j]] == pooled[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share the average of ranks i+1..=j
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        tie_sizes.push(j - i);
        i = j;
    }
    (ranks, tie_sizes)
}

/// Two-sided Mann–Whitney U test. Returns `None` when either side is empty.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Option<MannWhitney> {
    if a.is_empty() || b.is_empty() {
        return None;
    }
    let (na, nb) = (a.len(), b.len());
    let (ranks, tie_sizes) = midranks(a, b);
    let rank_sum_a: f64 = ranks[..na].iter().sum();
    let u = rank_sum_a - (na * (na + 1)) as f64 / 2.0;

    if na <= EXACT_MAX_PER_SIDE && nb <= EXACT_MAX_PER_SIDE {
        let p_value = exact_p_value(&ranks, na);
        return Some(MannWhitney {
            u,
            p_value,
            method: MannWhitneyMethod::Exact,
        });
    }

    let n = (na + nb) as f64;
    let (naf, nbf) = (na as f64, nb as f64);
    let tie_term: f64 = tie_sizes
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / (n * (n - 1.0));
    let variance = naf * nbf / 12.0 * ((n + 1.0) - tie_term);
    let mean = naf * nbf / 2.0;
    let p_value = if variance <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / variance.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    Some(MannWhitney {
        u,
        p_value,
        method: MannWhitneyMethod::Normal,
    })
}

/// Exact two-sided p-value of the rank sum of the first `na` pooled items,
/// by counting subsets of each size and doubled-rank sum.
fn exact_p_value(ranks: &[f64], na: usize) -> f64 {
    // Doubled midranks are integers.
    let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
    let max_sum: usize = doubled.iter().sum();
    let observed: usize = doubled[..na].iter().sum();
    let n = ranks.len();
    let center2 = na * (n + 1); // null mean of the doubled sum

    // counts[k][s]: subsets of size k with doubled sum s.
    let width = max_sum + 1;
    let mut counts = vec![0.0f64; (na + 1) * width];
    counts[0] = 1.0;
    for (seen, &r) in doubled.iter().enumerate() {
        let top = na.min(seen + 1);
        for k in (1..=top).rev() {
            let (lower, upper) = counts.split_at_mut(k * width);
            let prev = &lower[(k - 1) * width..];
            let cur = &mut upper[..width];
            for s in r..width {
                let add = prev[s - r];
                if add != 0.0 {
                    cur[s] += add;
                }
            }
        }
    }
    let row = &counts[na * width..(na + 1) * width];
    let deviation = |s: usize| s.abs_diff(center2);
    let threshold = deviation(observed);
    let total: f64 = row.iter().sum();
    let extreme: f64 = row
        .iter()
        .enumerate()
        .filter(|(s, _)| deviation(*s) >= threshold)
        .map(|(_, c)| c)
        .sum();
    (extreme / total).min(1.0)
}

/// Center of the most populated half-open bin `[k·w, (k+1)·w)`; ties go to
/// the lower bin.
pub fn mode_estimate(values: &[f64], bin_width: f64) -> Result<f64, StatsError> {
    if !(bin_width.is_finite() && bin_width > 0.0) {
        return Err(StatsError::BadBinWidth(bin_width));
    }
    if values.is_empty() {
        return Err(StatsError::Empty);
    }
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for &v in values {
        if !v.is_finite() {
            return Err(StatsError::NonFinite);
        }
        // The small nudge keeps exact multiples like 0.3/0.1 in their own bin.
        let k = (v / bin_width + 1e-9).floor() as i64;
        *bins.entry(k).or_insert(0) += 1;
    }
    let mut best = (i64::MIN, 0usize);
    for (k, count) in bins {
        if count > best.1 {
            best = (k, count);
        }
    }
    Ok((best.0 as f64 + 0.5) * bin_width)
}

pub fn mean(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        None
    } else {
        Some(values.iter().sum::<f64>() / values.len() as f64)
    }
}
