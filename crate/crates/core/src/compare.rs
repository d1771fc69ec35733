//! Two-group take-rate comparisons (airport vs not, surge vs not).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::classify::classify_airport;
use crate::clean::RetainedRide;
use crate::stats::{mann_whitney_u, mean, mode_estimate, MannWhitneyMethod};

pub const DEFAULT_MODE_BIN_WIDTH: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub lower_pct: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonResult {
    pub label_a: String,
    pub label_b: String,
    pub n_a: usize,
    pub n_b: usize,
    pub mean_a: Option<f64>,
    pub mean_b: Option<f64>,
    pub mode_a: Option<f64>,
    pub mode_b: Option<f64>,
    pub bin_width: f64,
    /// Absent when either side is empty.
    pub p_value: Option<f64>,
    pub test_name: String,
    pub significant_at_05: bool,
    pub histogram_a: Vec<HistogramBin>,
    pub histogram_b: Vec<HistogramBin>,
}

impl ComparisonResult {
    pub fn is_degenerate(&self) -> bool {
        self.p_value.is_none()
    }
}

fn histogram(values: &[f64], bin_width: f64) -> Vec<HistogramBin> {
    let mut bins: BTreeMap<i64, usize> = BTreeMap::new();
    for v in values {
        *bins
            .entry((v / bin_width + 1e-9).floor() as i64)
            .or_insert(0) += 1;
    }
    bins.into_iter()
        .map(|(k, count)| HistogramBin {
            lower_pct: k as f64 * bin_width,
            count,
        })
        .collect()
}

/// Splits `retained` by `in_a` and compares the take-rate distributions with
/// a two-sided Mann–Whitney U test.
pub fn compare<P>(
    retained: &[RetainedRide],
    in_a: P,
    label_a: &str,
    label_b: &str,
    bin_width: f64,
) -> ComparisonResult
where
    P: Fn(&RetainedRide) -> bool,
{
    let (a, b): (Vec<&RetainedRide>, Vec<&RetainedRide>) = retained.iter().partition(|r| in_a(r));
    let rates_a: Vec<f64> = a.iter().map(|r| r.take_rate_pct).collect();
    let rates_b: Vec<f64> = b.iter().map(|r| r.take_rate_pct).collect();
    compare_values(&rates_a, &rates_b, label_a, label_b, bin_width)
}

pub fn compare_values(
    rates_a: &[f64],
    rates_b: &[f64],
    label_a: &str,
    label_b: &str,
    bin_width: f64,
) -> ComparisonResult {
    let test = mann_whitney_u(rates_a, rates_b);
    let p_value = test.map(|t| t.p_value);
    let test_name = match test.map(|t| t.method) {
        Some(MannWhitneyMethod::Exact) => "mann-whitney-u two-sided (exact)",
        Some(MannWhitneyMethod::Normal) => "mann-whitney-u two-sided (normal approximation)",
        None => "none (one side empty)",
    };
    ComparisonResult {
        label_a: label_a.to_string(),
        label_b: label_b.to_string(),
        n_a: rates_a.len(),
        n_b: rates_b.len(),
        mean_a: mean(rates_a),
        mean_b: mean(rates_b),
        mode_a: mode_estimate(rates_a, bin_width).ok(),
        mode_b: mode_estimate(rates_b, bin_width).ok(),
        bin_width,
        p_value,
        test_name: test_name.to_string(),
        significant_at_05: p_value.is_some_and(|p| p < 0.05),
        histogram_a: histogram(rates_a, bin_width),
        histogram_b: histogram(rates_b, bin_width),
    }
}

pub fn compare_airport(
    retained: &[RetainedRide],
    airport_zips: &BTreeSet<String>,
    bin_width: f64,
) -> ComparisonResult {
    compare(
        retained,
        |r| classify_airport(&r.activity, airport_zips),
        "airport",
        "non-airport",
        bin_width,
    )
}

pub fn compare_surge(retained: &[RetainedRide], bin_width: f64) -> ComparisonResult {
    compare(
        retained,
        |r| r.activity.surge_flag,
        "surge",
        "non-surge",
        bin_width,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_samples() {
        let a = [20.0, 25.0, 30.0, 35.0];
        let r = compare_values(&a, &a, "a", "b", 0.5);
        assert!(r.p_value.unwrap() >= 0.99);
        assert!(!r.significant_at_05);
        assert_eq!(r.mean_a, r.mean_b);
    }

    #[test]
    fn empty_side_is_degenerate() {
        let r = compare_values(&[20.0], &[], "a", "b", 0.5);
        assert!(r.is_degenerate());
        assert!(!r.significant_at_05);
        assert_eq!(r.mean_b, None);
        assert_eq!(r.mode_a, Some(20.25));
    }

    #[test]
    fn significance_flag_tracks_p_value() {
        let a: Vec<f64> = (0..40).map(|i| 20.0 + (i % 10) as f64).collect();
        let b: Vec<f64> = a.iter().map(|v| v + 8.0).collect();
        let r = compare_values(&b, &a, "surge", "non-surge", 0.5);
        assert!(r.significant_at_05);
        assert_eq!(r.significant_at_05, r.p_value.unwrap() < 0.05);
        assert!(r.mean_a.unwrap() > r.mean_b.unwrap());
        assert_eq!(r.histogram_a.iter().map(|b| b.count).sum::<usize>(), 40);
    }
}
