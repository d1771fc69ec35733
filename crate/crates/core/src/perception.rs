//! Driver perception of take rates versus what their rides show.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::clean::RetainedRide;
use crate::snapshot::SurveyAnswers;

/// Computed over respondents that also have at least one retained ride.
/// With no such respondents every mean is absent and `n_respondents` is 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerceptionComparison {
    pub mean_estimated_pct: Option<f64>,
    pub mean_fair_pct: Option<f64>,
    /// Mean of per-ride take rates over the qualifying respondents' rides.
    pub actual_pct: Option<f64>,
    pub n_respondents: usize,
}

impl PerceptionComparison {
    pub fn is_empty(&self) -> bool {
        self.n_respondents == 0
    }
}

pub fn perception_vs_actual(
    responses: &[SurveyAnswers],
    retained: &[RetainedRide],
) -> PerceptionComparison {
    let with_rides: BTreeSet<&str> = retained
        .iter()
        .map(|r| r.activity.driver_id.as_str())
        .collect();
    let qualifying: Vec<&SurveyAnswers> = responses
        .iter()
        .filter(|r| with_rides.contains(r.driver_id.as_str()))
        .collect();
    if qualifying.is_empty() {
        return PerceptionComparison {
            mean_estimated_pct: None,
            mean_fair_pct: None,
            actual_pct: None,
            n_respondents: 0,
        };
    }
    let n = qualifying.len() as f64;
    let respondents: BTreeSet<&str> = qualifying.iter().map(|r| r.driver_id.as_str()).collect();
    let rates: Vec<f64> = retained
        .iter()
        .filter(|r| respondents.contains(r.activity.driver_id.as_str()))
        .map(|r| r.take_rate_pct)
        .collect();
    PerceptionComparison {
        mean_estimated_pct: Some(
            qualifying
                .iter()
                .map(|r| r.estimated_take_rate_pct)
                .sum::<f64>()
                / n,
        ),
        mean_fair_pct: Some(qualifying.iter().map(|r| r.fair_take_rate_pct).sum::<f64>() / n),
        actual_pct: Some(rates.iter().sum::<f64>() / rates.len() as f64),
        n_respondents: qualifying.len(),
    }
}
