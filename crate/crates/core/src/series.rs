//! Weekly take-rate series and pay per mile by distance.

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate, Weekday};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clean::RetainedRide;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeekPoint {
    /// ISO-8601 week label, e.g. `2022-W03`.
    pub iso_week: String,
    /// Monday of the ISO week.
    pub week_start: NaiveDate,
    pub mean_take_rate_pct: f64,
    pub n_rides: usize,
}

/// Weekly mean of per-ride take rates; each ride weighs equally.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TimeSeries {
    pub points: Vec<WeekPoint>,
}

impl TimeSeries {
    /// Week with the highest mean; earliest wins ties.
    pub fn peak(&self) -> Option<&WeekPoint> {
        self.points
            .iter()
            .fold(None, |best: Option<&WeekPoint>, p| match best {
                Some(b) if b.mean_take_rate_pct >= p.mean_take_rate_pct => Some(b),
                _ => Some(p),
            })
    }
}

pub fn weekly_series(retained: &[RetainedRide]) -> TimeSeries {
    let mut weeks: BTreeMap<(i32, u32), (f64, usize)> = BTreeMap::new();
    for ride in retained {
        let Some(start) = ride.activity.start_time else {
            continue;
        };
        let week = start.iso_week();
        let slot = weeks.entry((week.year(), week.week())).or_insert((0.0, 0));
        slot.0 += ride.take_rate_pct;
        slot.1 += 1;
    }
    let points = weeks
        .into_iter()
        .map(|((year, week), (sum, n))| WeekPoint {
            iso_week: format!("{year}-W{week:02}"),
            week_start: NaiveDate::from_isoywd_opt(year, week, Weekday::Mon)
                .expect("valid ISO week"),
            mean_take_rate_pct: sum / n as f64,
            n_rides: n,
        })
        .collect();
    TimeSeries { points }
}

/// Rides shorter than this are left out of pay-per-mile.
pub const MIN_DISTANCE_MILES: f64 = 0.1;

pub const DEFAULT_DISTANCE_EDGES: [f64; 7] = [0.0, 2.0, 5.0, 10.0, 20.0, 40.0, 100.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceBin {
    pub lower_miles: f64,
    pub upper_miles: f64,
    pub mean_pay_per_mile_usd: f64,
    pub n_rides: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct DistanceRateSeries {
    pub bins: Vec<DistanceBin>,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum BinError {
    #[error("bin edges must contain at least two strictly increasing finite values")]
    BadEdges,
}

/// Mean driver pay (base pay + tips) per mile for rides in each
/// `[lower, upper)` distance bin. Empty bins are omitted.
pub fn rate_per_mile(
    retained: &[RetainedRide],
    bin_edges: &[f64],
) -> Result<DistanceRateSeries, BinError> {
    if bin_edges.len() < 2
        || bin_edges.iter().any(|e| !e.is_finite())
        || bin_edges.windows(2).any(|w| w[0] >= w[1])
    {
        return Err(BinError::BadEdges);
    }
    let mut sums = vec![(0.0f64, 0usize); bin_edges.len() - 1];
    for ride in retained {
        let a = &ride.activity;
        let (Some(distance), Some(base), Some(tips)) =
            (a.distance_miles, a.base_pay_usd, a.tips_usd)
        else {
            continue;
        };
        if distance < MIN_DISTANCE_MILES {
            continue;
        }
        let Some(idx) = bin_edges
            .windows(2)
            .position(|w| w[0] <= distance && distance < w[1])
        else {
            continue;
        };
        sums[idx].0 += (base + tips).as_dollars() / distance;
        sums[idx].1 += 1;
    }
    let bins = sums
        .into_iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(i, (sum, n))| DistanceBin {
            lower_miles: bin_edges[i],
            upper_miles: bin_edges[i + 1],
            mean_pay_per_mile_usd: sum / n as f64,
            n_rides: n,
        })
        .collect();
    Ok(DistanceRateSeries { bins })
}
