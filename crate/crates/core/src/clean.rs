//! Cleaning: decides which provider records are analyzed.
//!
//! Rules run in a fixed order and each record is charged to the first rule
//! that excludes it, so the per-reason counts always partition the input.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::activity::{ActivityStatus, ActivityType, RideActivity};
use crate::take_rate::TakeRate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExclusionReason {
    NonRideshare,
    Cancelled,
    MissingFields,
    UndefinedTakeRate,
    NegativeTakeRate,
}

impl ExclusionReason {
    /// Rule order.
    pub const ALL: [ExclusionReason; 5] = [
        ExclusionReason::NonRideshare,
        ExclusionReason::Cancelled,
        ExclusionReason::MissingFields,
        ExclusionReason::UndefinedTakeRate,
        ExclusionReason::NegativeTakeRate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ExclusionReason::NonRideshare => "non_rideshare",
            ExclusionReason::Cancelled => "cancelled",
            ExclusionReason::MissingFields => "missing_fields",
            ExclusionReason::UndefinedTakeRate => "undefined_take_rate",
            ExclusionReason::NegativeTakeRate => "negative_take_rate",
        }
    }
}

impl fmt::Display for ExclusionReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleaningReport {
    pub input_count: usize,
    pub retained_count: usize,
    pub excluded: BTreeMap<ExclusionReason, usize>,
}

impl CleaningReport {
    fn empty() -> Self {
        CleaningReport {
            input_count: 0,
            retained_count: 0,
            excluded: ExclusionReason::ALL.iter().map(|r| (*r, 0)).collect(),
        }
    }

    pub fn excluded_count(&self, reason: ExclusionReason) -> usize {
        self.excluded.get(&reason).copied().unwrap_or(0)
    }

    pub fn total_excluded(&self) -> usize {
        self.excluded.values().sum()
    }
}

/// An analyzable ride with its take rate attached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetainedRide {
    #[serde(flatten)]
    pub activity: RideActivity,
    pub take_rate_pct: f64,
}

/// First rule excluding `activity`, or its take rate if it survives.
pub fn classify(activity: &RideActivity) -> Result<f64, ExclusionReason> {
    if activity.activity_type != ActivityType::Rideshare {
        return Err(ExclusionReason::NonRideshare);
    }
    if activity.status == ActivityStatus::Cancelled {
        return Err(ExclusionReason::Cancelled);
    }
    if !activity.missing_fields().is_empty() {
        return Err(ExclusionReason::MissingFields);
    }
    match activity.take_rate() {
        TakeRate::Undefined => Err(ExclusionReason::UndefinedTakeRate),
        TakeRate::Percent(p) if p < 0.0 => Err(ExclusionReason::NegativeTakeRate),
        TakeRate::Percent(p) => Ok(p),
    }
}

/// Applies every rule. Output is sorted by `(start_time, activity_id)` so the
/// result does not depend on input order.
pub fn clean<'a, I>(activities: I) -> (Vec<RetainedRide>, CleaningReport)
where
    I: IntoIterator<Item = &'a RideActivity>,
{
    let mut report = CleaningReport::empty();
    let mut retained = Vec::new();
    for activity in activities {
        report.input_count += 1;
        match classify(activity) {
            Ok(take_rate_pct) => retained.push(RetainedRide {
                activity: activity.clone(),
                take_rate_pct,
            }),
            Err(reason) => *report.excluded.entry(reason).or_insert(0) += 1,
        }
    }
    retained.sort_by(|a, b| {
        (a.activity.start_time, &a.activity.activity_id)
            .cmp(&(b.activity.start_time, &b.activity.activity_id))
    });
    report.retained_count = retained.len();
    (retained, report)
}
