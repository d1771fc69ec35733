//! Ride categories used for comparisons.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::activity::RideActivity;

/// Default airport postal code (Denver International).
pub const DEFAULT_AIRPORT_ZIP: &str = "80249";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RideCategory {
    pub airport: bool,
    pub surge: bool,
}

/// A ride is an airport ride when it starts or ends in an airport zip.
/// Absent zips never match.
pub fn classify_airport(activity: &RideActivity, airport_zips: &BTreeSet<String>) -> bool {
    [&activity.start_zip, &activity.end_zip]
        .into_iter()
        .flatten()
        .any(|zip| airport_zips.contains(zip))
}

pub fn categorize(activity: &RideActivity, airport_zips: &BTreeSet<String>) -> RideCategory {
    RideCategory {
        airport: classify_airport(activity, airport_zips),
        surge: activity.surge_flag,
    }
}
