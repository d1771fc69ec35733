//! Point-in-time export of the analytics store, the pipeline's only input.
//!
//! A snapshot carries no personal data: drivers appear only by opaque id and
//! affiliation, and survey answers only by their two numeric fields.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::activity::RideActivity;
use crate::digest::json_digest;

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DriverMeta {
    pub driver_id: String,
    pub affiliation_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct AffiliationMeta {
    pub affiliation_id: String,
    pub name: String,
    pub region_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyAnswers {
    pub driver_id: String,
    pub estimated_take_rate_pct: f64,
    pub fair_take_rate_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Snapshot {
    pub activities: Vec<RideActivity>,
    pub drivers: Vec<DriverMeta>,
    pub affiliations: Vec<AffiliationMeta>,
    pub survey_responses: Vec<SurveyAnswers>,
}

impl Snapshot {
    /// Sorts every table by key so content, not insertion order, determines
    /// the snapshot id.
    pub fn canonicalize(mut self) -> Self {
        self.activities
            .sort_by(|a, b| a.activity_id.cmp(&b.activity_id));
        self.drivers.sort();
        self.affiliations.sort();
        self.survey_responses
            .sort_by(|a, b| a.driver_id.cmp(&b.driver_id));
        self
    }

    /// Content digest of the canonical form.
    pub fn snapshot_id(&self) -> String {
        json_digest(&self.clone().canonicalize())
    }

    /// Latest end time over all activities.
    pub fn data_as_of(&self) -> Option<DateTime<Utc>> {
        self.activities.iter().filter_map(|a| a.end_time).max()
    }

    pub fn affiliation_of(&self, driver_id: &str) -> Option<&str> {
        self.drivers
            .iter()
            .find(|d| d.driver_id == driver_id)
            .and_then(|d| d.affiliation_id.as_deref())
    }
}
