//! The canonical trip record.

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::digest::sha256_hex;
use crate::money::Usd;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityType {
    Rideshare,
    Delivery,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActivityStatus {
    Completed,
    Cancelled,
}

/// One gig record as delivered by the payroll provider.
///
/// Optional fields may be absent on incomplete provider records; such
/// records are stored but never reach analysis (see [`RideActivity::is_analyzable`]).
/// `rider_price_usd` is the total consumer charge *including* tips.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RideActivity {
    pub activity_id: String,
    pub driver_id: String,
    pub activity_type: ActivityType,
    pub status: ActivityStatus,
    pub start_time: Option<DateTime<Utc>>,
    pub end_time: Option<DateTime<Utc>>,
    pub distance_miles: Option<f64>,
    pub duration_minutes: Option<f64>,
    pub start_zip: Option<String>,
    pub end_zip: Option<String>,
    pub rider_price_usd: Option<Usd>,
    pub platform_fees_usd: Option<Usd>,
    pub base_pay_usd: Option<Usd>,
    pub tips_usd: Option<Usd>,
    #[serde(default)]
    pub bonus_usd: Option<Usd>,
    #[serde(default)]
    pub surge_flag: bool,
    #[serde(default)]
    pub source_payload_digest: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ActivityError {
    #[error("activity_id is empty")]
    MissingId,
    #[error("{0}: driver_id is empty")]
    MissingDriver(String),
    #[error("{0}: end_time precedes start_time")]
    EndBeforeStart(String),
    #[error("{id}: {field} must be a finite non-negative number")]
    BadQuantity { id: String, field: &'static str },
    #[error("{id}: {field} must not be negative")]
    NegativeAmount { id: String, field: &'static str },
    #[error("{id}: {field} is not a 5-character postal code")]
    BadZip { id: String, field: &'static str },
    #[error("{id}: source_payload_digest does not match record content")]
    DigestMismatch { id: String },
}

/// The fields a completed rideshare record needs before it can be analyzed.
pub const REQUIRED_FIELDS: [&str; 8] = [
    "start_time",
    "end_time",
    "distance_miles",
    "duration_minutes",
    "rider_price_usd",
    "platform_fees_usd",
    "base_pay_usd",
    "tips_usd",
];

impl RideActivity {
    /// Structural validation. A record failing here is malformed and is
    /// rejected at the storage boundary; a record passing here may still be
    /// excluded by cleaning.
    pub fn validate(&self) -> Result<(), ActivityError> {
        let id = || self.activity_id.clone();
        if self.activity_id.trim().is_empty() {
            return Err(ActivityError::MissingId);
        }
        if self.driver_id.trim().is_empty() {
            return Err(ActivityError::MissingDriver(id()));
        }
        if let (Some(start), Some(end)) = (self.start_time, self.end_time) {
            if end < start {
                return Err(ActivityError::EndBeforeStart(id()));
            }
        }
        for (field, value) in [
            ("distance_miles", self.distance_miles),
            ("duration_minutes", self.duration_minutes),
        ] {
            if let Some(v) = value {
                if !v.is_finite() || v < 0.0 {
                    return Err(ActivityError::BadQuantity { id: id(), field });
                }
            }
        }
        for (field, value) in [
            ("base_pay_usd", self.base_pay_usd),
            ("tips_usd", self.tips_usd),
            ("bonus_usd", self.bonus_usd),
        ] {
            if value.is_some_and(Usd::is_negative) {
                return Err(ActivityError::NegativeAmount { id: id(), field });
            }
        }
        for (field, value) in [("start_zip", &self.start_zip), ("end_zip", &self.end_zip)] {
            if let Some(zip) = value {
                if zip.chars().count() != 5 {
                    return Err(ActivityError::BadZip { id: id(), field });
                }
            }
        }
        Ok(())
    }

    /// Names of required fields that are absent.
    pub fn missing_fields(&self) -> Vec<&'static str> {
        let present = [
            self.start_time.is_some(),
            self.end_time.is_some(),
            self.distance_miles.is_some(),
            self.duration_minutes.is_some(),
            self.rider_price_usd.is_some(),
            self.platform_fees_usd.is_some(),
            self.base_pay_usd.is_some(),
            self.tips_usd.is_some(),
        ];
        REQUIRED_FIELDS
            .iter()
            .zip(present)
            .filter(|(_, p)| !p)
            .map(|(name, _)| *name)
            .collect()
    }

    /// Completed rideshare trip with every required field present.
    pub fn is_analyzable(&self) -> bool {
        self.activity_type == ActivityType::Rideshare
            && self.status == ActivityStatus::Completed
            && self.missing_fields().is_empty()
    }

    /// SHA-256 over the canonical JSON of the record with the digest field blanked.
    pub fn content_digest(&self) -> String {
        let mut unsigned = self.clone();
        unsigned.source_payload_digest.clear();
        let bytes = serde_json::to_vec(&unsigned).expect("activity serializes");
        sha256_hex(&bytes)
    }

    /// Fills in `source_payload_digest` from content.
    pub fn seal(mut self) -> Self {
        self.source_payload_digest = self.content_digest();
        self
    }

    /// Checks that a supplied digest matches content. An empty digest is
    /// filled in rather than rejected.
    pub fn verify_or_seal(self) -> Result<Self, ActivityError> {
        if self.source_payload_digest.is_empty() {
            return Ok(self.seal());
        }
        if self.source_payload_digest != self.content_digest() {
            return Err(ActivityError::DigestMismatch {
                id: self.activity_id.clone(),
            });
        }
        Ok(self)
    }

    /// Rider price net of tips: the take-rate denominator.
    pub fn fare_ex_tips(&self) -> Option<Usd> {
        Some(self.rider_price_usd? - self.tips_usd?)
    }
}
