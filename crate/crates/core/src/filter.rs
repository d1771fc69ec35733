//! Organizer filters over a snapshot.

use std::collections::BTreeSet;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Airport,
    Surge,
}

/// Inclusive `[from, to]` range on ride start time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DateRange {
    pub from: DateTime<Utc>,
    pub to: DateTime<Utc>,
}

impl DateRange {
    pub fn contains(&self, t: DateTime<Utc>) -> bool {
        self.from <= t && t <= self.to
    }
}

/// Restricts a pipeline run. Absent fields do not filter.
///
/// `categories` keeps rides belonging to at least one listed category.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FilterSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub affiliation_ids: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_range: Option<DateRange>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub categories: Option<Vec<Category>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FilterError {
    #[error("date range is empty: from {from} is after to {to}")]
    EmptyDateRange {
        from: DateTime<Utc>,
        to: DateTime<Utc>,
    },
    #[error("unknown affiliation id {0:?}")]
    UnknownAffiliation(String),
}

impl FilterSpec {
    pub fn validate(&self, known_affiliations: &BTreeSet<String>) -> Result<(), FilterError> {
        if let Some(range) = &self.date_range {
            if range.from > range.to {
                return Err(FilterError::EmptyDateRange {
                    from: range.from,
                    to: range.to,
                });
            }
        }
        if let Some(ids) = &self.affiliation_ids {
            if let Some(unknown) = ids.iter().find(|id| !known_affiliations.contains(*id)) {
                return Err(FilterError::UnknownAffiliation(unknown.clone()));
            }
        }
        Ok(())
    }

    /// Sorted, deduplicated form so equal filters digest equally.
    pub fn canonical(&self) -> FilterSpec {
        let mut out = self.clone();
        if let Some(ids) = &mut out.affiliation_ids {
            ids.sort();
            ids.dedup();
        }
        if let Some(cats) = &mut out.categories {
            cats.sort();
            cats.dedup();
        }
        out
    }

    pub fn is_empty(&self) -> bool {
        self.affiliation_ids.is_none() && self.date_range.is_none() && self.categories.is_none()
    }
}
