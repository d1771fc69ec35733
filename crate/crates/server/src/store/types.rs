use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConsentRecord {
    pub consented: bool,
    pub consent_version: String,
    pub consented_at: DateTime<Utc>,
}

/// Personal data. Lives only in the isolated PII table.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverProfile {
    pub driver_id: String,
    pub display_name: String,
    /// E.164, e.g. `+13035550100`.
    pub phone: String,
    pub affiliation_id: Option<String>,
    pub consent: ConsentRecord,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Affiliation {
    pub affiliation_id: String,
    pub name: String,
    pub region_tag: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Scope {
    Driver { driver_id: String },
    Admin,
}

impl Scope {
    pub fn driver_id(&self) -> Option<&str> {
        match self {
            Scope::Driver { driver_id } => Some(driver_id),
            Scope::Admin => None,
        }
    }
}

/// A bearer credential. Only the SHA-256 of the secret is stored; it doubles
/// as the token id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AccessToken {
    pub token_id: String,
    pub scope: Scope,
    pub issued_at: DateTime<Utc>,
    pub expires_at: DateTime<Utc>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyncPhase {
    Linked,
    Backfilling,
    Synced,
    Refreshing,
    Unlinked,
}

impl SyncPhase {
    /// linked → backfilling → synced ⇄ refreshing, and anything → unlinked.
    /// Staying put is always allowed; backfilling may restart after an outage.
    pub fn can_become(self, next: SyncPhase) -> bool {
        use SyncPhase::*;
        self == next
            || next == Unlinked
            || matches!(
                (self, next),
                (Linked, Backfilling)
                    | (Backfilling, Synced)
                    | (Synced, Refreshing)
                    | (Refreshing, Synced)
            )
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SyncPhase::Linked => "linked",
            SyncPhase::Backfilling => "backfilling",
            SyncPhase::Synced => "synced",
            SyncPhase::Refreshing => "refreshing",
            SyncPhase::Unlinked => "unlinked",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncState {
    pub driver_id: String,
    pub phase: SyncPhase,
    pub activities_ingested: usize,
    pub last_event_at: Option<DateTime<Utc>>,
    pub survey_invited: bool,
    pub tombstoned: bool,
    /// Where an interrupted backfill resumes.
    #[serde(default)]
    pub backfill_cursor: Option<String>,
    #[serde(default)]
    pub last_error: Option<String>,
}

impl SyncState {
    pub fn linked(driver_id: &str) -> Self {
        SyncState {
            driver_id: driver_id.to_string(),
            phase: SyncPhase::Linked,
            activities_ingested: 0,
            last_event_at: None,
            survey_invited: false,
            tombstoned: false,
            backfill_cursor: None,
            last_error: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderLink {
    pub driver_id: String,
    pub account_id: String,
    pub linked_at: DateTime<Utc>,
}

/// The raw token only ever exists in the outbound message.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyInvite {
    pub token_hash: String,
    pub driver_id: String,
    pub issued_at: DateTime<Utc>,
    pub consumed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub driver_id: String,
    pub estimated_take_rate_pct: f64,
    pub fair_take_rate_pct: f64,
    pub factors_text: String,
    pub submitted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tombstone {
    pub driver_id: String,
    pub deleted_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub at: DateTime<Utc>,
    /// `admin` or a driver id.
    pub actor: String,
    pub action: String,
    pub target_driver: Option<String>,
}

/// Rows removed per store by a deletion.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeletionReceipt {
    pub driver_id: String,
    pub deleted_at: Option<DateTime<Utc>>,
    pub pii: usize,
    pub activities: usize,
    pub surveys: usize,
    pub sync: usize,
    pub invites: usize,
    pub tokens: usize,
    pub links: usize,
    pub processed_events: usize,
    pub audit_entries: usize,
}

impl DeletionReceipt {
    pub fn total(&self) -> usize {
        self.pii
            + self.activities
            + self.surveys
            + self.sync
            + self.invites
            + self.tokens
            + self.links
            + self.processed_events
            + self.audit_entries
    }
}

/// Non-PII view of a driver for organizer listings.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DriverListing {
    pub driver_id: String,
    pub affiliation_id: Option<String>,
    pub phase: Option<SyncPhase>,
    pub activities: usize,
    pub survey_submitted: bool,
}
