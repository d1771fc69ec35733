//! The provider contract shared by the in-process mock and its HTTP client.

use async_trait::async_trait;
use base64::engine::general_purpose::URL_SAFE_NO_PAD;
use base64::Engine;
use chrono::{DateTime, Utc};
use farelens_core::activity::RideActivity;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::generator::GeneratorParams;

pub const MAX_PAGE_LIMIT: usize = 500;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProviderAccount {
    pub account_id: String,
    pub driver_ref: String,
    pub connected_at: DateTime<Utc>,
    pub generator_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CreateAccount {
    pub driver_ref: String,
    pub seed: u64,
    #[serde(default)]
    pub params: GeneratorParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GigPage {
    pub gigs: Vec<RideActivity>,
    /// Absent on the last page.
    pub next_cursor: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Schedule {
    /// Connection event followed by the whole history in `batches` parts.
    Staged { batches: usize },
    /// One simulated day with `rides` new rides.
    Daily { rides: usize },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Staged { batches: 4 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmissionReport {
    pub events: usize,
    pub delivered: usize,
    pub dead_lettered: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
#[serde(tag = "code", content = "message", rename_all = "snake_case")]
pub enum ProviderError {
    #[error("not found: {0}")]
    NotFound(String),
    #[error("already exists: {0}")]
    Duplicate(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("account {0} was removed")]
    Removed(String),
    #[error("no webhook endpoint registered")]
    NoEndpoint,
    #[error("provider unavailable: {0}")]
    Unavailable(String),
}

#[async_trait]
pub trait ProviderApi: Send + Sync {
    async fn create_account(&self, req: &CreateAccount) -> Result<ProviderAccount, ProviderError>;

    async fn get_account(&self, account_id: &str) -> Result<ProviderAccount, ProviderError>;

    async fn list_gigs(
        &self,
        account_id: &str,
        cursor: Option<&str>,
        limit: usize,
    ) -> Result<GigPage, ProviderError>;

    async fn emit(
        &self,
        account_id: &str,
        schedule: Schedule,
    ) -> Result<EmissionReport, ProviderError>;

    async fn register_endpoint(&self, url: &str) -> Result<(), ProviderError>;
}

pub fn encode_cursor(account_id: &str, offset: usize) -> String {
    URL_SAFE_NO_PAD.encode(format!("{account_id}:{offset}"))
}

/// Offset encoded in `cursor`, which must belong to `account_id`.
pub fn decode_cursor(account_id: &str, cursor: &str) -> Result<usize, ProviderError> {
    let bad = || ProviderError::BadRequest("invalid cursor".into());
    let raw = URL_SAFE_NO_PAD.decode(cursor).map_err(|_| bad())?;
    let text = String::from_utf8(raw).map_err(|_| bad())?;
    let (account, offset) = text.rsplit_once(':').ok_or_else(bad)?;
    if account != account_id {
        return Err(bad());
    }
    offset.parse().map_err(|_| bad())
}
