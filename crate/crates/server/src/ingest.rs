//! Provider webhooks and backfill pages into the datastore.
//!
//! Handling is serialized per driver (via [`Datastore::driver_lock`]) and
//! concurrent across drivers. Every write is an idempotent upsert keyed by
//! activity id, so redelivered or replayed events change nothing.

use std::sync::Arc;

use chrono::Utc;
use farelens_core::RideActivity;
use farelens_provider::{verify, EventType, ProviderApi, ProviderError, WebhookEvent};
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tokio::task::JoinSet;

use crate::store::{BatchOutcome, Datastore, StoreError, SyncPhase};
use crate::survey::{SurveyError, SurveyService};

#[derive(Debug, Clone)]
pub struct IngestConfig {
    /// Completed rideshare trips needed before the survey invite goes out.
    pub survey_threshold: usize,
    pub page_limit: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        IngestConfig {
            survey_threshold: 10,
            page_limit: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum Ack {
    Applied {
        changed: usize,
    },
    Duplicate,
    /// Acknowledged so the provider stops retrying, but not stored.
    Discarded {
        reason: String,
    },
}

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("webhook signature missing or invalid")]
    BadSignature,
    #[error("malformed payload: {0}")]
    Malformed(String),
    #[error("driver {0} has no linked provider account")]
    NotLinked(String),
    #[error("driver {driver_id} is {phase}, expected {expected}")]
    WrongPhase {
        driver_id: String,
        phase: &'static str,
        expected: &'static str,
    },
    #[error("provider: {0}")]
    Provider(#[from] ProviderError),
    #[error(transparent)]
    Survey(#[from] SurveyError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Per-driver result of a backfill or refresh.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SyncDelta {
    pub driver_id: String,
    /// `backfill`, `refresh` or `skip`.
    pub action: String,
    pub activities_before: usize,
    pub activities_after: usize,
    pub changed: usize,
    pub phase: Option<SyncPhase>,
    /// Set when the step failed; the driver can simply be synced again.
    pub error: Option<String>,
}

impl SyncDelta {
    pub fn retryable(&self) -> bool {
        self.error.is_some()
    }
}

pub struct Ingestor {
    store: Arc<Datastore>,
    provider: Arc<dyn ProviderApi>,
    surveys: Arc<SurveyService>,
    secret: Vec<u8>,
    config: IngestConfig,
}

/// Provider records name the account; stored rows name the driver.
fn adopt(
    gigs: Vec<RideActivity>,
    account_id: &str,
    driver_id: &str,
) -> Result<Vec<RideActivity>, IngestError> {
    gigs.into_iter()
        .map(|gig| {
            if gig.driver_id != account_id {
                return Err(IngestError::Malformed(format!(
                    "{} belongs to account {}, not {account_id}",
                    gig.activity_id, gig.driver_id
                )));
            }
            let mut gig = gig
                .verify_or_seal()
                .map_err(|e| IngestError::Malformed(e.to_string()))?;
            gig.driver_id = driver_id.to_string();
            Ok(gig.seal())
        })
        .collect()
}

fn malformed_or(e: StoreError) -> IngestError {
    match e {
        StoreError::Invalid(m) => IngestError::Malformed(m),
        other => IngestError::Store(other),
    }
}

impl Ingestor {
    pub fn new(
        store: Arc<Datastore>,
        provider: Arc<dyn ProviderApi>,
        surveys: Arc<SurveyService>,
        secret: impl Into<Vec<u8>>,
        config: IngestConfig,
    ) -> Self {
        Ingestor {
            store,
            provider,
            surveys,
            secret: secret.into(),
            config,
        }
    }

    pub fn config(&self) -> &IngestConfig {
        &self.config
    }

    /// Verifies the signature over the raw body before parsing anything.
    pub async fn handle_webhook(
        &self,
        body: &[u8],
        signature: Option<&str>,
    ) -> Result<Ack, IngestError> {
        let Some(sig) = signature else {
            tracing::warn!("webhook without signature rejected");
            return Err(IngestError::BadSignature);
        };
        if !verify(&self.secret, body, sig) {
            tracing::warn!("webhook with bad signature rejected");
            return Err(IngestError::BadSignature);
        }
        let event: WebhookEvent = serde_json::from_slice(body).map_err(|e| {
            IngestError::Malformed(format!("line {} column {}: {e}", e.line(), e.column()))
        })?;
        let discard = |reason: &str| {
            tracing::debug!(event_id = %event.event_id, reason, "webhook discarded");
            Ok(Ack::Discarded {
                reason: reason.into(),
            })
        };

        let Some(driver_id) = self.store.driver_for_account(&event.account_id) else {
            return discard("unknown account");
        };
        let lock = self.store.driver_lock(&driver_id);
        let _guard = lock.lock().await;
        // a deletion may have won the race for the lock
        if self.store.is_tombstoned(&driver_id)
            || self.store.driver_for_account(&event.account_id).as_deref() != Some(&driver_id)
        {
            return discard("driver deleted");
        }
        let Some(state) = self.store.sync_state(&driver_id) else {
            return discard("no sync state");
        };
        if state.phase == SyncPhase::Unlinked {
            return discard("account unlinked");
        }

        let rows = match event.event_type {
            EventType::GigsAdded | EventType::GigsUpdated => {
                adopt(event.payload, &event.account_id, &driver_id)?
            }
            EventType::AccountConnected | EventType::AccountRemoved => Vec::new(),
        };
        let removed = event.event_type == EventType::AccountRemoved;
        let now = Utc::now();
        let outcome = self
            .store
            .ingest(&driver_id, Some(&event.event_id), rows, |s| {
                s.last_event_at = Some(now);
                if removed {
                    s.phase = SyncPhase::Unlinked;
                }
            })
            .map_err(malformed_or)?;
        match outcome {
            BatchOutcome::Duplicate => Ok(Ack::Duplicate),
            BatchOutcome::Applied { changed } => {
                self.trigger_locked(&driver_id);
                Ok(Ack::Applied { changed })
            }
        }
    }

    /// Pages the provider history to exhaustion. Each page commits together
    /// with the cursor that follows it, so an interrupted run resumes where
    /// it stopped. Returns the number of activities stored for the driver.
    pub async fn run_backfill(&self, driver_id: &str) -> Result<usize, IngestError> {
        let lock = self.store.driver_lock(driver_id);
        let _guard = lock.lock().await;
        let state = self
            .store
            .sync_state(driver_id)
            .ok_or_else(|| IngestError::NotLinked(driver_id.into()))?;
        let link = self
            .store
            .link_of(driver_id)
            .ok_or_else(|| IngestError::NotLinked(driver_id.into()))?;
        if !matches!(state.phase, SyncPhase::Linked | SyncPhase::Backfilling) {
            return Err(IngestError::WrongPhase {
                driver_id: driver_id.into(),
                phase: state.phase.as_str(),
                expected: "linked",
            });
        }
        self.store
            .update_sync(driver_id, |s| s.phase = SyncPhase::Backfilling)?;

        let mut cursor = state.backfill_cursor;
        loop {
            let page = match self
                .provider
                .list_gigs(&link.account_id, cursor.as_deref(), self.config.page_limit)
                .await
            {
                Ok(page) => page,
                Err(e) => {
                    tracing::warn!(driver_id, error = %e, "backfill interrupted");
                    self.store
                        .update_sync(driver_id, |s| s.last_error = Some(e.to_string()))?;
                    return Err(e.into());
                }
            };
            let rows = adopt(page.gigs, &link.account_id, driver_id)?;
            let next = page.next_cursor;
            let done = next.is_none();
            self.store
                .ingest(driver_id, None, rows, |s| {
                    s.backfill_cursor = next.clone();
                    s.last_error = None;
                    if done {
                        s.phase = SyncPhase::Synced;
                    }
                })
                .map_err(malformed_or)?;
            match next {
                Some(c) => cursor = Some(c),
                None => break,
            }
        }
        tracing::info!(driver_id, "backfill complete");
        self.trigger_locked(driver_id);
        Ok(self.store.activity_count(driver_id))
    }

    /// Re-reads the provider history and upserts anything new or changed.
    pub async fn refresh_driver(&self, driver_id: &str) -> Result<SyncDelta, IngestError> {
        let lock = self.store.driver_lock(driver_id);
        let _guard = lock.lock().await;
        let state = self
            .store
            .sync_state(driver_id)
            .ok_or_else(|| IngestError::NotLinked(driver_id.into()))?;
        let link = self
            .store
            .link_of(driver_id)
            .ok_or_else(|| IngestError::NotLinked(driver_id.into()))?;
        if state.phase != SyncPhase::Synced {
            return Err(IngestError::WrongPhase {
                driver_id: driver_id.into(),
                phase: state.phase.as_str(),
                expected: "synced",
            });
        }
        let before = self.store.activity_count(driver_id);
        self.store
            .update_sync(driver_id, |s| s.phase = SyncPhase::Refreshing)?;

        let mut gigs = Vec::new();
        let mut cursor: Option<String> = None;
        loop {
            match self
                .provider
                .list_gigs(&link.account_id, cursor.as_deref(), self.config.page_limit)
                .await
            {
                Ok(page) => {
                    gigs.extend(page.gigs);
                    match page.next_cursor {
                        Some(c) => cursor = Some(c),
                        None => break,
                    }
                }
                Err(e) => {
                    tracing::warn!(driver_id, error = %e, "refresh failed");
                    self.store.update_sync(driver_id, |s| {
                        s.phase = SyncPhase::Synced;
                        s.last_error = Some(e.to_string());
                    })?;
                    return Err(e.into());
                }
            }
        }
        let rows = match adopt(gigs, &link.account_id, driver_id) {
            Ok(rows) => rows,
            Err(e) => {
                self.store.update_sync(driver_id, |s| {
                    s.phase = SyncPhase::Synced;
                    s.last_error = Some(e.to_string());
                })?;
                return Err(e);
            }
        };
        let outcome = self
            .store
            .ingest(driver_id, None, rows, |s| {
                s.phase = SyncPhase::Synced;
                s.last_error = None;
            })
            .map_err(malformed_or)?;
        let changed = match outcome {
            BatchOutcome::Applied { changed } => changed,
            BatchOutcome::Duplicate => 0,
        };
        self.trigger_locked(driver_id);
        Ok(SyncDelta {
            driver_id: driver_id.into(),
            action: "refresh".into(),
            activities_before: before,
            activities_after: self.store.activity_count(driver_id),
            changed,
            phase: Some(SyncPhase::Synced),
            error: None,
        })
    }

    /// Refreshes every synced driver concurrently. A failure stays with its
    /// driver and is reported as retryable.
    pub async fn daily_refresh(self: &Arc<Self>) -> Vec<SyncDelta> {
        let drivers: Vec<String> = self
            .store
            .sync_states()
            .into_iter()
            .filter(|s| s.phase == SyncPhase::Synced)
            .map(|s| s.driver_id)
            .collect();
        self.for_each(drivers, |this, id| async move {
            this.refresh_or_report(&id).await
        })
        .await
    }

    /// Backfills linked drivers and refreshes synced ones; `only` narrows to one driver.
    pub async fn sync(self: &Arc<Self>, only: Option<&str>) -> Vec<SyncDelta> {
        let drivers: Vec<String> = match only {
            Some(id) => vec![id.to_string()],
            None => self
                .store
                .sync_states()
                .into_iter()
                .map(|s| s.driver_id)
                .collect(),
        };
        self.for_each(drivers, |this, id| async move {
            match this.store.sync_state(&id).map(|s| s.phase) {
                Some(SyncPhase::Linked | SyncPhase::Backfilling) => {
                    let before = this.store.activity_count(&id);
                    let result = this.run_backfill(&id).await;
                    SyncDelta {
                        driver_id: id.clone(),
                        action: "backfill".into(),
                        activities_before: before,
                        activities_after: this.store.activity_count(&id),
                        changed: this.store.activity_count(&id) - before,
                        phase: this.store.sync_state(&id).map(|s| s.phase),
                        error: result.err().map(|e| e.to_string()),
                    }
                }
                Some(SyncPhase::Synced) => this.refresh_or_report(&id).await,
                phase => SyncDelta {
                    driver_id: id.clone(),
                    action: "skip".into(),
                    activities_before: this.store.activity_count(&id),
                    activities_after: this.store.activity_count(&id),
                    changed: 0,
                    phase,
                    error: phase
                        .is_none()
                        .then(|| IngestError::NotLinked(id.clone()).to_string()),
                },
            }
        })
        .await
    }

    async fn refresh_or_report(&self, id: &str) -> SyncDelta {
        match self.refresh_driver(id).await {
            Ok(delta) => delta,
            Err(e) => SyncDelta {
                driver_id: id.into(),
                action: "refresh".into(),
                activities_before: self.store.activity_count(id),
                activities_after: self.store.activity_count(id),
                changed: 0,
                phase: self.store.sync_state(id).map(|s| s.phase),
                error: Some(e.to_string()),
            },
        }
    }

    async fn for_each<F, Fut>(self: &Arc<Self>, drivers: Vec<String>, f: F) -> Vec<SyncDelta>
    where
        F: Fn(Arc<Self>, String) -> Fut,
        Fut: std::future::Future<Output = SyncDelta> + Send + 'static,
    {
        let mut set = JoinSet::new();
        for id in drivers {
            set.spawn(f(self.clone(), id));
        }
        let mut out = Vec::new();
        while let Some(res) = set.join_next().await {
            match res {
                Ok(delta) => out.push(delta),
                Err(e) => tracing::error!(error = %e, "sync task panicked"),
            }
        }
        out.sort_by(|a, b| a.driver_id.cmp(&b.driver_id));
        out
    }

    /// Takes the driver lock, then evaluates the trigger.
    pub async fn evaluate_survey_trigger(&self, driver_id: &str) -> Result<bool, IngestError> {
        let lock = self.store.driver_lock(driver_id);
        let _guard = lock.lock().await;
        self.try_trigger(driver_id)
    }

    fn trigger_locked(&self, driver_id: &str) {
        if let Err(e) = self.try_trigger(driver_id) {
            tracing::warn!(driver_id, error = %e, "survey invite not sent; will retry on next event");
        }
    }

    /// Synced, past the threshold and not yet invited: invite and latch.
    /// Caller holds the driver lock.
    fn try_trigger(&self, driver_id: &str) -> Result<bool, IngestError> {
        let Some(state) = self.store.sync_state(driver_id) else {
            return Ok(false);
        };
        if state.survey_invited
            || state.phase != SyncPhase::Synced
            || self.store.completed_rideshare_count(driver_id) < self.config.survey_threshold
        {
            return Ok(false);
        }
        match self.surveys.issue_invite(driver_id) {
            Ok(_) => {}
            // invited before the latch was recorded
            Err(SurveyError::Refused(_)) if self.store.invite_for_driver(driver_id).is_some() => {}
            Err(e) => return Err(e.into()),
        }
        self.store
            .update_sync(driver_id, |s| s.survey_invited = true)?;
        Ok(true)
    }
}
