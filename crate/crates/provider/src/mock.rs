//! In-memory payroll-data provider with optional on-disk state.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use async_trait::async_trait;
use farelens_core::activity::RideActivity;
use farelens_core::digest::DigestBuilder;
use farelens_core::money::Usd;
use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::api::{
    decode_cursor, encode_cursor, CreateAccount, EmissionReport, GigPage, ProviderAccount,
    ProviderApi, ProviderError, Schedule, MAX_PAGE_LIMIT,
};
use crate::delivery::{deliver, DeadLetter, HttpTransport, RetryPolicy, WebhookTransport};
use crate::event::{EventType, WebhookEvent};
use crate::generator::{generate_day, generate_history, GeneratorParams};

#[derive(Debug, Clone, Serialize, Deserialize)]
struct AccountState {
    account: ProviderAccount,
    params: GeneratorParams,
    history: Vec<RideActivity>,
    days_advanced: u32,
    removed: bool,
    next_event_seq: u64,
}

#[derive(Debug, Default, Serialize, Deserialize)]
struct State {
    accounts: BTreeMap<String, AccountState>,
    endpoints: Vec<String>,
    dead_letters: Vec<DeadLetter>,
    /// Every event ever emitted, in emission order. Kept in memory only.
    #[serde(skip)]
    event_log: Vec<WebhookEvent>,
}

impl AccountState {
    fn next_event(&mut self, event_type: EventType, payload: Vec<RideActivity>) -> WebhookEvent {
        let seq = self.next_event_seq;
        self.next_event_seq += 1;
        let d = DigestBuilder::new()
            .part("account", self.account.account_id.as_bytes())
            .part("seq", &seq.to_le_bytes())
            .finish();
        WebhookEvent {
            event_id: format!("evt_{}", &d[..24]),
            event_type,
            account_id: self.account.account_id.clone(),
            payload,
        }
    }
}

pub fn account_id_for(driver_ref: &str, seed: u64) -> String {
    let d = DigestBuilder::new()
        .part("driver_ref", driver_ref.as_bytes())
        .part("seed", &seed.to_le_bytes())
        .finish();
    format!("acct_{}", &d[..16])
}

pub struct MockProvider {
    state: Mutex<State>,
    path: Option<PathBuf>,
    secret: Vec<u8>,
    transport: Arc<dyn WebhookTransport>,
    retry: RetryPolicy,
    emit_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl MockProvider {
    pub fn new(secret: impl Into<Vec<u8>>) -> Self {
        MockProvider {
            state: Mutex::new(State::default()),
            path: None,
            secret: secret.into(),
            transport: Arc::new(HttpTransport::new()),
            retry: RetryPolicy::default(),
            emit_locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn with_transport(mut self, transport: Arc<dyn WebhookTransport>) -> Self {
        self.transport = transport;
        self
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    /// Loads state from `path` if it exists and saves there after every change.
    pub fn persistent(mut self, path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        if path.exists() {
            let bytes = fs::read(&path)?;
            let state: State = serde_json::from_slice(&bytes)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?;
            *self.state.lock() = state;
        }
        self.path = Some(path);
        Ok(self)
    }

    fn save(&self, state: &State) {
        let Some(path) = &self.path else { return };
        if let Err(e) = write_atomic(path, &serde_json::to_vec(state).expect("state serializes")) {
            tracing::error!(path = %path.display(), error = %e, "could not persist provider state");
        }
    }

    fn emit_lock(&self, account_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.emit_locks
            .lock()
            .entry(account_id.to_string())
            .or_default()
            .clone()
    }

    pub fn create_account_sync(
        &self,
        req: &CreateAccount,
    ) -> Result<ProviderAccount, ProviderError> {
        req.params
            .validate()
            .map_err(|e| ProviderError::BadRequest(e.to_string()))?;
        if req.driver_ref.trim().is_empty() {
            return Err(ProviderError::BadRequest("driver_ref is empty".into()));
        }
        let mut st = self.state.lock();
        if st
            .accounts
            .values()
            .any(|a| a.account.driver_ref == req.driver_ref)
        {
            return Err(ProviderError::Duplicate(req.driver_ref.clone()));
        }
        let account_id = account_id_for(&req.driver_ref, req.seed);
        let account = ProviderAccount {
            account_id: account_id.clone(),
            driver_ref: req.driver_ref.clone(),
            connected_at: req.params.date_span.end,
            generator_seed: req.seed,
        };
        let history = generate_history(&account_id, &req.params, req.seed);
        st.accounts.insert(
            account_id,
            AccountState {
                account: account.clone(),
                params: req.params.clone(),
                history,
                days_advanced: 0,
                removed: false,
                next_event_seq: 0,
            },
        );
        self.save(&st);
        Ok(account)
    }

    pub fn accounts(&self) -> Vec<ProviderAccount> {
        self.state
            .lock()
            .accounts
            .values()
            .map(|a| a.account.clone())
            .collect()
    }

    fn live<'a>(
        st: &'a mut State,
        account_id: &str,
    ) -> Result<&'a mut AccountState, ProviderError> {
        let acct = st
            .accounts
            .get_mut(account_id)
            .ok_or_else(|| ProviderError::NotFound(account_id.to_string()))?;
        if acct.removed {
            return Err(ProviderError::Removed(account_id.to_string()));
        }
        Ok(acct)
    }

    pub fn list_gigs_sync(
        &self,
        account_id: &str,
        cursor: Option<&str>,
        limit: usize,
    ) -> Result<GigPage, ProviderError> {
        if !(1..=MAX_PAGE_LIMIT).contains(&limit) {
            return Err(ProviderError::BadRequest(format!(
                "limit must be 1..={MAX_PAGE_LIMIT}"
            )));
        }
        let mut st = self.state.lock();
        let acct = Self::live(&mut st, account_id)?;
        let offset = match cursor {
            Some(c) if !c.is_empty() => decode_cursor(account_id, c)?,
            _ => 0,
        };
        if offset > acct.history.len() {
            return Err(ProviderError::BadRequest("invalid cursor".into()));
        }
        let end = (offset + limit).min(acct.history.len());
        Ok(GigPage {
            gigs: acct.history[offset..end].to_vec(),
            next_cursor: (end < acct.history.len()).then(|| encode_cursor(account_id, end)),
        })
    }

    /// Number of gigs the provider holds for an account.
    pub fn history_len(&self, account_id: &str) -> Option<usize> {
        self.state
            .lock()
            .accounts
            .get(account_id)
            .map(|a| a.history.len())
    }

    pub fn register_endpoint_sync(&self, url: &str) {
        let mut st = self.state.lock();
        if !st.endpoints.iter().any(|u| u == url) {
            st.endpoints.push(url.to_string());
            self.save(&st);
        }
    }

    pub fn dead_letters(&self) -> Vec<DeadLetter> {
        self.state.lock().dead_letters.clone()
    }

    /// Events emitted for `account_id` since this process started.
    pub fn events(&self, account_id: &str) -> Vec<WebhookEvent> {
        self.state
            .lock()
            .event_log
            .iter()
            .filter(|e| e.account_id == account_id)
            .cloned()
            .collect()
    }

    /// Digest of every account and its history.
    pub fn state_digest(&self) -> String {
        let st = self.state.lock();
        let mut b = DigestBuilder::new();
        for (id, a) in &st.accounts {
            b = b.part("account", id.as_bytes()).json("meta", &a.account);
            for r in &a.history {
                b = b.part("gig", r.source_payload_digest.as_bytes());
            }
            b = b.part("removed", &[a.removed as u8]);
        }
        b.finish()
    }

    fn build_events(
        &self,
        account_id: &str,
        schedule: Schedule,
    ) -> Result<(Vec<WebhookEvent>, Vec<String>), ProviderError> {
        let mut st = self.state.lock();
        if st.endpoints.is_empty() {
            return Err(ProviderError::NoEndpoint);
        }
        let acct = Self::live(&mut st, account_id)?;
        let events = match schedule {
            Schedule::Staged { batches } => {
                if batches == 0 {
                    return Err(ProviderError::BadRequest("batches must be positive".into()));
                }
                let mut events = vec![acct.next_event(EventType::AccountConnected, Vec::new())];
                let n = acct.history.len();
                if n > 0 {
                    let size = n.div_ceil(batches);
                    let chunks: Vec<Vec<RideActivity>> =
                        acct.history.chunks(size).map(|c| c.to_vec()).collect();
                    for chunk in chunks {
                        events.push(acct.next_event(EventType::GigsAdded, chunk));
                    }
                }
                events
            }
            Schedule::Daily { rides } => {
                acct.days_advanced += 1;
                let day = generate_day(
                    account_id,
                    &acct.params,
                    acct.account.generator_seed,
                    acct.days_advanced,
                    rides,
                );
                acct.history.extend(day.iter().cloned());
                vec![acct.next_event(EventType::GigsAdded, day)]
            }
        };
        let endpoints = st.endpoints.clone();
        st.event_log.extend(events.iter().cloned());
        self.save(&st);
        Ok((events, endpoints))
    }

    async fn deliver_all(&self, events: Vec<WebhookEvent>, endpoints: &[String]) -> EmissionReport {
        let mut report = EmissionReport {
            events: events.len(),
            ..Default::default()
        };
        for event in &events {
            for url in endpoints {
                match deliver(
                    self.transport.as_ref(),
                    &self.retry,
                    &self.secret,
                    url,
                    event,
                )
                .await
                {
                    Ok(_) => report.delivered += 1,
                    Err(dead) => {
                        report.dead_lettered += 1;
                        let mut st = self.state.lock();
                        st.dead_letters.push(dead);
                        self.save(&st);
                    }
                }
            }
        }
        report
    }

    pub async fn emit_events(
        &self,
        account_id: &str,
        schedule: Schedule,
    ) -> Result<EmissionReport, ProviderError> {
        let lock = self.emit_lock(account_id);
        let _guard = lock.lock().await;
        let (events, endpoints) = self.build_events(account_id, schedule)?;
        Ok(self.deliver_all(events, &endpoints).await)
    }

    /// Changes the tip on one gig (the fare is unchanged) and emits
    /// `gigs.updated` with the new record.
    pub async fn amend_tips(
        &self,
        account_id: &str,
        activity_id: &str,
        tips: Usd,
    ) -> Result<EmissionReport, ProviderError> {
        let lock = self.emit_lock(account_id);
        let _guard = lock.lock().await;
        let (event, endpoints) = {
            let mut st = self.state.lock();
            let endpoints = st.endpoints.clone();
            let acct = Self::live(&mut st, account_id)?;
            let gig = acct
                .history
                .iter_mut()
                .find(|g| g.activity_id == activity_id)
                .ok_or_else(|| ProviderError::NotFound(activity_id.to_string()))?;
            let fare = gig
                .fare_ex_tips()
                .ok_or_else(|| ProviderError::BadRequest("gig has no fare".into()))?;
            if tips.is_negative() {
                return Err(ProviderError::BadRequest(
                    "tips must not be negative".into(),
                ));
            }
            gig.tips_usd = Some(tips);
            gig.rider_price_usd = Some(fare + tips);
            let updated = gig.clone().seal();
            *gig = updated.clone();
            let event = acct.next_event(EventType::GigsUpdated, vec![updated]);
            st.event_log.push(event.clone());
            self.save(&st);
            (event, endpoints)
        };
        Ok(self.deliver_all(vec![event], &endpoints).await)
    }

    /// Disconnects the account and emits `account.removed`. Nothing is
    /// emitted for it afterwards.
    pub async fn remove_account(&self, account_id: &str) -> Result<EmissionReport, ProviderError> {
        let lock = self.emit_lock(account_id);
        let _guard = lock.lock().await;
        let (event, endpoints) = {
            let mut st = self.state.lock();
            let endpoints = st.endpoints.clone();
            let acct = Self::live(&mut st, account_id)?;
            let event = acct.next_event(EventType::AccountRemoved, Vec::new());
            acct.removed = true;
            st.event_log.push(event.clone());
            self.save(&st);
            (event, endpoints)
        };
        Ok(self.deliver_all(vec![event], &endpoints).await)
    }
}

fn write_atomic(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = path.with_extension("json.tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(tmp, path)
}

#[async_trait]
impl ProviderApi for MockProvider {
    async fn create_account(&self, req: &CreateAccount) -> Result<ProviderAccount, ProviderError> {
        self.create_account_sync(req)
    }

    async fn get_account(&self, account_id: &str) -> Result<ProviderAccount, ProviderError> {
        let mut st = self.state.lock();
        Self::live(&mut st, account_id).map(|a| a.account.clone())
    }

    async fn list_gigs(
        &self,
        account_id: &str,
        cursor: Option<&str>,
        limit: usize,
    ) -> Result<GigPage, ProviderError> {
        self.list_gigs_sync(account_id, cursor, limit)
    }

    async fn emit(
        &self,
        account_id: &str,
        schedule: Schedule,
    ) -> Result<EmissionReport, ProviderError> {
        self.emit_events(account_id, schedule).await
    }

    async fn register_endpoint(&self, url: &str) -> Result<(), ProviderError> {
        self.register_endpoint_sync(url);
        Ok(())
    }
}

#[async_trait]
impl<T: ProviderApi + ?Sized> ProviderApi for Arc<T> {
    async fn create_account(&self, req: &CreateAccount) -> Result<ProviderAccount, ProviderError> {
        (**self).create_account(req).await
    }

    async fn get_account(&self, account_id: &str) -> Result<ProviderAccount, ProviderError> {
        (**self).get_account(account_id).await
    }

    async fn list_gigs(
        &self,
        account_id: &str,
        cursor: Option<&str>,
        limit: usize,
    ) -> Result<GigPage, ProviderError> {
        (**self).list_gigs(account_id, cursor, limit).await
    }

    async fn emit(
        &self,
        account_id: &str,
        schedule: Schedule,
    ) -> Result<EmissionReport, ProviderError> {
        (**self).emit(account_id, schedule).await
    }

    async fn register_endpoint(&self, url: &str) -> Result<(), ProviderError> {
        (**self).register_endpoint(url).await
    }
}
