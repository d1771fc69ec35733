//! Journaled in-memory datastore.
//!
//! Every mutation is a batch of [`Op`]s appended as one JSON line to
//! `journal.jsonl` before it is applied, so reopening the directory replays
//! to the same state. PII lives in its own table and is never copied into
//! activity rows, snapshots or exports.

mod types;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use chrono::{DateTime, Duration, Utc};
use farelens_core::classify::classify_airport;
use farelens_core::digest::{sha256_hex, DigestBuilder};
use farelens_core::filter::{Category, FilterSpec};
use farelens_core::snapshot::{AffiliationMeta, DriverMeta, Snapshot, SurveyAnswers};
use farelens_core::{ActivityStatus, ActivityType, RideActivity};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use types::*;

pub const JOURNAL_FILE: &str = "journal.jsonl";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StoreError {
    #[error("{0} not found")]
    NotFound(String),
    #[error("driver {0} has been deleted")]
    Gone(String),
    #[error("{0}")]
    Conflict(String),
    #[error("{0}")]
    Refused(String),
    #[error("{0}")]
    Invalid(String),
    #[error("journal write failed: {0}")]
    Io(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
enum Op {
    PutAffiliation(Affiliation),
    PutDriver(DriverProfile),
    PutToken(AccessToken),
    PutLink(ProviderLink),
    PutSync(SyncState),
    Upsert {
        driver_id: String,
        rows: Vec<RideActivity>,
    },
    MarkEvent {
        driver_id: String,
        event_id: String,
    },
    PutInvite(SurveyInvite),
    RemoveInvite {
        token_hash: String,
    },
    Submit {
        token_hash: String,
        response: SurveyResponse,
    },
    Audit(AuditEntry),
    Purge {
        driver_id: String,
        deleted_at: DateTime<Utc>,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct Commit {
    ops: Vec<Op>,
}

#[derive(Debug, Default)]
struct Tables {
    pii: BTreeMap<String, DriverProfile>,
    affiliations: BTreeMap<String, Affiliation>,
    /// driver → activity id → row
    activities: BTreeMap<String, BTreeMap<String, RideActivity>>,
    activity_owner: BTreeMap<String, String>,
    links: BTreeMap<String, ProviderLink>,
    accounts: BTreeMap<String, String>,
    sync: BTreeMap<String, SyncState>,
    invites: BTreeMap<String, SurveyInvite>,
    responses: BTreeMap<String, SurveyResponse>,
    tokens: BTreeMap<String, AccessToken>,
    tombstones: BTreeMap<String, Tombstone>,
    events: BTreeMap<String, BTreeSet<String>>,
    audit: Vec<AuditEntry>,
}

impl Tables {
    fn apply(&mut self, op: Op) {
        match op {
            Op::PutAffiliation(a) => {
                self.affiliations.insert(a.affiliation_id.clone(), a);
            }
            Op::PutDriver(p) => {
                self.pii.insert(p.driver_id.clone(), p);
            }
            Op::PutToken(t) => {
                self.tokens.insert(t.token_id.clone(), t);
            }
            Op::PutLink(l) => {
                self.accounts
                    .insert(l.account_id.clone(), l.driver_id.clone());
                self.links.insert(l.driver_id.clone(), l);
            }
            Op::PutSync(s) => {
                self.sync.insert(s.driver_id.clone(), s);
            }
            Op::Upsert { driver_id, rows } => {
                let table = self.activities.entry(driver_id.clone()).or_default();
                for row in rows {
                    self.activity_owner
                        .insert(row.activity_id.clone(), driver_id.clone());
                    table.insert(row.activity_id.clone(), row);
                }
            }
            Op::MarkEvent {
                driver_id,
                event_id,
            } => {
                self.events.entry(driver_id).or_default().insert(event_id);
            }
            Op::PutInvite(i) => {
                self.invites.insert(i.token_hash.clone(), i);
            }
            Op::RemoveInvite { token_hash } => {
                self.invites.remove(&token_hash);
            }
            Op::Submit {
                token_hash,
                response,
            } => {
                if let Some(invite) = self.invites.get_mut(&token_hash) {
                    invite.consumed = true;
                }
                self.responses.insert(response.driver_id.clone(), response);
            }
            Op::Audit(e) => self.audit.push(e),
            Op::Purge {
                driver_id,
                deleted_at,
            } => {
                let id = driver_id.as_str();
                self.pii.remove(id);
                if let Some(rows) = self.activities.remove(id) {
                    for aid in rows.keys() {
                        self.activity_owner.remove(aid);
                    }
                }
                if let Some(link) = self.links.remove(id) {
                    self.accounts.remove(&link.account_id);
                }
                self.sync.remove(id);
                self.invites.retain(|_, i| i.driver_id != id);
                self.responses.remove(id);
                self.tokens.retain(|_, t| t.scope.driver_id() != Some(id));
                self.events.remove(id);
                self.audit.retain(|e| !audit_mentions(e, id));
                self.tombstones.insert(
                    driver_id.clone(),
                    Tombstone {
                        driver_id,
                        deleted_at,
                    },
                );
            }
        }
    }

    fn receipt_for(&self, id: &str) -> DeletionReceipt {
        DeletionReceipt {
            driver_id: id.to_string(),
            deleted_at: None,
            pii: usize::from(self.pii.contains_key(id)),
            activities: self.activities.get(id).map_or(0, BTreeMap::len),
            surveys: usize::from(self.responses.contains_key(id)),
            sync: usize::from(self.sync.contains_key(id)),
            invites: self.invites.values().filter(|i| i.driver_id == id).count(),
            tokens: self
                .tokens
                .values()
                .filter(|t| t.scope.driver_id() == Some(id))
                .count(),
            links: usize::from(self.links.contains_key(id)),
            processed_events: self.events.get(id).map_or(0, BTreeSet::len),
            audit_entries: self.audit.iter().filter(|e| audit_mentions(e, id)).count(),
        }
    }

    fn rows(&self, driver_id: &str) -> impl Iterator<Item = &RideActivity> {
        self.activities
            .get(driver_id)
            .into_iter()
            .flat_map(|m| m.values())
    }
}

fn audit_mentions(e: &AuditEntry, id: &str) -> bool {
    e.actor == id || e.target_driver.as_deref() == Some(id)
}

/// Which driver a new enrollment belongs to organizationally.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AffiliationChoice {
    None,
    Existing {
        affiliation_id: String,
    },
    New {
        name: String,
        region_tag: Option<String>,
    },
}

#[derive(Debug, Clone)]
pub struct Enrollment {
    pub display_name: String,
    pub phone: String,
    pub affiliation: AffiliationChoice,
    pub consented: bool,
    pub consent_version: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenCheck {
    Valid(AccessToken),
    Expired,
    Unknown,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ActivityQuery {
    Driver(String),
    Filter(FilterSpec),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BatchOutcome {
    Duplicate,
    Applied { changed: usize },
}

/// `+` then 8 to 15 digits, no leading zero.
pub fn is_e164(phone: &str) -> bool {
    let Some(digits) = phone.strip_prefix('+') else {
        return false;
    };
    (8..=15).contains(&digits.len())
        && digits.bytes().all(|b| b.is_ascii_digit())
        && !digits.starts_with('0')
}

pub fn hash_secret(raw: &str) -> String {
    sha256_hex(raw.as_bytes())
}

fn random_hex(bytes: usize) -> String {
    let mut buf = vec![0u8; bytes];
    rand::Rng::fill(&mut rand::rngs::OsRng, buf.as_mut_slice());
    hex::encode(buf)
}

pub struct Datastore {
    tables: RwLock<Tables>,
    journal: Option<Mutex<File>>,
    dir: Option<PathBuf>,
    commits: AtomicU64,
    driver_locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
    airport_zips: BTreeSet<String>,
}

impl std::fmt::Debug for Datastore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Datastore")
            .field("dir", &self.dir)
            .finish_non_exhaustive()
    }
}

fn replay(path: &Path) -> Result<(Tables, u64), StoreError> {
    let mut tables = Tables::default();
    let mut valid_len = 0u64;
    if !path.exists() {
        return Ok((tables, valid_len));
    }
    let file = File::open(path).map_err(|e| StoreError::Io(e.to_string()))?;
    let mut reader = BufReader::new(file);
    let mut line = String::new();
    let mut lineno = 0;
    loop {
        line.clear();
        let n = reader
            .read_line(&mut line)
            .map_err(|e| StoreError::Io(e.to_string()))?;
        if n == 0 {
            break;
        }
        lineno += 1;
        if !line.ends_with('\n') {
            tracing::warn!(line = lineno, "dropping torn journal tail");
            break;
        }
        let commit: Commit = serde_json::from_str(line.trim_end()).map_err(|e| {
            StoreError::Io(format!("{} line {lineno} is corrupt: {e}", path.display()))
        })?;
        for op in commit.ops {
            tables.apply(op);
        }
        valid_len += n as u64;
    }
    Ok((tables, valid_len))
}

impl Datastore {
    pub fn in_memory() -> Self {
        Datastore {
            tables: RwLock::default(),
            journal: None,
            dir: None,
            commits: AtomicU64::new(0),
            driver_locks: Mutex::default(),
            airport_zips: farelens_core::pipeline::PipelineConfig::default().airport_zips,
        }
    }

    /// Opens or creates the store under `dir`, replaying its journal. A torn
    /// final line (crash mid-append) is dropped; any other bad line is fatal.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir).map_err(|e| StoreError::Io(format!("{}: {e}", dir.display())))?;
        let path = dir.join(JOURNAL_FILE);
        let (tables, valid_len) = replay(&path)?;
        let file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| StoreError::Io(e.to_string()))?;
        if file.metadata().map(|m| m.len()).unwrap_or(0) != valid_len {
            file.set_len(valid_len)
                .map_err(|e| StoreError::Io(e.to_string()))?;
        }
        Ok(Datastore {
            tables: RwLock::new(tables),
            journal: Some(Mutex::new(file)),
            dir: Some(dir.to_path_buf()),
            ..Datastore::in_memory()
        })
    }

    /// Replays the journal under `dir` without opening it for writing, so a
    /// server may keep appending meanwhile. Later writes stay in memory.
    pub fn read_only(dir: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = dir.as_ref().join(JOURNAL_FILE);
        if !path.exists() {
            return Err(StoreError::NotFound(path.display().to_string()));
        }
        let (tables, _) = replay(&path)?;
        Ok(Datastore {
            tables: RwLock::new(tables),
            ..Datastore::in_memory()
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Number of committed write batches since open.
    pub fn commit_count(&self) -> u64 {
        self.commits.load(Ordering::SeqCst)
    }

    /// Serializes all mutations of one driver's data. Hold it across any
    /// read-modify-write sequence that spans awaits.
    pub fn driver_lock(&self, driver_id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.driver_locks
            .lock()
            .entry(driver_id.to_string())
            .or_default()
            .clone()
    }

    fn transact<R>(
        &self,
        f: impl FnOnce(&Tables) -> Result<(Vec<Op>, R), StoreError>,
    ) -> Result<R, StoreError> {
        let mut tables = self.tables.write();
        let (ops, out) = f(&tables)?;
        if ops.is_empty() {
            return Ok(out);
        }
        if let Some(journal) = &self.journal {
            let mut line = serde_json::to_vec(&Commit { ops: ops.clone() })
                .map_err(|e| StoreError::Io(e.to_string()))?;
            line.push(b'\n');
            let mut file = journal.lock();
            file.write_all(&line)
                .and_then(|_| file.flush())
                .map_err(|e| StoreError::Io(e.to_string()))?;
        }
        for op in ops {
            tables.apply(op);
        }
        self.commits.fetch_add(1, Ordering::SeqCst);
        Ok(out)
    }

    // ---- affiliations and enrollment ----

    pub fn affiliations(&self) -> Vec<Affiliation> {
        self.tables.read().affiliations.values().cloned().collect()
    }

    pub fn affiliation_ids(&self) -> BTreeSet<String> {
        self.tables.read().affiliations.keys().cloned().collect()
    }

    pub fn create_affiliation(
        &self,
        name: &str,
        region_tag: Option<&str>,
    ) -> Result<Affiliation, StoreError> {
        self.transact(|t| {
            let a = new_affiliation(name, region_tag)?;
            if find_by_name(t, &a.name).is_some() {
                return Err(StoreError::Conflict(format!(
                    "affiliation {:?} already exists",
                    a.name
                )));
            }
            Ok((vec![Op::PutAffiliation(a.clone())], a))
        })
    }

    /// Creates the PII row, and the affiliation when a new name is given.
    /// A new name matching an existing one (ignoring case) joins that one.
    pub fn enroll(&self, e: Enrollment, now: DateTime<Utc>) -> Result<DriverProfile, StoreError> {
        if !e.consented {
            return Err(StoreError::Refused("enrollment requires consent".into()));
        }
        if e.consent_version.trim().is_empty() {
            return Err(StoreError::Invalid("consent_version is required".into()));
        }
        if !is_e164(&e.phone) {
            return Err(StoreError::Invalid(
                "phone must be in E.164 form, e.g. +13035550100".into(),
            ));
        }
        let name = e.display_name.trim();
        if name.is_empty() || name.chars().count() > 200 {
            return Err(StoreError::Invalid(
                "display_name must be 1 to 200 characters".into(),
            ));
        }
        self.transact(|t| {
            let mut ops = Vec::new();
            let affiliation_id = match &e.affiliation {
                AffiliationChoice::None => None,
                AffiliationChoice::Existing { affiliation_id } => {
                    if !t.affiliations.contains_key(affiliation_id) {
                        return Err(StoreError::Invalid(format!(
                            "unknown affiliation {affiliation_id:?}"
                        )));
                    }
                    Some(affiliation_id.clone())
                }
                AffiliationChoice::New { name, region_tag } => {
                    let a = new_affiliation(name, region_tag.as_deref())?;
                    match find_by_name(t, &a.name) {
                        Some(existing) => Some(existing.affiliation_id.clone()),
                        None => {
                            let id = a.affiliation_id.clone();
                            ops.push(Op::PutAffiliation(a));
                            Some(id)
                        }
                    }
                }
            };
            let profile = DriverProfile {
                driver_id: format!("drv_{}", random_hex(8)),
                display_name: name.to_string(),
                phone: e.phone.clone(),
                affiliation_id,
                consent: ConsentRecord {
                    consented: true,
                    consent_version: e.consent_version.clone(),
                    consented_at: now,
                },
                created_at: now,
            };
            ops.push(Op::PutDriver(profile.clone()));
            Ok((ops, profile))
        })
    }

    /// PII read. Only enrollment, survey delivery and the driver themself use it.
    pub fn profile(&self, driver_id: &str) -> Option<DriverProfile> {
        self.tables.read().pii.get(driver_id).cloned()
    }

    pub fn driver_exists(&self, driver_id: &str) -> bool {
        self.tables.read().pii.contains_key(driver_id)
    }

    pub fn drivers(&self) -> Vec<DriverListing> {
        let t = self.tables.read();
        t.pii
            .values()
            .map(|p| DriverListing {
                driver_id: p.driver_id.clone(),
                affiliation_id: p.affiliation_id.clone(),
                phase: t.sync.get(&p.driver_id).map(|s| s.phase),
                activities: t.activities.get(&p.driver_id).map_or(0, BTreeMap::len),
                survey_submitted: t.responses.contains_key(&p.driver_id),
            })
            .collect()
    }

    // ---- tokens ----

    /// Returns the raw bearer secret; only its hash is kept.
    pub fn issue_driver_token(
        &self,
        driver_id: &str,
        ttl: Duration,
        now: DateTime<Utc>,
    ) -> Result<String, StoreError> {
        let raw = format!("ftk_{}", random_hex(16));
        self.transact(|t| {
            if t.tombstones.contains_key(driver_id) {
                return Err(StoreError::Gone(driver_id.into()));
            }
            if !t.pii.contains_key(driver_id) {
                return Err(StoreError::NotFound(format!("driver {driver_id}")));
            }
            let token = AccessToken {
                token_id: hash_secret(&raw),
                scope: Scope::Driver {
                    driver_id: driver_id.into(),
                },
                issued_at: now,
                expires_at: now + ttl,
            };
            Ok((vec![Op::PutToken(token)], ()))
        })?;
        Ok(raw)
    }

    pub fn resolve_token(&self, raw: &str, now: DateTime<Utc>) -> TokenCheck {
        match self.tables.read().tokens.get(&hash_secret(raw)) {
            None => TokenCheck::Unknown,
            Some(t) if t.expires_at <= now => TokenCheck::Expired,
            Some(t) => TokenCheck::Valid(t.clone()),
        }
    }

    // ---- provider links and sync state ----

    pub fn is_tombstoned(&self, driver_id: &str) -> bool {
        self.tables.read().tombstones.contains_key(driver_id)
    }

    pub fn tombstone(&self, driver_id: &str) -> Option<Tombstone> {
        self.tables.read().tombstones.get(driver_id).cloned()
    }

    /// Binds one provider account to a driver and starts its sync state at
    /// `linked`. A driver may hold one account and an account one driver.
    pub fn link(
        &self,
        driver_id: &str,
        account_id: &str,
        now: DateTime<Utc>,
    ) -> Result<SyncState, StoreError> {
        self.transact(|t| {
            if t.tombstones.contains_key(driver_id) {
                return Err(StoreError::Gone(driver_id.into()));
            }
            if !t.pii.contains_key(driver_id) {
                return Err(StoreError::NotFound(format!("driver {driver_id}")));
            }
            if t.links.contains_key(driver_id) {
                return Err(StoreError::Conflict(format!(
                    "driver {driver_id} already has a linked account"
                )));
            }
            if let Some(owner) = t.accounts.get(account_id) {
                return Err(StoreError::Conflict(format!(
                    "account {account_id} is linked to {owner}"
                )));
            }
            let state = SyncState::linked(driver_id);
            let ops = vec![
                Op::PutLink(ProviderLink {
                    driver_id: driver_id.into(),
                    account_id: account_id.into(),
                    linked_at: now,
                }),
                Op::PutSync(state.clone()),
            ];
            Ok((ops, state))
        })
    }

    pub fn link_of(&self, driver_id: &str) -> Option<ProviderLink> {
        self.tables.read().links.get(driver_id).cloned()
    }

    pub fn driver_for_account(&self, account_id: &str) -> Option<String> {
        self.tables.read().accounts.get(account_id).cloned()
    }

    pub fn sync_state(&self, driver_id: &str) -> Option<SyncState> {
        self.tables.read().sync.get(driver_id).cloned()
    }

    pub fn sync_states(&self) -> Vec<SyncState> {
        self.tables.read().sync.values().cloned().collect()
    }

    /// Applies `f` to the driver's sync state, enforcing the phase graph and
    /// the one-way survey latch. Unchanged state writes nothing.
    pub fn update_sync(
        &self,
        driver_id: &str,
        f: impl FnOnce(&mut SyncState),
    ) -> Result<SyncState, StoreError> {
        self.transact(|t| {
            let current = t
                .sync
                .get(driver_id)
                .ok_or_else(|| StoreError::NotFound(format!("sync state for {driver_id}")))?;
            let mut next = current.clone();
            f(&mut next);
            check_sync_change(current, &next)?;
            let ops = if &next == current {
                vec![]
            } else {
                vec![Op::PutSync(next.clone())]
            };
            Ok((ops, next))
        })
    }

    // ---- activities ----

    /// Upserts a batch atomically: any malformed row rejects the batch.
    pub fn put_activities(
        &self,
        driver_id: &str,
        rows: Vec<RideActivity>,
    ) -> Result<usize, StoreError> {
        match self.ingest(driver_id, None, rows, |_| {})? {
            BatchOutcome::Applied { changed } => Ok(changed),
            BatchOutcome::Duplicate => Ok(0),
        }
    }

    /// Upserts rows, marks `event_id` processed and updates the sync state in
    /// one commit. Rows are keyed by activity id; a row is rewritten only when
    /// its payload digest changed. A seen `event_id` is a no-op.
    pub fn ingest(
        &self,
        driver_id: &str,
        event_id: Option<&str>,
        rows: Vec<RideActivity>,
        sync: impl FnOnce(&mut SyncState),
    ) -> Result<BatchOutcome, StoreError> {
        self.transact(|t| {
            if t.tombstones.contains_key(driver_id) {
                return Err(StoreError::Gone(driver_id.into()));
            }
            match t.pii.get(driver_id) {
                Some(p) if p.consent.consented => {}
                _ => {
                    return Err(StoreError::Refused(format!(
                        "no consent on file for {driver_id}"
                    )))
                }
            }
            if let Some(eid) = event_id {
                if t.events.get(driver_id).is_some_and(|s| s.contains(eid)) {
                    return Ok((vec![], BatchOutcome::Duplicate));
                }
            }
            let stored = t.activities.get(driver_id);
            let mut changed: BTreeMap<String, RideActivity> = BTreeMap::new();
            for row in rows {
                row.validate()
                    .map_err(|e| StoreError::Invalid(e.to_string()))?;
                let row = row
                    .verify_or_seal()
                    .map_err(|e| StoreError::Invalid(e.to_string()))?;
                if row.driver_id != driver_id {
                    return Err(StoreError::Invalid(format!(
                        "{}: belongs to {}, not {driver_id}",
                        row.activity_id, row.driver_id
                    )));
                }
                if let Some(owner) = t.activity_owner.get(&row.activity_id) {
                    if owner != driver_id {
                        return Err(StoreError::Invalid(format!(
                            "{}: activity id already held by another driver",
                            row.activity_id
                        )));
                    }
                }
                let same = stored
                    .and_then(|m| m.get(&row.activity_id))
                    .is_some_and(|old| old.source_payload_digest == row.source_payload_digest);
                if same {
                    changed.remove(&row.activity_id);
                } else {
                    changed.insert(row.activity_id.clone(), row);
                }
            }
            let n_changed = changed.len();
            let mut ops = Vec::new();
            if let Some(current) = t.sync.get(driver_id) {
                let known = stored.map_or(0, BTreeMap::len);
                let added = changed
                    .keys()
                    .filter(|id| !stored.is_some_and(|m| m.contains_key(*id)))
                    .count();
                let mut next = current.clone();
                sync(&mut next);
                next.activities_ingested = known + added;
                check_sync_change(current, &next)?;
                if &next != current {
                    ops.push(Op::PutSync(next));
                }
            }
            if !changed.is_empty() {
                ops.insert(
                    0,
                    Op::Upsert {
                        driver_id: driver_id.into(),
                        rows: changed.into_values().collect(),
                    },
                );
            }
            if let Some(eid) = event_id {
                ops.push(Op::MarkEvent {
                    driver_id: driver_id.into(),
                    event_id: eid.into(),
                });
            }
            Ok((ops, BatchOutcome::Applied { changed: n_changed }))
        })
    }

    /// Row-level access: a driver scope only ever sees its own rows. A driver
    /// asking for someone else's rows gets nothing and leaves an audit entry.
    pub fn get_activities(
        &self,
        scope: &Scope,
        query: &ActivityQuery,
        now: DateTime<Utc>,
    ) -> Vec<RideActivity> {
        match scope {
            Scope::Admin => {
                let t = self.tables.read();
                match query {
                    ActivityQuery::Driver(id) => t.rows(id).cloned().collect(),
                    ActivityQuery::Filter(f) => t
                        .activities
                        .iter()
                        .flat_map(|(d, rows)| rows.values().map(move |r| (d, r)))
                        .filter(|(d, r)| self.matches(&t, d, r, f))
                        .map(|(_, r)| r.clone())
                        .collect(),
                }
            }
            Scope::Driver { driver_id } => match query {
                ActivityQuery::Driver(id) if id != driver_id => {
                    let entry = AuditEntry {
                        at: now,
                        actor: driver_id.clone(),
                        action: "denied_cross_driver_read".into(),
                        target_driver: Some(id.clone()),
                    };
                    if let Err(e) = self.transact(|_| Ok((vec![Op::Audit(entry)], ()))) {
                        tracing::error!(error = %e, "audit write failed");
                    }
                    Vec::new()
                }
                ActivityQuery::Driver(_) => self.tables.read().rows(driver_id).cloned().collect(),
                ActivityQuery::Filter(f) => {
                    let t = self.tables.read();
                    t.rows(driver_id)
                        .filter(|r| self.matches(&t, driver_id, r, f))
                        .cloned()
                        .collect()
                }
            },
        }
    }

    fn matches(&self, t: &Tables, driver_id: &str, r: &RideActivity, f: &FilterSpec) -> bool {
        if let Some(ids) = &f.affiliation_ids {
            let aff = t.pii.get(driver_id).and_then(|p| p.affiliation_id.as_ref());
            if !aff.is_some_and(|a| ids.contains(a)) {
                return false;
            }
        }
        if let Some(range) = &f.date_range {
            if !r.start_time.is_some_and(|s| range.contains(s)) {
                return false;
            }
        }
        if let Some(cats) = &f.categories {
            let hit = cats.iter().any(|c| match c {
                Category::Surge => r.surge_flag,
                Category::Airport => classify_airport(r, &self.airport_zips),
            });
            if !hit {
                return false;
            }
        }
        true
    }

    pub fn activity_count(&self, driver_id: &str) -> usize {
        self.tables
            .read()
            .activities
            .get(driver_id)
            .map_or(0, BTreeMap::len)
    }

    pub fn completed_rideshare_count(&self, driver_id: &str) -> usize {
        self.tables
            .read()
            .rows(driver_id)
            .filter(|r| {
                r.activity_type == ActivityType::Rideshare && r.status == ActivityStatus::Completed
            })
            .count()
    }

    pub fn processed_event_count(&self, driver_id: &str) -> usize {
        self.tables
            .read()
            .events
            .get(driver_id)
            .map_or(0, BTreeSet::len)
    }

    // ---- surveys ----

    pub fn create_invite(
        &self,
        driver_id: &str,
        token_hash: &str,
        now: DateTime<Utc>,
    ) -> Result<SurveyInvite, StoreError> {
        self.transact(|t| {
            if t.tombstones.contains_key(driver_id) {
                return Err(StoreError::Gone(driver_id.into()));
            }
            if !t.pii.contains_key(driver_id) {
                return Err(StoreError::NotFound(format!("driver {driver_id}")));
            }
            if t.invites.values().any(|i| i.driver_id == driver_id) {
                return Err(StoreError::Conflict(format!(
                    "driver {driver_id} already has an invite"
                )));
            }
            let invite = SurveyInvite {
                token_hash: token_hash.into(),
                driver_id: driver_id.into(),
                issued_at: now,
                consumed: false,
            };
            Ok((vec![Op::PutInvite(invite.clone())], invite))
        })
    }

    /// Undoes an invite whose message could not be sent.
    pub fn revoke_invite(&self, token_hash: &str) -> Result<(), StoreError> {
        self.transact(|t| {
            let ops = match t.invites.get(token_hash) {
                Some(i) if !i.consumed => vec![Op::RemoveInvite {
                    token_hash: token_hash.into(),
                }],
                _ => vec![],
            };
            Ok((ops, ()))
        })
    }

    pub fn invite_by_hash(&self, token_hash: &str) -> Option<SurveyInvite> {
        self.tables.read().invites.get(token_hash).cloned()
    }

    pub fn invite_for_driver(&self, driver_id: &str) -> Option<SurveyInvite> {
        self.tables
            .read()
            .invites
            .values()
            .find(|i| i.driver_id == driver_id)
            .cloned()
    }

    /// Stores the response and consumes the invite in one step. Exactly one of
    /// any number of racing submissions succeeds.
    pub fn submit_response(
        &self,
        token_hash: &str,
        build: impl FnOnce(&str) -> SurveyResponse,
    ) -> Result<SurveyResponse, StoreError> {
        self.transact(|t| {
            let invite = t
                .invites
                .get(token_hash)
                .ok_or_else(|| StoreError::NotFound("survey token".into()))?;
            if invite.consumed || t.responses.contains_key(&invite.driver_id) {
                return Err(StoreError::Conflict("survey already submitted".into()));
            }
            if t.tombstones.contains_key(&invite.driver_id) {
                return Err(StoreError::Gone(invite.driver_id.clone()));
            }
            let response = build(&invite.driver_id);
            let ops = vec![Op::Submit {
                token_hash: token_hash.into(),
                response: response.clone(),
            }];
            Ok((ops, response))
        })
    }

    pub fn response_of(&self, driver_id: &str) -> Option<SurveyResponse> {
        self.tables.read().responses.get(driver_id).cloned()
    }

    pub fn activities_of(&self, driver_id: &str) -> Vec<RideActivity> {
        self.tables.read().rows(driver_id).cloned().collect()
    }

    // ---- deletion ----

    /// Synchronously purges every row tied to the driver and leaves a
    /// tombstone. Deleting an already deleted driver returns a zero receipt.
    pub async fn delete_driver(
        &self,
        driver_id: &str,
        now: DateTime<Utc>,
    ) -> Result<DeletionReceipt, StoreError> {
        let lock = self.driver_lock(driver_id);
        let _guard = lock.lock().await;
        self.transact(|t| {
            if let Some(stone) = t.tombstones.get(driver_id) {
                let mut receipt = t.receipt_for(driver_id);
                receipt.deleted_at = Some(stone.deleted_at);
                return Ok((vec![], receipt));
            }
            if !t.pii.contains_key(driver_id) {
                return Err(StoreError::NotFound(format!("driver {driver_id}")));
            }
            let mut receipt = t.receipt_for(driver_id);
            receipt.deleted_at = Some(now);
            Ok((
                vec![Op::Purge {
                    driver_id: driver_id.into(),
                    deleted_at: now,
                }],
                receipt,
            ))
        })
    }

    /// Rows still tied to the driver in every store, tombstone aside.
    pub fn scan_driver(&self, driver_id: &str) -> DeletionReceipt {
        self.tables.read().receipt_for(driver_id)
    }

    pub fn audit_log(&self) -> Vec<AuditEntry> {
        self.tables.read().audit.clone()
    }

    // ---- exports ----

    /// The pipeline's input. Carries opaque ids and numeric answers only.
    pub fn snapshot(&self) -> Snapshot {
        let t = self.tables.read();
        Snapshot {
            activities: t
                .activities
                .values()
                .flat_map(|m| m.values().cloned())
                .collect(),
            drivers: t
                .pii
                .values()
                .map(|p| DriverMeta {
                    driver_id: p.driver_id.clone(),
                    affiliation_id: p.affiliation_id.clone(),
                })
                .collect(),
            affiliations: t
                .affiliations
                .values()
                .map(|a| AffiliationMeta {
                    affiliation_id: a.affiliation_id.clone(),
                    name: a.name.clone(),
                    region_tag: a.region_tag.clone(),
                })
                .collect(),
            survey_responses: t
                .responses
                .values()
                .map(|r| SurveyAnswers {
                    driver_id: r.driver_id.clone(),
                    estimated_take_rate_pct: r.estimated_take_rate_pct,
                    fair_take_rate_pct: r.fair_take_rate_pct,
                })
                .collect(),
        }
        .canonicalize()
    }

    fn export_rows(&self) -> Vec<ExportRow> {
        let t = self.tables.read();
        let mut rows: Vec<ExportRow> = t
            .activities
            .iter()
            .flat_map(|(d, m)| {
                let aff = t.pii.get(d).and_then(|p| p.affiliation_id.clone());
                m.values().map(move |a| ExportRow {
                    affiliation_id: aff.clone(),
                    activity: a.clone(),
                })
            })
            .collect();
        rows.sort_by(|a, b| a.activity.activity_id.cmp(&b.activity.activity_id));
        rows
    }

    /// One analytics row per line.
    pub fn export_jsonl(&self) -> String {
        let mut out = String::new();
        for row in self.export_rows() {
            out.push_str(&serde_json::to_string(&row).expect("row serializes"));
            out.push('\n');
        }
        out
    }

    pub fn export_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(EXPORT_COLUMNS).expect("in-memory write");
        let money = |v: Option<farelens_core::Usd>| v.map(|u| u.to_string()).unwrap_or_default();
        let num = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let time = |v: Option<DateTime<Utc>>| v.map(|x| x.to_rfc3339()).unwrap_or_default();
        for ExportRow {
            affiliation_id,
            activity: a,
        } in self.export_rows()
        {
            w.write_record([
                a.activity_id.clone(),
                a.driver_id.clone(),
                affiliation_id.unwrap_or_default(),
                serde_json::to_value(a.activity_type)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                serde_json::to_value(a.status)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                time(a.start_time),
                time(a.end_time),
                num(a.distance_miles),
                num(a.duration_minutes),
                money(a.rider_price_usd),
                money(a.platform_fees_usd),
                money(a.base_pay_usd),
                money(a.tips_usd),
                money(a.bonus_usd),
                a.surge_flag.to_string(),
                a.start_zip.clone().unwrap_or_default(),
                a.end_zip.clone().unwrap_or_default(),
            ])
            .expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("flush")).expect("utf-8")
    }

    /// Content digest of the stored state, blind to timestamps, secrets and
    /// bookkeeping such as processed event ids, so equivalent histories of
    /// writes digest equally.
    pub fn state_digest(&self) -> String {
        let t = self.tables.read();
        let activities: BTreeMap<&String, BTreeMap<&String, &String>> = t
            .activities
            .iter()
            .map(|(d, m)| {
                (
                    d,
                    m.iter()
                        .map(|(id, r)| (id, &r.source_payload_digest))
                        .collect(),
                )
            })
            .collect();
        let sync: BTreeMap<&String, (SyncPhase, usize, bool, bool)> = t
            .sync
            .iter()
            .map(|(d, s)| {
                (
                    d,
                    (
                        s.phase,
                        s.activities_ingested,
                        s.survey_invited,
                        s.tombstoned,
                    ),
                )
            })
            .collect();
        let invites: BTreeMap<&String, bool> = t
            .invites
            .values()
            .map(|i| (&i.driver_id, i.consumed))
            .collect();
        let responses: BTreeMap<&String, (f64, f64, &String)> = t
            .responses
            .iter()
            .map(|(d, r)| {
                (
                    d,
                    (
                        r.estimated_take_rate_pct,
                        r.fair_take_rate_pct,
                        &r.factors_text,
                    ),
                )
            })
            .collect();
        let drivers: BTreeMap<&String, &Option<String>> =
            t.pii.iter().map(|(d, p)| (d, &p.affiliation_id)).collect();
        let links: BTreeMap<&String, &String> =
            t.links.iter().map(|(d, l)| (d, &l.account_id)).collect();
        let tombstones: BTreeSet<&String> = t.tombstones.keys().collect();
        DigestBuilder::new()
            .json("activities", &activities)
            .json("sync", &sync)
            .json("invites", &invites)
            .json("responses", &responses)
            .json("drivers", &drivers)
            .json("affiliations", &t.affiliations)
            .json("links", &links)
            .json("tombstones", &tombstones)
            .finish()
    }
}

pub const EXPORT_COLUMNS: [&str; 17] = [
    "activity_id",
    "driver_id",
    "affiliation_id",
    "activity_type",
    "status",
    "start_time",
    "end_time",
    "Distance (miles)",
    "Duration (minutes)",
    "Ride Price ($)",
    "Fees ($)",
    "Base Pay ($)",
    "Tips ($)",
    "Bonus ($)",
    "surge_flag",
    "start_zip",
    "end_zip",
];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExportRow {
    pub affiliation_id: Option<String>,
    #[serde(flatten)]
    pub activity: RideActivity,
}

fn new_affiliation(name: &str, region_tag: Option<&str>) -> Result<Affiliation, StoreError> {
    let name = name.trim();
    if name.is_empty() || name.chars().count() > 120 {
        return Err(StoreError::Invalid(
            "affiliation name must be 1 to 120 characters".into(),
        ));
    }
    let key = name.to_lowercase();
    Ok(Affiliation {
        affiliation_id: format!("aff_{}", &sha256_hex(key.as_bytes())[..12]),
        name: name.to_string(),
        region_tag: region_tag
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(String::from),
    })
}

fn find_by_name<'a>(t: &'a Tables, name: &str) -> Option<&'a Affiliation> {
    let key = name.trim().to_lowercase();
    t.affiliations
        .values()
        .find(|a| a.name.to_lowercase() == key)
}

fn check_sync_change(current: &SyncState, next: &SyncState) -> Result<(), StoreError> {
    if next.driver_id != current.driver_id || next.tombstoned != current.tombstoned {
        return Err(StoreError::Invalid(
            "sync identity fields are immutable".into(),
        ));
    }
    if !current.phase.can_become(next.phase) {
        return Err(StoreError::Invalid(format!(
            "phase cannot move from {} to {}",
            current.phase.as_str(),
            next.phase.as_str()
        )));
    }
    if current.survey_invited && !next.survey_invited {
        return Err(StoreError::Invalid(
            "survey invite latch cannot be cleared".into(),
        ));
    }
    Ok(())
}
