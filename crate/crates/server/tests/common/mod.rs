#![allow(dead_code)]

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use async_trait::async_trait;
use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use chrono::Utc;
use farelens_provider::{
    sign, CreateAccount, EmissionReport, GeneratorParams, GigPage, MockProvider, ProviderAccount,
    ProviderApi, ProviderError, Schedule, WebhookEvent, WebhookTransport,
};
use farelens_server::store::{AffiliationChoice, Enrollment};
use farelens_server::survey::sms::MemorySms;
use farelens_server::{router, Datastore, ServerConfig, Services};
use parking_lot::Mutex;
use serde_json::Value;
use tower::ServiceExt;

pub const ADMIN: &str = "admin-key-0123456789";
pub const SECRET: &str = "whsec-test";

/// Accepts every delivery and keeps the events.
#[derive(Default)]
pub struct Capture {
    pub events: Mutex<Vec<WebhookEvent>>,
}

#[async_trait]
impl WebhookTransport for Capture {
    async fn post(&self, _url: &str, body: Vec<u8>, _sig: String) -> Result<(), String> {
        self.events
            .lock()
            .push(serde_json::from_slice(&body).unwrap());
        Ok(())
    }
}

/// Wraps the mock to inject outages: `fail_after` successful `list_gigs`
/// calls, or always for accounts in `down`.
pub struct Faulty {
    pub inner: Arc<MockProvider>,
    pub calls_left: AtomicUsize,
    pub down: Mutex<BTreeSet<String>>,
}

impl Faulty {
    pub fn new(inner: Arc<MockProvider>) -> Self {
        Faulty {
            inner,
            calls_left: AtomicUsize::new(usize::MAX),
            down: Mutex::default(),
        }
    }

    pub fn fail_after(&self, n: usize) {
        self.calls_left.store(n, Ordering::SeqCst);
    }

    pub fn heal(&self) {
        self.calls_left.store(usize::MAX, Ordering::SeqCst);
        self.down.lock().clear();
    }
}

#[async_trait]
impl ProviderApi for Faulty {
    async fn create_account(&self, req: &CreateAccount) -> Result<ProviderAccount, ProviderError> {
        self.inner.create_account(req).await
    }
    async fn get_account(&self, id: &str) -> Result<ProviderAccount, ProviderError> {
        self.inner.get_account(id).await
    }
    async fn list_gigs(
        &self,
        id: &str,
        cursor: Option<&str>,
        limit: usize,
    ) -> Result<GigPage, ProviderError> {
        if self.down.lock().contains(id) {
            return Err(ProviderError::Unavailable("injected outage".into()));
        }
        let left = self.calls_left.load(Ordering::SeqCst);
        if left == 0 {
            return Err(ProviderError::Unavailable("injected outage".into()));
        }
        if left != usize::MAX {
            self.calls_left.store(left - 1, Ordering::SeqCst);
        }
        self.inner.list_gigs(id, cursor, limit).await
    }
    async fn emit(&self, id: &str, schedule: Schedule) -> Result<EmissionReport, ProviderError> {
        self.inner.emit(id, schedule).await
    }
    async fn register_endpoint(&self, url: &str) -> Result<(), ProviderError> {
        self.inner.register_endpoint(url).await
    }
}

pub struct Harness {
    pub services: Arc<Services>,
    pub store: Arc<Datastore>,
    pub mock: Arc<MockProvider>,
    pub faulty: Arc<Faulty>,
    pub capture: Arc<Capture>,
    pub sms: Arc<MemorySms>,
}

pub fn harness() -> Harness {
    harness_with(ServerConfig::ephemeral(ADMIN, SECRET))
}

pub fn harness_with(config: ServerConfig) -> Harness {
    let capture = Arc::new(Capture::default());
    let mock = Arc::new(MockProvider::new(SECRET).with_transport(capture.clone()));
    mock.register_endpoint_sync("http://consumer/webhooks/provider");
    let faulty = Arc::new(Faulty::new(mock.clone()));
    let sms = Arc::new(MemorySms::default());
    let store = Arc::new(match &config.data_dir {
        Some(dir) => Datastore::open(dir).unwrap(),
        None => Datastore::in_memory(),
    });
    let services = Services::new(config, store.clone(), faulty.clone(), sms.clone());
    Harness {
        services,
        store,
        mock,
        faulty,
        capture,
        sms,
    }
}

impl Harness {
    pub fn app(&self) -> Router {
        router(self.services.clone())
    }

    pub fn enroll(&self, name: &str, affiliation: AffiliationChoice) -> String {
        self.store
            .enroll(
                Enrollment {
                    display_name: name.into(),
                    phone: "+13035550100".into(),
                    affiliation,
                    consented: true,
                    consent_version: "v1".into(),
                },
                Utc::now(),
            )
            .unwrap()
            .driver_id
    }

    pub fn token(&self, driver_id: &str) -> String {
        self.store
            .issue_driver_token(driver_id, chrono::Duration::days(1), Utc::now())
            .unwrap()
    }

    /// Creates a provider account with `n` rides and links it.
    pub fn link(&self, driver_id: &str, n: usize, seed: u64) -> String {
        self.link_with(
            driver_id,
            GeneratorParams {
                n_rides: n,
                ..Default::default()
            },
            seed,
        )
    }

    pub fn link_with(&self, driver_id: &str, params: GeneratorParams, seed: u64) -> String {
        let acct = self
            .mock
            .create_account_sync(&CreateAccount {
                driver_ref: driver_id.into(),
                seed,
                params,
            })
            .unwrap()
            .account_id;
        self.store.link(driver_id, &acct, Utc::now()).unwrap();
        acct
    }

    /// Has the provider emit events and returns them, without delivering to us.
    pub async fn emitted(&self, account_id: &str, schedule: Schedule) -> Vec<WebhookEvent> {
        self.capture.events.lock().clear();
        self.mock.emit_events(account_id, schedule).await.unwrap();
        std::mem::take(&mut *self.capture.events.lock())
    }
}

pub fn signed(event: &WebhookEvent) -> (Vec<u8>, String) {
    let body = event.body();
    let sig = sign(SECRET.as_bytes(), &body);
    (body, sig)
}

pub async fn call(
    app: &Router,
    method: Method,
    uri: &str,
    token: Option<&str>,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let mut req = Request::builder().method(method).uri(uri);
    if let Some(t) = token {
        req = req.header("authorization", format!("Bearer {t}"));
    }
    let req = match body {
        Some(v) => req
            .header("content-type", "application/json")
            .body(Body::from(v.to_string())),
        None => req.body(Body::empty()),
    }
    .unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    let value = serde_json::from_slice(&bytes)
        .unwrap_or_else(|_| Value::String(String::from_utf8_lossy(&bytes).into()));
    (status, value)
}

pub async fn raw_call(app: &Router, req: Request<Body>) -> (StatusCode, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = axum::body::to_bytes(resp.into_body(), usize::MAX)
        .await
        .unwrap();
    (status, bytes.to_vec())
}
