//! HTTP boundary. Bodies are JSON; errors are `{code, message}`.
//!
//! | caller        | public | `/drivers/:id/*` | `/me/*` | `/admin/*` |
//! |---------------|--------|------------------|---------|------------|
//! | no token      | ok     | 401              | 401     | 401        |
//! | driver (self) | ok     | ok               | ok      | 403        |
//! | other driver  | ok     | 404              | own data| 403        |
//! | admin key     | ok     | ok               | 403     | ok         |

mod admin;
mod auth;
mod driver;
mod error;
mod query;

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::Arc;

use axum::routing::{delete, get, post};
use axum::Router;
use farelens_core::pipeline::PipelineConfig;
use farelens_core::report::Report;
use farelens_provider::ProviderApi;
use parking_lot::Mutex;

pub use auth::Principal;
pub use error::{ApiError, ErrorBody};
pub use query::{Page, DEFAULT_PAGE_LIMIT, MAX_PAGE_LIMIT};

use crate::config::{ServerConfig, SmsAdapter};
use crate::ingest::{IngestConfig, Ingestor};
use crate::store::{Datastore, StoreError};
use crate::survey::sms::{ConsoleSms, SmsSender, TranscriptSms};
use crate::survey::SurveyService;

pub(crate) enum ReportJob {
    Pending,
    Ready(Arc<Report>),
    Failed(String),
}

/// Everything a request handler can reach.
pub struct Services {
    pub config: ServerConfig,
    pub store: Arc<Datastore>,
    pub provider: Arc<dyn ProviderApi>,
    pub surveys: Arc<SurveyService>,
    pub ingestor: Arc<Ingestor>,
    pub pipeline_config: PipelineConfig,
    pub(crate) reports: Mutex<HashMap<String, ReportJob>>,
}

impl Services {
    pub fn new(
        config: ServerConfig,
        store: Arc<Datastore>,
        provider: Arc<dyn ProviderApi>,
        sms: Arc<dyn SmsSender>,
    ) -> Arc<Self> {
        let surveys = Arc::new(SurveyService::new(store.clone(), sms, &config.base_url));
        let ingestor = Arc::new(Ingestor::new(
            store.clone(),
            provider.clone(),
            surveys.clone(),
            config.webhook_secret.clone(),
            IngestConfig {
                survey_threshold: config.survey_threshold,
                ..IngestConfig::default()
            },
        ));
        Arc::new(Services {
            config,
            store,
            provider,
            surveys,
            ingestor,
            pipeline_config: PipelineConfig::default(),
            reports: Mutex::default(),
        })
    }

    /// Opens the datastore under `DATA_DIR` (or in memory) and the
    /// configured SMS adapter.
    pub fn open(
        config: ServerConfig,
        provider: Arc<dyn ProviderApi>,
    ) -> Result<Arc<Self>, StoreError> {
        let store = match &config.data_dir {
            Some(dir) => Datastore::open(dir)?,
            None => Datastore::in_memory(),
        };
        let sms: Arc<dyn SmsSender> = match (config.sms, config.transcript_path()) {
            (SmsAdapter::Transcript, Some(path)) => Arc::new(TranscriptSms::new(path)),
            _ => Arc::new(ConsoleSms),
        };
        Ok(Self::new(config, Arc::new(store), provider, sms))
    }

    pub(crate) fn bundle_dir(&self) -> Option<PathBuf> {
        self.config.data_dir.as_ref().map(|d| d.join("bundles"))
    }

    pub(crate) fn report_dir(&self, report_id: &str) -> Option<PathBuf> {
        self.config
            .data_dir
            .as_ref()
            .map(|d| d.join("reports").join(report_id))
    }
}

pub fn router(services: Arc<Services>) -> Router {
    Router::new()
        .route("/health", get(driver::health))
        .route("/affiliations", get(driver::list_affiliations))
        .route("/drivers", post(driver::enroll))
        .route("/drivers/:id/status", get(driver::status))
        .route("/drivers/:id/link", post(driver::link))
        .route("/webhooks/provider", post(driver::webhook))
        .route(
            "/survey/:token",
            get(driver::fetch_survey).post(driver::submit_survey),
        )
        .route("/me", get(driver::me))
        .route("/me/activities", get(driver::my_activities))
        .route("/me/summary", get(driver::my_summary))
        .route("/me/delete", post(driver::delete_me))
        .route("/admin/affiliations", post(admin::create_affiliation))
        .route("/admin/drivers", get(admin::list_drivers))
        .route("/admin/drivers/:id", delete(admin::delete_driver))
        .route("/admin/activities", get(admin::activities))
        .route("/admin/aggregates", get(admin::aggregates))
        .route("/admin/reports", post(admin::create_report))
        .route("/admin/reports/:id", get(admin::get_report))
        .route("/admin/snapshot", get(admin::snapshot))
        .route("/admin/sync", post(admin::sync))
        .route("/admin/refresh", post(admin::refresh))
        .route("/admin/audit", get(admin::audit))
        .route("/admin/export/activities.jsonl", get(admin::export_jsonl))
        .route("/admin/export/activities.csv", get(admin::export_csv))
        .with_state(services)
}
