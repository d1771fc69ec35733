//! The farelens service: isolated datastore, provider webhook ingestion,
//! survey delivery and the JSON HTTP API.

pub mod api;
pub mod config;
pub mod ingest;
pub mod store;
pub mod survey;

pub use api::{router, Services};
pub use config::{ServerConfig, SmsAdapter};
pub use ingest::{Ack, IngestConfig, IngestError, Ingestor, SyncDelta};
pub use store::{Datastore, DeletionReceipt, StoreError, SyncPhase, SyncState};
pub use survey::{Answers, PersonalSummary, SurveyDefinition, SurveyError, SurveyService};
