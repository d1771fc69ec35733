//! A stand-in for a third-party payroll-data provider: synthetic driver gig
//! histories, a paginated gig API, and signed webhook delivery.

pub mod api;
pub mod delivery;
pub mod event;
pub mod fee_model;
pub mod generator;
pub mod http;
pub mod mock;

pub use api::{
    CreateAccount, EmissionReport, GigPage, ProviderAccount, ProviderApi, ProviderError, Schedule,
};
pub use delivery::{DeadLetter, HttpTransport, RetryPolicy, WebhookTransport};
pub use event::{sign, verify, EventType, WebhookEvent, SIGNATURE_HEADER};
pub use fee_model::FeeModel;
pub use generator::{DateSpan, GeneratorParams};
pub use http::{router, HttpProvider};
pub use mock::MockProvider;
