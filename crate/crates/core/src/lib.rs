//! Ride-activity model and the take-rate analysis pipeline.
//!
//! Everything here is synchronous and free of I/O except the bundle cache and
//! report writer, so the same code runs in the API server, the CLI and tests.

pub mod activity;
pub mod classify;
pub mod clean;
pub mod compare;
pub mod digest;
pub mod filter;
pub mod money;
pub mod perception;
pub mod pipeline;
pub mod report;
pub mod series;
pub mod snapshot;
pub mod stats;
pub mod summary;
pub mod take_rate;

pub use activity::{ActivityStatus, ActivityType, RideActivity};
pub use money::Usd;
pub use take_rate::TakeRate;
