//! Pilot-facing runtime: sessions that bind a pipeline to a live simulator,
//! served over HTTP with a server-sent telemetry stream.

pub mod api;
pub mod config;
pub mod live;
pub mod session;

pub use api::{router, AppState};
pub use config::{BackendChoice, ServiceConfig};
pub use session::{PlanView, Session, SessionEvent, SessionOptions, SubmitError};
