//! HTTP API for plan review sessions and live runs.
//!
//! A session plans from a demonstration transcript, pausing at each
//! generated artifact until a verdict is posted, then executes the approved
//! plan in the simulated workcell. Trace events are kept in a bounded log
//! per session and delivered by long polling or server-sent events.

mod error;
mod http;
mod session;

use std::net::SocketAddr;
use std::sync::Arc;

pub use error::ApiError;
pub use http::{catalog, router, API_VERSION};
pub use session::{
    CreateSession, DetachOption, DisturbanceOptions, DisturbanceRequest, EventPage, MetricsReport,
    Phase, Service, ServiceConfig, SessionStatus, StreamMessage,
};

/// Serves the API on `addr` until the process ends.
pub async fn serve(addr: SocketAddr, cfg: ServiceConfig) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(Arc::new(Service::new(cfg)))).await
}
