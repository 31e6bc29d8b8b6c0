//! HTTP service for answering a run's pairwise queries by hand.
//!
//! All endpoints live under `/api/v1`. A client uploads a dataset and an
//! ensemble (or names files on the server), opens a session, then loops:
//! fetch the pending query, show both units' waveforms, post `same` or
//! `different`. Every answer is appended to the session's log on disk
//! before it is acknowledged, and the session is rebuilt from that log on
//! restart.

mod api;
pub mod session;
pub mod store;

use std::net::SocketAddr;
use std::path::Path;
use std::sync::Arc;

pub use api::{router, AppState};
pub use store::Store;

/// Serves the API on `addr` with artifacts and sessions under `data_dir`.
pub async fn serve(addr: SocketAddr, data_dir: &Path) -> std::io::Result<()> {
    let store = Store::open(data_dir).map_err(std::io::Error::other)?;
    let app = router(Arc::new(AppState::new(store)));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    eprintln!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, app).await
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/service.md")]
    mod service {}
}
