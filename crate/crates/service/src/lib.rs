//! Rating-study HTTP service.
//!
//! Sessions present every manifest image once in a seeded random order.
//! Ratings are appended to a CSV log in the ratings schema and flushed to
//! disk before the request is acknowledged, so the log can be fed straight
//! into MOS computation. Session creations go to a JSON-lines journal
//! beside the log (`<log>.sessions`); both files are replayed on start.

mod api;
mod store;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::Arc;

use esiqa_core::data::{DataError, DatasetManifest};
use esiqa_core::subjective::SubjectiveError;

pub use api::{router, CreateSession, CurrentImage, RatingAck, SessionView, SubmitRating};
pub use store::{journal_path, Session, Store, SubmitError};

#[derive(Debug, thiserror::Error)]
pub enum ServiceError {
    #[error(transparent)]
    Manifest(#[from] DataError),
    #[error("ratings log: {0}")]
    Log(#[from] SubjectiveError),
    #[error("session journal line {line}: {msg}")]
    Journal { line: usize, msg: String },
    #[error("log replay: {0}")]
    Replay(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    pub manifest: PathBuf,
    pub ratings_log: PathBuf,
    pub port: u16,
    pub seed: u64,
}

/// Loads the manifest, replays the log and journal, and returns the shared store.
pub fn open_store(config: &ServiceConfig) -> Result<Arc<Store>, ServiceError> {
    let manifest = DatasetManifest::load(&config.manifest)?;
    Ok(Arc::new(Store::open(manifest, &config.ratings_log, config.seed)?))
}

/// Serves until the process is stopped.
pub async fn run(config: ServiceConfig) -> Result<(), ServiceError> {
    let store = open_store(&config)?;
    let addr = SocketAddr::from(([0, 0, 0, 0], config.port));
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("serving {} images on {}", store.image_count(), listener.local_addr()?);
    axum::serve(listener, router(store)).await?;
    Ok(())
}

/// Runs [`run`] on a fresh multi-threaded runtime until the server stops.
pub fn run_blocking(config: ServiceConfig) -> Result<(), ServiceError> {
    tokio::runtime::Builder::new_multi_thread().enable_all().build()?.block_on(run(config))
}

/// A server on an ephemeral local port, driven by its own runtime.
/// Dropping it stops the server abruptly, like a killed process.
pub struct BackgroundServer {
    runtime: Option<tokio::runtime::Runtime>,
    addr: SocketAddr,
}

impl BackgroundServer {
    pub fn start(store: Arc<Store>) -> std::io::Result<Self> {
        let runtime = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
        let listener = runtime.block_on(tokio::net::TcpListener::bind(("127.0.0.1", 0)))?;
        let addr = listener.local_addr()?;
        runtime.spawn(async move {
            if let Err(e) = axum::serve(listener, router(store)).await {
                log::error!("server stopped: {e}");
            }
        });
        Ok(Self { runtime: Some(runtime), addr })
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn stop(mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}

impl Drop for BackgroundServer {
    fn drop(&mut self) {
        if let Some(rt) = self.runtime.take() {
            rt.shutdown_background();
        }
    }
}
