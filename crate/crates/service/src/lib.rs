//! HTTP API over the candidate pool, the scorer and blinded study sessions.
//!
//! All mutations go through one writer and are appended to JSONL logs under
//! the data directory before they take effect, so restarting the service
//! replays to the same state.

mod error;
pub mod routes;
mod state;

use axum::routing::{get, post};
use axum::Router;
use thiserror::Error;
use tower_http::services::ServeDir;
use tower_http::trace::TraceLayer;

pub use error::ApiError;
pub use state::{AppState, ScoringContext, ServiceConfig, SessionState};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error(transparent)]
    Kb(#[from] zeta_core::kb::KbError),
    #[error(transparent)]
    Embed(#[from] zeta_core::embed::EmbedError),
    #[error(transparent)]
    Infer(#[from] zeta_core::infer::InferError),
    #[error(transparent)]
    Study(#[from] zeta_core::study::StudyError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn router(state: AppState) -> Router {
    let api = Router::new()
        .route("/conditions", get(routes::conditions))
        .route("/candidates", get(routes::candidates))
        .route("/candidates/:id", get(routes::candidate))
        .route("/candidates/:id/review", post(routes::review))
        .route("/kb/export", post(routes::export))
        .route("/score", post(routes::score))
        .route("/study/:session/next", get(routes::study_next))
        .route("/study/:session/answer", post(routes::study_answer))
        .route("/study/:session/report", get(routes::study_report_handler))
        .route_layer(axum::middleware::from_fn_with_state(
            state.clone(),
            routes::require_token,
        ));
    let mut app = Router::new()
        .route("/health", get(routes::health))
        .nest("/api", api)
        .with_state(state.clone());
    if let Some(dir) = &state.cfg.static_dir {
        app = app.fallback_service(ServeDir::new(dir));
    }
    app.layer(TraceLayer::new_for_http())
}

/// Load state, bind and serve until Ctrl-C.
pub async fn serve(cfg: ServiceConfig) -> Result<(), ServiceError> {
    let listen = cfg.listen.clone();
    let state = tokio::task::spawn_blocking(move || AppState::load(cfg))
        .await
        .map_err(|e| std::io::Error::other(e.to_string()))??;
    let listener = tokio::net::TcpListener::bind(&listen).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
