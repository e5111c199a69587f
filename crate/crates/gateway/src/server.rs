//! HTTP routes over [`Service`]. Bodies are JSON; errors are
//! `{"error": ..., "retryable": ...}` with a matching status code.

use std::sync::Arc;

use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::json;

use crate::service::{ActivateRequest, CommitRequest, PreviewRequest, RecommendQuery, Service, ServiceError};

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let (status, retryable) = match &self {
            ServiceError::NotFound(_) => (StatusCode::NOT_FOUND, false),
            ServiceError::Invalid(_) => (StatusCode::BAD_REQUEST, false),
            ServiceError::Conflict(_) => (StatusCode::CONFLICT, true),
            ServiceError::Internal(_) => (StatusCode::INTERNAL_SERVER_ERROR, false),
        };
        (status, Json(json!({ "error": self.to_string(), "retryable": retryable }))).into_response()
    }
}

type Shared = State<Arc<Service>>;
type ApiResult = Result<Response, ServiceError>;

fn ok<T: serde::Serialize>(v: T) -> ApiResult {
    Ok(Json(v).into_response())
}

async fn health(State(s): Shared) -> ApiResult {
    ok(s.health())
}

async fn genres(State(s): Shared) -> ApiResult {
    ok(json!({ "genres": s.genres() }))
}

async fn get_summary(State(s): Shared, Path(user): Path<String>) -> ApiResult {
    ok(s.summary(&user)?)
}

async fn commit_summary(State(s): Shared, Path(user): Path<String>, Json(req): Json<CommitRequest>) -> ApiResult {
    let view = s.commit(&user, &req)?;
    Ok((StatusCode::CREATED, Json(view)).into_response())
}

async fn activate(State(s): Shared, Path(user): Path<String>, Json(req): Json<ActivateRequest>) -> ApiResult {
    ok(s.activate(&user, &req)?)
}

async fn preview(State(s): Shared, Path(user): Path<String>, Json(req): Json<PreviewRequest>) -> ApiResult {
    ok(s.preview(&user, &req)?)
}

async fn recommendations(State(s): Shared, Path(user): Path<String>, Query(q): Query<RecommendQuery>) -> ApiResult {
    ok(s.recommend(&user, &q)?)
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/catalog/genres", get(genres))
        .route("/users/{id}/summary", get(get_summary).post(commit_summary))
        .route("/users/{id}/summary/active", post(activate))
        .route("/users/{id}/preview", post(preview))
        .route("/users/{id}/recommendations", get(recommendations))
        .with_state(service)
}

/// Serves until interrupted.
pub async fn serve(service: Arc<Service>, addr: &str) -> anyhow::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    println!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(service))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
    Ok(())
}
