//! HTTP+JSON service for chatting with trained models and browsing the
//! context map.
//!
//! | method | path | body / result |
//! |--------|------|---------------|
//! | POST | `/api/sessions` | `{model_id}` → `{session_id, model_id}` |
//! | GET | `/api/sessions/{id}` | history and trajectory |
//! | POST | `/api/sessions/{id}/messages` | `{text}` → `{reply, context_point, distances, turn_index}` |
//! | GET | `/api/sessions/{id}/trajectory` | `{trajectory: [[x, y], …]}` |
//! | GET | `/api/context-map` | `{points: [{id, topic, x, y}], centroids: {topic: [x, y]}}` |
//! | GET | `/api/context-map/points.tsv`, `/api/context-map/centroids.tsv` | the analysis files as written |
//! | GET | `/api/models` | loaded models |
//! | GET | `/health` | `{status: "ok"}` |
//!
//! Errors are `{error, message}` with a 4xx/5xx status.

mod error;
mod state;

use std::net::SocketAddr;
use std::sync::Arc;

use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::IntoResponse;
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use error::ApiError;
pub use state::{Analysis, AppState, Exchange, MessageReply, ServiceConfig, Session, DEFAULT_TTL};

type Shared = Arc<AppState>;

#[derive(Debug, Deserialize)]
struct CreateSession {
    model_id: String,
}

#[derive(Debug, Deserialize)]
struct PostMessage {
    text: String,
}

#[derive(Debug, Serialize)]
struct ModelInfo {
    id: String,
    arch: String,
    head: hred_core::recurrent::HeadKind,
    vocab_size: usize,
    embed_dim: usize,
    hidden_dim: usize,
    depth: usize,
    context_map: bool,
}

pub fn router(state: Shared) -> Router {
    Router::new()
        .route("/health", get(|| async { Json(json!({"status": "ok"})) }))
        .route("/api/models", get(list_models))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/messages", post(post_message))
        .route("/api/sessions/{id}/trajectory", get(get_trajectory))
        .route("/api/context-map", get(context_map))
        .route("/api/context-map/points.tsv", get(points_file))
        .route("/api/context-map/centroids.tsv", get(centroids_file))
        .with_state(state)
}

/// Binds and serves until the process is interrupted.
pub async fn serve(addr: SocketAddr, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(Arc::new(state)))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}

async fn list_models(State(state): State<Shared>) -> Json<Vec<ModelInfo>> {
    Json(
        state
            .models
            .iter()
            .map(|(id, m)| ModelInfo {
                id: id.clone(),
                arch: m.arch().to_string(),
                head: m.config.head,
                vocab_size: m.config.vocab_size,
                embed_dim: m.config.embed_dim,
                hidden_dim: m.config.hidden_dim,
                depth: m.config.depth,
                context_map: state.map_for(m).is_some(),
            })
            .collect(),
    )
}

async fn create_session(
    State(state): State<Shared>,
    body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> Result<impl IntoResponse, ApiError> {
    let Json(body) = body.map_err(|e| ApiError::invalid(e.body_text()))?;
    let id = state.create_session(&body.model_id)?;
    Ok((
        StatusCode::CREATED,
        Json(json!({"session_id": id, "model_id": body.model_id})),
    ))
}

async fn get_session(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    Ok(Json(json!({
        "session_id": s.id,
        "model_id": s.model_id,
        "created_at": s.created_at,
        "exchanges": s.exchanges,
        "trajectory": s.trajectory,
    })))
}

async fn post_message(
    State(state): State<Shared>,
    Path(id): Path<String>,
    body: Result<Json<PostMessage>, axum::extract::rejection::JsonRejection>,
) -> Result<Json<MessageReply>, ApiError> {
    let session = state.session(&id)?;
    let Json(body) = body.map_err(|e| ApiError::invalid(e.body_text()))?;
    let mut s = session.lock().await;
    Ok(Json(state.post_message(&mut s, &body.text)?))
}

async fn get_trajectory(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<Value>, ApiError> {
    let session = state.session(&id)?;
    let s = session.lock().await;
    Ok(Json(json!({"session_id": s.id, "trajectory": s.trajectory})))
}

fn analysis(state: &AppState) -> Result<&Analysis, ApiError> {
    state
        .analysis
        .as_ref()
        .ok_or_else(|| ApiError::not_prepared("no analysis directory was loaded; run `hred analyze` first"))
}

async fn context_map(State(state): State<Shared>) -> Result<Json<Value>, ApiError> {
    let a = analysis(&state)?;
    let points = hred_core::analysis::io::parse_points(&a.points_tsv)?;
    let centroids: serde_json::Map<String, Value> = a
        .centroids
        .iter()
        .map(|c| (c.topic.clone(), json!(c.point)))
        .collect();
    Ok(Json(json!({"points": points, "centroids": centroids})))
}

fn tsv(body: String) -> impl IntoResponse {
    ([(header::CONTENT_TYPE, "text/tab-separated-values; charset=utf-8")], body)
}

async fn points_file(State(state): State<Shared>) -> Result<impl IntoResponse, ApiError> {
    Ok(tsv(analysis(&state)?.points_tsv.clone()))
}

async fn centroids_file(State(state): State<Shared>) -> Result<impl IntoResponse, ApiError> {
    Ok(tsv(analysis(&state)?.centroids_tsv.clone()))
}
