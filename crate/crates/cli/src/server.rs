//! HTTP+JSON front end over a shared engine.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::post;
use axum::{Json, Router};
use serde::Serialize;
use sparsedoc_core::engine::{Engine, EngineError};

use crate::ops::{self, AskBody, ErrorBody, EvalBody, IngestBody};

pub struct ApiError(EngineError);

#[derive(Serialize)]
struct ErrorEnvelope {
    error: ErrorBody,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.0.class().http_status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(ErrorEnvelope { error: ErrorBody::from(&self.0) })).into_response()
    }
}

fn bad_json(e: JsonRejection) -> ApiError {
    ApiError(EngineError::Parse(e.body_text()))
}

type Shared = Arc<Engine>;
type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(engine: Shared, f: F) -> ApiResult<T>
where
    T: Send + 'static,
    F: FnOnce(&Engine) -> Result<T, EngineError> + Send + 'static,
{
    match tokio::task::spawn_blocking(move || f(&engine)).await {
        Ok(r) => r.map(Json).map_err(ApiError),
        Err(e) => Err(ApiError(EngineError::Io(std::io::Error::other(e.to_string())))),
    }
}

async fn ingest(
    State(engine): State<Shared>,
    body: Result<Json<IngestBody>, JsonRejection>,
) -> ApiResult<sparsedoc_core::engine::IngestReport> {
    let Json(body) = body.map_err(bad_json)?;
    blocking(engine, move |e| ops::ingest(e, &body)).await
}

async fn list(State(engine): State<Shared>) -> ApiResult<Vec<sparsedoc_core::engine::DocumentSummary>> {
    Ok(Json(engine.list_documents()))
}

async fn ask(
    State(engine): State<Shared>,
    Path(doc_id): Path<String>,
    body: Result<Json<AskBody>, JsonRejection>,
) -> ApiResult<sparsedoc_core::engine::AskResponse> {
    let Json(body) = body.map_err(bad_json)?;
    blocking(engine, move |e| e.ask(&doc_id, &body.question, body.k)).await
}

async fn sample(
    State(engine): State<Shared>,
    Path(doc_id): Path<String>,
    body: Result<Json<AskBody>, JsonRejection>,
) -> ApiResult<sparsedoc_core::engine::SampleResponse> {
    let Json(body) = body.map_err(bad_json)?;
    blocking(engine, move |e| e.sample(&doc_id, &body.question, body.k)).await
}

async fn eval_run(
    State(engine): State<Shared>,
    body: Result<Json<EvalBody>, JsonRejection>,
) -> ApiResult<sparsedoc_core::engine::EvalOutput> {
    let Json(body) = body.map_err(bad_json)?;
    blocking(engine, move |e| ops::eval(e, &body)).await
}

async fn not_found() -> ApiError {
    ApiError(EngineError::NotFound("no such route".into()))
}

pub fn router(engine: Shared) -> Router {
    Router::new()
        .route("/documents", post(ingest).get(list))
        .route("/documents/{id}/ask", post(ask))
        .route("/documents/{id}/sample", post(sample))
        .route("/eval/run", post(eval_run))
        .fallback(not_found)
        .with_state(engine)
}

/// Serves until the process is stopped.
pub async fn serve(engine: Shared, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, router(engine)).await
}
