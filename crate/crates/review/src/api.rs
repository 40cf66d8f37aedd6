//! HTTP API. Every route needs the shared access token; errors are `{code, message}`.

use std::sync::{Arc, Mutex};

use axum::extract::rejection::{JsonRejection, QueryRejection};
use axum::extract::{Path, Query, Request, State};
use axum::http::StatusCode;
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};

use crate::sampling::{explicit_set, stratified_sample, ReviewSet};
use crate::store::{AgreementStats, HumanVerdict, NextSample, ReviewStore, VerdictSubmission};
use crate::ReviewError;

pub const ACCESS_TOKEN_HEADER: &str = "x-access-token";

struct AppState {
    store: Mutex<ReviewStore>,
    token: String,
}

type Shared = Arc<AppState>;

#[derive(Debug)]
pub enum ApiError {
    Unauthorized,
    BadRequest(String),
    Review(ReviewError),
}

impl From<ReviewError> for ApiError {
    fn from(e: ReviewError) -> Self {
        ApiError::Review(e)
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

impl From<QueryRejection> for ApiError {
    fn from(e: QueryRejection) -> Self {
        ApiError::BadRequest(e.body_text())
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct ErrorBody {
    code: String,
    message: String,
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let (status, code, message) = match self {
            ApiError::Unauthorized => (
                StatusCode::UNAUTHORIZED,
                "Unauthorized",
                "missing or wrong access token".to_string(),
            ),
            ApiError::BadRequest(m) => (StatusCode::BAD_REQUEST, "BadRequest", m),
            ApiError::Review(e) => {
                let status = match &e {
                    ReviewError::UnknownSet(_)
                    | ReviewError::UnknownSample { .. }
                    | ReviewError::UnknownAnnotator(_) => StatusCode::NOT_FOUND,
                    ReviewError::DuplicateVerdict { .. } | ReviewError::EmptySet(_) => StatusCode::CONFLICT,
                    ReviewError::MissingLocalization(_) => StatusCode::BAD_REQUEST,
                    ReviewError::InsufficientSamples { .. } => StatusCode::UNPROCESSABLE_ENTITY,
                    ReviewError::DatasetMismatch { .. } | ReviewError::CorruptLog { .. } | ReviewError::Io(_) => {
                        tracing::error!(error = %e, "review store failure");
                        StatusCode::INTERNAL_SERVER_ERROR
                    }
                };
                (status, e.code(), e.to_string())
            }
        };
        let body = ErrorBody {
            code: code.to_string(),
            message,
        };
        (status, Json(body)).into_response()
    }
}

async fn require_token(State(state): State<Shared>, request: Request, next: Next) -> Result<Response, ApiError> {
    let given = request
        .headers()
        .get(ACCESS_TOKEN_HEADER)
        .and_then(|v| v.to_str().ok());
    if given != Some(state.token.as_str()) {
        return Err(ApiError::Unauthorized);
    }
    Ok(next.run(request).await)
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum CreateSet {
    Stratified { seed: u64, per_domain: usize },
    Explicit { sample_ids: Vec<String> },
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct NewAnnotator {
    #[serde(default)]
    name: Option<String>,
}

#[derive(Debug, Serialize)]
struct AnnotatorIssued {
    annotator_id: String,
}

#[derive(Debug, Deserialize)]
struct NextQuery {
    annotator: String,
}

#[derive(Debug, Serialize)]
struct Recorded {
    verdict: HumanVerdict,
    log_length: usize,
}

fn lock(state: &AppState) -> std::sync::MutexGuard<'_, ReviewStore> {
    state.store.lock().unwrap_or_else(|poisoned| poisoned.into_inner())
}

async fn create_set(
    State(state): State<Shared>,
    body: Result<Json<CreateSet>, JsonRejection>,
) -> Result<(StatusCode, Json<ReviewSet>), ApiError> {
    let Json(body) = body?;
    let mut store = lock(&state);
    let set = match body {
        CreateSet::Stratified { seed, per_domain } => stratified_sample(store.dataset(), per_domain, seed)?,
        CreateSet::Explicit { sample_ids } => explicit_set(store.dataset(), sample_ids)?,
    };
    Ok((StatusCode::CREATED, Json(store.create_set(set)?)))
}

async fn issue_annotator(
    State(state): State<Shared>,
    body: Result<Json<NewAnnotator>, JsonRejection>,
) -> Result<(StatusCode, Json<AnnotatorIssued>), ApiError> {
    let Json(body) = body?;
    let annotator_id = lock(&state).issue_annotator(body.name)?;
    Ok((StatusCode::CREATED, Json(AnnotatorIssued { annotator_id })))
}

async fn next_sample(
    State(state): State<Shared>,
    Path(id): Path<String>,
    query: Result<Query<NextQuery>, QueryRejection>,
) -> Result<Json<NextSample>, ApiError> {
    let Query(query) = query?;
    Ok(Json(lock(&state).next_sample(&id, &query.annotator)?))
}

async fn record_verdict(
    State(state): State<Shared>,
    body: Result<Json<VerdictSubmission>, JsonRejection>,
) -> Result<(StatusCode, Json<Recorded>), ApiError> {
    let Json(body) = body?;
    let mut store = lock(&state);
    let verdict = store.record_verdict(body)?;
    let log_length = store.verdicts().len();
    Ok((StatusCode::CREATED, Json(Recorded { verdict, log_length })))
}

async fn stats(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<AgreementStats>, ApiError> {
    Ok(Json(lock(&state).stats(&id)?))
}

async fn get_set(State(state): State<Shared>, Path(id): Path<String>) -> Result<Json<ReviewSet>, ApiError> {
    Ok(Json(lock(&state).set(&id)?.clone()))
}

pub fn router(store: ReviewStore, access_token: impl Into<String>) -> Router {
    let state = Arc::new(AppState {
        store: Mutex::new(store),
        token: access_token.into(),
    });
    Router::new()
        .route("/annotators", post(issue_annotator))
        .route("/review-sets", post(create_set))
        .route("/review-sets/{id}", get(get_set))
        .route("/review-sets/{id}/next", get(next_sample))
        .route("/review-sets/{id}/stats", get(stats))
        .route("/verdicts", post(record_verdict))
        .layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state)
}

/// Serves `app` until `shutdown` resolves.
pub async fn serve(
    listener: tokio::net::TcpListener,
    app: Router,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    tracing::info!(addr = ?listener.local_addr().ok(), "review service listening");
    axum::serve(listener, app).with_graceful_shutdown(shutdown).await
}
