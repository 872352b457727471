//! HTTP API under `/v1`.
//!
//! Scenario runs are jobs: POST validates and enqueues, a fixed pool of
//! workers executes them, and clients poll the record until it is done.
//! Datasets, the fitted model and the coefficients are read-only after
//! startup.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::get;
use axum::{Json, Router};
use chrono::Utc;
use serde::Deserialize;
use serde_json::json;
use stormflux_core::report::counties_geojson;
use stormflux_core::{run_scenario, Scenario, ScenarioResult};
use tokio::sync::{mpsc, Mutex};

use crate::store::{ScenarioRecord, Status, Store};
use crate::{ErrorBody, Inputs};

#[derive(Debug, Clone, Copy)]
pub struct ServiceConfig {
    pub workers: usize,
    pub queue_capacity: usize,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        ServiceConfig {
            workers: std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1),
            queue_capacity: 64,
        }
    }
}

#[derive(Clone)]
struct AppState {
    inputs: Arc<Inputs>,
    store: Store,
    queue: mpsc::Sender<String>,
}

pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        ApiError {
            status,
            body: ErrorBody::new(code, message),
        }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", format!("no scenario with id {id}"))
    }

    fn internal(e: impl std::fmt::Display) -> Self {
        Self::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string())
    }
}

impl From<stormflux_core::Error> for ApiError {
    fn from(e: stormflux_core::Error) -> Self {
        let body = ErrorBody::from(&e);
        let status = if body.code == "validation" {
            StatusCode::BAD_REQUEST
        } else {
            StatusCode::INTERNAL_SERVER_ERROR
        };
        ApiError { status, body }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

/// Builds the router and starts the worker pool. Must be called inside a
/// Tokio runtime. Records left queued or running by a previous process are
/// queued again.
pub fn router(inputs: Arc<Inputs>, store: Store, config: ServiceConfig) -> Router {
    let (tx, rx) = mpsc::channel::<String>(config.queue_capacity.max(1));
    let rx = Arc::new(Mutex::new(rx));
    let state = AppState {
        inputs,
        store,
        queue: tx,
    };
    for _ in 0..config.workers.max(1) {
        let rx = rx.clone();
        let state = state.clone();
        tokio::spawn(async move {
            loop {
                let next = rx.lock().await.recv().await;
                match next {
                    Some(id) => execute(&state, &id).await,
                    None => break,
                }
            }
        });
    }
    requeue_interrupted(&state);

    Router::new()
        .route("/v1/scenarios", get(list_scenarios).post(create_scenario))
        .route("/v1/scenarios/{id}", get(get_scenario).delete(delete_scenario))
        .route("/v1/scenarios/{id}/result", get(get_result))
        .route("/v1/datasets/summary", get(datasets_summary))
        .route("/v1/model", get(model))
        .fallback(|| async { ApiError::new(StatusCode::NOT_FOUND, "not_found", "no such route") })
        .with_state(state)
}

fn requeue_interrupted(state: &AppState) {
    for rec in state.store.list() {
        if !matches!(rec.status, Status::Pending | Status::Running) {
            continue;
        }
        let requeued = state.queue.try_send(rec.id.clone()).is_ok();
        let _ = state.store.update(&rec.id, |r| {
            if requeued {
                r.status = Status::Pending;
            } else {
                r.status = Status::Failed;
                r.finished_at = Some(Utc::now());
                r.error = Some(ErrorBody::new("interrupted", "run interrupted by a restart and the queue was full"));
            }
        });
    }
}

async fn execute(state: &AppState, id: &str) {
    let Some(scenario) = state.store.scenario(id) else {
        return;
    };
    match state.store.update(id, |r| r.status = Status::Running) {
        Ok(true) => {}
        Ok(false) => return,
        Err(e) => tracing::error!("store update failed for {id}: {e}"),
    }
    let inputs = state.inputs.clone();
    let outcome = tokio::task::spawn_blocking(move || {
        run_scenario(&scenario, &inputs.datasets, &inputs.model.model, &inputs.coeffs)
    })
    .await;
    let stored = match outcome {
        Ok(Ok(result)) => match serde_json::to_string(&result) {
            Ok(text) => state.store.complete(id, text, result.warnings.clone()),
            Err(e) => fail(state, id, ErrorBody::new("internal", e.to_string())),
        },
        Ok(Err(e)) => fail(state, id, ErrorBody::from(&e)),
        Err(e) => fail(state, id, ErrorBody::new("internal", format!("worker panicked: {e}"))),
    };
    if let Err(e) = stored {
        tracing::error!("could not persist outcome of {id}: {e}");
    }
}

fn fail(state: &AppState, id: &str, err: ErrorBody) -> std::io::Result<bool> {
    state.store.update(id, |r| {
        r.status = Status::Failed;
        r.finished_at = Some(Utc::now());
        r.error = Some(err);
    })
}

async fn create_scenario(State(state): State<AppState>, body: Bytes) -> Result<Response, ApiError> {
    let scenario: Scenario = serde_json::from_slice(&body)
        .map_err(|e| ApiError::new(StatusCode::BAD_REQUEST, "validation", format!("invalid scenario: {e}")))?;
    let warnings = scenario.validate(&state.inputs.datasets.geography)?;
    let permit = state.queue.try_reserve().map_err(|_| {
        ApiError::new(
            StatusCode::TOO_MANY_REQUESTS,
            "queue_full",
            "the scenario queue is full; retry later",
        )
    })?;
    let now = Utc::now();
    let record = ScenarioRecord {
        id: uuid::Uuid::new_v4().to_string(),
        name: scenario.name.clone(),
        status: Status::Pending,
        created_at: now,
        updated_at: now,
        finished_at: None,
        result_ref: None,
        warnings,
        error: None,
    };
    state.store.insert(record.clone(), scenario).map_err(ApiError::internal)?;
    permit.send(record.id.clone());
    let location = format!("/v1/scenarios/{}", record.id);
    Ok((
        StatusCode::ACCEPTED,
        [(header::LOCATION, location)],
        Json(json!({ "id": record.id, "status": record.status })),
    )
        .into_response())
}

async fn list_scenarios(State(state): State<AppState>) -> Json<Vec<ScenarioRecord>> {
    Json(state.store.list())
}

async fn get_scenario(State(state): State<AppState>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let record = state.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let scenario = state.store.scenario(&id).ok_or_else(|| ApiError::not_found(&id))?;
    Ok(Json(json!({ "record": record, "scenario": scenario })).into_response())
}

async fn delete_scenario(State(state): State<AppState>, Path(id): Path<String>) -> Result<StatusCode, ApiError> {
    if state.store.remove(&id).map_err(ApiError::internal)? {
        Ok(StatusCode::NO_CONTENT)
    } else {
        Err(ApiError::not_found(&id))
    }
}

#[derive(Debug, Deserialize)]
struct ResultQuery {
    format: Option<String>,
}

async fn get_result(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Query(q): Query<ResultQuery>,
) -> Result<Response, ApiError> {
    let record = state.store.get(&id).ok_or_else(|| ApiError::not_found(&id))?;
    let format = q.format.as_deref().unwrap_or("json");
    if !matches!(format, "json" | "geojson") {
        return Err(ApiError::new(
            StatusCode::BAD_REQUEST,
            "validation",
            format!("unknown result format {format:?}; expected json or geojson"),
        ));
    }
    let Some(text) = state.store.result(&id).filter(|_| record.status == Status::Done) else {
        let mut err = ApiError::new(StatusCode::CONFLICT, "not_done", format!("scenario {id} is not done"));
        err.body.detail = json!({ "status": record.status, "error": record.error });
        return Err(err);
    };
    if format == "json" {
        return Ok(([(header::CONTENT_TYPE, "application/json; charset=utf-8")], text.as_str().to_owned()).into_response());
    }
    let result: ScenarioResult = serde_json::from_str(&text).map_err(ApiError::internal)?;
    let geo = counties_geojson(&result, &state.inputs.datasets.geography)?;
    Ok((
        [(header::CONTENT_TYPE, "application/geo+json; charset=utf-8")],
        serde_json::to_string(&geo).map_err(ApiError::internal)?,
    )
        .into_response())
}

async fn datasets_summary(State(state): State<AppState>) -> Json<serde_json::Value> {
    let d = &state.inputs.datasets;
    let geo = &d.geography;
    let districts: std::collections::BTreeSet<&String> = geo.districts().values().collect();
    let cases = d.cases.as_ref().map(|c| {
        let range = c.date_range();
        json!({
            "counties": c.len(),
            "first_date": range.map(|r| r.0),
            "last_date": range.map(|r| r.1),
        })
    });
    Json(json!({
        "counts": {
            "counties": geo.counties().len(),
            "block_groups": geo.block_groups().len(),
            "districts": districts.len(),
            "population": geo.counties().iter().map(|c| c.population).sum::<u64>(),
        },
        "cases": cases,
        "vintages": state.inputs.manifest.as_ref().and_then(|m| m.get("vintages")).cloned(),
        "warnings": geo.warnings(),
    }))
}

async fn model(State(state): State<AppState>) -> Json<stormflux_core::FittedModel> {
    Json(state.inputs.model.clone())
}
