//! JSON-over-HTTP front end for the chat client.

use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::Serialize;
use serde_json::json;

use super::{Engine, MessageOutcome, OrchestratorError, SessionConfig, SessionRecord, StateView, UserMessage};

pub struct ApiError(OrchestratorError);

impl From<OrchestratorError> for ApiError {
    fn from(e: OrchestratorError) -> Self {
        ApiError(e)
    }
}

fn error_kind(e: &OrchestratorError) -> &'static str {
    match e {
        OrchestratorError::SessionNotFound(_) => "SessionNotFound",
        OrchestratorError::SessionClosed => "SessionClosed",
        OrchestratorError::UnknownScenario(_) => "UnknownScenario",
        OrchestratorError::EmptyMessage => "EmptyMessage",
        OrchestratorError::IllegalTransition { .. } => "IllegalTransition",
        OrchestratorError::Responder(_) => "ResponderFailed",
        OrchestratorError::Gateway(_) => "BackendUnavailable",
        OrchestratorError::Adapter(_) => "AdapterFailed",
        OrchestratorError::Persistence(_) => "PersistenceFailed",
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let status = match &e {
            OrchestratorError::SessionNotFound(_) => StatusCode::NOT_FOUND,
            OrchestratorError::SessionClosed => StatusCode::CONFLICT,
            OrchestratorError::UnknownScenario(_) | OrchestratorError::EmptyMessage => StatusCode::BAD_REQUEST,
            OrchestratorError::IllegalTransition { .. } => StatusCode::UNPROCESSABLE_ENTITY,
            OrchestratorError::Gateway(_) | OrchestratorError::Adapter(_) => StatusCode::BAD_GATEWAY,
            OrchestratorError::Responder(_) | OrchestratorError::Persistence(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        let mut body = json!({ "error": error_kind(&e), "message": e.to_string() });
        if let OrchestratorError::IllegalTransition { legal_next_acts, .. } = &e {
            body["legal_next_acts"] = json!(legal_next_acts);
        }
        (status, Json(body)).into_response()
    }
}

fn bad_request(message: String) -> Response {
    (
        StatusCode::BAD_REQUEST,
        Json(json!({ "error": "BadRequest", "message": message })),
    )
        .into_response()
}

fn join_error(e: tokio::task::JoinError) -> Response {
    (
        StatusCode::INTERNAL_SERVER_ERROR,
        Json(json!({ "error": "Internal", "message": e.to_string() })),
    )
        .into_response()
}

#[derive(Serialize)]
struct Created {
    session_id: String,
}

#[derive(Serialize)]
struct SessionDetail {
    #[serde(flatten)]
    record: SessionRecord,
    state_view: StateView,
}

#[derive(Serialize)]
struct ScenarioSummary {
    id: String,
    title: String,
    exception: String,
}

pub fn router(engine: Arc<Engine>) -> Router {
    Router::new()
        .route("/scenarios", get(list_scenarios))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(get_session))
        .route("/sessions/{id}/messages", post(post_message))
        .with_state(engine)
}

async fn list_scenarios(State(engine): State<Arc<Engine>>) -> Json<Vec<ScenarioSummary>> {
    Json(
        engine
            .scenarios()
            .iter()
            .map(|s| ScenarioSummary {
                id: s.id.clone(),
                title: s.title.clone(),
                exception: s.exception.type_name.clone(),
            })
            .collect(),
    )
}

async fn create_session(State(engine): State<Arc<Engine>>, body: Bytes) -> Response {
    let config: SessionConfig = if body.iter().all(u8::is_ascii_whitespace) {
        SessionConfig::default()
    } else {
        match serde_json::from_slice(&body) {
            Ok(c) => c,
            Err(e) => return bad_request(e.to_string()),
        }
    };
    match tokio::task::spawn_blocking(move || engine.create_session(config)).await {
        Ok(Ok(session_id)) => (StatusCode::CREATED, Json(Created { session_id })).into_response(),
        Ok(Err(e)) => ApiError(e).into_response(),
        Err(e) => join_error(e),
    }
}

async fn get_session(
    State(engine): State<Arc<Engine>>,
    Path(id): Path<String>,
) -> Result<Json<SessionDetail>, ApiError> {
    let session = engine.session(&id)?;
    let guard = session.lock().await;
    Ok(Json(SessionDetail {
        record: guard.record().clone(),
        state_view: guard.view(),
    }))
}

async fn post_message(State(engine): State<Arc<Engine>>, Path(id): Path<String>, body: Bytes) -> Response {
    let msg: UserMessage = match serde_json::from_slice(&body) {
        Ok(m) => m,
        Err(e) => return bad_request(e.to_string()),
    };
    let session = match engine.session(&id) {
        Ok(s) => s,
        Err(e) => return ApiError(e).into_response(),
    };
    // Messages to one session are handled in arrival order.
    let mut guard = session.lock_owned().await;
    let result: Result<Result<MessageOutcome, OrchestratorError>, _> =
        tokio::task::spawn_blocking(move || guard.handle(&msg)).await;
    match result {
        Ok(Ok(outcome)) => Json(outcome).into_response(),
        Ok(Err(e)) => ApiError(e).into_response(),
        Err(e) => join_error(e),
    }
}

/// Serve the API until the process is stopped.
pub async fn serve(engine: Arc<Engine>, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    tracing::info!(addr = %listener.local_addr()?, "listening");
    axum::serve(listener, router(engine)).await
}
