//! JSON API over a [`Gateway`]. Gateway calls block (crew, LLM and store
//! I/O), so every handler hops onto the blocking pool.

use std::sync::Arc;

use axum::extract::rejection::JsonRejection;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use episodic_core::session::{InputOutcome, SessionError};
use episodic_core::workflow::{leaf_sequence, StepKind, WorkflowSource};
use episodic_core::{timefmt, CrewDescription, Gateway, SaveReceipt, Workflow};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError {
            status,
            message: message.into(),
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        if self.status.is_server_error() {
            tracing::error!(status = %self.status, "{}", self.message);
        }
        (
            self.status,
            Json(serde_json::json!({ "error": self.message })),
        )
            .into_response()
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let status = match &e {
            SessionError::UnknownCrew(_) | SessionError::UnknownSession(_) => StatusCode::NOT_FOUND,
            SessionError::EmptyWorkflow => StatusCode::CONFLICT,
            SessionError::SaveIsCommand => StatusCode::BAD_REQUEST,
            SessionError::Crew(_) | SessionError::Trajectory(_) => StatusCode::BAD_GATEWAY,
            SessionError::Retrieval(_) | SessionError::Store(_) | SessionError::Snapshot(_) => {
                StatusCode::INTERNAL_SERVER_ERROR
            }
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<JsonRejection> for ApiError {
    fn from(e: JsonRejection) -> Self {
        ApiError::new(StatusCode::BAD_REQUEST, e.body_text())
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;

async fn blocking<T, F>(f: F) -> ApiResult<T>
where
    F: FnOnce() -> Result<T, ApiError> + Send + 'static,
    T: Send + 'static,
{
    match tokio::task::spawn_blocking(f).await {
        Ok(result) => result.map(Json),
        Err(e) => Err(ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            e.to_string(),
        )),
    }
}

#[derive(Deserialize)]
pub struct CreateSession {
    pub crew_id: String,
}

#[derive(Serialize, Deserialize)]
pub struct SessionCreated {
    pub session_id: String,
}

#[derive(Deserialize)]
pub struct Instruction {
    pub text: String,
}

/// One row of `GET /memory`.
#[derive(Debug, Serialize, Deserialize)]
pub struct RecordSummary {
    pub record_id: String,
    pub saved_at: String,
    pub workflow_id: String,
    pub source: WorkflowSource,
    pub step_count: usize,
    /// Call names and childless instruction texts in leaf order.
    pub leaves: Vec<String>,
}

pub fn router(gateway: Arc<Gateway>) -> Router {
    Router::new()
        .route("/sessions", post(create_session))
        .route("/sessions/{id}/instructions", post(instruct))
        .route("/sessions/{id}/save", post(save))
        .route("/sessions/{id}/workflow", get(workflow))
        .route("/memory", get(memory))
        .route("/crews/{id}", get(crew))
        .with_state(gateway)
}

async fn create_session(
    State(gw): State<Arc<Gateway>>,
    body: Result<Json<CreateSession>, JsonRejection>,
) -> ApiResult<SessionCreated> {
    let Json(req) = body?;
    blocking(move || {
        let session_id = gw.create_session(&req.crew_id)?;
        Ok(SessionCreated { session_id })
    })
    .await
}

/// Runs a turn. `\save` typed as an instruction saves instead and answers
/// with the save receipt.
async fn instruct(
    State(gw): State<Arc<Gateway>>,
    Path(id): Path<String>,
    body: Result<Json<Instruction>, JsonRejection>,
) -> ApiResult<Value> {
    let Json(req) = body?;
    blocking(move || {
        let value = match gw.handle_input(&id, &req.text)? {
            InputOutcome::Turn(turn) => serde_json::to_value(turn),
            InputOutcome::Saved(receipt) => serde_json::to_value(receipt),
        };
        value.map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))
    })
    .await
}

async fn save(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> ApiResult<SaveReceipt> {
    blocking(move || Ok(gw.handle_save(&id)?)).await
}

async fn workflow(State(gw): State<Arc<Gateway>>, Path(id): Path<String>) -> ApiResult<Workflow> {
    blocking(move || Ok(gw.workflow(&id)?)).await
}

async fn memory(State(gw): State<Arc<Gateway>>) -> ApiResult<Vec<RecordSummary>> {
    blocking(move || {
        let records = gw
            .store()
            .scan()
            .map_err(|e| ApiError::from(SessionError::Store(e)))?;
        Ok(records
            .iter()
            .map(|r| RecordSummary {
                record_id: r.record_id.clone(),
                saved_at: timefmt::format(&r.saved_at),
                workflow_id: r.workflow.workflow_id.clone(),
                source: r.workflow.source,
                step_count: r.workflow.step_count(),
                leaves: leaf_sequence(&r.workflow)
                    .iter()
                    .map(|s| match s.kind {
                        StepKind::FunctionCall => s.name.clone(),
                        StepKind::UserInstruction => s.instruction.clone(),
                    })
                    .collect(),
            })
            .collect())
    })
    .await
}

async fn crew(
    State(gw): State<Arc<Gateway>>,
    Path(id): Path<String>,
) -> ApiResult<CrewDescription> {
    gw.crew(&id)
        .cloned()
        .map(Json)
        .ok_or_else(|| ApiError::from(SessionError::UnknownCrew(id)))
}
