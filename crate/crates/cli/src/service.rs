//! HTTP service over one orchestrator. Request and response bodies are JSON;
//! errors come back as `{"error": "..."}` with a matching status.
//!
//! | method | path                     | body            | response                 |
//! |--------|--------------------------|-----------------|--------------------------|
//! | GET    | /health                  |                 | `{"status": "ok"}`       |
//! | POST   | /sessions                |                 | 201 `{"session_id"}`     |
//! | GET    | /sessions                |                 | `{"sessions": [id]}`     |
//! | POST   | /sessions/{id}/messages  | `{"text"}`      | TurnTrace                |
//! | GET    | /sessions/{id}/trace     |                 | `[TurnTrace]`            |
//! | GET    | /sessions/{id}/memory    |                 | SessionMemory            |
//! | GET    | /catalog                 |                 | `[ToolSpec]`             |
//! | POST   | /admin/fixture           | `{"name","seed"}` | `{"fixture","seed","now"}` |
//! | GET    | /admin/faults            |                 | `{api: mode}`            |
//! | PUT    | /admin/faults/{api}      | `{"mode"}`      | `{api: mode}`            |
//! | DELETE | /admin/faults/{api}      |                 | `{api: mode}`            |
//! | DELETE | /admin/faults            |                 | `{}`                     |
//! | GET    | /admin/state             |                 | simulator snapshot       |

use std::path::{Path, PathBuf};
use std::sync::Arc;

use axum::extract::{Path as UrlPath, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{delete, get, post, put};
use axum::{Json, Router};
use officeflow::catalog;
use officeflow::orchestrator::{Orchestrator, PersistedState};
use officeflow::sim::FaultMode;
use officeflow::Error;
use serde::Deserialize;
use serde_json::json;

#[derive(Clone)]
pub struct AppState {
    pub orch: Arc<Orchestrator>,
    pub state_path: Option<PathBuf>,
}

pub struct ApiError(Error);

impl From<Error> for ApiError {
    fn from(e: Error) -> Self {
        ApiError(e)
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = match &self.0 {
            Error::UnknownSession(_) | Error::UnknownFixture(_) | Error::UnknownTool(_) => StatusCode::NOT_FOUND,
            Error::Usage(_) | Error::Parse { .. } => StatusCode::BAD_REQUEST,
            Error::Endpoint(_) => StatusCode::BAD_GATEWAY,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(json!({ "error": self.0.to_string() }))).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

/// Writes the state next to its target and renames it into place.
pub fn save_state(path: &Path, orch: &Orchestrator) -> officeflow::Result<()> {
    let text = serde_json::to_string(&orch.persist()).map_err(|e| Error::Io(e.to_string()))?;
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, text)?;
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_state(path: &Path, orch: &Orchestrator) -> officeflow::Result<bool> {
    if !path.exists() {
        return Ok(false);
    }
    let text = std::fs::read_to_string(path)?;
    let state: PersistedState =
        serde_json::from_str(&text).map_err(|e| Error::parse(format!("{} line {}", path.display(), e.line()), e.to_string()))?;
    orch.restore(&state);
    Ok(true)
}

fn persist(state: &AppState) -> ApiResult<()> {
    if let Some(p) = &state.state_path {
        save_state(p, &state.orch)?;
    }
    Ok(())
}

async fn health() -> Json<serde_json::Value> {
    Json(json!({ "status": "ok" }))
}

async fn create_session(State(st): State<AppState>) -> ApiResult<(StatusCode, Json<serde_json::Value>)> {
    let id = st.orch.create_session();
    persist(&st)?;
    Ok((StatusCode::CREATED, Json(json!({ "session_id": id }))))
}

async fn list_sessions(State(st): State<AppState>) -> Json<serde_json::Value> {
    Json(json!({ "sessions": st.orch.session_ids() }))
}

#[derive(Deserialize)]
struct MessageBody {
    text: String,
}

async fn post_message(
    State(st): State<AppState>,
    UrlPath(id): UrlPath<String>,
    Json(body): Json<MessageBody>,
) -> ApiResult<Response> {
    let orch = st.orch.clone();
    // Endpoint backends block on HTTP, so the turn runs off the async pool.
    let trace = tokio::task::spawn_blocking(move || orch.handle_message(&id, &body.text))
        .await
        .map_err(|e| Error::Io(format!("turn task: {e}")))??;
    persist(&st)?;
    Ok(Json(trace).into_response())
}

async fn get_trace(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    Ok(Json(st.orch.trace(&id)?).into_response())
}

async fn get_memory(State(st): State<AppState>, UrlPath(id): UrlPath<String>) -> ApiResult<Response> {
    Ok(Json(st.orch.session(&id)?.memory).into_response())
}

async fn get_catalog() -> Response {
    Json(catalog::catalog()).into_response()
}

#[derive(Deserialize)]
struct FixtureBody {
    name: String,
    #[serde(default)]
    seed: u64,
}

/// Reloads the simulator; sessions keep their memory.
async fn set_fixture(State(st): State<AppState>, Json(body): Json<FixtureBody>) -> ApiResult<Response> {
    st.orch.sim().seed(&body.name, body.seed)?;
    persist(&st)?;
    let sim = st.orch.sim();
    Ok(Json(json!({ "fixture": body.name, "seed": body.seed, "now": sim.now() })).into_response())
}

async fn get_faults(State(st): State<AppState>) -> Response {
    Json(st.orch.sim().faults()).into_response()
}

#[derive(Deserialize)]
struct FaultBody {
    mode: FaultMode,
}

async fn put_fault(
    State(st): State<AppState>,
    UrlPath(api): UrlPath<String>,
    Json(body): Json<FaultBody>,
) -> ApiResult<Response> {
    st.orch.sim().inject_fault(&api, body.mode)?;
    persist(&st)?;
    Ok(Json(st.orch.sim().faults()).into_response())
}

async fn delete_fault(State(st): State<AppState>, UrlPath(api): UrlPath<String>) -> ApiResult<Response> {
    catalog::require_tool(&api)?;
    st.orch.sim().clear_fault(&api);
    persist(&st)?;
    Ok(Json(st.orch.sim().faults()).into_response())
}

async fn clear_faults(State(st): State<AppState>) -> ApiResult<Response> {
    st.orch.sim().clear_faults();
    persist(&st)?;
    Ok(Json(st.orch.sim().faults()).into_response())
}

async fn get_state(State(st): State<AppState>) -> Response {
    Json(st.orch.sim().snapshot()).into_response()
}

pub fn router(state: AppState, admin: bool) -> Router {
    let mut r = Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session).get(list_sessions))
        .route("/sessions/{id}/messages", post(post_message))
        .route("/sessions/{id}/trace", get(get_trace))
        .route("/sessions/{id}/memory", get(get_memory))
        .route("/catalog", get(get_catalog));
    if admin {
        r = r
            .route("/admin/fixture", post(set_fixture))
            .route("/admin/faults", get(get_faults).delete(clear_faults))
            .route("/admin/faults/{api}", put(put_fault).merge(delete(delete_fault)))
            .route("/admin/state", get(get_state));
    }
    r.with_state(state)
}
