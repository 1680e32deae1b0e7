use std::sync::Arc;

use axum::body::Body;
use axum::http::{Method, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use officeflow::orchestrator::{Orchestrator, PipelineConfig, TurnTrace};
use officeflow::sim::OfficeSim;
use officeflow_cli::service::{load_state, router, save_state, AppState};
use serde_json::{json, Value};
use tower::ServiceExt;

fn app(state_path: Option<std::path::PathBuf>) -> (Router, Arc<Orchestrator>) {
    let sim = Arc::new(OfficeSim::named("F1", 0).unwrap());
    let orch = Arc::new(Orchestrator::reference(sim, PipelineConfig::default()));
    (router(AppState { orch: orch.clone(), state_path }, true), orch)
}

async fn call(app: &Router, method: Method, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri).header("content-type", "application/json");
    let req = req.body(body.map_or(Body::empty(), |b| Body::from(b.to_string()))).unwrap();
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() { Value::Null } else { serde_json::from_slice(&bytes).unwrap() };
    (status, v)
}

async fn new_session(app: &Router) -> String {
    let (status, v) = call(app, Method::POST, "/sessions", None).await;
    assert_eq!(status, StatusCode::CREATED);
    v["session_id"].as_str().unwrap().to_string()
}

async fn say(app: &Router, id: &str, text: &str) -> TurnTrace {
    let (status, v) = call(app, Method::POST, &format!("/sessions/{id}/messages"), Some(json!({ "text": text }))).await;
    assert_eq!(status, StatusCode::OK, "{v}");
    serde_json::from_value(v).unwrap()
}

#[tokio::test]
async fn session_turn_and_trace() {
    let (app, _) = app(None);
    let id = new_session(&app).await;
    let trace = say(&app, &id, "Search for the emails I received today").await;
    let calls = trace.turn.final_calls();
    assert_eq!(calls.len(), 1);
    assert_eq!(calls[0].call.api_name, "search_email");
    assert!(calls[0].result.is_ok());
    assert!(trace.stage_order_ok());
    assert_eq!(trace.session_id, id);

    let (status, all) = call(&app, Method::GET, &format!("/sessions/{id}/trace"), None).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(all.as_array().unwrap().len(), 1);
    let (_, mem) = call(&app, Method::GET, &format!("/sessions/{id}/memory"), None).await;
    assert_eq!(mem["last_call"][0]["api_name"], "search_email");
    let (_, list) = call(&app, Method::GET, "/sessions", None).await;
    assert_eq!(list["sessions"], json!([id]));
}

#[tokio::test]
async fn errors_are_json() {
    let (app, _) = app(None);
    let (status, v) = call(&app, Method::GET, "/sessions/nope/trace", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    assert!(v["error"].as_str().unwrap().contains("nope"));
    let (status, _) = call(&app, Method::POST, "/sessions/nope/messages", Some(json!({ "text": "hi" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let id = new_session(&app).await;
    let (status, v) = call(&app, Method::POST, &format!("/sessions/{id}/messages"), Some(json!({ "text": "  " }))).await;
    assert_eq!(status, StatusCode::BAD_REQUEST, "{v}");
    let (status, _) = call(&app, Method::PUT, "/admin/faults/no_such_api", Some(json!({ "mode": "fail_once" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = call(&app, Method::POST, "/admin/fixture", Some(json!({ "name": "F9" }))).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn catalog_lists_every_tool() {
    let (app, _) = app(None);
    let (status, v) = call(&app, Method::GET, "/catalog", None).await;
    assert_eq!(status, StatusCode::OK);
    let tools = v.as_array().unwrap();
    assert_eq!(tools.len(), 21);
    assert!(tools.iter().any(|t| t["name"] == "create_meeting"));
}

#[tokio::test]
async fn injected_fault_is_repaired() {
    let (app, _) = app(None);
    let (status, faults) = call(&app, Method::PUT, "/admin/faults/search_email", Some(json!({ "mode": "fail_once" }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(faults, json!({ "search_email": "fail_once" }));
    let id = new_session(&app).await;
    let trace = say(&app, &id, "Search for the emails I received today").await;
    assert_eq!(trace.turn.calls.len(), 2);
    assert!(!trace.turn.calls[0].result.is_ok());
    assert!(trace.turn.final_calls()[0].result.is_ok());
    assert!(trace.stages.iter().any(|s| format!("{:?}", s.stage) == "Repair"));

    call(&app, Method::PUT, "/admin/faults/search_email", Some(json!({ "mode": "fail_always" }))).await;
    let (_, faults) = call(&app, Method::DELETE, "/admin/faults/search_email", None).await;
    assert_eq!(faults, json!({}));
    call(&app, Method::PUT, "/admin/faults/delete_email", Some(json!({ "mode": "fail_always" }))).await;
    let (_, faults) = call(&app, Method::DELETE, "/admin/faults", None).await;
    assert_eq!(faults, json!({}));
}

#[tokio::test]
async fn fixture_reset_and_admin_off() {
    let (app, orch) = app(None);
    let id = new_session(&app).await;
    say(&app, &id, "Create a meeting at 3 PM today, the topic is project discussion, invite Jiashu Xia").await;
    let grown = orch.sim().snapshot();
    let (status, v) = call(&app, Method::POST, "/admin/fixture", Some(json!({ "name": "F1", "seed": 0 }))).await;
    assert_eq!(status, StatusCode::OK);
    assert_eq!(v["fixture"], "F1");
    assert_ne!(orch.sim().snapshot(), grown);
    assert_eq!(orch.sim().snapshot(), OfficeSim::named("F1", 0).unwrap().snapshot());
    // Sessions survive a fixture reset.
    assert_eq!(orch.trace(&id).unwrap().len(), 1);

    let locked = router(AppState { orch, state_path: None }, false);
    let (status, _) = call(&locked, Method::GET, "/admin/faults", None).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn state_survives_restart() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("state.json");
    let (first, orch) = app(Some(path.clone()));
    let id = new_session(&first).await;
    say(&first, &id, "Create a meeting at 3 PM today, the topic is project discussion, invite Jiashu Xia").await;
    assert!(path.exists());

    let (second, restored) = app(Some(path.clone()));
    assert!(load_state(&path, &restored).unwrap());
    assert_eq!(restored.persist(), orch.persist());
    let trace = say(&second, &id, "Move the start time up to 2 PM").await;
    assert!(trace.turn.related);
    let start = trace.turn.final_calls()[0].call.args.get("start_time").and_then(|v| v.as_text()).unwrap().to_string();
    assert!(start.ends_with("T14:00:00"), "{start}");
    // A fresh session id does not collide with the restored one.
    assert_ne!(new_session(&second).await, id);
}

#[test]
fn missing_or_corrupt_state() {
    let dir = tempfile::tempdir().unwrap();
    let sim = Arc::new(OfficeSim::named("F1", 0).unwrap());
    let orch = Orchestrator::reference(sim, PipelineConfig::default());
    assert!(!load_state(&dir.path().join("absent.json"), &orch).unwrap());
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{ not json").unwrap();
    assert!(load_state(&bad, &orch).is_err());
    save_state(&bad, &orch).unwrap();
    assert!(load_state(&bad, &orch).unwrap());
}
