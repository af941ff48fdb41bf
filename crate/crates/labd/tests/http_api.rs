mod common;

use std::sync::Arc;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use maglab_labd::server::router;
use maglab_labd::Executor;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn send(app: &axum::Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (status, serde_json::from_slice(&bytes).unwrap_or(Value::Null))
}

async fn post(app: &axum::Router, body: Value) -> (StatusCode, Value) {
    let req = Request::post("/api").header("content-type", "application/json").body(Body::from(body.to_string())).unwrap();
    send(app, req).await
}

async fn state(app: &axum::Router) -> Value {
    send(app, Request::get("/api/state").body(Body::empty()).unwrap()).await.1
}

fn app(dir: &std::path::Path) -> axum::Router {
    router(Arc::new(Executor::start(common::lab(dir))))
}

#[tokio::test]
async fn solenoid_write_is_visible_to_the_next_read() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    for tesla in [0.025, 0.0, 0.031] {
        let (status, body) = post(&app, json!({"id": 7, "verb": "set_solenoid", "payload": {"tesla": tesla}})).await;
        assert_eq!(status, StatusCode::OK, "{body}");
        assert_eq!(body["id"], 7);
        assert_eq!(state(&app).await["solenoid_tesla"], json!(tesla));
    }
}

#[tokio::test]
async fn stage_moves_inside_limits_and_rejects_outside() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = post(&app, json!({"id": 1, "verb": "move_stage", "payload": {"x": -250.0, "y": 0.0, "z": -200.0}})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    assert_eq!(state(&app).await["target"], json!([-250.0, 0.0, -200.0]));

    let (status, body) = post(&app, json!({"id": 2, "verb": "move_stage", "payload": {"x": -400.0, "y": 0.0, "z": 0.0}})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"]["kind"], "stage");
    assert_eq!(state(&app).await["target"], json!([-250.0, 0.0, -200.0]));
}

#[tokio::test]
async fn malformed_requests_are_schema_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let bad = [
        json!({"id": 1, "verb": "move_stage", "payload": {"x": "far"}}),
        json!({"id": 1, "verb": "move_stage", "payload": {"x": 0.0, "y": 0.0, "z": -200.0, "speed": 3}}),
        json!({"id": 1, "verb": "teleport"}),
        json!({"verb": "get_state"}),
        json!({"id": 1, "verb": "run_experiment", "payload": {"kind": "spectroscopy", "params": {"start_hz": 2e6, "stop_hz": 1e6, "step_hz": 1e5}}}),
    ];
    for b in bad {
        let (status, body) = post(&app, b.clone()).await;
        assert_eq!(status, StatusCode::BAD_REQUEST, "{b} -> {body}");
        assert_eq!(body["error"]["kind"], "schema");
    }
    let req = Request::post("/api").body(Body::from("{not json")).unwrap();
    assert_eq!(send(&app, req).await.0, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn domain_and_not_found_errors() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    let (status, body) = post(&app, json!({"id": 1, "verb": "set_solenoid", "payload": {"tesla": 4.0}})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY, "{body}");
    let (status, _) = post(&app, json!({"id": 1, "verb": "get_run", "payload": {"run_id": 999}})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = post(&app, json!({"id": 1, "verb": "run_scenario", "payload": {"name": "nope"}})).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
    let (status, _) = send(&app, Request::get("/runs/999").body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::NOT_FOUND);
}

#[tokio::test]
async fn run_and_trace_are_served() {
    let dir = tempfile::tempdir().unwrap();
    let app = app(dir.path());
    post(&app, json!({"id": 1, "verb": "move_stage", "payload": {"x": -65.0, "y": 0.0, "z": -200.0}})).await;
    post(&app, json!({"id": 2, "verb": "set_solenoid", "payload": {"tesla": 0.025}})).await;
    let params = json!({"start_hz": 50e6, "stop_hz": 60e6, "step_hz": 0.1e6});
    let (status, body) =
        post(&app, json!({"id": 3, "verb": "run_experiment", "payload": {"kind": "spectroscopy", "params": params, "wait": true}})).await;
    assert_eq!(status, StatusCode::OK, "{body}");
    let id = body["result"]["run_id"].as_u64().unwrap();
    let (status, run) = send(&app, Request::get(format!("/runs/{id}")).body(Body::empty()).unwrap()).await;
    assert_eq!(status, StatusCode::OK, "{run}");
    assert_eq!(run["run_id"], id);
    assert_eq!(run["record"]["sweep"].as_array().unwrap().len(), 101);

    let resp = app.clone().oneshot(Request::get(format!("/runs/{id}/trace.csv")).body(Body::empty()).unwrap()).await.unwrap();
    assert_eq!(resp.status(), StatusCode::OK);
    let text = String::from_utf8(resp.into_body().collect().await.unwrap().to_bytes().to_vec()).unwrap();
    assert!(text.starts_with("sweep_value,counts,shots,p_blockade\n"));
    assert_eq!(text.lines().count(), 102);
}
