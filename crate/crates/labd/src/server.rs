//! HTTP and WebSocket front end.

use std::net::SocketAddr;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::ws::{Message, WebSocket, WebSocketUpgrade};
use axum::extract::{Path, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::Value;

use crate::api::{ApiError, ApiRequest, ApiResponse};
use crate::executor::Executor;
use crate::store::{load_run, StoreError};

pub type Shared = Arc<Executor>;

pub fn router(exec: Shared) -> Router {
    Router::new()
        .route("/api", post(api))
        .route("/api/state", get(state))
        .route("/ws/runs/{id}", get(ws_run))
        .route("/runs/{id}", get(get_run))
        .route("/runs/{id}/trace.csv", get(trace))
        .with_state(exec)
}

fn respond(r: ApiResponse) -> Response {
    let status = StatusCode::from_u16(r.status()).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
    (status, Json(r)).into_response()
}

fn error(e: ApiError) -> Response {
    respond(ApiResponse::err(0, e))
}

async fn api(State(exec): State<Shared>, body: Bytes) -> Response {
    let value: Value = match serde_json::from_slice(&body) {
        Ok(v) => v,
        Err(e) => return error(ApiError::schema(format!("malformed json: {e}"))),
    };
    let id = value.get("id").and_then(Value::as_u64).unwrap_or(0);
    let req: ApiRequest = match serde_json::from_value(value) {
        Ok(r) => r,
        Err(e) => return respond(ApiResponse::err(id, ApiError::schema(e.to_string()))),
    };
    if req.verb == "get_state" {
        return respond(ApiResponse::ok(req.id, exec.snapshot()));
    }
    respond(exec.call(req).await)
}

async fn state(State(exec): State<Shared>) -> Json<Value> {
    Json(exec.snapshot())
}

fn store_error(e: StoreError) -> Response {
    match e {
        StoreError::NotFound(id) => error(ApiError::not_found(format!("run {id}"))),
        other => error(ApiError::internal(other.to_string())),
    }
}

async fn get_run(State(exec): State<Shared>, Path(id): Path<u64>) -> Response {
    match load_run(exec.output_dir(), id) {
        Ok(run) => Json(run).into_response(),
        Err(e) => store_error(e),
    }
}

async fn trace(State(exec): State<Shared>, Path(id): Path<u64>) -> Response {
    let run = match load_run(exec.output_dir(), id) {
        Ok(run) => run,
        Err(e) => return store_error(e),
    };
    let mut buf = Vec::new();
    if let Err(e) = maglab_core::virtlab::write_trace_csv(&run.record, &mut buf) {
        return error(ApiError::internal(e.to_string()));
    }
    ([(header::CONTENT_TYPE, "text/csv")], buf).into_response()
}

async fn ws_run(State(exec): State<Shared>, Path(id): Path<u64>, ws: WebSocketUpgrade) -> Response {
    if !exec.hub().contains(id) {
        return error(ApiError::not_found(format!("no stream for run {id}")));
    }
    ws.on_upgrade(move |socket| stream_run(exec, id, socket))
}

/// Replays the run from the first message, then follows it until it closes.
async fn stream_run(exec: Shared, id: u64, mut socket: WebSocket) {
    let hub = exec.hub().clone();
    let mut rx = hub.subscribe();
    let mut sent = 0;
    loop {
        rx.borrow_and_update();
        let Some((msgs, done)) = hub.read(id, sent) else { break };
        for m in msgs {
            let text = serde_json::to_string(&m).expect("stream message serializes");
            if socket.send(Message::Text(text.into())).await.is_err() {
                return;
            }
            sent += 1;
        }
        if done || rx.changed().await.is_err() {
            break;
        }
    }
    let _ = socket.send(Message::Close(None)).await;
}

pub async fn serve(exec: Shared, addr: SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    serve_listener(exec, listener).await
}

pub async fn serve_listener(exec: Shared, listener: tokio::net::TcpListener) -> std::io::Result<()> {
    axum::serve(listener, router(exec))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await
}
