mod common;

use std::sync::Arc;

use futures_util::StreamExt;
use maglab_labd::api::{StreamEvent, StreamMessage};
use maglab_labd::server::serve_listener;
use maglab_labd::{ApiRequest, Executor};
use serde_json::json;
use tokio_tungstenite::tungstenite::Message;

async fn read_stream(url: &str) -> Vec<StreamMessage> {
    let (mut ws, _) = tokio_tungstenite::connect_async(url).await.unwrap();
    let mut out = Vec::new();
    while let Some(msg) = ws.next().await {
        match msg.unwrap() {
            Message::Text(t) => out.push(serde_json::from_str(t.as_str()).unwrap()),
            Message::Close(_) => break,
            _ => {}
        }
    }
    out
}

#[tokio::test(flavor = "multi_thread", worker_threads = 2)]
async fn run_progress_streams_over_websocket() {
    let dir = tempfile::tempdir().unwrap();
    let exec = Arc::new(Executor::start(common::lab(dir.path())));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    tokio::spawn(serve_listener(exec.clone(), listener));

    exec.call(ApiRequest::new(1, "set_solenoid", json!({"tesla": 0.025}))).await;
    exec.call(ApiRequest::new(2, "move_stage", json!({"x": -65.0, "y": 0.0, "z": -200.0}))).await;
    let params = json!({"start_hz": 50e6, "stop_hz": 60e6, "step_hz": 0.02e6});
    let ack = exec.call(ApiRequest::new(3, "run_experiment", json!({"kind": "spectroscopy", "params": params}))).await;
    assert!(ack.ok, "{:?}", ack.error);
    let id = ack.result.unwrap()["run_id"].as_u64().unwrap();

    let url = format!("ws://{addr}/ws/runs/{id}");
    let live = read_stream(&url).await;
    assert_eq!(live.len(), 502);
    assert!(live.iter().enumerate().all(|(i, m)| m.seq == i as u64));
    assert_eq!(live.last().unwrap().event, StreamEvent::Done);
    assert_eq!(live[10].data["index"], 10);

    // a late subscriber replays the same stream
    let late = read_stream(&url).await;
    assert_eq!(late, live);

    let missing = tokio_tungstenite::connect_async(format!("ws://{addr}/ws/runs/424242")).await;
    assert!(missing.is_err());
}
