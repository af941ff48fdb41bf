//! Request, response and stream messages of the lab API.

use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ApiRequest {
    pub id: u64,
    pub verb: String,
    #[serde(default)]
    pub payload: Value,
}

impl ApiRequest {
    pub fn new(id: u64, verb: &str, payload: Value) -> Self {
        Self { id, verb: verb.into(), payload }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    /// HTTP-style status: 400 schema, 404 not found, 422 domain, 503 read-only.
    pub status: u16,
    pub kind: String,
    pub message: String,
}

impl ApiError {
    pub fn schema(message: impl Into<String>) -> Self {
        Self { status: 400, kind: "schema".into(), message: message.into() }
    }

    pub fn not_found(message: impl Into<String>) -> Self {
        Self { status: 404, kind: "not_found".into(), message: message.into() }
    }

    pub fn domain(kind: &str, message: impl Into<String>) -> Self {
        Self { status: 422, kind: kind.into(), message: message.into() }
    }

    pub fn read_only(message: impl Into<String>) -> Self {
        Self { status: 503, kind: "read_only".into(), message: message.into() }
    }

    pub fn internal(message: impl Into<String>) -> Self {
        Self { status: 500, kind: "internal".into(), message: message.into() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiResponse {
    pub id: u64,
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<ApiError>,
    /// Position of the request in the executor queue.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ticket: Option<u64>,
    /// Set once the run log has failed; reported on every response after that.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub read_only: Option<String>,
}

impl ApiResponse {
    pub fn ok(id: u64, result: Value) -> Self {
        Self { id, ok: true, result: Some(result), error: None, ticket: None, read_only: None }
    }

    pub fn err(id: u64, error: ApiError) -> Self {
        Self { id, ok: false, result: None, error: Some(error), ticket: None, read_only: None }
    }

    pub fn status(&self) -> u16 {
        self.error.as_ref().map_or(200, |e| e.status)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StreamEvent {
    Point,
    Done,
    Error,
}

/// One message of a run's progress stream. `seq` starts at 0 and has no gaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StreamMessage {
    pub run_id: u64,
    pub seq: u64,
    pub event: StreamEvent,
    pub data: Value,
}

// Payloads. Unknown fields are schema errors.

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MoveStage {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    #[serde(default)]
    pub compensate: Option<bool>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetSolenoid {
    pub tesla: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SetCompensation {
    pub enabled: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunExperiment {
    pub kind: String,
    #[serde(default)]
    pub params: Value,
    /// Reply after the run finishes instead of right after it is queued.
    #[serde(default)]
    pub wait: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectroscopyParams {
    pub start_hz: f64,
    pub stop_hz: f64,
    pub step_hz: f64,
    #[serde(default = "default_pulse")]
    pub pulse_duration_s: f64,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default = "default_shots")]
    pub shots: u64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSweepParams {
    pub t_max_s: f64,
    #[serde(default = "default_points")]
    pub points: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub detuning_hz: f64,
    #[serde(default = "default_shots")]
    pub shots: u64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RbParams {
    pub lengths: Option<Vec<usize>>,
    pub randomizations: Option<usize>,
    pub shots: Option<u64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunScenario {
    pub name: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FindSweetSpot {
    pub range: [f64; 2],
    #[serde(default)]
    pub budget: Option<usize>,
    /// Stage y and z held during the search, mm; defaults to (0, -200).
    #[serde(default)]
    pub base: Option<[f64; 2]>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GetRun {
    pub run_id: u64,
}

fn default_pulse() -> f64 {
    1e-6
}

fn default_amplitude() -> f64 {
    0.5
}

fn default_shots() -> u64 {
    200
}

fn default_points() -> usize {
    60
}

/// Parses a payload, treating `null` as an empty object.
pub fn parse_payload<T: serde::de::DeserializeOwned>(payload: &Value) -> Result<T, ApiError> {
    let v = if payload.is_null() { Value::Object(Default::default()) } else { payload.clone() };
    serde_json::from_value(v).map_err(|e| ApiError::schema(e.to_string()))
}
