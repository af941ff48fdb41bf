#![allow(dead_code)]

use std::path::Path;

use maglab_labd::config::DEFAULT_CONFIG;
use maglab_labd::{ApiRequest, ApiResponse, Lab, LabConfig};
use serde_json::Value;

pub fn config(dir: &Path) -> LabConfig {
    let mut cfg = LabConfig::from_toml(DEFAULT_CONFIG).unwrap();
    cfg.output_dir = dir.to_path_buf();
    cfg
}

pub fn lab(dir: &Path) -> Lab {
    Lab::open(config(dir)).unwrap()
}

pub fn call(lab: &mut Lab, verb: &str, payload: Value) -> ApiResponse {
    lab.handle_request(&ApiRequest::new(1, verb, payload))
}

pub fn ok(lab: &mut Lab, verb: &str, payload: Value) -> Value {
    let r = call(lab, verb, payload);
    assert!(r.ok, "{verb} failed: {:?}", r.error);
    r.result.unwrap()
}
