//! The lab: live world, run log and the request handler.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use chrono::Utc;
use maglab_core::calibrate::{find_sweet_spot, run_scenario, CalibrationError, Scenario, SweetSpotConfig};
use maglab_core::geometry::StagePosition;
use maglab_core::magnetics::SolenoidSpec;
use maglab_core::spinmodel::readout_visibility;
use maglab_core::virtlab::{
    fit_decay, fit_rabi, fit_resonance, rb_fit, run_hahn_echo, run_rabi, run_ramsey, run_rb, run_spectroscopy,
    DecayModel, FitResult, PointEvent, RbSettings, RunKind, RunRecord, SpectroscopySweep, VirtlabError, World,
};
use serde_json::{json, Value};
use thiserror::Error;

use crate::api::{
    parse_payload, ApiError, ApiRequest, ApiResponse, FindSweetSpot, GetRun, MoveStage, RbParams, RunExperiment,
    RunScenario, SetCompensation, SetSolenoid, SpectroscopyParams, StreamEvent, TimeSweepParams,
};
use crate::config::{ConfigError, LabConfig};
use crate::runlog::{NewEntry, RunLog, RunLogError};
use crate::store::{load_run, run_log_path, write_bundle, write_payload, StoreError, StoredRun};
use crate::stream::StreamHub;

#[derive(Debug, Error)]
pub enum LabError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Log(#[from] RunLogError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub struct Lab {
    config: LabConfig,
    output_dir: PathBuf,
    world: World,
    /// Last requested stage position; differs from the motor command under compensation.
    target: StagePosition,
    compensate: bool,
    log: RunLog,
    hub: StreamHub,
}

fn arr(p: StagePosition) -> [f64; 3] {
    [p.x, p.y, p.z]
}

fn now_ms() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64)
}

fn bundle_timestamp() -> String {
    Utc::now().format("%Y%m%dT%H%M%S%.3fZ").to_string()
}

fn virt_error(e: VirtlabError) -> ApiError {
    match e {
        VirtlabError::Stage(s) => ApiError::domain("stage", s.to_string()),
        VirtlabError::Validation(m) => ApiError::schema(m),
        other => ApiError::domain("experiment", other.to_string()),
    }
}

fn cal_error(e: CalibrationError) -> ApiError {
    match e {
        CalibrationError::Stage(s) => ApiError::domain("stage", s.to_string()),
        CalibrationError::Validation(m) => ApiError::schema(m),
        CalibrationError::UnknownScenario(n) => ApiError::not_found(format!("scenario {n:?}")),
        CalibrationError::Virtlab(v) => virt_error(v),
        other => ApiError::domain("calibration", other.to_string()),
    }
}

fn log_error(e: RunLogError) -> ApiError {
    ApiError::read_only(e.to_string())
}

fn fit_json(fit: &FitResult) -> Value {
    let estimates: serde_json::Map<String, Value> =
        fit.estimates.iter().map(|e| (e.name.clone(), serde_json::to_value(e).unwrap_or(Value::Null))).collect();
    json!({
        "model": fit.model,
        "usable": fit.usable,
        "detected": fit.detected,
        "estimates": estimates,
        "flags": fit.flags,
        "peaks": fit.peaks,
    })
}

fn time_axis(t_max: f64, points: usize) -> Result<Vec<f64>, ApiError> {
    if !(t_max > 0.0 && t_max.is_finite()) || points < 5 {
        return Err(ApiError::schema("t_max_s must be positive and points at least 5"));
    }
    Ok((0..points).map(|i| t_max * i as f64 / (points - 1) as f64).collect())
}

impl Lab {
    pub fn open(config: LabConfig) -> Result<Self, LabError> {
        Self::with_hub(config, StreamHub::new())
    }

    pub fn with_hub(config: LabConfig, hub: StreamHub) -> Result<Self, LabError> {
        let output_dir = config.output_dir.clone();
        std::fs::create_dir_all(&output_dir)?;
        let log = RunLog::open(&run_log_path(&output_dir), config.runlog.fsync)?;
        let world = config.world()?;
        let compensate = config.stage.compensation;
        let target = world.stage.state.commanded;
        Ok(Self { config, output_dir, world, target, compensate, log, hub })
    }

    pub fn config(&self) -> &LabConfig {
        &self.config
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn output_dir(&self) -> &Path {
        &self.output_dir
    }

    pub fn hub(&self) -> &StreamHub {
        &self.hub
    }

    pub fn log(&self) -> &RunLog {
        &self.log
    }

    pub fn log_mut(&mut self) -> &mut RunLog {
        &mut self.log
    }

    pub fn snapshot(&self) -> Value {
        let s = &self.world.stage.state;
        let truth = self.world.larmor().ok();
        json!({
            "target": arr(self.target),
            "commanded": arr(s.commanded),
            "true_position": arr(s.true_pos),
            "backlash_error": arr(s.error()),
            "events": s.events,
            "solenoid_tesla": self.world.solenoid.setpoint,
            "compensation": self.compensate,
            "qubit": self.config.live_qubit,
            "limits": {"min": self.world.stage.config.limits.min, "max": self.world.stage.config.limits.max},
            "field_tesla": self.world.field().ok().map(|b| [b.bx, b.by, b.bz]),
            // simulation truth, not available to a real experiment
            "truth": truth.map(|t| json!({"f_larmor": t.f_larmor, "theta_deg": t.theta_deg, "b_mag": t.b_mag})),
            "next_seq": self.log.next_seq(),
            "read_only": self.log.read_only(),
        })
    }

    /// Handles one request and returns the final response. Queued experiments
    /// also send an early acknowledgement with the run id through `ack`.
    pub fn handle(&mut self, req: &ApiRequest, ack: &mut dyn FnMut(ApiResponse)) -> ApiResponse {
        let outcome = self.dispatch(req, ack);
        let mut resp = match outcome {
            Ok(v) => ApiResponse::ok(req.id, v),
            Err(e) => ApiResponse::err(req.id, e),
        };
        resp.read_only = self.log.read_only().map(String::from);
        resp
    }

    /// Handles a request to completion, ignoring any early acknowledgement.
    pub fn handle_request(&mut self, req: &ApiRequest) -> ApiResponse {
        self.handle(req, &mut |_| {})
    }

    fn dispatch(&mut self, req: &ApiRequest, send: &mut dyn FnMut(ApiResponse)) -> Result<Value, ApiError> {
        match req.verb.as_str() {
            "get_state" => Ok(self.snapshot()),
            "move_stage" => self.move_stage(parse_payload(&req.payload)?),
            "set_solenoid" => self.set_solenoid(parse_payload(&req.payload)?),
            "set_compensation" => self.set_compensation(parse_payload(&req.payload)?),
            "run_experiment" => self.run_experiment(req.id, parse_payload(&req.payload)?, send),
            "run_scenario" => self.run_scenario(parse_payload(&req.payload)?),
            "find_sweet_spot" => self.find_sweet_spot(parse_payload(&req.payload)?),
            "get_run" => {
                let GetRun { run_id } = parse_payload(&req.payload)?;
                let run = load_run(&self.output_dir, run_id).map_err(|e| match e {
                    StoreError::NotFound(id) => ApiError::not_found(format!("run {id}")),
                    other => ApiError::internal(other.to_string()),
                })?;
                serde_json::to_value(run).map_err(|e| ApiError::internal(e.to_string()))
            }
            other => Err(ApiError::schema(format!("unknown verb {other:?}"))),
        }
    }

    fn writable(&self) -> Result<(), ApiError> {
        match self.log.read_only() {
            Some(r) => Err(ApiError::read_only(format!("run log failed earlier: {r}"))),
            None => Ok(()),
        }
    }

    fn log_change(&mut self, kind: &str, detail: Value) -> Result<u64, ApiError> {
        let seq = self.log.next_seq();
        let rel = format!("changes/{seq:06}.json");
        let path = self.output_dir.join(&rel);
        let written = path
            .parent()
            .map_or(Ok(()), std::fs::create_dir_all)
            .and_then(|_| std::fs::write(&path, detail.to_string()));
        if let Err(e) = written {
            self.log.poison(&e.to_string());
            return Err(ApiError::read_only(e.to_string()));
        }
        let entry = NewEntry {
            kind: kind.into(),
            position: arr(self.target),
            seed: 0,
            payload_path: Some(rel),
            scenario: None,
        };
        Ok(self.log.append(entry).map_err(log_error)?.seq)
    }

    fn move_stage(&mut self, m: MoveStage) -> Result<Value, ApiError> {
        self.writable()?;
        let target = StagePosition::new(m.x, m.y, m.z);
        let compensate = m.compensate.unwrap_or(self.compensate);
        self.world.stage.move_to(target, compensate).map_err(|e| ApiError::domain("stage", e.to_string()))?;
        self.target = target;
        let seq = self.log_change("move_stage", json!({"target": arr(target), "compensate": compensate}))?;
        let mut state = self.snapshot();
        state["seq"] = json!(seq);
        Ok(state)
    }

    fn set_solenoid(&mut self, s: SetSolenoid) -> Result<Value, ApiError> {
        self.writable()?;
        let spec = SolenoidSpec { setpoint: s.tesla, ..self.world.solenoid.clone() };
        spec.validate().map_err(|e| ApiError::domain("solenoid", e.to_string()))?;
        self.world.solenoid = spec;
        let seq = self.log_change("set_solenoid", json!({"tesla": s.tesla}))?;
        let mut state = self.snapshot();
        state["seq"] = json!(seq);
        Ok(state)
    }

    fn set_compensation(&mut self, s: SetCompensation) -> Result<Value, ApiError> {
        self.writable()?;
        self.compensate = s.enabled;
        let seq = self.log_change("set_compensation", json!({"enabled": s.enabled}))?;
        let mut state = self.snapshot();
        state["seq"] = json!(seq);
        Ok(state)
    }

    /// Stores a finished run and appends its log entry; returns the run id.
    fn store_run(
        &mut self,
        mut record: RunRecord,
        fit: Option<FitResult>,
        scenario: Option<&str>,
    ) -> Result<u64, ApiError> {
        let run_id = self.log.next_seq();
        record.timestamp_ms = now_ms();
        let position = arr(record.position);
        let seed = record.seed;
        let kind = record.kind.name().to_string();
        let run = StoredRun { run_id, record, fit, scenario: scenario.map(String::from) };
        let rel = write_payload(&self.output_dir, &run).map_err(|e| {
            self.log.poison(&e.to_string());
            ApiError::read_only(e.to_string())
        })?;
        let entry = NewEntry { kind, position, seed, payload_path: Some(rel), scenario: scenario.map(String::from) };
        let seq = self.log.append(entry).map_err(log_error)?.seq;
        debug_assert_eq!(seq, run_id);
        Ok(run_id)
    }

    fn run_experiment(
        &mut self,
        req_id: u64,
        r: RunExperiment,
        send: &mut dyn FnMut(ApiResponse),
    ) -> Result<Value, ApiError> {
        self.writable()?;
        let run_id = self.log.next_seq();
        let kind = r.kind.clone();
        // validate before announcing the run
        enum Plan {
            Spectroscopy(SpectroscopySweep),
            Rabi(Vec<f64>, f64, u64),
            Ramsey(Vec<f64>, f64, u64),
            Hahn(Vec<f64>, u64),
            Rb(RbSettings),
        }
        let plan = match kind.as_str() {
            "spectroscopy" => {
                let p: SpectroscopyParams = parse_payload(&r.params)?;
                if !(p.step_hz > 0.0 && p.stop_hz > p.start_hz) {
                    return Err(ApiError::schema("need step_hz > 0 and stop_hz > start_hz"));
                }
                if (p.stop_hz - p.start_hz) / p.step_hz > 1e6 {
                    return Err(ApiError::schema("more than a million sweep points"));
                }
                let sweep =
                    SpectroscopySweep::linear(p.start_hz, p.stop_hz, p.step_hz, p.pulse_duration_s, p.amplitude, p.shots);
                sweep.validate().map_err(virt_error)?;
                Plan::Spectroscopy(sweep)
            }
            "rabi" => {
                let p: TimeSweepParams = parse_payload(&r.params)?;
                Plan::Rabi(time_axis(p.t_max_s, p.points)?, p.amplitude, p.shots)
            }
            "ramsey" => {
                let p: TimeSweepParams = parse_payload(&r.params)?;
                Plan::Ramsey(time_axis(p.t_max_s, p.points)?, p.detuning_hz, p.shots)
            }
            "hahn" => {
                let p: TimeSweepParams = parse_payload(&r.params)?;
                Plan::Hahn(time_axis(p.t_max_s, p.points)?, p.shots)
            }
            "rb" => {
                let p: RbParams = parse_payload(&r.params)?;
                let lp = self.world.larmor().map_err(virt_error)?;
                let readout = readout_visibility(&self.world.qubit, lp.theta_deg);
                let d = RbSettings::default();
                let s = RbSettings {
                    lengths: p.lengths.unwrap_or(d.lengths),
                    randomizations: p.randomizations.unwrap_or(d.randomizations),
                    shots: p.shots.unwrap_or(d.shots),
                    visibility: readout.visibility,
                    baseline: readout.baseline,
                    ..d
                };
                if s.lengths.is_empty() || s.lengths.contains(&0) || s.randomizations == 0 || s.shots == 0 {
                    return Err(ApiError::schema("rb needs positive lengths, randomizations and shots"));
                }
                Plan::Rb(s)
            }
            other => return Err(ApiError::schema(format!("unknown experiment kind {other:?}"))),
        };

        self.hub.open(run_id);
        if !r.wait {
            send(ApiResponse::ok(req_id, json!({"run_id": run_id, "kind": kind, "status": "running"})));
        }
        let hub = self.hub.clone();
        let mut on_point = |p: &PointEvent| {
            hub.push(
                run_id,
                StreamEvent::Point,
                json!({"index": p.index, "total": p.total, "sweep_value": p.sweep_value, "counts": p.counts, "shots": p.shots}),
            );
        };
        let result: Result<(RunRecord, FitResult), ApiError> = (|| {
            let w = &mut self.world;
            Ok(match plan {
                Plan::Spectroscopy(sweep) => {
                    let rec = run_spectroscopy(w, &sweep, &mut on_point).map_err(virt_error)?;
                    let fit = fit_resonance(&rec).map_err(virt_error)?;
                    (rec, fit)
                }
                Plan::Rabi(t, a, shots) => {
                    let rec = run_rabi(w, &t, a, shots, &mut on_point).map_err(virt_error)?;
                    let fit = fit_rabi(&rec).map_err(virt_error)?;
                    (rec, fit)
                }
                Plan::Ramsey(t, d, shots) => {
                    let rec = run_ramsey(w, &t, d, shots, &mut on_point).map_err(virt_error)?;
                    let fit = fit_decay(&rec, DecayModel::Ramsey).map_err(virt_error)?;
                    (rec, fit)
                }
                Plan::Hahn(t, shots) => {
                    let rec = run_hahn_echo(w, &t, shots, &mut on_point).map_err(virt_error)?;
                    let fit = fit_decay(&rec, DecayModel::Hahn).map_err(virt_error)?;
                    (rec, fit)
                }
                Plan::Rb(s) => {
                    let seed = w.next_seed("rb");
                    let rb = run_rb(seed, &s).map_err(virt_error)?;
                    let total = s.lengths.len();
                    let mut counts = Vec::with_capacity(total);
                    for (i, (n, c)) in s.lengths.iter().zip(&rb.counts).enumerate() {
                        let sum: u64 = c.iter().sum();
                        counts.push(sum);
                        on_point(&PointEvent {
                            index: i,
                            total,
                            sweep_value: *n as f64,
                            counts: sum,
                            shots: s.shots * s.randomizations as u64,
                        });
                    }
                    let lengths: Vec<f64> = s.lengths.iter().map(|&n| n as f64).collect();
                    let fit = rb_fit(&lengths, &rb.survivals, Some(s.baseline + 0.5 * s.visibility)).map_err(virt_error)?;
                    let meta = [
                        ("p_dep".to_string(), s.p_dep),
                        ("visibility".to_string(), s.visibility),
                        ("baseline".to_string(), s.baseline),
                        ("randomizations".to_string(), s.randomizations as f64),
                    ]
                    .into_iter()
                    .collect();
                    let rec = RunRecord {
                        kind: RunKind::Rb,
                        position: w.stage.state.commanded,
                        true_position: w.stage.state.true_pos,
                        sweep: lengths,
                        counts,
                        shots: vec![s.shots * s.randomizations as u64; total],
                        seed,
                        timestamp_ms: 0,
                        meta,
                    };
                    (rec, fit)
                }
            })
        })();
        match result {
            Ok((rec, fit)) => {
                let summary = fit_json(&fit);
                let points = rec.len();
                let stored = self.store_run(rec, Some(fit), None);
                match stored {
                    Ok(id) => {
                        self.hub.push(run_id, StreamEvent::Done, json!({"run_id": id, "fit": summary}));
                        Ok(json!({"run_id": id, "kind": kind, "status": "done", "points": points, "fit": summary}))
                    }
                    Err(e) => {
                        self.hub.push(run_id, StreamEvent::Error, json!({"message": e.message}));
                        Err(e)
                    }
                }
            }
            Err(e) => {
                self.hub.push(run_id, StreamEvent::Error, json!({"message": e.message}));
                Err(e)
            }
        }
    }

    fn run_scenario(&mut self, r: RunScenario) -> Result<Value, ApiError> {
        self.writable()?;
        let scenario: Scenario = r.name.parse().map_err(cal_error)?;
        if !self.config.scenarios().contains(&scenario) {
            return Err(ApiError::not_found(format!("scenario {:?} is not enabled in the config", r.name)));
        }
        let ctx = self.config.scenario_context().map_err(|e| ApiError::internal(e.to_string()))?;
        let bundle = run_scenario(scenario, &ctx);
        let stamp = bundle_timestamp();
        let dir = write_bundle(&self.output_dir, &bundle, &stamp).map_err(|e| {
            self.log.poison(&e.to_string());
            ApiError::read_only(e.to_string())
        })?;
        let scenario_id = format!(
            "{}/{}",
            scenario.name(),
            dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or(stamp)
        );
        let mut run_ids = Vec::with_capacity(bundle.records.len());
        for rec in bundle.records.iter().cloned() {
            run_ids.push(self.store_run(rec, None, Some(&scenario_id))?);
        }
        Ok(json!({
            "scenario": scenario.name(),
            "scenario_id": scenario_id,
            "dir": dir,
            "passed": bundle.passed(),
            "partial": bundle.partial,
            "checks": bundle.checks,
            "summary": bundle.summary,
            "verdict": bundle.verdict,
            "runs": run_ids.len(),
            "first_run_id": run_ids.first(),
            "last_run_id": run_ids.last(),
        }))
    }

    fn find_sweet_spot(&mut self, f: FindSweetSpot) -> Result<Value, ApiError> {
        self.writable()?;
        let mut config = SweetSpotConfig { range: (f.range[0], f.range[1]), compensate: self.compensate, ..SweetSpotConfig::default() };
        if let Some(b) = f.budget {
            config.budget = b;
        }
        if let Some([y, z]) = f.base {
            config.base = StagePosition::new(config.base.x, y, z);
        }
        let result = find_sweet_spot(&mut self.world, &config).map_err(cal_error)?;
        let id = format!("find_sweet_spot/{}", bundle_timestamp());
        for (rec, fit) in result.records.iter().cloned().zip(result.fits.iter().cloned()) {
            self.store_run(rec, Some(fit), Some(&id))?;
        }
        let mut v = serde_json::to_value(&result).map_err(|e| ApiError::internal(e.to_string()))?;
        v["scenario_id"] = json!(id);
        Ok(v)
    }
}
