use std::collections::BTreeMap;
use std::f64::consts::PI;

use super::{RunKind, RunRecord, ShotSampler, SpectroscopySweep, VirtlabError, World};
use crate::spinmodel::{self, LarmorPoint};

/// Emitted after each sampled point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointEvent {
    pub index: usize,
    pub total: usize,
    pub sweep_value: f64,
    pub counts: u64,
    pub shots: u64,
}

/// Excitation probability after a square pulse detuned by `delta` from resonance.
pub fn detuned_rabi(f_rabi: f64, delta: f64, duration: f64) -> f64 {
    let omega2 = f_rabi * f_rabi + delta * delta;
    if omega2 == 0.0 {
        return 0.0;
    }
    (f_rabi * f_rabi / omega2) * (PI * omega2.sqrt() * duration).sin().powi(2)
}

struct Setup {
    point: LarmorPoint,
    visibility: f64,
    baseline: f64,
    meta: BTreeMap<String, f64>,
}

fn setup(world: &World) -> Result<Setup, VirtlabError> {
    world.validate()?;
    let point = world.larmor()?;
    let readout = spinmodel::readout_visibility(&world.qubit, point.theta_deg);
    let times = spinmodel::coherence_times(&world.qubit, point.theta_deg);
    let mut meta = BTreeMap::new();
    meta.insert("solenoid_tesla".into(), world.solenoid.setpoint);
    meta.insert("truth_f_larmor".into(), point.f_larmor);
    meta.insert("truth_theta_deg".into(), point.theta_deg);
    meta.insert("truth_b_tesla".into(), point.b_mag);
    meta.insert("truth_t2_star".into(), times.t2_star);
    meta.insert("truth_t2_hahn".into(), times.t2_hahn);
    meta.insert("truth_visibility".into(), readout.visibility);
    meta.insert("truth_baseline".into(), readout.baseline);
    Ok(Setup { point, visibility: readout.visibility, baseline: readout.baseline, meta })
}

fn check_shots(shots: u64) -> Result<(), VirtlabError> {
    if shots == 0 {
        return Err(VirtlabError::Validation("shots must be at least 1".into()));
    }
    Ok(())
}

fn check_axis(values: &[f64], what: &str) -> Result<(), VirtlabError> {
    if values.is_empty() {
        return Err(VirtlabError::Validation(format!("empty {what} list")));
    }
    if values.iter().any(|t| !t.is_finite() || *t < 0.0) {
        return Err(VirtlabError::Validation(format!("{what} values must be finite and non-negative")));
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn sample_trace(
    world: &mut World,
    kind: RunKind,
    sweep: &[f64],
    shots: u64,
    meta: BTreeMap<String, f64>,
    probability: impl Fn(f64) -> f64,
    on_point: &mut dyn FnMut(&PointEvent),
) -> RunRecord {
    let seed = world.next_seed(kind.name());
    let mut sampler = ShotSampler::new(seed);
    let mut counts = Vec::with_capacity(sweep.len());
    for (index, &v) in sweep.iter().enumerate() {
        let c = sampler.sample(probability(v), shots);
        counts.push(c);
        on_point(&PointEvent { index, total: sweep.len(), sweep_value: v, counts: c, shots });
    }
    RunRecord {
        kind,
        position: world.stage.state.commanded,
        true_position: world.stage.state.true_pos,
        sweep: sweep.to_vec(),
        counts,
        shots: vec![shots; sweep.len()],
        seed,
        timestamp_ms: 0,
        meta,
    }
}

/// Pulsed spectroscopy: one square pulse per shot at each drive frequency.
pub fn run_spectroscopy(
    world: &mut World,
    sweep: &SpectroscopySweep,
    on_point: &mut dyn FnMut(&PointEvent),
) -> Result<RunRecord, VirtlabError> {
    sweep.validate()?;
    let Setup { point, visibility, baseline, mut meta } = setup(world)?;
    let f_rabi = spinmodel::rabi_frequency(&world.qubit, point.f_larmor, sweep.drive_amplitude, point.theta_deg);
    meta.insert("pulse_duration".into(), sweep.pulse_duration);
    meta.insert("drive_amplitude".into(), sweep.drive_amplitude);
    meta.insert("truth_f_rabi".into(), f_rabi);
    let spurious = world.spurious.clone();
    let tp = sweep.pulse_duration;
    let p = move |f: f64| {
        let mut exc = detuned_rabi(f_rabi, f - point.f_larmor, tp);
        if let Some(line) = &spurious {
            exc = (exc + line.at(f)).min(1.0);
        }
        baseline + visibility * exc
    };
    Ok(sample_trace(world, RunKind::Spectroscopy, &sweep.frequencies, sweep.shots_per_point, meta, p, on_point))
}

/// On-resonance Rabi oscillation versus pulse duration.
pub fn run_rabi(
    world: &mut World,
    durations: &[f64],
    amplitude: f64,
    shots: u64,
    on_point: &mut dyn FnMut(&PointEvent),
) -> Result<RunRecord, VirtlabError> {
    check_axis(durations, "duration")?;
    check_shots(shots)?;
    let Setup { point, visibility, baseline, mut meta } = setup(world)?;
    let f_rabi = spinmodel::rabi_frequency(&world.qubit, point.f_larmor, amplitude, point.theta_deg);
    meta.insert("drive_amplitude".into(), amplitude);
    meta.insert("truth_f_rabi".into(), f_rabi);
    let p = move |t: f64| baseline + visibility * (PI * f_rabi * t).sin().powi(2);
    Ok(sample_trace(world, RunKind::Rabi, durations, shots, meta, p, on_point))
}

/// Ramsey fringes with a Gaussian envelope, detuned by `detuning` Hz.
pub fn run_ramsey(
    world: &mut World,
    t_wait: &[f64],
    detuning: f64,
    shots: u64,
    on_point: &mut dyn FnMut(&PointEvent),
) -> Result<RunRecord, VirtlabError> {
    check_axis(t_wait, "wait time")?;
    check_shots(shots)?;
    let Setup { visibility, baseline, mut meta, .. } = setup(world)?;
    let t2 = meta["truth_t2_star"];
    meta.insert("detuning".into(), detuning);
    let p = move |t: f64| {
        baseline + 0.5 * visibility * (1.0 + (2.0 * PI * detuning * t).cos() * (-(t / t2).powi(2)).exp())
    };
    Ok(sample_trace(world, RunKind::Ramsey, t_wait, shots, meta, p, on_point))
}

/// Default stretch exponent of the echo envelope.
pub const HAHN_EXPONENT: f64 = 1.5;

/// Hahn-echo decay with envelope exp(-(t/T2H)^q), q = 1.5.
pub fn run_hahn_echo(
    world: &mut World,
    t_wait: &[f64],
    shots: u64,
    on_point: &mut dyn FnMut(&PointEvent),
) -> Result<RunRecord, VirtlabError> {
    check_axis(t_wait, "wait time")?;
    check_shots(shots)?;
    let Setup { visibility, baseline, mut meta, .. } = setup(world)?;
    let t2 = meta["truth_t2_hahn"];
    meta.insert("truth_exponent".into(), HAHN_EXPONENT);
    let p = move |t: f64| baseline + 0.5 * visibility * (1.0 + (-(t / t2).powf(HAHN_EXPONENT)).exp());
    Ok(sample_trace(world, RunKind::Hahn, t_wait, shots, meta, p, on_point))
}
