//! Virtual experiments on a simulated device, and the estimators that read them.

mod clifford;
mod experiments;
mod fits;
mod rb;
mod trace;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::geometry::{FieldVector, StagePosition};
use crate::magnetics::{self, MagnetSpec, MagneticsError, SolenoidSpec, StageMount};
use crate::spinmodel::{self, LarmorPoint, QubitModel, SpinError};
use crate::stage::{Stage, StageConfig, StageError};

pub use clifford::{
    clifford_table, find_element, mean_native_gates_all, mean_native_gates_non_identity, phase_fidelity,
    same_up_to_phase, sequence_unitary, CliffordElement, Native, Unitary, CLIFFORD_MEAN_NATIVE_GATES,
};
pub use experiments::{detuned_rabi, run_hahn_echo, run_rabi, run_ramsey, run_spectroscopy, PointEvent, HAHN_EXPONENT};
pub use fits::{
    fit_decay, fit_rabi, fit_resonance, rb_fit, track_moving_peak, DecayModel, Estimate, FitResult, Peak,
};
pub use rb::{
    p_dep_for_native_fidelity, rb_generate, rb_native_sequence, rb_return_probability, rb_simulate, run_rb, RbRecord,
    RbSequence, RbSettings,
};
pub use trace::{write_trace_csv, TRACE_HEADER};

#[derive(Debug, Error)]
pub enum VirtlabError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
    #[error(transparent)]
    Spin(#[from] SpinError),
    #[error(transparent)]
    Stage(#[from] StageError),
    #[error("cancelled")]
    Cancelled,
}

/// Stationary resonance, e.g. from a readout resonator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousLine {
    pub center_hz: f64,
    pub width_hz: f64,
    /// Peak excitation-equivalent amplitude.
    pub amplitude: f64,
}

impl Default for SpuriousLine {
    fn default() -> Self {
        Self { center_hz: 130e6, width_hz: 0.8e6, amplitude: 0.5 }
    }
}

impl SpuriousLine {
    pub fn at(&self, f: f64) -> f64 {
        let u = (f - self.center_hz) / self.width_hz;
        self.amplitude / (1.0 + u * u)
    }
}

/// Everything an experiment needs: field sources, device, stage and RNG state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct World {
    pub magnet: MagnetSpec,
    pub mount: StageMount,
    pub solenoid: SolenoidSpec,
    pub qubit: QubitModel,
    pub stage: Stage,
    /// Scale applied to the block's field at the sample.
    pub screening: f64,
    pub spurious: Option<SpuriousLine>,
    /// Where the qubit sits in the lab frame, mm.
    pub sample_point: StagePosition,
    pub master_seed: u64,
    /// Number of stochastic runs so far; part of every derived seed.
    pub run_counter: u64,
}

impl World {
    pub fn new(qubit: QubitModel, solenoid: SolenoidSpec, stage: Stage, master_seed: u64) -> Self {
        Self {
            magnet: MagnetSpec::default(),
            mount: StageMount::default(),
            solenoid,
            qubit,
            stage,
            screening: 1.0,
            spurious: None,
            sample_point: StagePosition::ORIGIN,
            master_seed,
            run_counter: 0,
        }
    }

    /// Q8 with the magnet parked and the default gantry.
    pub fn q8(solenoid_tesla: f64, master_seed: u64) -> Self {
        let stage = Stage::new(StageConfig::default(), crate::magnetics::MagnetPose::default().position)
            .expect("default park position is inside the default limits");
        Self::new(QubitModel::q8(), SolenoidSpec::along_z(solenoid_tesla), stage, master_seed)
    }

    pub fn validate(&self) -> Result<(), VirtlabError> {
        self.magnet.validate()?;
        self.solenoid.validate()?;
        self.qubit.validate()?;
        if !(self.screening.is_finite() && self.screening >= 0.0) {
            return Err(VirtlabError::Validation(format!("screening {}", self.screening)));
        }
        Ok(())
    }

    /// Field at the sample with the stage at `stage_pos`.
    pub fn field_with_stage_at(&self, stage_pos: StagePosition) -> Result<FieldVector, VirtlabError> {
        let magnet = self.magnet.placed(self.mount.magnet_center(stage_pos));
        Ok(magnetics::screened_total_field(&self.solenoid, &magnet, self.sample_point, self.screening)?)
    }

    /// Field at the sample for the stage's true position.
    pub fn field(&self) -> Result<FieldVector, VirtlabError> {
        self.field_with_stage_at(self.stage.state.true_pos)
    }

    pub fn larmor_with_stage_at(&self, stage_pos: StagePosition) -> Result<LarmorPoint, VirtlabError> {
        Ok(spinmodel::larmor_point(&self.qubit, &self.field_with_stage_at(stage_pos)?)?)
    }

    pub fn larmor(&self) -> Result<LarmorPoint, VirtlabError> {
        self.larmor_with_stage_at(self.stage.state.true_pos)
    }

    /// Next run seed; advances the run counter.
    pub fn next_seed(&mut self, label: &str) -> u64 {
        let seed = derive_seed(self.master_seed, &format!("{label}:{}", self.run_counter));
        self.run_counter += 1;
        seed
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Spectroscopy,
    Rabi,
    Ramsey,
    Hahn,
    Rb,
}

impl RunKind {
    pub fn name(self) -> &'static str {
        match self {
            RunKind::Spectroscopy => "spectroscopy",
            RunKind::Rabi => "rabi",
            RunKind::Ramsey => "ramsey",
            RunKind::Hahn => "hahn",
            RunKind::Rb => "rb",
        }
    }
}

/// Drive-frequency sweep for pulsed spectroscopy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectroscopySweep {
    /// Drive frequencies, Hz, ascending.
    pub frequencies: Vec<f64>,
    /// Pulse duration, s.
    pub pulse_duration: f64,
    pub drive_amplitude: f64,
    pub shots_per_point: u64,
}

impl SpectroscopySweep {
    /// Grid from `start` to `stop` inclusive in steps of `step` (Hz).
    pub fn linear(start: f64, stop: f64, step: f64, pulse_duration: f64, drive_amplitude: f64, shots: u64) -> Self {
        let n = ((stop - start) / step).round().max(0.0) as usize + 1;
        let frequencies = (0..n).map(|i| start + step * i as f64).collect();
        Self { frequencies, pulse_duration, drive_amplitude, shots_per_point: shots }
    }

    pub fn validate(&self) -> Result<(), VirtlabError> {
        if self.frequencies.is_empty() {
            return Err(VirtlabError::Validation("empty frequency grid".into()));
        }
        if self.frequencies.windows(2).any(|w| !(w[1] > w[0])) || self.frequencies.iter().any(|f| !f.is_finite()) {
            return Err(VirtlabError::Validation("frequency grid must be finite and strictly ascending".into()));
        }
        if self.shots_per_point == 0 {
            return Err(VirtlabError::Validation("shots must be at least 1".into()));
        }
        if !(self.pulse_duration > 0.0 && self.pulse_duration.is_finite()) {
            return Err(VirtlabError::Validation(format!("pulse duration {}", self.pulse_duration)));
        }
        if !(self.drive_amplitude >= 0.0 && self.drive_amplitude.is_finite()) {
            return Err(VirtlabError::Validation(format!("drive amplitude {}", self.drive_amplitude)));
        }
        Ok(())
    }
}

/// Raw shot data from one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: RunKind,
    /// Commanded stage position.
    pub position: StagePosition,
    /// Actual stage position, known only to the simulation.
    pub true_position: StagePosition,
    /// Drive frequency (Hz), duration (s) or wait time (s) per point.
    pub sweep: Vec<f64>,
    pub counts: Vec<u64>,
    pub shots: Vec<u64>,
    pub seed: u64,
    /// Wall-clock time, filled in by the service.
    pub timestamp_ms: u64,
    /// Run settings and simulation-truth diagnostics (keys prefixed `truth_`).
    pub meta: BTreeMap<String, f64>,
}

impl RunRecord {
    pub fn p_blockade(&self) -> Vec<f64> {
        self.counts.iter().zip(&self.shots).map(|(&c, &n)| c as f64 / n as f64).collect()
    }

    pub fn meta(&self, key: &str) -> Option<f64> {
        self.meta.get(key).copied()
    }

    pub fn len(&self) -> usize {
        self.sweep.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sweep.is_empty()
    }
}

/// Binomial shot sampler.
pub struct ShotSampler {
    rng: ChaCha8Rng,
}

impl ShotSampler {
    pub fn new(seed: u64) -> Self {
        Self { rng: ChaCha8Rng::seed_from_u64(seed) }
    }

    pub fn sample(&mut self, p: f64, shots: u64) -> u64 {
        let p = if p.is_finite() { p.clamp(0.0, 1.0) } else { 0.0 };
        Binomial::new(shots, p).expect("p clamped to [0, 1]").sample(&mut self.rng)
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }
}
