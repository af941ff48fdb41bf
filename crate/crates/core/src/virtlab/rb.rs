use nalgebra::Complex;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::clifford::{clifford_table, find_element, Native, Unitary};
use super::{ShotSampler, VirtlabError};
use crate::derive_seed;

/// Random Clifford indices followed by the recovery element.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RbSequence {
    pub cliffords: Vec<usize>,
}

impl RbSequence {
    pub fn recovery(&self) -> usize {
        *self.cliffords.last().expect("sequence contains at least the recovery")
    }

    pub fn unitary(&self) -> Unitary {
        let table = clifford_table();
        self.cliffords.iter().fold(Unitary::identity(), |acc, &i| table[i].unitary * acc)
    }
}

/// `n_clifford` uniformly drawn Cliffords plus the element that undoes them.
pub fn rb_generate(seed: u64, n_clifford: usize) -> Result<RbSequence, VirtlabError> {
    if n_clifford == 0 {
        return Err(VirtlabError::Validation("sequence needs at least one Clifford".into()));
    }
    let table = clifford_table();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cliffords: Vec<usize> = (0..n_clifford).map(|_| rng.random_range(0..table.len())).collect();
    let total = cliffords.iter().fold(Unitary::identity(), |acc, &i| table[i].unitary * acc);
    let recovery = find_element(&total.adjoint()).expect("Clifford group is closed");
    cliffords.push(recovery);
    Ok(RbSequence { cliffords })
}

pub fn rb_native_sequence(sequence: &RbSequence) -> Vec<Native> {
    let table = clifford_table();
    sequence.cliffords.iter().flat_map(|&i| table[i].sequence.iter().copied()).collect()
}

/// Probability of returning to the initial state, from density-matrix
/// evolution with depolarization `p_dep` after every pulse.
pub fn rb_return_probability(natives: &[Native], p_dep: f64) -> f64 {
    let half = Complex::new(0.5, 0.0);
    let mut rho = Unitary::new(Complex::new(1.0, 0.0), Complex::new(0.0, 0.0), Complex::new(0.0, 0.0), Complex::new(0.0, 0.0));
    let x = Native::X90.unitary();
    let y = Native::Y90.unitary();
    let keep = Complex::new(1.0 - p_dep, 0.0);
    let mixed = Unitary::identity() * half * Complex::new(p_dep, 0.0);
    for g in natives {
        let u = if *g == Native::X90 { &x } else { &y };
        rho = u * rho * u.adjoint();
        rho = rho * keep + mixed;
    }
    rho[(0, 0)].re
}

/// Blockade counts for one sequence with P = baseline + visibility * P(return).
pub fn rb_simulate(
    sequence: &RbSequence,
    p_dep: f64,
    shots: u64,
    visibility: f64,
    baseline: f64,
    sampler: &mut ShotSampler,
) -> Result<u64, VirtlabError> {
    if !(0.0..=1.0).contains(&p_dep) {
        return Err(VirtlabError::Validation(format!("depolarizing strength {p_dep} outside [0, 1]")));
    }
    if shots == 0 {
        return Err(VirtlabError::Validation("shots must be at least 1".into()));
    }
    let p = baseline + visibility * rb_return_probability(&rb_native_sequence(sequence), p_dep);
    Ok(sampler.sample(p, shots))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbSettings {
    pub lengths: Vec<usize>,
    pub randomizations: usize,
    pub shots: u64,
    /// Depolarizing strength per native pulse.
    pub p_dep: f64,
    pub visibility: f64,
    pub baseline: f64,
}

impl Default for RbSettings {
    fn default() -> Self {
        Self {
            lengths: vec![1, 2, 3, 4, 6, 8, 11, 16, 23, 32, 45, 64, 91, 128],
            randomizations: 20,
            shots: 1000,
            p_dep: p_dep_for_native_fidelity(0.9998),
            visibility: 0.75,
            baseline: 0.05,
        }
    }
}

/// Depolarizing strength giving average gate fidelity `f_native`.
pub fn p_dep_for_native_fidelity(f_native: f64) -> f64 {
    2.0 * (1.0 - f_native)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbRecord {
    pub settings: RbSettings,
    pub seed: u64,
    /// Counts per length, one entry per randomization.
    pub counts: Vec<Vec<u64>>,
    /// Mean blockade probability per length.
    pub survivals: Vec<f64>,
}

pub fn run_rb(seed: u64, settings: &RbSettings) -> Result<RbRecord, VirtlabError> {
    if settings.lengths.is_empty() || settings.randomizations == 0 {
        return Err(VirtlabError::Validation("need lengths and at least one randomization".into()));
    }
    let mut counts = Vec::with_capacity(settings.lengths.len());
    let mut survivals = Vec::with_capacity(settings.lengths.len());
    for &n in &settings.lengths {
        let mut row = Vec::with_capacity(settings.randomizations);
        for r in 0..settings.randomizations {
            let seq = rb_generate(derive_seed(seed, &format!("rb-seq:{n}:{r}")), n)?;
            let mut sampler = ShotSampler::new(derive_seed(seed, &format!("rb-shots:{n}:{r}")));
            row.push(rb_simulate(&seq, settings.p_dep, settings.shots, settings.visibility, settings.baseline, &mut sampler)?);
        }
        let total: u64 = row.iter().sum();
        survivals.push(total as f64 / (settings.shots * settings.randomizations as u64) as f64);
        counts.push(row);
    }
    Ok(RbRecord { settings: settings.clone(), seed, counts, survivals })
}
