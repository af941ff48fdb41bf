use std::sync::OnceLock;

use nalgebra::{Complex, Matrix2};
use serde::{Deserialize, Serialize};

pub type Unitary = Matrix2<Complex<f64>>;

/// Average native-gate count per Clifford used to convert F_C to F_N.
pub const CLIFFORD_MEAN_NATIVE_GATES: f64 = 3.217;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Native {
    X90,
    Y90,
}

impl Native {
    pub fn unitary(self) -> Unitary {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let c = |re: f64, im: f64| Complex::new(re * s, im * s);
        match self {
            Native::X90 => Unitary::new(c(1.0, 0.0), c(0.0, -1.0), c(0.0, -1.0), c(1.0, 0.0)),
            Native::Y90 => Unitary::new(c(1.0, 0.0), c(-1.0, 0.0), c(1.0, 0.0), c(1.0, 0.0)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Native::X90 => "X90",
            Native::Y90 => "Y90",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CliffordElement {
    pub class: &'static str,
    /// Native pulses in the order they are applied.
    pub sequence: Vec<Native>,
    pub unitary: Unitary,
}

impl CliffordElement {
    pub fn label(&self) -> String {
        if self.sequence.is_empty() {
            "I".to_string()
        } else {
            self.sequence.iter().map(|g| g.name()).collect::<Vec<_>>().join(" ")
        }
    }
}

const TABLE: [(&str, &str); 24] = [
    ("Pauli", ""),
    ("Pauli", "X X"),
    ("Pauli", "Y Y"),
    ("Pauli", "Y Y X X"),
    ("2pi/3", "X Y"),
    ("2pi/3", "X Y Y Y"),
    ("2pi/3", "X X X Y"),
    ("2pi/3", "Y Y X Y"),
    ("2pi/3", "Y X"),
    ("2pi/3", "Y X X X"),
    ("2pi/3", "Y Y Y X"),
    ("2pi/3", "Y X Y Y"),
    ("pi/2", "X"),
    ("pi/2", "X X X"),
    ("pi/2", "Y"),
    ("pi/2", "Y Y Y"),
    ("pi/2", "Y X Y Y Y"),
    ("pi/2", "Y Y Y X Y"),
    ("Hadamard-like", "X X Y"),
    ("Hadamard-like", "Y X X"),
    ("Hadamard-like", "Y Y X"),
    ("Hadamard-like", "X Y Y"),
    ("Hadamard-like", "Y X Y"),
    ("Hadamard-like", "Y X X X Y"),
];

/// Product of a pulse sequence, later pulses multiplying from the left.
pub fn sequence_unitary(sequence: &[Native]) -> Unitary {
    sequence.iter().fold(Unitary::identity(), |acc, g| g.unitary() * acc)
}

/// |tr(a^dagger b)| / 2; equals one when a and b agree up to a global phase.
pub fn phase_fidelity(a: &Unitary, b: &Unitary) -> f64 {
    (a.adjoint() * b).trace().norm() / 2.0
}

pub fn same_up_to_phase(a: &Unitary, b: &Unitary) -> bool {
    phase_fidelity(a, b) > 1.0 - 1e-10
}

/// The 24 single-qubit Cliffords as X90/Y90 sequences.
pub fn clifford_table() -> &'static [CliffordElement] {
    static CELL: OnceLock<Vec<CliffordElement>> = OnceLock::new();
    CELL.get_or_init(|| {
        let table: Vec<CliffordElement> = TABLE
            .iter()
            .map(|(class, seq)| {
                let sequence: Vec<Native> = seq
                    .split_whitespace()
                    .map(|g| if g == "X" { Native::X90 } else { Native::Y90 })
                    .collect();
                CliffordElement { class, unitary: sequence_unitary(&sequence), sequence }
            })
            .collect();
        let mean = mean_native_gates_non_identity(&table);
        assert!(
            (mean - CLIFFORD_MEAN_NATIVE_GATES).abs() < 5e-4,
            "Clifford table mean {mean} disagrees with {CLIFFORD_MEAN_NATIVE_GATES}"
        );
        table
    })
}

/// Mean pulse count over the 23 non-identity elements.
pub fn mean_native_gates_non_identity(table: &[CliffordElement]) -> f64 {
    let non_identity: Vec<_> = table.iter().filter(|e| !e.sequence.is_empty()).collect();
    non_identity.iter().map(|e| e.sequence.len()).sum::<usize>() as f64 / non_identity.len() as f64
}

/// Mean pulse count over all 24 elements, i.e. per uniformly drawn Clifford.
pub fn mean_native_gates_all(table: &[CliffordElement]) -> f64 {
    table.iter().map(|e| e.sequence.len()).sum::<usize>() as f64 / table.len() as f64
}

/// Index of the table element equal to `u` up to phase.
pub fn find_element(u: &Unitary) -> Option<usize> {
    clifford_table().iter().position(|e| same_up_to_phase(&e.unitary, u))
}
