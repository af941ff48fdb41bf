//! Lab-frame vectors: magnetic fields in tesla and stage positions in millimetres.
//!
//! The lab frame has `z` along the fridge axis and `x` close to the growth
//! direction of the heterostructure. The sample sits at the origin.

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};

/// A magnetic field in tesla.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FieldVector {
    pub bx: f64,
    pub by: f64,
    pub bz: f64,
}

impl FieldVector {
    pub const ZERO: FieldVector = FieldVector { bx: 0.0, by: 0.0, bz: 0.0 };

    pub fn new(bx: f64, by: f64, bz: f64) -> Self {
        Self { bx, by, bz }
    }

    pub fn magnitude(&self) -> f64 {
        self.as_vector().norm()
    }

    pub fn is_finite(&self) -> bool {
        self.bx.is_finite() && self.by.is_finite() && self.bz.is_finite()
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.bx, self.by, self.bz)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn rotated(&self, rotation: &Rotation3<f64>) -> Self {
        Self::from_vector(rotation * self.as_vector())
    }
}

impl Add for FieldVector {
    type Output = FieldVector;
    fn add(self, rhs: FieldVector) -> FieldVector {
        FieldVector::new(self.bx + rhs.bx, self.by + rhs.by, self.bz + rhs.bz)
    }
}

impl Sub for FieldVector {
    type Output = FieldVector;
    fn sub(self, rhs: FieldVector) -> FieldVector {
        FieldVector::new(self.bx - rhs.bx, self.by - rhs.by, self.bz - rhs.bz)
    }
}

impl Neg for FieldVector {
    type Output = FieldVector;
    fn neg(self) -> FieldVector {
        FieldVector::new(-self.bx, -self.by, -self.bz)
    }
}

impl Mul<f64> for FieldVector {
    type Output = FieldVector;
    fn mul(self, k: f64) -> FieldVector {
        FieldVector::new(self.bx * k, self.by * k, self.bz * k)
    }
}

impl fmt::Display for FieldVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({:.4}, {:.4}, {:.4}) mT",
            self.bx * 1e3,
            self.by * 1e3,
            self.bz * 1e3
        )
    }
}

/// Stage axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub const ALL: [Axis; 3] = [Axis::X, Axis::Y, Axis::Z];

    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Axis::X => "x",
            Axis::Y => "y",
            Axis::Z => "z",
        }
    }
}

impl std::str::FromStr for Axis {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "x" | "X" => Ok(Axis::X),
            "y" | "Y" => Ok(Axis::Y),
            "z" | "Z" => Ok(Axis::Z),
            other => Err(format!("unknown axis `{other}`")),
        }
    }
}

/// A position in millimetres relative to the sample.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StagePosition {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl StagePosition {
    pub const ORIGIN: StagePosition = StagePosition { x: 0.0, y: 0.0, z: 0.0 };

    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn get(&self, axis: Axis) -> f64 {
        match axis {
            Axis::X => self.x,
            Axis::Y => self.y,
            Axis::Z => self.z,
        }
    }

    pub fn with(mut self, axis: Axis, value: f64) -> Self {
        match axis {
            Axis::X => self.x = value,
            Axis::Y => self.y = value,
            Axis::Z => self.z = value,
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn as_vector(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    pub fn distance(&self, other: &StagePosition) -> f64 {
        (self.as_vector() - other.as_vector()).norm()
    }
}

impl Add for StagePosition {
    type Output = StagePosition;
    fn add(self, rhs: StagePosition) -> StagePosition {
        StagePosition::new(self.x + rhs.x, self.y + rhs.y, self.z + rhs.z)
    }
}

impl Sub for StagePosition {
    type Output = StagePosition;
    fn sub(self, rhs: StagePosition) -> StagePosition {
        StagePosition::new(self.x - rhs.x, self.y - rhs.y, self.z - rhs.z)
    }
}

impl fmt::Display for StagePosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        // 1 um resolution
        write!(f, "({:.3}, {:.3}, {:.3}) mm", self.x, self.y, self.z)
    }
}

/// Rotation from intrinsic z-y'-x'' Euler angles given in degrees (yaw, pitch, roll).
pub fn rotation_from_euler_deg(yaw: f64, pitch: f64, roll: f64) -> Rotation3<f64> {
    Rotation3::from_axis_angle(&Vector3::z_axis(), yaw.to_radians())
        * Rotation3::from_axis_angle(&Vector3::y_axis(), pitch.to_radians())
        * Rotation3::from_axis_angle(&Vector3::x_axis(), roll.to_radians())
}

/// Returns `v / |v|` if `|v|` is within `tol` of one, otherwise `None`.
pub fn checked_unit(v: Vector3<f64>, tol: f64) -> Option<Vector3<f64>> {
    let n = v.norm();
    if n.is_finite() && (n - 1.0).abs() <= tol {
        Some(v / n)
    } else {
        None
    }
}
