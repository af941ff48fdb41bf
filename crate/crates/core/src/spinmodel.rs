//! Qubit observables as functions of the field at the sample.
//!
//! The Zeeman splitting follows from an anisotropic g-tensor, dephasing from a
//! quasi-static hyperfine model whose RMS amplitude depends on the out-of-plane
//! angle of the field, and drive/readout from simple phenomenological laws.

use std::f64::consts::{PI, SQRT_2};

use nalgebra::{Matrix3, Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{checked_unit, FieldVector};

/// Bohr magneton over Planck constant, Hz/T.
pub const MU_B_OVER_H: f64 = 13.996_244_936e9;

/// Default sample misalignment, degrees (midpoint of 2-3 degrees).
pub const DEFAULT_MISALIGNMENT_DEG: f64 = 2.5;

/// Measured coherence anchors for Q8.
pub const T2_STAR_SWEET_SPOT: f64 = 13.41e-6;
pub const T2_HAHN_SWEET_SPOT: f64 = 88.77e-6;
pub const T2_STAR_NO_MAGNET: f64 = 1.70e-6;
pub const T2_HAHN_NO_MAGNET: f64 = 4.23e-6;

/// Smallest visibility the readout model reports.
const VISIBILITY_FLOOR: f64 = 0.05;

#[derive(Debug, Error, PartialEq)]
pub enum SpinError {
    #[error("field is zero; the out-of-plane angle is undefined")]
    ZeroField,
    #[error("invalid qubit model: {0}")]
    InvalidModel(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GTensor {
    /// Principal values along the rotated lab x, y, z axes.
    pub principal_values: [f64; 3],
    /// Rotation from the principal frame into the lab frame.
    pub orientation: Rotation3<f64>,
}

impl GTensor {
    pub fn isotropic(g: f64) -> Self {
        Self { principal_values: [g; 3], orientation: Rotation3::identity() }
    }

    /// Principal values with the frame tilted about lab y by `misalignment_deg`.
    pub fn tilted(principal_values: [f64; 3], misalignment_deg: f64) -> Self {
        Self {
            principal_values,
            orientation: Rotation3::from_axis_angle(&Vector3::y_axis(), misalignment_deg.to_radians()),
        }
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        let r = self.orientation.matrix();
        let d = Matrix3::from_diagonal(&Vector3::from(self.principal_values));
        r * d * r.transpose()
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        if self.principal_values.iter().any(|g| !(g.is_finite() && *g > 0.0)) {
            return Err(SpinError::InvalidModel("g principal values must be positive".into()));
        }
        let det = self.orientation.matrix().determinant();
        if (det - 1.0).abs() > 1e-12 {
            return Err(SpinError::InvalidModel(format!("orientation determinant {det}")));
        }
        Ok(())
    }

    /// Effective g-factor |G b| / |b| for a field direction.
    pub fn effective_g(&self, direction: Vector3<f64>) -> f64 {
        (self.matrix() * direction.normalize()).norm()
    }
}

/// Ratio T2H / T2*.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EchoGain {
    Constant { gain: f64 },
    /// Linear in |theta| from `in_plane` at 0 deg to `anchored` at `anchor_deg`,
    /// held at `anchored` beyond.
    Interpolated { in_plane: f64, anchored: f64, anchor_deg: f64 },
}

impl EchoGain {
    pub fn at(&self, theta_deg: f64) -> f64 {
        match *self {
            EchoGain::Constant { gain } => gain,
            EchoGain::Interpolated { in_plane, anchored, anchor_deg } => {
                let t = (theta_deg.abs() / anchor_deg).min(1.0);
                in_plane + (anchored - in_plane) * t
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QubitModel {
    pub g: GTensor,
    /// Growth direction of the heterostructure in the lab frame.
    pub plane_normal: [f64; 3],
    /// RMS Larmor fluctuation for a fully out-of-plane field, Hz.
    pub sigma_perp: f64,
    /// RMS Larmor fluctuation for an in-plane field, Hz.
    pub sigma_par: f64,
    pub echo_gain: EchoGain,
    /// Peak drive efficiency f_Rabi / (f_L * A), per unit amplitude.
    pub eta0: f64,
    /// Gaussian angular width of the drive efficiency, degrees.
    pub eta_width_deg: f64,
    /// Readout visibility for an out-of-plane field.
    pub vis0: f64,
    /// Visibility lost when the field goes fully in-plane.
    pub vis_slope: f64,
    /// Blockade probability of the unexcited outcome.
    pub baseline: f64,
}

/// sigma for a Gaussian free-induction decay with time constant `t2_star`.
pub fn sigma_from_t2_star(t2_star: f64) -> f64 {
    SQRT_2 / (2.0 * PI * t2_star)
}

/// Solves the two hyperfine amplitudes from an in-plane T2* and the T2* at a
/// known out-of-plane angle.
pub fn hyperfine_from_anchors(t2_in_plane: f64, t2_at_angle: f64, angle_deg: f64) -> (f64, f64) {
    let sigma_par = sigma_from_t2_star(t2_in_plane);
    let sigma_at = sigma_from_t2_star(t2_at_angle);
    let (s, c) = angle_deg.to_radians().sin_cos();
    let sigma_perp = ((sigma_at * sigma_at - sigma_par * sigma_par * c * c) / (s * s)).sqrt();
    (sigma_perp, sigma_par)
}

impl QubitModel {
    /// Q8: anchored to the sweet-spot and no-magnet coherence measurements and
    /// to the 50-150 MHz span of the 25 mT Larmor maps.
    pub fn q8() -> Self {
        let (sigma_perp, sigma_par) =
            hyperfine_from_anchors(T2_STAR_SWEET_SPOT, T2_STAR_NO_MAGNET, DEFAULT_MISALIGNMENT_DEG);
        Self {
            g: GTensor::tilted([6.7, 0.17, 0.14], DEFAULT_MISALIGNMENT_DEG),
            plane_normal: default_plane_normal(DEFAULT_MISALIGNMENT_DEG),
            sigma_perp,
            sigma_par,
            echo_gain: EchoGain::Interpolated {
                in_plane: T2_HAHN_SWEET_SPOT / T2_STAR_SWEET_SPOT,
                anchored: T2_HAHN_NO_MAGNET / T2_STAR_NO_MAGNET,
                anchor_deg: DEFAULT_MISALIGNMENT_DEG,
            },
            eta0: 1e-2,
            eta_width_deg: 8.0,
            vis0: 0.95,
            vis_slope: 0.2,
            baseline: 0.05,
        }
    }

    /// Q3: same sample tilt, weaker out-of-plane g. Its zero-internal-field
    /// x-sweep at z = -160 mm runs from about 40 MHz down to 10 MHz.
    pub fn q3() -> Self {
        let (sigma_perp, sigma_par) = hyperfine_from_anchors(11.0e-6, 1.9e-6, DEFAULT_MISALIGNMENT_DEG);
        Self {
            g: GTensor::tilted([3.0, 0.14, 0.115], DEFAULT_MISALIGNMENT_DEG),
            plane_normal: default_plane_normal(DEFAULT_MISALIGNMENT_DEG),
            sigma_perp,
            sigma_par,
            echo_gain: EchoGain::Interpolated { in_plane: 6.0, anchored: 2.5, anchor_deg: DEFAULT_MISALIGNMENT_DEG },
            eta0: 1.2e-2,
            eta_width_deg: 8.0,
            vis0: 0.9,
            vis_slope: 0.25,
            baseline: 0.08,
        }
    }

    pub fn normal(&self) -> Vector3<f64> {
        Vector3::from(self.plane_normal).normalize()
    }

    pub fn validate(&self) -> Result<(), SpinError> {
        self.g.validate()?;
        if checked_unit(Vector3::from(self.plane_normal), 1e-9).is_none() {
            return Err(SpinError::InvalidModel("plane normal must be a unit vector".into()));
        }
        if !(self.sigma_par > 0.0 && self.sigma_perp > self.sigma_par) {
            return Err(SpinError::InvalidModel("need sigma_perp > sigma_par > 0".into()));
        }
        if !(self.eta0 > 0.0 && self.eta_width_deg > 0.0) {
            return Err(SpinError::InvalidModel("drive efficiency parameters must be positive".into()));
        }
        if !(self.vis0 > 0.0 && self.vis0 <= 1.0) {
            return Err(SpinError::InvalidModel("vis0 must be in (0, 1]".into()));
        }
        if !(0.0..=1.0).contains(&self.baseline) || self.vis_slope < 0.0 {
            return Err(SpinError::InvalidModel("readout parameters out of range".into()));
        }
        let gain_ok = match self.echo_gain {
            EchoGain::Constant { gain } => gain >= 1.0,
            EchoGain::Interpolated { in_plane, anchored, anchor_deg } => {
                in_plane >= 1.0 && anchored >= 1.0 && anchor_deg > 0.0
            }
        };
        if !gain_ok {
            return Err(SpinError::InvalidModel("echo gain must be at least 1".into()));
        }
        Ok(())
    }
}

/// Growth direction (-x) tilted about +y by the misalignment.
pub fn default_plane_normal(misalignment_deg: f64) -> [f64; 3] {
    let a = misalignment_deg.to_radians();
    [-a.cos(), 0.0, a.sin()]
}

/// Zeeman frequency (mu_B / h) |G B|.
pub fn larmor_frequency(g: &GTensor, b: &FieldVector) -> f64 {
    MU_B_OVER_H * (g.matrix() * b.as_vector()).norm()
}

/// Angle of `b` out of the plane with normal `plane_normal`, degrees; 0 is in-plane.
pub fn out_of_plane_angle(b: &FieldVector, plane_normal: &[f64; 3]) -> Result<f64, SpinError> {
    let v = b.as_vector();
    let norm = v.norm();
    if norm == 0.0 || !norm.is_finite() {
        return Err(SpinError::ZeroField);
    }
    let n = Vector3::from(*plane_normal).normalize();
    Ok((v.dot(&n) / norm).clamp(-1.0, 1.0).asin().to_degrees())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LarmorPoint {
    pub f_larmor: f64,
    pub theta_deg: f64,
    pub b_mag: f64,
}

pub fn larmor_point(model: &QubitModel, b: &FieldVector) -> Result<LarmorPoint, SpinError> {
    Ok(LarmorPoint {
        f_larmor: larmor_frequency(&model.g, b),
        theta_deg: out_of_plane_angle(b, &model.plane_normal)?,
        b_mag: b.magnitude(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceTimes {
    pub t2_star: f64,
    pub t2_hahn: f64,
}

/// RMS Larmor fluctuation at out-of-plane angle `theta_deg`.
pub fn hyperfine_sigma(model: &QubitModel, theta_deg: f64) -> f64 {
    let (s, c) = theta_deg.to_radians().sin_cos();
    (model.sigma_par.powi(2) * c * c + model.sigma_perp.powi(2) * s * s).sqrt()
}

pub fn coherence_times(model: &QubitModel, theta_deg: f64) -> CoherenceTimes {
    let t2_star = SQRT_2 / (2.0 * PI * hyperfine_sigma(model, theta_deg));
    CoherenceTimes { t2_star, t2_hahn: model.echo_gain.at(theta_deg) * t2_star }
}

pub fn drive_efficiency(model: &QubitModel, theta_deg: f64) -> f64 {
    model.eta0 * (-theta_deg * theta_deg / (2.0 * model.eta_width_deg.powi(2))).exp()
}

/// f_Rabi = eta(theta) f_L A.
pub fn rabi_frequency(model: &QubitModel, f_larmor: f64, amplitude: f64, theta_deg: f64) -> f64 {
    drive_efficiency(model, theta_deg) * f_larmor * amplitude.max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Readout {
    pub visibility: f64,
    pub baseline: f64,
}

pub fn readout_visibility(model: &QubitModel, theta_deg: f64) -> Readout {
    let raw = model.vis0 - model.vis_slope * (90.0 - theta_deg.abs().min(90.0)) / 90.0;
    let visibility = raw.clamp(VISIBILITY_FLOOR, 1.0);
    Readout { visibility, baseline: model.baseline.min(1.0 - visibility) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64, rel: f64) -> bool {
        (a - b).abs() <= rel * b.abs().max(1e-300)
    }

    #[test]
    fn isotropic_reduces_to_scalar_zeeman() {
        let f = larmor_frequency(&GTensor::isotropic(2.0), &FieldVector::new(0.0, 0.0, 0.025));
        assert!((f - 699.8e6).abs() < 0.1e6, "{f}");
        assert_eq!(larmor_frequency(&GTensor::isotropic(2.0), &FieldVector::ZERO), 0.0);
    }

    #[test]
    fn angle_examples() {
        let n = [1.0, 0.0, 0.0];
        assert!((out_of_plane_angle(&FieldVector::new(0.3, 0.0, 0.0), &n).unwrap() - 90.0).abs() < 1e-12);
        assert!(out_of_plane_angle(&FieldVector::new(0.0, 0.1, 0.2), &n).unwrap().abs() < 1e-12);
        assert_eq!(out_of_plane_angle(&FieldVector::ZERO, &n), Err(SpinError::ZeroField));

        let q8 = QubitModel::q8();
        let theta = out_of_plane_angle(&FieldVector::new(0.0, 0.0, 0.025), &q8.plane_normal).unwrap();
        assert!((theta - 2.5).abs() < 1e-9, "{theta}");
    }

    #[test]
    fn coherence_anchors() {
        let q8 = QubitModel::q8();
        let c0 = coherence_times(&q8, 0.0);
        assert!(close(c0.t2_star, 13.41e-6, 1e-12));
        assert!(close(c0.t2_hahn, 88.77e-6, 1e-12));
        let c = coherence_times(&q8, 2.5);
        assert!(close(c.t2_star, 1.70e-6, 0.01));
        assert!(close(c.t2_hahn, 4.23e-6, 0.01));
        assert_eq!(coherence_times(&q8, -1.3), coherence_times(&q8, 1.3));
    }

    #[test]
    fn rabi_examples() {
        let mut m = QubitModel::q8();
        m.eta0 = 1e-2;
        assert_eq!(rabi_frequency(&m, 100e6, 0.0, 0.0), 0.0);
        assert!((rabi_frequency(&m, 100e6, 1.0, 0.0) - 1e6).abs() < 1e-6);
        assert!(drive_efficiency(&m, 3.0) < drive_efficiency(&m, 0.0));
    }

    #[test]
    fn readout_examples() {
        let mut m = QubitModel::q8();
        assert!(readout_visibility(&m, 0.0).visibility < readout_visibility(&m, 90.0).visibility);
        assert!((readout_visibility(&m, 90.0).visibility - m.vis0).abs() < 1e-15);
        m.vis_slope = 0.0;
        for th in [-90.0, -10.0, 0.0, 45.0] {
            assert_eq!(readout_visibility(&m, th).visibility, m.vis0);
        }
    }

    #[test]
    fn default_models_validate() {
        QubitModel::q8().validate().unwrap();
        QubitModel::q3().validate().unwrap();
        let mut bad = QubitModel::q8();
        bad.sigma_perp = bad.sigma_par / 2.0;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn q8_sigmas_match_anchor_arithmetic() {
        let q8 = QubitModel::q8();
        assert!((q8.sigma_par - 16_784.4).abs() < 0.5, "{}", q8.sigma_par);
        assert!((q8.sigma_perp - 3.01e6).abs() < 0.01e6, "{}", q8.sigma_perp);
    }

    /// A field rotating in the x-z plane at constant magnitude: f_L is minimal
    /// exactly where the field is in-plane when the in-plane g is smallest.
    #[test]
    fn larmor_minimum_coincides_with_in_plane() {
        let q8 = QubitModel::q8();
        let steps = 20_001;
        let (mut best_f, mut best_i, mut zero_i, mut zero_abs) = (f64::MAX, 0, 0, f64::MAX);
        for i in 0..steps {
            let phi = (-10.0 + 20.0 * i as f64 / (steps - 1) as f64).to_radians();
            let b = FieldVector::new(0.025 * phi.sin(), 0.0, 0.025 * phi.cos());
            let f = larmor_frequency(&q8.g, &b);
            let th = out_of_plane_angle(&b, &q8.plane_normal).unwrap().abs();
            if f < best_f {
                best_f = f;
                best_i = i;
            }
            if th < zero_abs {
                zero_abs = th;
                zero_i = i;
            }
        }
        assert!((best_i as i64 - zero_i as i64).abs() <= 1);
    }

    proptest! {
        #[test]
        fn larmor_scales_linearly(bx in -0.1..0.1f64, by in -0.1..0.1f64, bz in -0.1..0.1f64, c in -5.0..5.0f64) {
            let g = QubitModel::q8().g;
            let b = FieldVector::new(bx, by, bz);
            let lhs = larmor_frequency(&g, &(b * c));
            let rhs = c.abs() * larmor_frequency(&g, &b);
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.abs().max(1.0));
        }

        #[test]
        fn larmor_is_rotation_covariant(
            bx in -0.1..0.1f64, by in -0.1..0.1f64, bz in -0.1..0.1f64,
            ax in -1.0..1.0f64, ay in -1.0..1.0f64, az in -1.0..1.0f64, angle in 0.0..6.2f64,
        ) {
            prop_assume!(ax * ax + ay * ay + az * az > 1e-3);
            let rot = Rotation3::from_axis_angle(&nalgebra::Unit::new_normalize(Vector3::new(ax, ay, az)), angle);
            let g = QubitModel::q8().g;
            let rotated = GTensor { principal_values: g.principal_values, orientation: rot * g.orientation };
            let b = FieldVector::new(bx, by, bz);
            let f0 = larmor_frequency(&g, &b);
            let f1 = larmor_frequency(&rotated, &b.rotated(&rot));
            prop_assert!((f0 - f1).abs() <= 1e-12 * f0.max(1.0));
        }

        #[test]
        fn coherence_is_even_and_monotone(a in 0.0..89.0f64, d in 0.01..1.0f64) {
            let mut m = QubitModel::q8();
            let c = coherence_times(&m, a);
            prop_assert_eq!(c, coherence_times(&m, -a));
            let further = coherence_times(&m, a + d);
            prop_assert!(further.t2_star < c.t2_star);
            prop_assert!(further.t2_hahn < c.t2_hahn);
            m.echo_gain = EchoGain::Constant { gain: 88.77 / 13.41 };
            let c = coherence_times(&m, a);
            prop_assert!((c.t2_hahn / c.t2_star - 88.77 / 13.41).abs() < 1e-12);
        }
    }
}
