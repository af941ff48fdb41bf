//! Field sources at the sample: the external NdFeB block and the internal solenoid.
//!
//! The block is treated as a uniformly magnetized rectangular prism. Its field
//! follows from the surface-charge picture: two uniformly charged rectangles on
//! the faces normal to the magnetization, each integrated in closed form. An
//! arbitrary magnetization direction is decomposed onto the three body axes.
//!
//! All lengths are millimetres and all fields tesla. The closed-form expressions
//! only depend on length ratios, so no unit conversion happens here.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{Rotation3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{checked_unit, FieldVector, StagePosition};

/// Largest solenoid setpoint magnitude in tesla.
pub const SOLENOID_LIMIT: f64 = 3.0;

/// Dimensions of the N45 block used in the experiment, (length, width, thickness).
pub const BLOCK_DIMS_MM: [f64; 3] = [110.6, 89.0, 19.5];

/// Nominal remanence of N45 material.
pub const N45_REMANENCE: f64 = 1.35;

/// Remanence that reproduces 6.2 mT at 160 mm on axis for the block above.
pub const CALIBRATED_REMANENCE: f64 = 0.992_916_378_813_966_5;

/// Header of the field-profile CSV format.
pub const PROFILE_HEADER: &str = "z_mm,b_tesla";

#[derive(Debug, Error, PartialEq)]
pub enum MagneticsError {
    #[error("evaluation point {0} lies inside or on the magnet")]
    InsideMagnet(StagePosition),
    #[error("invalid magnet spec: {0}")]
    InvalidMagnet(String),
    #[error("solenoid setpoint {0} T outside [-3, 3] T")]
    SetpointOutOfRange(f64),
    #[error("invalid solenoid axis: not a unit vector")]
    InvalidAxis,
    #[error("field profile fit failed: {0}")]
    Fit(String),
    #[error("profile csv: {0}")]
    Csv(String),
}

/// Position and orientation of the magnet body in the lab frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetPose {
    /// Centre of the magnet.
    pub position: StagePosition,
    /// Rotation taking magnet-body coordinates into the lab frame.
    pub orientation: Rotation3<f64>,
}

impl Default for MagnetPose {
    fn default() -> Self {
        Self { position: StagePosition::new(0.0, 0.0, -700.0), orientation: Rotation3::identity() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MagnetSpec {
    /// Full edge lengths along the body x, y, z axes.
    pub dims_mm: [f64; 3],
    /// Remanent flux density Br.
    pub remanence: f64,
    /// Magnetization direction in body coordinates.
    pub magnetization_axis: [f64; 3],
    pub pose: MagnetPose,
}

impl Default for MagnetSpec {
    fn default() -> Self {
        Self {
            dims_mm: BLOCK_DIMS_MM,
            remanence: CALIBRATED_REMANENCE,
            magnetization_axis: [0.0, 0.0, 1.0],
            pose: MagnetPose::default(),
        }
    }
}

impl MagnetSpec {
    pub fn validate(&self) -> Result<(), MagneticsError> {
        if self.dims_mm.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(MagneticsError::InvalidMagnet(format!(
                "dimensions must be positive, got {:?}",
                self.dims_mm
            )));
        }
        if !(self.remanence.is_finite() && self.remanence > 0.0) {
            return Err(MagneticsError::InvalidMagnet(format!(
                "remanence must be positive, got {}",
                self.remanence
            )));
        }
        if checked_unit(Vector3::from(self.magnetization_axis), 1e-12).is_none() {
            return Err(MagneticsError::InvalidMagnet(
                "magnetization axis must be a unit vector".into(),
            ));
        }
        if !self.pose.position.is_finite() {
            return Err(MagneticsError::InvalidMagnet("non-finite pose".into()));
        }
        Ok(())
    }

    /// Same magnet moved so that its centre is at `position`.
    pub fn placed(&self, position: StagePosition) -> MagnetSpec {
        let mut spec = self.clone();
        spec.pose.position = position;
        spec
    }

    pub fn with_remanence(&self, remanence: f64) -> MagnetSpec {
        MagnetSpec { remanence, ..self.clone() }
    }

    fn half_dims(&self) -> [f64; 3] {
        [self.dims_mm[0] / 2.0, self.dims_mm[1] / 2.0, self.dims_mm[2] / 2.0]
    }

    /// Point expressed in body coordinates.
    pub fn to_body(&self, point: StagePosition) -> Vector3<f64> {
        self.pose.orientation.inverse() * (point.as_vector() - self.pose.position.as_vector())
    }

    /// True if `point` is inside the magnet or on its surface.
    pub fn contains(&self, point: StagePosition) -> bool {
        let local = self.to_body(point);
        let h = self.half_dims();
        local.x.abs() <= h[0] && local.y.abs() <= h[1] && local.z.abs() <= h[2]
    }
}

/// Rigid map from stage readings to the magnet centre. Identity by default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageMount {
    pub offset_mm: StagePosition,
    pub rotation: Rotation3<f64>,
}

impl Default for StageMount {
    fn default() -> Self {
        Self { offset_mm: StagePosition::ORIGIN, rotation: Rotation3::identity() }
    }
}

impl StageMount {
    pub fn magnet_center(&self, stage: StagePosition) -> StagePosition {
        StagePosition::from_vector(self.rotation * stage.as_vector() + self.offset_mm.as_vector())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolenoidSpec {
    pub axis: [f64; 3],
    /// Signed field at the sample in tesla.
    pub setpoint: f64,
}

impl Default for SolenoidSpec {
    fn default() -> Self {
        Self { axis: [0.0, 0.0, 1.0], setpoint: 0.0 }
    }
}

impl SolenoidSpec {
    pub fn along_z(setpoint: f64) -> Self {
        Self { axis: [0.0, 0.0, 1.0], setpoint }
    }

    pub fn validate(&self) -> Result<(), MagneticsError> {
        if !self.setpoint.is_finite() || self.setpoint.abs() > SOLENOID_LIMIT {
            return Err(MagneticsError::SetpointOutOfRange(self.setpoint));
        }
        checked_unit(Vector3::from(self.axis), 1e-12).ok_or(MagneticsError::InvalidAxis)?;
        Ok(())
    }
}

/// ln(v0 + R0) - ln(v1 + R1) at equal rho^2 = R^2 - v^2, written to avoid
/// cancellation when v is large and negative.
fn log_pair(v0: f64, r0: f64, v1: f64, r1: f64, rho2: f64) -> f64 {
    let term = |v: f64, r: f64| if v >= 0.0 { (v + r).ln() } else { rho2.ln() - (r - v).ln() };
    if v0 >= 0.0 && v1 >= 0.0 {
        ((v0 + r0) / (v1 + r1)).ln()
    } else if v0 < 0.0 && v1 < 0.0 {
        ((r1 - v1) / (r0 - v0)).ln()
    } else {
        term(v0, r0) - term(v1, r1)
    }
}

/// Field per unit surface charge (divided by 4 pi) of the rectangle
/// [-a, a] x [-b, b] in the plane w = 0, evaluated at (x, y, w).
fn charged_rectangle(x: f64, y: f64, w: f64, a: f64, b: f64) -> Vector3<f64> {
    let us = [x + a, x - a];
    let vs = [y + b, y - b];
    let mut r = [[0.0; 2]; 2];
    for (i, u) in us.iter().enumerate() {
        for (j, v) in vs.iter().enumerate() {
            r[i][j] = (u * u + v * v + w * w).sqrt();
        }
    }

    let mut hz = 0.0;
    if w != 0.0 {
        for (i, u) in us.iter().enumerate() {
            for (j, v) in vs.iter().enumerate() {
                let sign = if i == j { 1.0 } else { -1.0 };
                hz += sign * (u * v / (w * r[i][j])).atan();
            }
        }
    }

    // sum over corners of -sign * ln(v + R), grouped by u so rho^2 is shared
    let mut hx = 0.0;
    for (i, u) in us.iter().enumerate() {
        let rho2 = u * u + w * w;
        let pair = log_pair(vs[0], r[i][0], vs[1], r[i][1], rho2);
        hx -= if i == 0 { pair } else { -pair };
    }
    let mut hy = 0.0;
    for (j, v) in vs.iter().enumerate() {
        let rho2 = v * v + w * w;
        let pair = log_pair(us[0], r[0][j], us[1], r[1][j], rho2);
        hy -= if j == 0 { pair } else { -pair };
    }
    Vector3::new(hx, hy, hz)
}

/// Field of a cuboid with half extents `h`, magnetized along its own z axis
/// with unit polarization, at body-frame point `p`.
fn axial_cuboid(p: Vector3<f64>, h: [f64; 3]) -> Vector3<f64> {
    let top = charged_rectangle(p.x, p.y, p.z - h[2], h[0], h[1]);
    let bottom = charged_rectangle(p.x, p.y, p.z + h[2], h[0], h[1]);
    (top - bottom) / (4.0 * PI)
}

/// Analytic field of a uniformly magnetized rectangular block at `point`.
pub fn cuboid_field(spec: &MagnetSpec, point: StagePosition) -> Result<FieldVector, MagneticsError> {
    if spec.contains(point) {
        return Err(MagneticsError::InsideMagnet(point));
    }
    if spec.remanence == 0.0 {
        return Ok(FieldVector::ZERO);
    }
    let p = spec.to_body(point);
    let h = spec.half_dims();
    let m = spec.magnetization_axis;

    let mut local = Vector3::zeros();
    if m[2] != 0.0 {
        local += m[2] * axial_cuboid(p, h);
    }
    if m[0] != 0.0 {
        // cyclic relabelling (x, y, z) -> (y, z, x) puts body x on the local z
        let f = axial_cuboid(Vector3::new(p.y, p.z, p.x), [h[1], h[2], h[0]]);
        local += m[0] * Vector3::new(f.z, f.x, f.y);
    }
    if m[1] != 0.0 {
        let f = axial_cuboid(Vector3::new(p.z, p.x, p.y), [h[2], h[0], h[1]]);
        local += m[1] * Vector3::new(f.y, f.z, f.x);
    }
    let lab = spec.pose.orientation * (local * spec.remanence);
    Ok(FieldVector::from_vector(lab))
}

/// Uniform solenoid field at the sample.
pub fn solenoid_field(spec: &SolenoidSpec) -> Result<FieldVector, MagneticsError> {
    spec.validate()?;
    let axis = Vector3::from(spec.axis).normalize();
    Ok(FieldVector::from_vector(axis * spec.setpoint))
}

/// Sum of solenoid and block fields at `sample_point`.
pub fn total_field(
    solenoid: &SolenoidSpec,
    magnet: &MagnetSpec,
    sample_point: StagePosition,
) -> Result<FieldVector, MagneticsError> {
    Ok(solenoid_field(solenoid)? + cuboid_field(magnet, sample_point)?)
}

/// Like [`total_field`] with the external contribution attenuated by `screening`.
pub fn screened_total_field(
    solenoid: &SolenoidSpec,
    magnet: &MagnetSpec,
    sample_point: StagePosition,
    screening: f64,
) -> Result<FieldVector, MagneticsError> {
    Ok(solenoid_field(solenoid)? + cuboid_field(magnet, sample_point)? * screening)
}

/// One measured point of |B_ext| against stage z.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProfilePoint {
    pub z_mm: f64,
    pub b_tesla: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RemanenceFit {
    pub spec: MagnetSpec,
    pub residual_rms: f64,
}

/// Fits Br so that |B| at the sample matches `profile`, with the magnet placed
/// on the stage z axis through `mount`. |B| is linear in Br, so the least
/// squares solution is closed form.
pub fn calibrate_remanence(
    profile: &[ProfilePoint],
    template: &MagnetSpec,
    mount: &StageMount,
) -> Result<RemanenceFit, MagneticsError> {
    if profile.is_empty() {
        return Err(MagneticsError::Fit("empty profile".into()));
    }
    if profile.len() > 1 && profile.iter().all(|p| p.z_mm == profile[0].z_mm) {
        return Err(MagneticsError::Fit("all profile points share the same z".into()));
    }
    let unit = template.with_remanence(1.0);
    let mut basis = Vec::with_capacity(profile.len());
    for p in profile {
        if !(p.z_mm.is_finite() && p.b_tesla.is_finite()) {
            return Err(MagneticsError::Fit("non-finite profile value".into()));
        }
        let placed = unit.placed(mount.magnet_center(StagePosition::new(0.0, 0.0, p.z_mm)));
        basis.push(cuboid_field(&placed, StagePosition::ORIGIN)?.magnitude());
    }
    let num: f64 = basis.iter().zip(profile).map(|(u, p)| u * p.b_tesla).sum();
    let den: f64 = basis.iter().map(|u| u * u).sum();
    if den <= 0.0 {
        return Err(MagneticsError::Fit("model has no sensitivity to Br".into()));
    }
    let br = num / den;
    if !(br > 0.0) {
        return Err(MagneticsError::Fit(format!("fitted Br = {br} is not positive")));
    }
    let ss: f64 = basis.iter().zip(profile).map(|(u, p)| (br * u - p.b_tesla).powi(2)).sum();
    Ok(RemanenceFit {
        spec: template.with_remanence(br),
        residual_rms: (ss / profile.len() as f64).sqrt(),
    })
}

/// |B_ext| at the sample for the magnet on the stage z axis at each `z_mm`.
pub fn field_profile(
    magnet: &MagnetSpec,
    mount: &StageMount,
    z_mm: &[f64],
) -> Result<Vec<ProfilePoint>, MagneticsError> {
    z_mm.iter()
        .map(|&z| {
            let placed = magnet.placed(mount.magnet_center(StagePosition::new(0.0, 0.0, z)));
            let b = cuboid_field(&placed, StagePosition::ORIGIN)?;
            Ok(ProfilePoint { z_mm: z, b_tesla: b.magnitude() })
        })
        .collect()
}

pub fn read_profile_csv<R: Read>(reader: R) -> Result<Vec<ProfilePoint>, MagneticsError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr.headers().map_err(|e| MagneticsError::Csv(e.to_string()))?;
    if headers.iter().collect::<Vec<_>>() != ["z_mm", "b_tesla"] {
        return Err(MagneticsError::Csv(format!("expected header `{PROFILE_HEADER}`")));
    }
    rdr.deserialize()
        .map(|row| row.map_err(|e: csv::Error| MagneticsError::Csv(e.to_string())))
        .collect()
}

pub fn write_profile_csv<W: Write>(mut writer: W, points: &[ProfilePoint]) -> std::io::Result<()> {
    writeln!(writer, "{PROFILE_HEADER}")?;
    for p in points {
        writeln!(writer, "{},{}", p.z_mm, p.b_tesla)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn block_at(z: f64) -> MagnetSpec {
        MagnetSpec::default().placed(StagePosition::new(0.0, 0.0, z))
    }

    #[test]
    fn zero_remanence_gives_zero_field() {
        let spec = block_at(-200.0).with_remanence(0.0);
        let b = cuboid_field(&spec, StagePosition::new(3.0, -4.0, 10.0)).unwrap();
        assert_eq!(b, FieldVector::ZERO);
    }

    #[test]
    fn anchor_point_is_six_point_two_millitesla() {
        let b = cuboid_field(&block_at(-160.0), StagePosition::ORIGIN).unwrap();
        assert!((b.magnitude() - 6.2e-3).abs() < 1e-12, "{}", b.magnitude());
        assert!(b.bx.abs() < 1e-15 && b.by.abs() < 1e-15);
    }

    #[test]
    fn inside_point_is_rejected() {
        let spec = block_at(0.0);
        assert!(matches!(
            cuboid_field(&spec, StagePosition::new(1.0, 1.0, 1.0)),
            Err(MagneticsError::InsideMagnet(_))
        ));
        // corner lies on the surface
        let corner = StagePosition::new(55.3, 44.5, 9.75);
        assert!(cuboid_field(&spec, corner).is_err());
    }

    #[test]
    fn exterior_points_in_face_planes_are_finite() {
        let spec = block_at(0.0);
        for p in [
            StagePosition::new(55.3, 80.0, 9.75),
            StagePosition::new(0.0, 0.0, 9.75 + 1e-9),
            StagePosition::new(70.0, 0.0, 9.75),
            StagePosition::new(55.3, -60.0, -9.75),
        ] {
            let b = cuboid_field(&spec, p).unwrap();
            assert!(b.is_finite(), "{p}: {b:?}");
        }
    }

    #[test]
    fn solenoid_examples() {
        assert_eq!(
            solenoid_field(&SolenoidSpec::along_z(0.025)).unwrap(),
            FieldVector::new(0.0, 0.0, 0.025)
        );
        assert_eq!(solenoid_field(&SolenoidSpec::along_z(0.0)).unwrap(), FieldVector::ZERO);
        assert_eq!(
            solenoid_field(&SolenoidSpec::along_z(-0.025)).unwrap(),
            FieldVector::new(0.0, 0.0, -0.025)
        );
        assert_eq!(
            solenoid_field(&SolenoidSpec::along_z(3.5)),
            Err(MagneticsError::SetpointOutOfRange(3.5))
        );
        let tilted = SolenoidSpec { axis: [0.0, 0.0, 2.0], setpoint: 0.1 };
        assert_eq!(solenoid_field(&tilted), Err(MagneticsError::InvalidAxis));
    }

    #[test]
    fn retracted_magnet_leaves_solenoid_field() {
        let sol = SolenoidSpec::along_z(0.025);
        let b = total_field(&sol, &block_at(-700.0), StagePosition::ORIGIN).unwrap();
        assert!((b.magnitude() - 0.025).abs() / 0.025 < 0.005);
        let zero = total_field(&SolenoidSpec::along_z(0.0), &block_at(-200.0).with_remanence(0.0), StagePosition::ORIGIN)
            .unwrap();
        assert_eq!(zero, FieldVector::ZERO);
    }

    #[test]
    fn superposition_without_solenoid_is_exact() {
        let magnet = block_at(-180.0).placed(StagePosition::new(-40.0, 10.0, -180.0));
        let p = StagePosition::ORIGIN;
        let total = total_field(&SolenoidSpec::along_z(0.0), &magnet, p).unwrap();
        assert_eq!(total, cuboid_field(&magnet, p).unwrap());
    }

    #[test]
    fn single_anchor_calibration_reproduces_anchor() {
        let profile = [ProfilePoint { z_mm: -160.0, b_tesla: 6.2e-3 }];
        let fit = calibrate_remanence(&profile, &MagnetSpec::default(), &StageMount::default()).unwrap();
        let b = cuboid_field(&fit.spec.placed(StagePosition::new(0.0, 0.0, -160.0)), StagePosition::ORIGIN)
            .unwrap();
        assert!((b.magnitude() - 6.2e-3).abs() < 1e-15);
        assert!((fit.spec.remanence - CALIBRATED_REMANENCE).abs() < 1e-12);
    }

    #[test]
    fn round_trip_and_linearity() {
        let mount = StageMount::default();
        let truth = MagnetSpec::default().with_remanence(1.35);
        let zs: Vec<f64> = (0..12).map(|i| -160.0 - 40.0 * i as f64).collect();
        let profile = field_profile(&truth, &mount, &zs).unwrap();
        let fit = calibrate_remanence(&profile, &MagnetSpec::default(), &mount).unwrap();
        assert!((fit.spec.remanence - 1.35).abs() / 1.35 < 1e-3);
        assert!(fit.residual_rms < 1e-12);

        let doubled: Vec<_> = profile
            .iter()
            .map(|p| ProfilePoint { z_mm: p.z_mm, b_tesla: 2.0 * p.b_tesla })
            .collect();
        let fit2 = calibrate_remanence(&doubled, &MagnetSpec::default(), &mount).unwrap();
        assert!((fit2.spec.remanence - 2.0 * fit.spec.remanence).abs() < 1e-12);
    }

    #[test]
    fn degenerate_profile_is_rejected() {
        let profile = [
            ProfilePoint { z_mm: -200.0, b_tesla: 3e-3 },
            ProfilePoint { z_mm: -200.0, b_tesla: 3.1e-3 },
            ProfilePoint { z_mm: -200.0, b_tesla: 2.9e-3 },
        ];
        assert!(matches!(
            calibrate_remanence(&profile, &MagnetSpec::default(), &StageMount::default()),
            Err(MagneticsError::Fit(_))
        ));
    }

    #[test]
    fn profile_csv_round_trip() {
        let pts = vec![
            ProfilePoint { z_mm: -160.0, b_tesla: 6.2e-3 },
            ProfilePoint { z_mm: -200.0, b_tesla: 3.375e-3 },
        ];
        let mut buf = Vec::new();
        write_profile_csv(&mut buf, &pts).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("z_mm,b_tesla\n"));
        assert!(!text.contains('\r'));
        assert_eq!(read_profile_csv(&buf[..]).unwrap(), pts);
        assert!(read_profile_csv("z,b\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn validate_catches_bad_specs() {
        let mut spec = MagnetSpec::default();
        spec.dims_mm[1] = 0.0;
        assert!(spec.validate().is_err());
        let spec = MagnetSpec { magnetization_axis: [0.0, 0.6, 0.6], ..MagnetSpec::default() };
        assert!(spec.validate().is_err());
        assert!(MagnetSpec::default().validate().is_ok());
    }
}
