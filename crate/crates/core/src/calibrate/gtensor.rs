use nalgebra::{DMatrix, DVector, Matrix3, Rotation3, SymmetricEigen, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::CalibrationError;
use crate::geometry::{rotation_from_euler_deg, FieldVector, StagePosition};
use crate::lsq::{levenberg_marquardt, LsqOptions};
use crate::magnetics::{self, MagnetSpec, SolenoidSpec, StageMount};
use crate::spinmodel::{larmor_frequency, GTensor, MU_B_OVER_H};
use crate::virtlab::World;

/// One entry of a frequency map.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MapPoint {
    pub position: StagePosition,
    pub solenoid_tesla: f64,
    /// Measured Larmor frequency, Hz.
    pub f_larmor: f64,
}

/// Field sources used to turn stage positions into fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldModel {
    pub magnet: MagnetSpec,
    pub mount: StageMount,
    pub solenoid_axis: [f64; 3],
    pub screening: f64,
    pub sample_point: StagePosition,
}

impl FieldModel {
    pub fn from_world(world: &World) -> Self {
        Self {
            magnet: world.magnet.clone(),
            mount: world.mount.clone(),
            solenoid_axis: world.solenoid.axis,
            screening: world.screening,
            sample_point: world.sample_point,
        }
    }

    pub fn field(&self, position: StagePosition, solenoid_tesla: f64) -> Result<FieldVector, CalibrationError> {
        let magnet = self.magnet.placed(self.mount.magnet_center(position));
        let solenoid = SolenoidSpec { axis: self.solenoid_axis, setpoint: solenoid_tesla };
        Ok(magnetics::screened_total_field(&solenoid, &magnet, self.sample_point, self.screening)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GTensorFitConfig {
    /// Orientation seeds tried besides the linear estimate.
    pub seeds: usize,
    /// Orientation held fixed when the map cannot determine it.
    pub prior: GTensor,
}

impl Default for GTensorFitConfig {
    fn default() -> Self {
        Self { seeds: 8, prior: GTensor::isotropic(1.0) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GTensorFit {
    /// Principal values sorted in descending order.
    pub g: GTensor,
    pub principal_sigmas: [f64; 3],
    /// Angle between the largest principal axis and lab x, degrees.
    pub misalignment_deg: f64,
    pub misalignment_sigma_deg: f64,
    /// Sum of squared relative residuals.
    pub objective: f64,
    pub residual_rms_hz: f64,
    /// Objective at each starting point, before refinement.
    pub seed_objectives: Vec<f64>,
    /// Orientation could not be determined and was fixed to the prior.
    pub under_determined: bool,
    pub converged: bool,
}

/// Angle between the principal axis with the largest value and lab x.
pub fn misalignment_deg(g: &GTensor) -> f64 {
    let k = (0..3).max_by(|&a, &b| g.principal_values[a].abs().total_cmp(&g.principal_values[b].abs())).unwrap_or(0);
    let axis = g.orientation.matrix().column(k).into_owned();
    axis.x.abs().min(1.0).acos().to_degrees()
}

fn tensor(p: &[f64]) -> GTensor {
    GTensor { principal_values: [p[0], p[1], p[2]], orientation: rotation_from_euler_deg(p[3], p[4], p[5]) }
}

fn euler_deg(r: &Rotation3<f64>) -> [f64; 3] {
    let (roll, pitch, yaw) = r.euler_angles();
    [yaw.to_degrees(), pitch.to_degrees(), roll.to_degrees()]
}

/// Sorts principal values descending and keeps the frame right-handed.
fn canonical(g: &GTensor) -> GTensor {
    let mut idx = [0usize, 1, 2];
    let pv = g.principal_values.map(f64::abs);
    idx.sort_by(|&a, &b| pv[b].total_cmp(&pv[a]));
    let m = g.orientation.matrix();
    let mut cols = [m.column(idx[0]).into_owned(), m.column(idx[1]).into_owned(), m.column(idx[2]).into_owned()];
    // point the main axis toward +x so the misalignment is reported consistently
    if cols[0].x < 0.0 {
        cols[0] = -cols[0];
    }
    if Matrix3::from_columns(&cols).determinant() < 0.0 {
        cols[2] = -cols[2];
    }
    GTensor {
        principal_values: [pv[idx[0]], pv[idx[1]], pv[idx[2]]],
        orientation: Rotation3::from_matrix_unchecked(Matrix3::from_columns(&cols)),
    }
}

/// Linear least-squares estimate of G^T G from f^2, then its square root.
fn linear_estimate(fields: &[Vector3<f64>], f: &[f64]) -> Option<GTensor> {
    let rows = fields.len();
    let a = DMatrix::from_fn(rows, 6, |i, j| {
        let b = fields[i] / f[i];
        match j {
            0 => b.x * b.x,
            1 => b.y * b.y,
            2 => b.z * b.z,
            3 => 2.0 * b.x * b.y,
            4 => 2.0 * b.x * b.z,
            _ => 2.0 * b.y * b.z,
        }
    }) * (MU_B_OVER_H * MU_B_OVER_H);
    let rhs = DVector::from_element(rows, 1.0);
    let m = a.svd(true, true).solve(&rhs, 1e-14).ok()?;
    let sym = Matrix3::new(m[0], m[3], m[4], m[3], m[1], m[5], m[4], m[5], m[2]);
    let eig = SymmetricEigen::new(sym);
    let mut vecs = eig.eigenvectors;
    if vecs.determinant() < 0.0 {
        let c = -vecs.column(2).into_owned();
        vecs.set_column(2, &c);
    }
    let pv = eig.eigenvalues.map(|l| l.max(1e-12).sqrt());
    Some(canonical(&GTensor {
        principal_values: [pv[0], pv[1], pv[2]],
        orientation: Rotation3::from_matrix_unchecked(vecs),
    }))
}

fn spans_two_axes(map: &[MapPoint]) -> bool {
    let spread = |f: &dyn Fn(&MapPoint) -> f64| {
        let (lo, hi) = map.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
        hi - lo > 1.0
    };
    let moving = [spread(&|p| p.position.x), spread(&|p| p.position.y), spread(&|p| p.position.z)];
    let solenoid_varies = spread(&|p| p.solenoid_tesla * 1e3);
    moving.iter().filter(|m| **m).count() + usize::from(solenoid_varies) >= 2
}

/// Fits principal values and orientation of the g-tensor to a frequency map.
pub fn fit_gtensor(map: &[MapPoint], model: &FieldModel, config: &GTensorFitConfig) -> Result<GTensorFit, CalibrationError> {
    if map.len() < 6 {
        return Err(CalibrationError::Validation(format!("need at least 6 map points, got {}", map.len())));
    }
    if map.iter().any(|p| !(p.f_larmor > 0.0 && p.f_larmor.is_finite())) {
        return Err(CalibrationError::Validation("map frequencies must be positive".into()));
    }
    let fields: Vec<Vector3<f64>> = map
        .iter()
        .map(|p| model.field(p.position, p.solenoid_tesla).map(|b| b.as_vector()))
        .collect::<Result<_, _>>()?;
    let f: Vec<f64> = map.iter().map(|p| p.f_larmor).collect();

    let residuals = |p: &[f64]| -> Vec<f64> {
        let g = tensor(p);
        let gm = g.matrix();
        fields.iter().zip(&f).map(|(b, fi)| MU_B_OVER_H * (gm * b).norm() / fi - 1.0).collect()
    };
    let objective = |p: &[f64]| residuals(p).iter().map(|r| r * r).sum::<f64>();
    let opts = LsqOptions { lower: Some(vec![0.0, 0.0, 0.0, -360.0, -360.0, -360.0]), ..LsqOptions::default() };

    let mut seeds: Vec<Vec<f64>> = Vec::new();
    let base = linear_estimate(&fields, &f).unwrap_or_else(|| config.prior.clone());
    let [yaw, pitch, roll] = euler_deg(&base.orientation);
    let pv = base.principal_values;
    seeds.push(vec![pv[0], pv[1], pv[2], yaw, pitch, roll]);
    let offsets = [
        [0.0, 4.0, 0.0],
        [0.0, -4.0, 0.0],
        [4.0, 0.0, 0.0],
        [-4.0, 0.0, 0.0],
        [0.0, 0.0, 30.0],
        [0.0, 0.0, -30.0],
        [3.0, 3.0, 60.0],
        [-3.0, -3.0, -60.0],
        [0.0, 0.0, 90.0],
        [6.0, -6.0, 0.0],
    ];
    for k in 0..config.seeds.max(8) {
        let o = offsets[k % offsets.len()];
        let scale = 1.0 + (k / offsets.len()) as f64;
        seeds.push(vec![pv[0], pv[1], pv[2], yaw + o[0] * scale, pitch + o[1] * scale, roll + o[2] * scale]);
    }
    let seed_objectives: Vec<f64> = seeds.iter().map(|s| objective(s)).collect();

    let best = seeds
        .iter()
        .map(|s| levenberg_marquardt(residuals, s, &opts))
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .expect("at least one seed");

    let under_determined = !spans_two_axes(map) || best.rank_deficient;
    let (params, sigmas, cost, converged, cov) = if under_determined {
        let [yaw, pitch, roll] = euler_deg(&config.prior.orientation);
        let fixed = |q: &[f64]| residuals(&[q[0], q[1], q[2], yaw, pitch, roll]);
        let start = if best.params.iter().all(|v| v.is_finite()) {
            [best.params[0], best.params[1], best.params[2]]
        } else {
            config.prior.principal_values
        };
        let fit = levenberg_marquardt(fixed, &start, &LsqOptions { lower: Some(vec![0.0; 3]), ..LsqOptions::default() });
        let mut p = fit.params.clone();
        p.extend([yaw, pitch, roll]);
        let mut s = fit.sigmas.clone();
        s.extend([0.0; 3]);
        (p, s, fit.cost, fit.converged, None)
    } else {
        (best.params.clone(), best.sigmas.clone(), best.cost, best.converged, Some(best.covariance.clone()))
    };

    let raw = tensor(&params);
    let g = canonical(&raw);
    let mut principal_sigmas = [f64::INFINITY; 3];
    for (k, v) in g.principal_values.iter().enumerate() {
        if let Some(j) = (0..3).find(|&j| (raw.principal_values[j].abs() - v).abs() < 1e-15 * v.max(1.0)) {
            principal_sigmas[k] = sigmas[j];
        }
    }
    // propagate the angle covariance through the misalignment by finite differences
    let misalignment = misalignment_deg(&g);
    let misalignment_sigma_deg = match cov {
        Some(cov) => {
            let grad: Vec<f64> = (3..6)
                .map(|j| {
                    let h = 1e-4;
                    let mut a = params.clone();
                    let mut b = params.clone();
                    a[j] += h;
                    b[j] -= h;
                    (misalignment_deg(&tensor(&a)) - misalignment_deg(&tensor(&b))) / (2.0 * h)
                })
                .collect();
            let mut var = 0.0;
            for (ia, ga) in grad.iter().enumerate() {
                for (ib, gb) in grad.iter().enumerate() {
                    var += ga * gb * cov[(ia + 3, ib + 3)];
                }
            }
            var.max(0.0).sqrt()
        }
        None => 0.0,
    };
    let gm = g.matrix();
    let rms = (fields.iter().zip(&f).map(|(b, fi)| (MU_B_OVER_H * (gm * b).norm() - fi).powi(2)).sum::<f64>()
        / f.len() as f64)
        .sqrt();
    Ok(GTensorFit {
        g,
        principal_sigmas,
        misalignment_deg: misalignment,
        misalignment_sigma_deg,
        objective: cost,
        residual_rms_hz: rms,
        seed_objectives,
        under_determined,
        converged,
    })
}

/// Stage positions and solenoid setpoints of the default calibration map:
/// an xz and an xy grid at 25 mT plus a zero-field y sweep.
pub fn default_map_layout() -> Vec<(StagePosition, f64)> {
    let mut out = Vec::new();
    for i in 0..11 {
        let x = -25.0 * i as f64;
        for k in 0..5 {
            out.push((StagePosition::new(x, 0.0, -160.0 - 35.0 * k as f64), 0.025));
        }
        for k in 0..5 {
            let y = -100.0 + 50.0 * k as f64;
            if y != 0.0 {
                out.push((StagePosition::new(x, y, -200.0), 0.025));
            }
        }
    }
    for k in 0..21 {
        let y = -150.0 + 15.0 * k as f64;
        out.push((StagePosition::new(0.0, y, -160.0), 0.0));
        out.push((StagePosition::new(-20.0, y, -160.0), 0.0));
    }
    out
}

/// Frequencies from the world's true g-tensor with multiplicative Gaussian noise.
pub fn synthetic_map(
    model: &FieldModel,
    g: &GTensor,
    layout: &[(StagePosition, f64)],
    noise_rel: f64,
    seed: u64,
) -> Result<Vec<MapPoint>, CalibrationError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, noise_rel.max(0.0)).map_err(|e| CalibrationError::Validation(e.to_string()))?;
    layout
        .iter()
        .map(|&(position, solenoid_tesla)| {
            let b = model.field(position, solenoid_tesla)?;
            let f = larmor_frequency(g, &b) * (1.0 + noise.sample(&mut rng));
            Ok(MapPoint { position, solenoid_tesla, f_larmor: f })
        })
        .collect()
}
