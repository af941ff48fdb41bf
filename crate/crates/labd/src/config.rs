use std::path::{Path, PathBuf};

use maglab_core::calibrate::{Scenario, ScenarioContext};
use maglab_core::geometry::StagePosition;
use maglab_core::magnetics::{MagnetPose, MagnetSpec, SolenoidSpec, StageMount, SOLENOID_LIMIT};
use maglab_core::spinmodel::{default_plane_normal, GTensor, QubitModel};
use maglab_core::stage::{BacklashModel, Stage, StageConfig, TravelLimits};
use maglab_core::virtlab::World;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONFIG: &str = include_str!("../maglab.toml");
pub const CONFIG_ENV: &str = "MAGLAB_CONFIG";
pub const DEFAULT_CONFIG_PATH: &str = "maglab.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabConfig {
    pub master_seed: u64,
    pub output_dir: PathBuf,
    pub live_qubit: String,
    pub server: ServerConfig,
    pub magnet: MagnetConfig,
    pub solenoid: SolenoidConfig,
    pub stage: StageSection,
    pub qubits: QubitsConfig,
    pub runlog: RunLogConfig,
    pub scenarios: ScenarioRegistry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    pub bind: String,
    pub port: u16,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MagnetConfig {
    pub dims_mm: [f64; 3],
    pub remanence_tesla: f64,
    pub magnetization_axis: [f64; 3],
    pub park_mm: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolenoidConfig {
    pub tesla: f64,
    pub axis: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageSection {
    pub min_mm: [f64; 3],
    pub max_mm: [f64; 3],
    pub eps_per_event_mm: f64,
    pub per_mm: f64,
    pub tolerance_mm: f64,
    pub compensation: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitsConfig {
    pub q8: QubitConfig,
    pub q3: QubitConfig,
}

/// A built-in qubit model with optional parameter overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QubitConfig {
    pub preset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub g_principal: Option<[f64; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misalignment_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta_width_deg: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vis0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vis_slope: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub baseline: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunLogConfig {
    pub fsync: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioRegistry {
    pub shots: u64,
    pub enabled: Vec<String>,
}

impl Default for LabConfig {
    fn default() -> Self {
        Self::from_toml(DEFAULT_CONFIG).expect("embedded default config is valid")
    }
}

impl QubitConfig {
    pub fn model(&self) -> Result<QubitModel, ConfigError> {
        let mut m = match self.preset.as_str() {
            "q8" => QubitModel::q8(),
            "q3" => QubitModel::q3(),
            other => return Err(ConfigError::Invalid(format!("unknown qubit preset {other:?}"))),
        };
        if self.g_principal.is_some() || self.misalignment_deg.is_some() {
            let g = self.g_principal.unwrap_or(m.g.principal_values);
            let tilt = self.misalignment_deg.unwrap_or(maglab_core::spinmodel::DEFAULT_MISALIGNMENT_DEG);
            m.g = GTensor::tilted(g, tilt);
            m.plane_normal = default_plane_normal(tilt);
        }
        m.eta0 = self.eta0.unwrap_or(m.eta0);
        m.eta_width_deg = self.eta_width_deg.unwrap_or(m.eta_width_deg);
        m.vis0 = self.vis0.unwrap_or(m.vis0);
        m.vis_slope = self.vis_slope.unwrap_or(m.vis_slope);
        m.baseline = self.baseline.unwrap_or(m.baseline);
        m.validate().map_err(|e| ConfigError::Invalid(format!("qubit {}: {e}", self.preset)))?;
        Ok(m)
    }
}

impl LabConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let config: LabConfig = toml::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.into(), source })?;
        Self::from_toml(&text)
    }

    /// Explicit path, else `MAGLAB_CONFIG`, else `./maglab.toml` if present,
    /// else the embedded default.
    pub fn load(explicit: Option<&Path>) -> Result<Self, ConfigError> {
        if let Some(p) = explicit {
            return Self::from_file(p);
        }
        if let Ok(p) = std::env::var(CONFIG_ENV) {
            if !p.is_empty() {
                return Self::from_file(Path::new(&p));
            }
        }
        let local = Path::new(DEFAULT_CONFIG_PATH);
        if local.is_file() {
            return Self::from_file(local);
        }
        Self::from_toml(DEFAULT_CONFIG)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let invalid = |m: String| Err(ConfigError::Invalid(m));
        if !self.solenoid.tesla.is_finite() || self.solenoid.tesla.abs() > SOLENOID_LIMIT {
            return invalid(format!(
                "solenoid setpoint {} T exceeds the {SOLENOID_LIMIT} T limit",
                self.solenoid.tesla
            ));
        }
        self.solenoid_spec().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.magnet_spec().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let s = &self.stage;
        for k in 0..3 {
            if !(s.min_mm[k] < s.max_mm[k]) {
                return invalid(format!("stage axis {k}: min {} must be below max {}", s.min_mm[k], s.max_mm[k]));
            }
        }
        if !(s.eps_per_event_mm >= 0.0 && s.per_mm >= 0.0 && s.per_mm < 1.0 && s.tolerance_mm > 0.0) {
            return invalid("stage backlash must be non-negative, per_mm below 1, tolerance positive".into());
        }
        self.stage_config().limits.check(self.park()).map_err(|e| ConfigError::Invalid(format!("park position: {e}")))?;
        self.qubits.q8.model()?;
        self.qubits.q3.model()?;
        if !matches!(self.live_qubit.as_str(), "q8" | "q3") {
            return invalid(format!("live_qubit must be q8 or q3, got {:?}", self.live_qubit));
        }
        if self.scenarios.shots == 0 {
            return invalid("scenario shots must be positive".into());
        }
        for name in &self.scenarios.enabled {
            name.parse::<Scenario>().map_err(|_| ConfigError::Invalid(format!("unknown scenario {name:?}")))?;
        }
        Ok(())
    }

    pub fn park(&self) -> StagePosition {
        let p = self.magnet.park_mm;
        StagePosition::new(p[0], p[1], p[2])
    }

    pub fn magnet_spec(&self) -> MagnetSpec {
        MagnetSpec {
            dims_mm: self.magnet.dims_mm,
            remanence: self.magnet.remanence_tesla,
            magnetization_axis: self.magnet.magnetization_axis,
            pose: MagnetPose { position: self.park(), ..MagnetPose::default() },
        }
    }

    pub fn solenoid_spec(&self) -> SolenoidSpec {
        SolenoidSpec { axis: self.solenoid.axis, setpoint: self.solenoid.tesla }
    }

    pub fn stage_config(&self) -> StageConfig {
        StageConfig {
            limits: TravelLimits { min: self.stage.min_mm, max: self.stage.max_mm },
            backlash: BacklashModel { eps_per_event: [self.stage.eps_per_event_mm; 3], per_mm: [self.stage.per_mm; 3] },
            tolerance_mm: self.stage.tolerance_mm,
        }
    }

    pub fn scenario_context(&self) -> Result<ScenarioContext, ConfigError> {
        Ok(ScenarioContext {
            master_seed: self.master_seed,
            magnet: self.magnet_spec(),
            mount: StageMount::default(),
            stage: self.stage_config(),
            q8: self.qubits.q8.model()?,
            q3: self.qubits.q3.model()?,
            shots: self.scenarios.shots,
        })
    }

    /// The live lab: the configured qubit with the magnet parked.
    pub fn world(&self) -> Result<World, ConfigError> {
        let qubit = if self.live_qubit == "q3" { self.qubits.q3.model()? } else { self.qubits.q8.model()? };
        let stage = Stage::new(self.stage_config(), self.park()).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        let mut w = World::new(qubit, self.solenoid_spec(), stage, self.master_seed);
        w.magnet = self.magnet_spec();
        w.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(w)
    }

    pub fn scenarios(&self) -> Vec<Scenario> {
        self.scenarios.enabled.iter().filter_map(|n| n.parse().ok()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn embedded_default_loads() {
        let c = LabConfig::default();
        assert_eq!(c.scenarios().len(), Scenario::ALL.len());
        assert_eq!(c.world().unwrap().stage.state.true_pos, StagePosition::new(0.0, 0.0, -700.0));
        assert_eq!(c.scenario_context().unwrap().q8, QubitModel::q8());
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = DEFAULT_CONFIG.replace("[runlog]\nfsync = false", "[runlog]\nfsync = false\ncolour = 3");
        assert!(matches!(LabConfig::from_toml(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn solenoid_above_limit_cites_the_limit() {
        let text = DEFAULT_CONFIG.replace("tesla = 0.025", "tesla = 3.5");
        let err = LabConfig::from_toml(&text).unwrap_err().to_string();
        assert!(err.contains("3 T limit"), "{err}");
    }

    #[test]
    fn unresolvable_scenario_is_rejected() {
        let text = DEFAULT_CONFIG.replace("\"rb\",", "\"fig9\",");
        assert!(LabConfig::from_toml(&text).unwrap_err().to_string().contains("fig9"));
    }

    #[test]
    fn qubit_overrides_apply() {
        let q = QubitConfig {
            preset: "q8".into(),
            g_principal: Some([5.0, 0.2, 0.1]),
            misalignment_deg: Some(1.0),
            eta0: None,
            eta_width_deg: None,
            vis0: Some(0.9),
            vis_slope: None,
            baseline: None,
        };
        let m = q.model().unwrap();
        assert_eq!(m.g.principal_values, [5.0, 0.2, 0.1]);
        assert_eq!(m.vis0, 0.9);
    }
}
