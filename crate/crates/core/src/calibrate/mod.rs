//! Closed-loop calibration over the virtual lab and the named scenario replays.

mod extrema;
mod gtensor;
mod probe;
mod scenarios;
mod sweet_spot;

use thiserror::Error;

use crate::magnetics::MagneticsError;
use crate::stage::StageError;
use crate::virtlab::VirtlabError;

pub use extrema::{interior_maxima, interior_minima, parabola_vertex, present};
pub use gtensor::{
    default_map_layout, fit_gtensor, misalignment_deg, synthetic_map, FieldModel, GTensorFit, GTensorFitConfig,
    MapPoint,
};
pub use probe::{probe_larmor, ProbeOutcome, ProbePlan};
pub use scenarios::{run_scenario, run_scenario_by_name, Check, Scenario, ScenarioBundle, ScenarioContext};
pub use sweet_spot::{find_sweet_spot, SweetSpotConfig, SweetSpotProbe, SweetSpotResult};

#[derive(Debug, Error)]
pub enum CalibrationError {
    #[error("invalid input: {0}")]
    Validation(String),
    #[error("no interior minimum: {0}")]
    Bracketing(String),
    #[error("resonance fits failed at {failed} of {total} probes")]
    FitFailures { failed: usize, total: usize },
    #[error("probe budget of {0} exhausted")]
    Budget(usize),
    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),
    #[error(transparent)]
    Virtlab(#[from] VirtlabError),
    #[error(transparent)]
    Magnetics(#[from] MagneticsError),
    #[error(transparent)]
    Stage(#[from] StageError),
}
