use serde::{Deserialize, Serialize};

use crate::virtlab::{fit_resonance, run_spectroscopy, FitResult, RunRecord, SpectroscopySweep, VirtlabError, World};

/// Two-stage spectroscopy: a coarse scan to find the line, then a fine scan around it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbePlan {
    pub coarse_start_hz: f64,
    pub coarse_stop_hz: f64,
    pub coarse_step_hz: f64,
    pub coarse_shots: u64,
    /// Half-width of the fine scan in units of the coarse linewidth.
    pub fine_halfwidth_linewidths: f64,
    pub fine_points: usize,
    pub fine_shots: u64,
    pub pulse_duration: f64,
    pub drive_amplitude: f64,
}

impl Default for ProbePlan {
    fn default() -> Self {
        Self {
            coarse_start_hz: 30e6,
            coarse_stop_hz: 160e6,
            coarse_step_hz: 0.25e6,
            coarse_shots: 200,
            fine_halfwidth_linewidths: 3.0,
            fine_points: 121,
            fine_shots: 1000,
            pulse_duration: 1e-6,
            drive_amplitude: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeOutcome {
    pub f_larmor: Option<(f64, f64)>,
    pub records: Vec<RunRecord>,
    pub fits: Vec<FitResult>,
}

/// Measures the Larmor frequency at the stage's current position.
pub fn probe_larmor(world: &mut World, plan: &ProbePlan) -> Result<ProbeOutcome, VirtlabError> {
    let coarse = SpectroscopySweep::linear(
        plan.coarse_start_hz,
        plan.coarse_stop_hz,
        plan.coarse_step_hz,
        plan.pulse_duration,
        plan.drive_amplitude,
        plan.coarse_shots,
    );
    let rec = run_spectroscopy(world, &coarse, &mut |_| {})?;
    let fit = fit_resonance(&rec)?;
    let mut out = ProbeOutcome { f_larmor: None, records: vec![rec], fits: vec![fit.clone()] };
    let (Some(center), Some(width)) = (fit.value("f_larmor"), fit.value("linewidth")) else {
        return Ok(out);
    };
    if !fit.usable || plan.fine_points < 5 {
        if fit.usable {
            out.f_larmor = Some((center, fit.sigma("f_larmor").unwrap_or(f64::INFINITY)));
        }
        return Ok(out);
    }
    let half = plan.fine_halfwidth_linewidths * width.max(plan.coarse_step_hz);
    let step = 2.0 * half / (plan.fine_points - 1) as f64;
    let fine = SpectroscopySweep::linear(
        center - half,
        center + half,
        step,
        plan.pulse_duration,
        plan.drive_amplitude,
        plan.fine_shots,
    );
    let rec = run_spectroscopy(world, &fine, &mut |_| {})?;
    let fit = fit_resonance(&rec)?;
    if fit.usable {
        if let (Some(c), Some(s)) = (fit.value("f_larmor"), fit.sigma("f_larmor")) {
            out.f_larmor = Some((c, s));
        }
    }
    out.records.push(rec);
    out.fits.push(fit);
    Ok(out)
}
