use std::cell::RefCell;

use serde::{Deserialize, Serialize};

use super::extrema::parabola_vertex;
use super::probe::{probe_larmor, ProbePlan};
use super::CalibrationError;
use crate::geometry::{Axis, StagePosition};
use crate::optimize::golden_section;
use crate::virtlab::{FitResult, RunRecord, World};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweetSpotConfig {
    pub axis: Axis,
    /// Search range along `axis`, mm.
    pub range: (f64, f64),
    /// Stage position for the other two axes.
    pub base: StagePosition,
    /// Maximum number of probed positions.
    pub budget: usize,
    pub coarse_points: usize,
    /// Stop once the bracket is narrower than this, mm.
    pub tolerance_mm: f64,
    pub probe: ProbePlan,
    pub compensate: bool,
    pub overshoot_mm: f64,
    /// Sign of the final travel into every probe position.
    pub approach_direction: f64,
}

impl Default for SweetSpotConfig {
    fn default() -> Self {
        Self {
            axis: Axis::X,
            range: (-140.0, 0.0),
            base: StagePosition::new(0.0, 0.0, -200.0),
            budget: 60,
            coarse_points: 11,
            tolerance_mm: 0.5,
            probe: ProbePlan::default(),
            compensate: true,
            overshoot_mm: 1.0,
            approach_direction: -1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweetSpotProbe {
    pub position: f64,
    pub f_larmor: Option<f64>,
    pub sigma: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweetSpotResult {
    pub x_star: f64,
    /// Lowest fitted Larmor frequency over all probes, Hz.
    pub f_l_min: f64,
    pub f_l_min_sigma: f64,
    /// Out-of-plane angle of the true field at `x_star`. Simulation only;
    /// not available to a real experiment and not used by the search.
    pub truth_residual_angle_deg: f64,
    /// Golden-section iterations after the coarse scan.
    pub iterations: usize,
    pub probes: Vec<SweetSpotProbe>,
    /// Best-so-far f_L after each probe.
    pub best_history: Vec<f64>,
    pub interval: (f64, f64),
    pub converged: bool,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
    #[serde(skip)]
    pub fits: Vec<FitResult>,
}

struct Search<'a> {
    world: &'a mut World,
    config: &'a SweetSpotConfig,
    lo: f64,
    hi: f64,
    probes: Vec<SweetSpotProbe>,
    records: Vec<RunRecord>,
    fits: Vec<FitResult>,
    failures: usize,
}

impl Search<'_> {
    fn move_to(&mut self, x: f64) -> Result<(), CalibrationError> {
        let c = self.config;
        let target = c.base.with(c.axis, x);
        let current = if c.compensate { self.world.stage.state.true_pos } else { self.world.stage.state.commanded };
        let travel = x - current.get(c.axis);
        if travel * c.approach_direction <= 0.0 {
            // overshoot point on the far side, kept inside the range
            let pre = (x - c.approach_direction * c.overshoot_mm).clamp(self.lo, self.hi);
            if pre != x {
                self.world.stage.move_to(c.base.with(c.axis, pre), c.compensate)?;
            }
        }
        self.world.stage.move_to(target, c.compensate)?;
        Ok(())
    }

    fn probe(&mut self, x: f64) -> Result<f64, CalibrationError> {
        if self.probes.len() >= self.config.budget {
            return Err(CalibrationError::Budget(self.config.budget));
        }
        self.move_to(x)?;
        let out = probe_larmor(self.world, &self.config.probe)?;
        self.records.extend(out.records);
        self.fits.extend(out.fits);
        let (f, s) = match out.f_larmor {
            Some((f, s)) => (Some(f), Some(s)),
            None => {
                self.failures += 1;
                (None, None)
            }
        };
        self.probes.push(SweetSpotProbe { position: x, f_larmor: f, sigma: s });
        Ok(f.unwrap_or(f64::INFINITY))
    }
}

/// Coarse scan followed by golden-section refinement of the fitted Larmor
/// frequency along one stage axis.
pub fn find_sweet_spot(world: &mut World, config: &SweetSpotConfig) -> Result<SweetSpotResult, CalibrationError> {
    let (lo, hi) = if config.range.0 <= config.range.1 { config.range } else { (config.range.1, config.range.0) };
    if !(hi > lo) || config.coarse_points < 3 || config.budget < config.coarse_points + 1 {
        return Err(CalibrationError::Validation(format!(
            "range {lo}..{hi}, {} coarse points, budget {}",
            config.coarse_points, config.budget
        )));
    }
    let search = RefCell::new(Search {
        world,
        config,
        lo,
        hi,
        probes: Vec::new(),
        records: Vec::new(),
        fits: Vec::new(),
        failures: 0,
    });

    let step = (hi - lo) / (config.coarse_points - 1) as f64;
    // visit the grid in the approach direction so no overshoot is needed
    let mut grid: Vec<f64> = (0..config.coarse_points).map(|i| lo + step * i as f64).collect();
    if config.approach_direction < 0.0 {
        grid.reverse();
    }
    let mut coarse = Vec::with_capacity(grid.len());
    for &x in &grid {
        coarse.push((x, search.borrow_mut().probe(x)?));
    }
    coarse.sort_by(|a, b| a.0.total_cmp(&b.0));
    let i_min = (0..coarse.len()).min_by(|&a, &b| coarse[a].1.total_cmp(&coarse[b].1)).expect("non-empty grid");
    if !coarse[i_min].1.is_finite() || i_min == 0 || i_min == coarse.len() - 1 {
        return Err(CalibrationError::Bracketing(format!(
            "coarse minimum at {:.3} mm is not interior to {lo}..{hi}",
            coarse[i_min].0
        )));
    }

    // keep one probe in reserve for the final position
    let remaining = config.budget - config.coarse_points - 1;
    let (a, b) = (coarse[i_min - 1].0, coarse[i_min + 1].0);
    let golden = golden_section(|x| search.borrow_mut().probe(x), a, b, config.tolerance_mm, remaining)?;

    let mut s = search.into_inner();
    let usable: Vec<(f64, f64)> = s.probes.iter().filter_map(|p| p.f_larmor.map(|f| (p.position, f))).collect();
    let best_x = usable.iter().min_by(|p, q| p.1.total_cmp(&q.1)).map(|p| p.0).unwrap_or(golden.x);

    // parabola through the probes near the best one
    let reach = (4.0f64).max(golden.interval.1 - golden.interval.0);
    let near: Vec<(f64, f64)> = usable.iter().copied().filter(|(x, _)| (x - best_x).abs() <= reach).collect();
    let (nx, ny): (Vec<f64>, Vec<f64>) = near.into_iter().unzip();
    let x_star = match parabola_vertex(&nx, &ny, true) {
        Some(v) if nx.len() >= 4 && v >= a && v <= b => v,
        _ => best_x,
    };
    if s.probes.len() < config.budget {
        s.probe(x_star)?;
    }
    if s.failures * 10 > 3 * s.probes.len() {
        return Err(CalibrationError::FitFailures { failed: s.failures, total: s.probes.len() });
    }

    let mut best_history = Vec::with_capacity(s.probes.len());
    let mut best = f64::INFINITY;
    let mut best_sigma = f64::INFINITY;
    for p in &s.probes {
        if let Some(f) = p.f_larmor {
            if f < best {
                best = f;
                best_sigma = p.sigma.unwrap_or(f64::INFINITY);
            }
        }
        best_history.push(best);
    }

    let truth = s.world.larmor_with_stage_at(config.base.with(config.axis, x_star))?;
    Ok(SweetSpotResult {
        x_star,
        f_l_min: best,
        f_l_min_sigma: best_sigma,
        truth_residual_angle_deg: truth.theta_deg,
        iterations: golden.history.len(),
        probes: s.probes,
        best_history,
        interval: golden.interval,
        converged: golden.converged,
        records: s.records,
        fits: s.fits,
    })
}
