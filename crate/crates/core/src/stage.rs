//! Three-axis gantry carrying the magnet, with start-stop backlash.
//!
//! Every move that starts and stops an axis shifts that axis's true position by
//! `eps_per_event` against the direction of travel. The offset accumulates, so
//! a 51-point sweep in 1 mm steps ends 2.5 mm away from where it was told to go.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{Axis, StagePosition};

/// Offset per start-stop event measured on the gantry, mm.
pub const DEFAULT_EPS_PER_EVENT_MM: f64 = 0.050;

/// Overshoot used for unidirectional approaches, mm.
pub const DEFAULT_OVERSHOOT_MM: f64 = 1.0;

/// Commands closer than this to the current command do not move the axis.
const MOVE_EPSILON_MM: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum StageError {
    #[error("{axis:?} = {value:.3} mm outside travel limits [{min}, {max}]")]
    OutOfLimits { axis: Axis, value: f64, min: f64, max: f64 },
    #[error("non-finite stage position")]
    NonFinite,
    #[error("invalid sweep: {0}")]
    InvalidSweep(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TravelLimits {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl Default for TravelLimits {
    fn default() -> Self {
        Self { min: [-300.0, -300.0, -800.0], max: [300.0, 300.0, -150.0] }
    }
}

impl TravelLimits {
    pub fn symmetric(half_range: f64) -> Self {
        Self { min: [-half_range; 3], max: [half_range; 3] }
    }

    pub fn check(&self, p: StagePosition) -> Result<(), StageError> {
        if !p.is_finite() {
            return Err(StageError::NonFinite);
        }
        for axis in Axis::ALL {
            let i = axis.index();
            let value = p.get(axis);
            if value < self.min[i] || value > self.max[i] {
                return Err(StageError::OutOfLimits { axis, value, min: self.min[i], max: self.max[i] });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BacklashModel {
    pub eps_per_event: [f64; 3],
    /// Extra offset per millimetre travelled; zero by default.
    #[serde(default)]
    pub per_mm: [f64; 3],
}

impl Default for BacklashModel {
    fn default() -> Self {
        Self { eps_per_event: [DEFAULT_EPS_PER_EVENT_MM; 3], per_mm: [0.0; 3] }
    }
}

impl BacklashModel {
    pub fn ideal() -> Self {
        Self { eps_per_event: [0.0; 3], per_mm: [0.0; 3] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageState {
    pub commanded: StagePosition,
    pub true_pos: StagePosition,
    /// true_pos - commanded, per axis.
    pub backlash_accum: [f64; 3],
    /// Start-stop events per axis.
    pub events: [u64; 3],
}

impl StageState {
    pub fn at(position: StagePosition) -> Self {
        Self { commanded: position, true_pos: position, backlash_accum: [0.0; 3], events: [0; 3] }
    }

    pub fn event_count(&self) -> u64 {
        self.events.iter().sum()
    }

    pub fn error(&self) -> StagePosition {
        self.true_pos - self.commanded
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageConfig {
    pub limits: TravelLimits,
    pub backlash: BacklashModel,
    /// Target accuracy for compensated moves, mm.
    pub tolerance_mm: f64,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self { limits: TravelLimits::default(), backlash: BacklashModel::default(), tolerance_mm: 1e-3 }
    }
}

impl StageConfig {
    /// Executes one move to `target` and returns the new state.
    pub fn command_move(&self, state: &StageState, target: StagePosition) -> Result<StageState, StageError> {
        self.limits.check(target)?;
        let mut next = state.clone();
        for axis in Axis::ALL {
            let i = axis.index();
            let travel = target.get(axis) - state.commanded.get(axis);
            if travel.abs() <= MOVE_EPSILON_MM {
                continue;
            }
            let shift = self.backlash.eps_per_event[i] + self.backlash.per_mm[i] * travel.abs();
            next.backlash_accum[i] -= travel.signum() * shift;
            next.events[i] += 1;
            next.commanded = next.commanded.with(axis, target.get(axis));
        }
        next.true_pos = StagePosition::new(
            next.commanded.x + next.backlash_accum[0],
            next.commanded.y + next.backlash_accum[1],
            next.commanded.z + next.backlash_accum[2],
        );
        Ok(next)
    }

    /// Command that lands the true position on `target` from `state`.
    pub fn compensate(&self, state: &StageState, target: StagePosition) -> Result<StagePosition, StageError> {
        if !target.is_finite() {
            return Err(StageError::NonFinite);
        }
        let mut command = target;
        for axis in Axis::ALL {
            let i = axis.index();
            let eps = self.backlash.eps_per_event[i];
            let k = self.backlash.per_mm[i];
            let cmd = state.commanded.get(axis);
            let gap = target.get(axis) - state.true_pos.get(axis);
            if gap.abs() <= MOVE_EPSILON_MM {
                command = command.with(axis, cmd);
                continue;
            }
            // Moving in direction s shifts true position by -s (eps + k |travel|):
            // target = c + accum - s (eps + k s (c - cmd)) with s (c - cmd) > 0.
            let accum = state.backlash_accum[i];
            let candidate = |s: f64| -> Option<f64> {
                let travel = (target.get(axis) - accum - cmd + s * eps) / (1.0 - k);
                (s * travel > MOVE_EPSILON_MM).then_some(cmd + travel)
            };
            let c = if gap > 0.0 {
                candidate(1.0).or_else(|| candidate(-1.0))
            } else {
                candidate(-1.0).or_else(|| candidate(1.0))
            };
            command = command.with(axis, c.unwrap_or(target.get(axis) - accum));
        }
        self.limits.check(command)?;
        Ok(command)
    }
}

/// A stage: configuration plus its single mutable state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub config: StageConfig,
    pub state: StageState,
}

impl Stage {
    pub fn new(config: StageConfig, start: StagePosition) -> Result<Self, StageError> {
        config.limits.check(start)?;
        Ok(Self { config, state: StageState::at(start) })
    }

    pub fn command_move(&mut self, target: StagePosition) -> Result<&StageState, StageError> {
        self.state = self.config.command_move(&self.state, target)?;
        Ok(&self.state)
    }

    /// Moves so the true position ends on `target`, when `compensate` is set.
    pub fn move_to(&mut self, target: StagePosition, compensate: bool) -> Result<&StageState, StageError> {
        self.config.limits.check(target)?;
        let command = if compensate { self.config.compensate(&self.state, target)? } else { target };
        self.command_move(command)
    }

    /// Moves to `target` approaching along `axis` from the side `-direction`,
    /// via an overshoot point when the last approach came from the other side.
    pub fn approach(
        &mut self,
        target: StagePosition,
        axis: Axis,
        direction: f64,
        overshoot: f64,
        compensate: bool,
    ) -> Result<&StageState, StageError> {
        let current = if compensate { self.state.true_pos } else { self.state.commanded };
        let along = target.get(axis) - current.get(axis);
        if along * direction <= 0.0 && along.abs() > MOVE_EPSILON_MM || along.abs() <= MOVE_EPSILON_MM {
            let pre = target.with(axis, target.get(axis) - direction.signum() * overshoot);
            self.move_to(pre, compensate)?;
        }
        self.move_to(target, compensate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepMode {
    Unidirectional,
    Bidirectional,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SettlePolicy {
    /// Moves complete instantly in simulation time.
    Immediate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPlan {
    pub axis: Axis,
    pub waypoints: Vec<f64>,
    pub mode: SweepMode,
    /// Sign of travel used to reach every waypoint; 0 when unconstrained.
    pub approach_direction: i8,
    /// Overshoot point visited before the first waypoint.
    pub pre_move: Option<f64>,
    pub settle: SettlePolicy,
}

pub fn plan_sweep(axis: Axis, start: f64, stop: f64, n_points: usize, mode: SweepMode) -> Result<SweepPlan, StageError> {
    if n_points < 2 {
        return Err(StageError::InvalidSweep(format!("need at least 2 points, got {n_points}")));
    }
    if !(start.is_finite() && stop.is_finite()) || start == stop {
        return Err(StageError::InvalidSweep(format!("invalid range {start} .. {stop}")));
    }
    let step = (stop - start) / (n_points - 1) as f64;
    let mut waypoints: Vec<f64> = (0..n_points).map(|i| start + step * i as f64).collect();
    waypoints[n_points - 1] = stop;
    let direction = (stop - start).signum();
    let (approach_direction, pre_move) = match mode {
        SweepMode::Unidirectional => (direction as i8, Some(start - direction * DEFAULT_OVERSHOOT_MM)),
        SweepMode::Bidirectional => (0, None),
    };
    Ok(SweepPlan { axis, waypoints, mode, approach_direction, pre_move, settle: SettlePolicy::Immediate })
}

impl SweepPlan {
    pub fn positions(&self, base: StagePosition) -> Vec<StagePosition> {
        self.waypoints.iter().map(|&v| base.with(self.axis, v)).collect()
    }

    pub fn validate(&self, base: StagePosition, limits: &TravelLimits) -> Result<(), StageError> {
        for p in self.positions(base) {
            limits.check(p)?;
        }
        if let Some(pre) = self.pre_move {
            limits.check(base.with(self.axis, pre))?;
        }
        Ok(())
    }

    /// Drives the stage through the plan, calling `visit` at each waypoint.
    pub fn execute<E, F>(&self, stage: &mut Stage, base: StagePosition, compensate: bool, mut visit: F) -> Result<(), E>
    where
        E: From<StageError>,
        F: FnMut(usize, &Stage) -> Result<(), E>,
    {
        if let Some(pre) = self.pre_move {
            stage.move_to(base.with(self.axis, pre), compensate)?;
        }
        for (i, p) in self.positions(base).into_iter().enumerate() {
            stage.move_to(p, compensate)?;
            visit(i, stage)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stage_at(x: f64) -> Stage {
        Stage::new(StageConfig::default(), StagePosition::new(x, 0.0, -200.0)).unwrap()
    }

    #[test]
    fn fifty_one_point_sweep_accumulates_two_and_a_half_mm() {
        let mut stage = stage_at(0.0);
        for i in 0..51 {
            stage.command_move(StagePosition::new(-(i as f64), 0.0, -200.0)).unwrap();
        }
        let err = stage.state.error();
        assert!((err.x - 2.5).abs() < 1e-9, "{err}");
        assert_eq!(stage.state.events, [50, 0, 0]);
    }

    #[test]
    fn zero_length_move_changes_nothing() {
        let mut stage = stage_at(-10.0);
        let before = stage.state.clone();
        stage.command_move(before.commanded).unwrap();
        assert_eq!(stage.state, before);
    }

    #[test]
    fn ideal_stage_lands_exactly() {
        let config = StageConfig { backlash: BacklashModel::ideal(), ..StageConfig::default() };
        let mut stage = Stage::new(config, StagePosition::new(0.0, 0.0, -200.0)).unwrap();
        for t in [StagePosition::new(-5.0, 3.0, -210.0), StagePosition::new(12.0, -4.0, -190.0)] {
            stage.command_move(t).unwrap();
            assert_eq!(stage.state.true_pos, t);
            assert_eq!(stage.config.compensate(&stage.state, t).unwrap(), t);
        }
    }

    #[test]
    fn single_move_correction_is_fifty_microns() {
        let stage = stage_at(0.0);
        let target = StagePosition::new(1.0, 0.0, -200.0);
        let cmd = stage.config.compensate(&stage.state, target).unwrap();
        assert!(((cmd.x - target.x).abs() - 0.050).abs() < 1e-12);
        let next = stage.config.command_move(&stage.state, cmd).unwrap();
        assert!(next.true_pos.distance(&target) < 1e-12);
    }

    #[test]
    fn compensated_rerun_residual_is_small() {
        let mut stage = stage_at(0.0);
        for i in 0..51 {
            stage.command_move(StagePosition::new(-(i as f64), 0.0, -200.0)).unwrap();
        }
        for i in 0..51 {
            let target = StagePosition::new(-(i as f64), 0.0, -200.0);
            stage.move_to(target, true).unwrap();
            assert!(stage.state.true_pos.distance(&target) <= 0.1);
            assert!(stage.state.true_pos.distance(&target) <= 1e-9);
        }
    }

    #[test]
    fn limits_are_enforced() {
        let mut stage = Stage::new(
            StageConfig { limits: TravelLimits::symmetric(300.0), ..StageConfig::default() },
            StagePosition::ORIGIN,
        )
        .unwrap();
        assert!(stage.command_move(StagePosition::new(-250.0, 0.0, -200.0)).is_ok());
        assert!(matches!(
            stage.command_move(StagePosition::new(-400.0, 0.0, 0.0)),
            Err(StageError::OutOfLimits { axis: Axis::X, .. })
        ));
    }

    #[test]
    fn per_mm_term_is_inverted_too() {
        let config = StageConfig {
            backlash: BacklashModel { eps_per_event: [0.05; 3], per_mm: [0.01; 3] },
            ..StageConfig::default()
        };
        let mut stage = Stage::new(config, StagePosition::new(0.0, 0.0, -200.0)).unwrap();
        for t in [-3.0, -7.5, 2.0, 2.0, 1.9, 40.0] {
            let target = StagePosition::new(t, 1.0, -201.0);
            stage.move_to(target, true).unwrap();
            assert!(stage.state.true_pos.distance(&target) < 1e-9, "{}", stage.state.true_pos);
        }
    }

    #[test]
    fn sweep_plans() {
        let plan = plan_sweep(Axis::X, 0.0, -250.0, 51, SweepMode::Unidirectional).unwrap();
        assert_eq!(plan.waypoints.len(), 51);
        for w in plan.waypoints.windows(2) {
            assert!((w[0] - w[1] - 5.0).abs() < 1e-12);
        }
        assert_eq!(plan.approach_direction, -1);
        assert_eq!(plan.pre_move, Some(1.0));

        let two = plan_sweep(Axis::Z, -160.0, -300.0, 2, SweepMode::Bidirectional).unwrap();
        assert_eq!(two.waypoints, vec![-160.0, -300.0]);

        let bi = plan_sweep(Axis::X, 0.0, -250.0, 51, SweepMode::Bidirectional).unwrap();
        assert_eq!(bi.waypoints, plan.waypoints);
        assert_ne!(bi.approach_direction, plan.approach_direction);
        assert!(bi.pre_move.is_none());

        assert!(plan_sweep(Axis::X, 0.0, -1.0, 1, SweepMode::Bidirectional).is_err());
        assert!(plan_sweep(Axis::X, 3.0, 3.0, 5, SweepMode::Bidirectional).is_err());
    }

    #[test]
    fn unidirectional_execution_approaches_from_one_side() {
        let plan = plan_sweep(Axis::X, -10.0, -20.0, 11, SweepMode::Unidirectional).unwrap();
        let mut stage = stage_at(-30.0);
        let base = StagePosition::new(0.0, 0.0, -200.0);
        let mut last = f64::INFINITY;
        plan.execute::<StageError, _>(&mut stage, base, false, |_, s| {
            assert!(s.state.commanded.x < last);
            last = s.state.commanded.x;
            Ok(())
        })
        .unwrap();
    }

    #[test]
    fn approach_uses_overshoot_when_coming_from_wrong_side() {
        let mut stage = stage_at(-50.0);
        let target = StagePosition::new(-40.0, 0.0, -200.0);
        // approaching with negative travel from -50 requires going past -40 first
        stage.approach(target, Axis::X, -1.0, 1.0, false).unwrap();
        assert_eq!(stage.state.events[0], 2);
        assert_eq!(stage.state.commanded, target);
    }

    proptest! {
        #[test]
        fn backlash_bound_and_determinism(moves in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64, -400.0..-200.0f64), 1..60)) {
            let mut a = stage_at(0.0);
            let mut b = stage_at(0.0);
            for (x, y, z) in &moves {
                let t = StagePosition::new(*x, *y, *z);
                a.command_move(t).unwrap();
                b.command_move(t).unwrap();
                for i in 0..3 {
                    let bound = a.state.events[i] as f64 * a.config.backlash.eps_per_event[i];
                    prop_assert!(a.state.backlash_accum[i].abs() <= bound + 1e-12);
                }
            }
            prop_assert_eq!(&a.state, &b.state);
        }

        #[test]
        fn compensation_efficacy(moves in proptest::collection::vec((-100.0..100.0f64, -100.0..100.0f64, -400.0..-200.0f64), 1..200)) {
            let mut stage = stage_at(0.0);
            let tol = stage.config.tolerance_mm;
            for (x, y, z) in &moves {
                let t = StagePosition::new(*x, *y, *z);
                stage.move_to(t, true).unwrap();
                prop_assert!(stage.state.true_pos.distance(&t) <= 2.0 * tol);
            }
        }
    }
}
