use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::extrema::{interior_maxima, interior_minima, parabola_vertex, present};
use super::gtensor::{fit_gtensor, FieldModel, GTensorFitConfig, MapPoint};
use super::probe::{probe_larmor, ProbePlan};
use super::sweet_spot::{find_sweet_spot, SweetSpotConfig};
use super::CalibrationError;
use crate::derive_seed;
use crate::geometry::{Axis, StagePosition};
use crate::magnetics::{self, MagnetPose, MagnetSpec, SolenoidSpec, StageMount};
use crate::spinmodel::{coherence_times, larmor_frequency, QubitModel, T2_HAHN_NO_MAGNET, T2_HAHN_SWEET_SPOT};
use crate::spinmodel::{T2_STAR_NO_MAGNET, T2_STAR_SWEET_SPOT};
use crate::stage::{plan_sweep, Stage, StageConfig, SweepMode};
use crate::virtlab::{
    fit_decay, fit_rabi, fit_resonance, rb_fit, run_hahn_echo, run_rabi, run_ramsey, run_rb, run_spectroscopy,
    track_moving_peak, DecayModel, FitResult, RbSettings, RunRecord, SpectroscopySweep, SpuriousLine, World,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Scenario {
    #[serde(rename = "fig1d")]
    Fig1d,
    #[serde(rename = "fig2_bin5mT")]
    Fig2Bin5mT,
    #[serde(rename = "fig2_bin25mT")]
    Fig2Bin25mT,
    #[serde(rename = "fig2_bin50mT")]
    Fig2Bin50mT,
    #[serde(rename = "fig3_xz")]
    Fig3Xz,
    #[serde(rename = "fig3_xy")]
    Fig3Xy,
    #[serde(rename = "fig4_sweet_spot")]
    Fig4SweetSpot,
    #[serde(rename = "supp1_q3")]
    Supp1Q3,
    #[serde(rename = "supp2_no_magnet")]
    Supp2NoMagnet,
    #[serde(rename = "supp3_drive_efficiency")]
    Supp3DriveEfficiency,
    #[serde(rename = "fig5_zero_field_x")]
    Fig5ZeroFieldX,
    #[serde(rename = "fig5_zero_field_z")]
    Fig5ZeroFieldZ,
    #[serde(rename = "fig5_circle")]
    Fig5Circle,
    #[serde(rename = "supp6_hysteresis")]
    Supp6Hysteresis,
    #[serde(rename = "rb")]
    Rb,
}

impl Scenario {
    pub const ALL: [Scenario; 15] = [
        Scenario::Fig1d,
        Scenario::Fig2Bin5mT,
        Scenario::Fig2Bin25mT,
        Scenario::Fig2Bin50mT,
        Scenario::Fig3Xz,
        Scenario::Fig3Xy,
        Scenario::Fig4SweetSpot,
        Scenario::Supp1Q3,
        Scenario::Supp2NoMagnet,
        Scenario::Supp3DriveEfficiency,
        Scenario::Fig5ZeroFieldX,
        Scenario::Fig5ZeroFieldZ,
        Scenario::Fig5Circle,
        Scenario::Supp6Hysteresis,
        Scenario::Rb,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::Fig1d => "fig1d",
            Scenario::Fig2Bin5mT => "fig2_bin5mT",
            Scenario::Fig2Bin25mT => "fig2_bin25mT",
            Scenario::Fig2Bin50mT => "fig2_bin50mT",
            Scenario::Fig3Xz => "fig3_xz",
            Scenario::Fig3Xy => "fig3_xy",
            Scenario::Fig4SweetSpot => "fig4_sweet_spot",
            Scenario::Supp1Q3 => "supp1_q3",
            Scenario::Supp2NoMagnet => "supp2_no_magnet",
            Scenario::Supp3DriveEfficiency => "supp3_drive_efficiency",
            Scenario::Fig5ZeroFieldX => "fig5_zero_field_x",
            Scenario::Fig5ZeroFieldZ => "fig5_zero_field_z",
            Scenario::Fig5Circle => "fig5_circle",
            Scenario::Supp6Hysteresis => "supp6_hysteresis",
            Scenario::Rb => "rb",
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Scenario::Fig1d => "field magnitude of the block versus distance along z",
            Scenario::Fig2Bin5mT => "Q8 Larmor frequency along x at 5 mT: minimum plus local maximum",
            Scenario::Fig2Bin25mT => "Q8 Larmor frequency along x at 25 mT",
            Scenario::Fig2Bin50mT => "Q8 Larmor frequency along x at 50 mT: single trough",
            Scenario::Fig3Xz => "Q8 Larmor map over x and z at 25 mT with g-tensor fit",
            Scenario::Fig3Xy => "Q8 Larmor map over x and y at 25 mT",
            Scenario::Fig4SweetSpot => "Q8 sweet-spot search, Ramsey and Hahn echo, co-location sweep",
            Scenario::Supp1Q3 => "Q3 Larmor frequency and dephasing time along x at 25 mT",
            Scenario::Supp2NoMagnet => "Q8 Ramsey and Hahn echo with the magnet parked",
            Scenario::Supp3DriveEfficiency => "Q8 drive efficiency along x at 25 mT",
            Scenario::Fig5ZeroFieldX => "Q3 without solenoid field, magnet moved along x at z = -160 mm",
            Scenario::Fig5ZeroFieldZ => "Q3 without solenoid field, magnet moved along z at x = 0",
            Scenario::Fig5Circle => "Q3 without solenoid field, magnet on a 5 mm circle at z = -200 mm",
            Scenario::Supp6Hysteresis => "three uncompensated repeats of a 51-point x sweep, plus a compensated one",
            Scenario::Rb => "randomized benchmarking at the sweet-spot operating point",
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = CalibrationError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Scenario::ALL
            .iter()
            .copied()
            .find(|sc| sc.name() == s)
            .ok_or_else(|| CalibrationError::UnknownScenario(s.to_string()))
    }
}

/// Lab configuration shared by all scenarios.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioContext {
    pub master_seed: u64,
    pub magnet: MagnetSpec,
    pub mount: StageMount,
    pub stage: StageConfig,
    pub q8: QubitModel,
    pub q3: QubitModel,
    /// Shots per spectroscopy point.
    pub shots: u64,
}

impl Default for ScenarioContext {
    fn default() -> Self {
        Self {
            master_seed: 20_250_101,
            magnet: MagnetSpec::default(),
            mount: StageMount::default(),
            stage: StageConfig::default(),
            q8: QubitModel::q8(),
            q3: QubitModel::q3(),
            shots: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub detail: String,
}

/// Everything a scenario produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioBundle {
    pub scenario: String,
    pub map_csv: String,
    pub fits_csv: String,
    pub verdict: String,
    pub checks: Vec<Check>,
    /// Headline numbers, keyed by name.
    pub summary: BTreeMap<String, f64>,
    /// A sub-experiment failed; the bundle holds what was done before it.
    pub partial: bool,
    #[serde(skip)]
    pub records: Vec<RunRecord>,
}

impl ScenarioBundle {
    pub fn passed(&self) -> bool {
        !self.partial && self.checks.iter().all(|c| c.passed)
    }

    pub fn metric(&self, key: &str) -> Option<f64> {
        self.summary.get(key).copied()
    }

    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Default)]
struct Table {
    header: Vec<&'static str>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new(header: &[&'static str]) -> Self {
        Self { header: header.to_vec(), rows: Vec::new() }
    }

    fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    fn to_csv(&self) -> String {
        let mut out = self.header.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

fn num(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

struct Builder {
    name: &'static str,
    records: Vec<RunRecord>,
    fits: Table,
    map: Table,
    checks: Vec<Check>,
    summary: BTreeMap<String, f64>,
}

impl Builder {
    fn new(scenario: Scenario, map_header: &[&'static str]) -> Self {
        Self {
            name: scenario.name(),
            records: Vec::new(),
            fits: Table::new(&["run", "kind", "model", "parameter", "value", "sigma", "usable"]),
            map: Table::new(map_header),
            checks: Vec::new(),
            summary: BTreeMap::new(),
        }
    }

    fn add_run(&mut self, record: RunRecord, fit: Option<&FitResult>) -> usize {
        let id = self.records.len();
        if let Some(fit) = fit {
            for e in &fit.estimates {
                self.fits.push(vec![
                    id.to_string(),
                    record.kind.name().into(),
                    fit.model.clone(),
                    e.name.clone(),
                    num(e.value),
                    num(e.sigma),
                    fit.usable.to_string(),
                ]);
            }
        }
        self.records.push(record);
        id
    }

    fn derived(&mut self, parameter: &str, value: f64, sigma: f64) {
        self.fits.push(vec![
            String::new(),
            "derived".into(),
            String::new(),
            parameter.into(),
            num(value),
            num(sigma),
            value.is_finite().to_string(),
        ]);
        self.summary.insert(parameter.into(), value);
    }

    fn metric(&mut self, key: &str, value: f64) {
        self.summary.insert(key.into(), value);
    }

    fn check(&mut self, name: &str, passed: bool, detail: String) {
        self.checks.push(Check { name: name.into(), passed, detail });
    }

    fn finish(mut self, outcome: Result<(), CalibrationError>) -> ScenarioBundle {
        let partial = outcome.is_err();
        if let Err(e) = outcome {
            self.check("completed", false, e.to_string());
        }
        let mut verdict = format!("scenario {}\n", self.name);
        for c in &self.checks {
            verdict.push_str(&format!("{} {}: {}\n", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail));
        }
        let overall = if partial {
            "PARTIAL"
        } else if self.checks.iter().all(|c| c.passed) {
            "PASS"
        } else {
            "FAIL"
        };
        verdict.push_str(&format!("verdict: {overall}\n"));
        ScenarioBundle {
            scenario: self.name.into(),
            map_csv: self.map.to_csv(),
            fits_csv: self.fits.to_csv(),
            verdict,
            checks: self.checks,
            summary: self.summary,
            partial,
            records: self.records,
        }
    }
}

fn world(ctx: &ScenarioContext, scenario: Scenario, qubit: &QubitModel, solenoid_tesla: f64) -> Result<World, CalibrationError> {
    let stage = Stage::new(ctx.stage.clone(), MagnetPose::default().position)?;
    let mut w = World::new(
        qubit.clone(),
        SolenoidSpec::along_z(solenoid_tesla),
        stage,
        derive_seed(ctx.master_seed, scenario.name()),
    );
    w.magnet = ctx.magnet.clone();
    w.mount = ctx.mount.clone();
    w.validate()?;
    Ok(w)
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

fn probe_at(b: &mut Builder, w: &mut World, pos: StagePosition, plan: &ProbePlan, compensate: bool) -> Result<Option<(f64, f64)>, CalibrationError> {
    w.stage.move_to(pos, compensate)?;
    let out = probe_larmor(w, plan)?;
    for (rec, fit) in out.records.into_iter().zip(out.fits.iter()) {
        b.add_run(rec, Some(fit));
    }
    Ok(out.f_larmor)
}

fn ramsey_at(b: &mut Builder, w: &mut World, t_max: f64, detuning: f64, shots: u64) -> Result<FitResult, CalibrationError> {
    let t: Vec<f64> = (0..60).map(|i| t_max * i as f64 / 59.0).collect();
    let rec = run_ramsey(w, &t, detuning, shots, &mut |_| {})?;
    let fit = fit_decay(&rec, DecayModel::Ramsey)?;
    b.add_run(rec, Some(&fit));
    Ok(fit)
}

fn hahn_at(b: &mut Builder, w: &mut World, t_max: f64, shots: u64) -> Result<FitResult, CalibrationError> {
    let t: Vec<f64> = (0..60).map(|i| t_max * i as f64 / 59.0).collect();
    let rec = run_hahn_echo(w, &t, shots, &mut |_| {})?;
    let fit = fit_decay(&rec, DecayModel::Hahn)?;
    b.add_run(rec, Some(&fit));
    Ok(fit)
}

/// Runs a named scenario. Sub-experiment failures yield a partial bundle.
pub fn run_scenario(scenario: Scenario, ctx: &ScenarioContext) -> ScenarioBundle {
    let header: &[&'static str] = match scenario {
        Scenario::Fig1d => &["z_mm", "b_tesla"],
        Scenario::Fig2Bin5mT | Scenario::Fig2Bin25mT | Scenario::Fig2Bin50mT => {
            &["x_mm", "y_mm", "z_mm", "f_larmor_hz", "f_larmor_sigma_hz", "peaks", "truth_f_larmor_hz"]
        }
        Scenario::Fig3Xz | Scenario::Fig3Xy | Scenario::Fig5ZeroFieldX | Scenario::Fig5ZeroFieldZ => {
            &["x_mm", "y_mm", "z_mm", "f_larmor_hz", "f_larmor_sigma_hz", "truth_f_larmor_hz"]
        }
        Scenario::Fig5Circle => &["angle_deg", "x_mm", "y_mm", "z_mm", "f_larmor_hz", "f_larmor_sigma_hz", "truth_f_larmor_hz"],
        Scenario::Fig4SweetSpot | Scenario::Supp1Q3 => &["x_mm", "f_larmor_hz", "f_larmor_sigma_hz", "t2_star_s", "t2_star_sigma_s"],
        Scenario::Supp2NoMagnet => &["quantity", "value", "sigma"],
        Scenario::Supp3DriveEfficiency => &["x_mm", "f_larmor_hz", "f_rabi_hz", "f_rabi_sigma_hz", "efficiency"],
        Scenario::Supp6Hysteresis => &["run", "point", "commanded_x_mm", "true_x_mm", "f_larmor_hz", "f_larmor_sigma_hz"],
        Scenario::Rb => &["length", "survival", "randomizations", "shots"],
    };
    let mut b = Builder::new(scenario, header);
    let outcome = match scenario {
        Scenario::Fig1d => fig1d(&mut b, ctx),
        Scenario::Fig2Bin5mT => fig2(&mut b, ctx, scenario, 0.005),
        Scenario::Fig2Bin25mT => fig2(&mut b, ctx, scenario, 0.025),
        Scenario::Fig2Bin50mT => fig2(&mut b, ctx, scenario, 0.050),
        Scenario::Fig3Xz => fig3(&mut b, ctx, scenario, true),
        Scenario::Fig3Xy => fig3(&mut b, ctx, scenario, false),
        Scenario::Fig4SweetSpot => fig4(&mut b, ctx),
        Scenario::Supp1Q3 => supp1(&mut b, ctx),
        Scenario::Supp2NoMagnet => supp2(&mut b, ctx),
        Scenario::Supp3DriveEfficiency => supp3(&mut b, ctx),
        Scenario::Fig5ZeroFieldX => fig5_line(&mut b, ctx, scenario),
        Scenario::Fig5ZeroFieldZ => fig5_line(&mut b, ctx, scenario),
        Scenario::Fig5Circle => fig5_circle(&mut b, ctx),
        Scenario::Supp6Hysteresis => supp6(&mut b, ctx),
        Scenario::Rb => rb(&mut b, ctx),
    };
    b.finish(outcome)
}

pub fn run_scenario_by_name(name: &str, ctx: &ScenarioContext) -> Result<ScenarioBundle, CalibrationError> {
    Ok(run_scenario(name.parse()?, ctx))
}

// ------------------------------------------------------------------ fig1d

fn fig1d(b: &mut Builder, ctx: &ScenarioContext) -> Result<(), CalibrationError> {
    let z: Vec<f64> = (0..55).map(|i| -160.0 - 10.0 * i as f64).collect();
    let profile = magnetics::field_profile(&ctx.magnet, &ctx.mount, &z)?;
    for p in &profile {
        b.map.push(vec![num(p.z_mm), num(p.b_tesla)]);
    }
    let b160 = profile[0].b_tesla;
    b.metric("b_at_160mm_tesla", b160);
    b.check("field_anchor", within(b160, 6.2e-3, 0.02), format!("|B| at 160 mm = {:.4} mT (6.2 mT +/- 2%)", b160 * 1e3));
    let monotone = profile.windows(2).all(|w| w[1].b_tesla < w[0].b_tesla);
    b.check("monotone_decay", monotone, "field decreases with distance".into());
    Ok(())
}

// ------------------------------------------------------------------ fig2

fn fig2(b: &mut Builder, ctx: &ScenarioContext, scenario: Scenario, tesla: f64) -> Result<(), CalibrationError> {
    let mut w = world(ctx, scenario, &ctx.q8, tesla)?;
    w.spurious = Some(SpuriousLine::default());
    let sweep = match scenario {
        Scenario::Fig2Bin5mT => SpectroscopySweep::linear(5e6, 200e6, 0.125e6, 2e-6, 0.6, ctx.shots),
        Scenario::Fig2Bin50mT => SpectroscopySweep::linear(50e6, 300e6, 0.125e6, 1e-6, 0.25, ctx.shots),
        _ => SpectroscopySweep::linear(30e6, 200e6, 0.125e6, 1e-6, 0.5, ctx.shots),
    };
    let plan = plan_sweep(Axis::X, 0.0, -250.0, 51, SweepMode::Unidirectional)?;
    let base = StagePosition::new(0.0, 0.0, -200.0);
    let mut fits = Vec::new();
    let mut truth = Vec::new();
    let mut positions = Vec::new();
    if let Some(pre) = plan.pre_move {
        w.stage.move_to(base.with(Axis::X, pre), true)?;
    }
    for p in plan.positions(base) {
        w.stage.move_to(p, true)?;
        let rec = run_spectroscopy(&mut w, &sweep, &mut |_| {})?;
        let fit = fit_resonance(&rec)?;
        truth.push(rec.meta("truth_f_larmor").unwrap_or(f64::NAN));
        b.add_run(rec, Some(&fit));
        fits.push(fit);
        positions.push(p);
    }
    let tracked = track_moving_peak(&fits, 1.5e6);
    for (i, p) in positions.iter().enumerate() {
        let sigma = tracked[i].and_then(|c| fits[i].peaks.iter().find(|pk| pk.center == c).map(|pk| pk.center_sigma));
        b.map.push(vec![
            num(p.x),
            num(p.y),
            num(p.z),
            opt(tracked[i]),
            opt(sigma),
            fits[i].peaks.len().to_string(),
            num(truth[i]),
        ]);
    }
    let x: Vec<f64> = positions.iter().map(|p| p.x).collect();
    let (_, f) = present(&x, &tracked);
    let detected = f.len() as f64 / x.len() as f64;
    let prominence = 3e6;
    let minima = interior_minima(&f, prominence).len();
    let maxima = interior_maxima(&f, prominence).len();
    b.metric("detected_fraction", detected);
    b.metric("interior_minima", minima as f64);
    b.metric("interior_maxima", maxima as f64);
    b.metric("f_min_hz", f.iter().copied().fold(f64::INFINITY, f64::min));
    b.metric("f_max_hz", f.iter().copied().fold(f64::NEG_INFINITY, f64::max));
    b.check("detection", detected >= 0.9, format!("line tracked at {:.0}% of positions", detected * 100.0));
    match scenario {
        Scenario::Fig2Bin5mT => {
            b.check("one_minimum", minima == 1, format!("{minima} interior minima"));
            b.check("one_local_maximum", maxima == 1, format!("{maxima} interior maxima"));
        }
        Scenario::Fig2Bin50mT => {
            b.check("single_trough", minima == 1, format!("{minima} interior minima"));
            b.check("no_local_maximum", maxima == 0, format!("{maxima} interior maxima"));
        }
        _ => {}
    }
    let spurious_seen = fits.iter().filter(|r| r.peaks.iter().any(|p| (p.center - 130e6).abs() < 1.5e6)).count();
    b.metric("spurious_detections", spurious_seen as f64);
    Ok(())
}

// ------------------------------------------------------------------ fig3

fn map_plan() -> ProbePlan {
    ProbePlan { coarse_start_hz: 20e6, coarse_stop_hz: 200e6, ..ProbePlan::default() }
}

fn fig3(b: &mut Builder, ctx: &ScenarioContext, scenario: Scenario, xz: bool) -> Result<(), CalibrationError> {
    let mut w = world(ctx, scenario, &ctx.q8, 0.025)?;
    let plan = ProbePlan { coarse_shots: ctx.shots, ..map_plan() };
    let mut positions = Vec::new();
    for i in 0..26 {
        let x = -10.0 * i as f64;
        if xz {
            for k in 0..8 {
                positions.push(StagePosition::new(x, 0.0, -160.0 - 20.0 * k as f64));
            }
        } else {
            for k in 0..9 {
                positions.push(StagePosition::new(x, -100.0 + 25.0 * k as f64, -200.0));
            }
        }
    }
    let mut map = Vec::new();
    for &p in &positions {
        let truth = w.larmor_with_stage_at(p)?.f_larmor;
        let f = probe_at(b, &mut w, p, &plan, true)?;
        b.map.push(vec![num(p.x), num(p.y), num(p.z), opt(f.map(|v| v.0)), opt(f.map(|v| v.1)), num(truth)]);
        if let Some((f, _)) = f {
            map.push(MapPoint { position: p, solenoid_tesla: 0.025, f_larmor: f });
        }
    }
    let f_min = map.iter().map(|m| m.f_larmor).fold(f64::INFINITY, f64::min);
    let f_max = map.iter().map(|m| m.f_larmor).fold(f64::NEG_INFINITY, f64::max);
    b.metric("f_min_hz", f_min);
    b.metric("f_max_hz", f_max);
    b.metric("detected_fraction", map.len() as f64 / positions.len() as f64);
    b.check("detection", map.len() * 10 >= positions.len() * 9, format!("{} of {} positions", map.len(), positions.len()));
    b.check("span_low", within(f_min, 50e6, 0.10), format!("minimum {:.2} MHz (50 MHz +/- 10%)", f_min / 1e6));
    if xz {
        b.check("span_high", within(f_max, 150e6, 0.10), format!("maximum {:.2} MHz (150 MHz +/- 10%)", f_max / 1e6));
        let model = FieldModel::from_world(&w);
        let fit = fit_gtensor(&map, &model, &GTensorFitConfig::default())?;
        for (k, v) in fit.g.principal_values.iter().enumerate() {
            b.derived(&format!("g{}", k + 1), *v, fit.principal_sigmas[k]);
        }
        b.derived("misalignment_deg", fit.misalignment_deg, fit.misalignment_sigma_deg);
        // refit model reproduces span and minimum location
        let mut model_f = Vec::new();
        for m in &map {
            model_f.push(larmor_frequency(&fit.g, &model.field(m.position, m.solenoid_tesla)?));
        }
        let i_data = (0..map.len()).min_by(|&a, &b| map[a].f_larmor.total_cmp(&map[b].f_larmor)).unwrap_or(0);
        let i_model = (0..map.len()).min_by(|&a, &b| model_f[a].total_cmp(&model_f[b])).unwrap_or(0);
        let shift = map[i_data].position.distance(&map[i_model].position);
        let mf_min = model_f.iter().copied().fold(f64::INFINITY, f64::min);
        let mf_max = model_f.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        b.check(
            "gtensor_model_span",
            within(mf_min, f_min, 0.10) && within(mf_max, f_max, 0.10),
            format!("fitted model spans {:.2}..{:.2} MHz", mf_min / 1e6, mf_max / 1e6),
        );
        b.check("gtensor_model_minimum", shift <= 20.0 + 1e-9, format!("minimum location differs by {shift:.1} mm"));
    } else {
        b.check("span_high", f_max <= 165e6, format!("maximum {:.2} MHz (at most 165 MHz)", f_max / 1e6));
    }
    Ok(())
}

// ------------------------------------------------------------------ fig4 / supp1

struct Colocation {
    f_vertex: Option<f64>,
    t2_vertex: Option<f64>,
    t2_best: Option<f64>,
}

/// Sweeps x around `center` measuring f_L and T2*, and locates the extremum of each.
fn colocation_sweep(
    b: &mut Builder,
    w: &mut World,
    center: f64,
    half_width: f64,
    points: usize,
    plan: &ProbePlan,
) -> Result<Colocation, CalibrationError> {
    let base = StagePosition::new(0.0, 0.0, -200.0);
    let mut xs = Vec::new();
    let mut fs = Vec::new();
    let mut t2 = Vec::new();
    for i in 0..points {
        let x = center + half_width - 2.0 * half_width * i as f64 / (points - 1) as f64;
        let f = probe_at(b, w, base.with(Axis::X, x), plan, true)?;
        let fit = ramsey_at(b, w, 45e-6, 0.15e6, 200)?;
        let t = if fit.usable { fit.get("t2").map(|e| (e.value, e.sigma)) } else { None };
        b.map.push(vec![num(x), opt(f.map(|v| v.0)), opt(f.map(|v| v.1)), opt(t.map(|v| v.0)), opt(t.map(|v| v.1))]);
        xs.push(x);
        fs.push(f.map(|v| v.0));
        t2.push(t.map(|v| v.0));
    }
    let (fx, fy) = present(&xs, &fs);
    let (tx, ty) = present(&xs, &t2);
    // 1/T2*^2 is quadratic in the out-of-plane angle
    let inv: Vec<f64> = ty.iter().map(|t| 1.0 / (t * t)).collect();
    let t2_best = tx.iter().zip(&ty).max_by(|a, b| a.1.total_cmp(b.1)).map(|(x, _)| *x);
    let reach = 4.0 * half_width / (points - 1) as f64;
    Ok(Colocation {
        f_vertex: local_vertex(&fx, &fy, true, reach),
        t2_vertex: local_vertex(&tx, &inv, true, reach),
        t2_best,
    })
}

fn fig4(b: &mut Builder, ctx: &ScenarioContext) -> Result<(), CalibrationError> {
    let mut w = world(ctx, Scenario::Fig4SweetSpot, &ctx.q8, 0.025)?;
    let config = SweetSpotConfig::default();
    let ss = find_sweet_spot(&mut w, &config)?;
    for (rec, fit) in ss.records.iter().cloned().zip(ss.fits.iter()) {
        b.add_run(rec, Some(fit));
    }
    b.derived("x_star_mm", ss.x_star, f64::NAN);
    b.derived("f_l_min_hz", ss.f_l_min, ss.f_l_min_sigma);
    b.metric("truth_residual_angle_deg", ss.truth_residual_angle_deg);
    b.metric("probes", ss.probes.len() as f64);
    b.check(
        "sweet_spot_angle",
        ss.truth_residual_angle_deg.abs() < 0.1 && ss.probes.len() <= 60,
        format!(
            "x* = {:.3} mm, residual angle {:.4} deg (simulation truth), {} probes",
            ss.x_star,
            ss.truth_residual_angle_deg,
            ss.probes.len()
        ),
    );
    // truth reference: dense 10 um sweep of the noiseless f_L
    let base = config.base;
    let mut best = (f64::NAN, f64::INFINITY);
    let mut t2_max = 0.0f64;
    let mut x = config.range.0;
    while x <= config.range.1 {
        let lp = w.larmor_with_stage_at(base.with(Axis::X, x))?;
        if lp.f_larmor < best.1 {
            best = (x, lp.f_larmor);
        }
        t2_max = t2_max.max(coherence_times(&w.qubit, lp.theta_deg).t2_star);
        x += 0.01;
    }
    b.metric("truth_x_min_mm", best.0);
    b.check("x_star_vs_truth", (ss.x_star - best.0).abs() <= 1.0, format!("|x* - x_min| = {:.3} mm", (ss.x_star - best.0).abs()));
    let lp = w.larmor_with_stage_at(base.with(Axis::X, ss.x_star))?;
    let t2_here = coherence_times(&w.qubit, lp.theta_deg).t2_star;
    b.check("coherence_at_x_star", t2_here >= 0.95 * t2_max, format!("truth T2*(x*) / max = {:.4}", t2_here / t2_max));

    w.stage.move_to(base.with(Axis::X, ss.x_star), true)?;
    let ramsey = ramsey_at(b, &mut w, 45e-6, 0.15e6, 200)?;
    let hahn = hahn_at(b, &mut w, 250e-6, 200)?;
    let t2s = ramsey.get("t2").map_or((f64::NAN, f64::NAN), |e| (e.value, e.sigma));
    let t2h = hahn.get("t2").map_or((f64::NAN, f64::NAN), |e| (e.value, e.sigma));
    b.derived("t2_star_s", t2s.0, t2s.1);
    b.derived("t2_hahn_s", t2h.0, t2h.1);
    b.check("t2_star", ramsey.usable && within(t2s.0, T2_STAR_SWEET_SPOT, 0.10), format!("T2* = {:.2} us", t2s.0 * 1e6));
    b.check("t2_hahn", hahn.usable && within(t2h.0, T2_HAHN_SWEET_SPOT, 0.15), format!("T2H = {:.2} us", t2h.0 * 1e6));

    let plan = ProbePlan::default();
    let c = colocation_sweep(b, &mut w, ss.x_star, 15.0, 11, &plan)?;
    let f_v = c.f_vertex.unwrap_or(f64::NAN);
    let t_v = c.t2_vertex.or(c.t2_best).unwrap_or(f64::NAN);
    b.derived("f_vertex_mm", f_v, f64::NAN);
    b.derived("t2_vertex_mm", t_v, f64::NAN);
    b.derived("colocation_mm", (f_v - t_v).abs(), f64::NAN);
    b.check("colocation", (f_v - t_v).abs() <= 2.0, format!("f_L minimum at {f_v:.2} mm, T2* maximum at {t_v:.2} mm"));
    Ok(())
}

fn supp1(b: &mut Builder, ctx: &ScenarioContext) -> Result<(), CalibrationError> {
    let mut w = world(ctx, Scenario::Supp1Q3, &ctx.q3, 0.025)?;
    let plan = ProbePlan { coarse_start_hz: 20e6, coarse_stop_hz: 120e6, ..ProbePlan::default() };
    // locate the trough coarsely, then sweep around it
    let base = StagePosition::new(0.0, 0.0, -200.0);
    let mut coarse = Vec::new();
    for i in 0..10 {
        let x = -20.0 - 10.0 * i as f64;
        if let Some((f, _)) = probe_at(b, &mut w, base.with(Axis::X, x), &plan, true)? {
            coarse.push((x, f));
        }
    }
    let (x0, _) = coarse.iter().copied().min_by(|a, b| a.1.total_cmp(&b.1)).ok_or_else(|| {
        CalibrationError::Bracketing("no resonance found along x".into())
    })?;
    let c = colocation_sweep(b, &mut w, x0, 20.0, 11, &plan)?;
    let f_v = c.f_vertex.unwrap_or(f64::NAN);
    let t_v = c.t2_vertex.or(c.t2_best).unwrap_or(f64::NAN);
    b.derived("f_vertex_mm", f_v, f64::NAN);
    b.derived("t2_vertex_mm", t_v, f64::NAN);
    b.check("same_trend", (f_v - t_v).abs() <= 10.0, format!("f_L minimum at {f_v:.1} mm, T2* maximum at {t_v:.1} mm"));
    Ok(())
}

// ------------------------------------------------------------------ supp2 / supp3

fn supp2(b: &mut Builder, ctx: &ScenarioContext) -> Result<(), CalibrationError> {
    let mut w = world(ctx, Scenario::Supp2NoMagnet, &ctx.q8, 0.025)?;
    let park = MagnetPose::default().position;
    let f = probe_at(b, &mut w, park, &map_plan(), true)?;
    let ramsey = ramsey_at(b, &mut w, 6e-6, 1e6, 200)?;
    let hahn = hahn_at(b, &mut w, 12e-6, 200)?;
    let t2s = ramsey.get("t2").map_or((f64::NAN, f64::NAN), |e| (e.value, e.sigma));
    let t2h = hahn.get("t2").map_or((f64::NAN, f64::NAN), |e| (e.value, e.sigma));
    b.map.push(vec!["f_larmor_hz".into(), opt(f.map(|v| v.0)), opt(f.map(|v| v.1))]);
    b.map.push(vec!["t2_star_s".into(), num(t2s.0), num(t2s.1)]);
    b.map.push(vec!["t2_hahn_s".into(), num(t2h.0), num(t2h.1)]);
    b.derived("t2_star_s", t2s.0, t2s.1);
    b.derived("t2_hahn_s", t2h.0, t2h.1);
    b.check("t2_star", ramsey.usable && within(t2s.0, T2_STAR_NO_MAGNET, 0.15), format!("T2* = {:.3} us", t2s.0 * 1e6));
    b.check("t2_hahn", hahn.usable && within(t2h.0, T2_HAHN_NO_MAGNET, 0.15), format!("T2H = {:.3} us", t2h.0 * 1e6));
    Ok(())
}

fn supp3(b: &mut Builder, ctx: &ScenarioContext) -> Result<(), CalibrationError> {
    let mut w = world(ctx, Scenario::Supp3DriveEfficiency, &ctx.q8, 0.025)?;
    let plan = ProbePlan::default();
    let amplitude = 0.5;
    let shots = 1000;
    let durations: Vec<f64> = (0..120).map(|i| i as f64 * 0.1e-6).collect();
    let base = StagePosition::new(0.0, 0.0, -200.0);
    let (mut xs, mut fs, mut eff) = (Vec::new(), Vec::new(), Vec::new());
    for i in 0..23 {
        let x = -10.0 - 5.0 * i as f64;
        let f = probe_at(b, &mut w, base.with(Axis::X, x), &plan, true)?;
        let rec = run_rabi(&mut w, &durations, amplitude, shots, &mut |_| {})?;
        let fit = fit_rabi(&rec)?;
        b.add_run(rec, Some(&fit));
        let fr = if fit.usable { fit.get("f_rabi").map(|e| (e.value, e.sigma)) } else { None };
        let e = match (f, fr) {
            (Some((fl, _)), Some((r, _))) => Some(r / (fl * amplitude)),
            _ => None,
        };
        b.map.push(vec![num(x), opt(f.map(|v| v.0)), opt(fr.map(|v| v.0)), opt(fr.map(|v| v.1)), opt(e)]);
        xs.push(x);
        fs.push(f.map(|v| v.0));
        eff.push(e);
    }
    let (fx, fy) = present(&xs, &fs);
    let (ex, ey) = present(&xs, &eff);
    let x_fmin = local_vertex(&fx, &fy, true, 10.0).unwrap_or(f64::NAN);
    let x_emax = local_vertex(&ex, &ey, false, 20.0).unwrap_or(f64::NAN);
    b.derived("x_f_min_mm", x_fmin, f64::NAN);
    b.derived("x_efficiency_max_mm", x_emax, f64::NAN);
    b.check(
        "efficiency_peak_at_minimum",
        (x_fmin - x_emax).abs() <= 5.0,
        format!("f_L minimum at {x_fmin:.1} mm, efficiency peak at {x_emax:.1} mm"),
    );
    Ok(())
}

/// Parabola vertex through the samples within `reach` of the extreme sample.
fn local_vertex(x: &[f64], y: &[f64], minimum: bool, reach: f64) -> Option<f64> {
    let pick = |a: &&f64, c: &&f64| if minimum { a.total_cmp(c) } else { c.total_cmp(a) };
    let i = (0..y.len()).min_by(|&a, &c| pick(&&y[a], &&y[c]))?;
    let (nx, ny): (Vec<f64>, Vec<f64>) =
        x.iter().zip(y).filter(|(v, _)| (*v - x[i]).abs() <= reach + 1e-9).map(|(a, c)| (*a, *c)).unzip();
    parabola_vertex(&nx, &ny, minimum)
}

// ------------------------------------------------------------------ fig5

fn zero_field_plan(tp: f64, start: f64, stop: f64, step: f64, shots: u64) -> ProbePlan {
    ProbePlan {
        coarse_start_hz: start,
        coarse_stop_hz: stop,
        coarse_step_hz: step,
        coarse_shots: shots,
        pulse_duration: tp,
        drive_amplitude: 1.0,
        ..ProbePlan::default()
    }
}

fn fig5_line(b: &mut Builder, ctx: &ScenarioContext, scenario: Scenario) -> Result<(), CalibrationError> {
    let mut w = world(ctx, scenario, &ctx.q3, 0.0)?;
    let along_x = scenario == Scenario::Fig5ZeroFieldX;
    let (positions, plan): (Vec<StagePosition>, ProbePlan) = if along_x {
        (
            (0..31).map(|i| StagePosition::new(-25.0 + i as f64, 0.0, -160.0)).collect(),
            zero_field_plan(2e-6, 2e6, 60e6, 0.1e6, ctx.shots),
        )
    } else {
        (
            (0..11).map(|i| StagePosition::new(0.0, 0.0, -160.0 - 10.0 * i as f64)).collect(),
            zero_field_plan(4e-6, 1e6, 25e6, 0.05e6, ctx.shots),
        )
    };
    let mut fs = Vec::new();
    for &p in &positions {
        let truth = w.larmor_with_stage_at(p)?.f_larmor;
        let f = probe_at(b, &mut w, p, &plan, true)?;
        b.map.push(vec![num(p.x), num(p.y), num(p.z), opt(f.map(|v| v.0)), opt(f.map(|v| v.1)), num(truth)]);
        fs.push(f.map(|v| v.0));
    }
    let coord: Vec<f64> = positions.iter().map(|p| if along_x { p.x } else { p.z }).collect();
    let (_, f) = present(&coord, &fs);
    b.check("detection", f.len() * 10 >= positions.len() * 9, format!("{} of {} positions", f.len(), positions.len()));
    if f.is_empty() {
        return Ok(());
    }
    let f_min = f.iter().copied().fold(f64::INFINITY, f64::min);
    b.metric("f_first_hz", f[0]);
    b.metric("f_min_hz", f_min);
    if along_x {
        let minima = interior_minima(&f, 2e6).len();
        b.metric("interior_minima", minima as f64);
        b.check("start_near_40mhz", within(f[0], 40e6, 0.20), format!("f_L at x = -25 mm: {:.2} MHz", f[0] / 1e6));
        b.check("minimum_near_10mhz", within(f_min, 10e6, 0.20), format!("minimum {:.2} MHz", f_min / 1e6));
        b.check("interior_minimum", minima == 1, format!("{minima} interior minima"));
    } else {
        let decreasing = f.windows(2).all(|p| p[1] < p[0]);
        b.check("decreasing_with_distance", decreasing, format!("{:.2} -> {:.2} MHz", f[0] / 1e6, f[f.len() - 1] / 1e6));
    }
    Ok(())
}

fn fig5_circle(b: &mut Builder, ctx: &ScenarioContext) -> Result<(), CalibrationError> {
    let mut w = world(ctx, Scenario::Fig5Circle, &ctx.q3, 0.0)?;
    let plan = zero_field_plan(4e-6, 2e6, 20e6, 0.05e6, ctx.shots);
    let radius = 5.0;
    let mut f_at = Vec::new();
    for i in 0..24 {
        let deg = 15.0 * i as f64;
        let a = deg.to_radians();
        let p = StagePosition::new(radius * a.cos(), radius * a.sin(), -200.0);
        let truth = w.larmor_with_stage_at(p)?.f_larmor;
        let f = probe_at(b, &mut w, p, &plan, true)?;
        b.map.push(vec![num(deg), num(p.x), num(p.y), num(p.z), opt(f.map(|v| v.0)), opt(f.map(|v| v.1)), num(truth)]);
        f_at.push(f.map(|v| v.0));
    }
    let found = f_at.iter().flatten().count();
    b.check("detection", found * 10 >= f_at.len() * 9, format!("{found} of {} angles", f_at.len()));
    let f: Vec<f64> = f_at.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let i_max = (0..f.len()).filter(|&i| f[i].is_finite()).max_by(|&a, &b| f[a].total_cmp(&f[b]));
    let i_min = (0..f.len()).filter(|&i| f[i].is_finite()).min_by(|&a, &b| f[a].total_cmp(&f[b]));
    if let (Some(hi), Some(lo)) = (i_max, i_min) {
        b.metric("f_max_hz", f[hi]);
        b.metric("f_min_hz", f[lo]);
        b.metric("angle_of_max_deg", 15.0 * hi as f64);
        b.metric("angle_of_min_deg", 15.0 * lo as f64);
        b.check("maximum_toward_plus_x", hi == 0 || hi == 1 || hi == 23, format!("maximum at {} deg", 15 * hi));
        b.check("minimum_toward_minus_x", (11..=13).contains(&lo), format!("minimum at {} deg", 15 * lo));
    }
    // y -> -y mirror symmetry: f(angle) = f(-angle)
    let asym = (1..12)
        .filter_map(|i| match (f_at[i], f_at[24 - i]) {
            (Some(a), Some(c)) => Some(((a - c) / (0.5 * (a + c))).abs()),
            _ => None,
        })
        .fold(0.0, f64::max);
    b.metric("mirror_asymmetry", asym);
    b.check("mirror_symmetry", asym < 0.03, format!("max relative difference {:.4}", asym));
    Ok(())
}

// ------------------------------------------------------------------ supp6

fn supp6(b: &mut Builder, ctx: &ScenarioContext) -> Result<(), CalibrationError> {
    let mut w = world(ctx, Scenario::Supp6Hysteresis, &ctx.q8, 0.025)?;
    let plan = plan_sweep(Axis::X, -40.0, -90.0, 51, SweepMode::Unidirectional)?;
    let base = StagePosition::new(0.0, 0.0, -200.0);
    let probe = ProbePlan::default();
    let mut vertices = Vec::new();
    for run in 0..3 {
        let start_err = w.stage.state.error().x;
        let mut xs = Vec::new();
        let mut fs = Vec::new();
        if let Some(pre) = plan.pre_move {
            w.stage.move_to(base.with(Axis::X, pre), false)?;
        }
        let mut run_start = 0.0;
        for (i, p) in plan.positions(base).into_iter().enumerate() {
            w.stage.move_to(p, false)?;
            if i == 0 {
                run_start = w.stage.state.error().x;
            }
            let out = probe_larmor(&mut w, &probe)?;
            for (rec, fit) in out.records.into_iter().zip(out.fits.iter()) {
                b.add_run(rec, Some(fit));
            }
            let f = out.f_larmor;
            b.map.push(vec![
                run.to_string(),
                i.to_string(),
                num(w.stage.state.commanded.x),
                num(w.stage.state.true_pos.x),
                opt(f.map(|v| v.0)),
                opt(f.map(|v| v.1)),
            ]);
            xs.push(p.x);
            fs.push(f.map(|v| v.0));
        }
        let accumulated = w.stage.state.error().x - run_start;
        b.derived(&format!("run{run}_offset_mm"), accumulated, f64::NAN);
        b.metric(&format!("run{run}_start_error_mm"), start_err);
        if run == 0 {
            b.check("run_offset", (accumulated - 2.5).abs() <= 0.05, format!("offset over one run {accumulated:.4} mm"));
        }
        let (fx, fy) = present(&xs, &fs);
        let v = parabola_vertex(&fx, &fy, true).unwrap_or(f64::NAN);
        b.derived(&format!("run{run}_vertex_mm"), v, f64::NAN);
        vertices.push(v);
    }
    let shifts: Vec<f64> = vertices.windows(2).map(|p| p[1] - p[0]).collect();
    for (k, s) in shifts.iter().enumerate() {
        b.derived(&format!("shift_{}_{}_mm", k, k + 1), *s, f64::NAN);
    }
    let consistent = shifts.iter().all(|s| s.abs() >= 1.5 && s.abs() <= 3.5) && shifts.windows(2).all(|p| p[0] * p[1] > 0.0);
    b.check(
        "shifted_curves",
        consistent,
        format!("vertex shifts {}", shifts.iter().map(|s| format!("{s:.2} mm")).collect::<Vec<_>>().join(", ")),
    );

    // compensated rerun on the same gantry
    let mut worst = 0.0f64;
    if let Some(pre) = plan.pre_move {
        w.stage.move_to(base.with(Axis::X, pre), true)?;
    }
    for p in plan.positions(base) {
        w.stage.move_to(p, true)?;
        worst = worst.max(w.stage.state.true_pos.distance(&p));
    }
    b.derived("compensated_residual_mm", worst, f64::NAN);
    b.check("compensated_residual", worst <= 0.1, format!("worst compensated residual {worst:.6} mm"));
    Ok(())
}

// ------------------------------------------------------------------ rb

fn rb(b: &mut Builder, ctx: &ScenarioContext) -> Result<(), CalibrationError> {
    let settings = RbSettings::default();
    let rec = run_rb(derive_seed(ctx.master_seed, Scenario::Rb.name()), &settings)?;
    for (n, s) in settings.lengths.iter().zip(&rec.survivals) {
        b.map.push(vec![n.to_string(), num(*s), settings.randomizations.to_string(), settings.shots.to_string()]);
    }
    let lengths: Vec<f64> = settings.lengths.iter().map(|&n| n as f64).collect();
    let fit = rb_fit(&lengths, &rec.survivals, Some(settings.baseline + 0.5 * settings.visibility))?;
    for e in &fit.estimates {
        b.derived(&e.name, e.value, e.sigma);
    }
    let f_c = fit.value("F_C").unwrap_or(f64::NAN);
    b.check("clifford_fidelity", fit.usable && (f_c - 0.99936).abs() <= 1e-4, format!("F_C = {:.4}%", f_c * 100.0));
    Ok(())
}
