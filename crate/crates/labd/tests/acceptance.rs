//! Acceptance suite. Prints one PASS/FAIL line per criterion, then fails if any did.
//! Run with `cargo test --release -p maglab-labd --test acceptance -- --nocapture`.

use std::f64::consts::PI;
use std::path::Path;
use std::time::{Duration, Instant};

use maglab_core::calibrate::{
    default_map_layout, find_sweet_spot, fit_gtensor, run_scenario, synthetic_map, FieldModel, GTensorFitConfig,
    Scenario, ScenarioBundle, ScenarioContext, SweetSpotConfig,
};
use maglab_core::geometry::StagePosition;
use maglab_core::magnetics::{cuboid_field, field_profile, MagnetSpec, StageMount};
use maglab_core::spinmodel::GTensor;
use maglab_core::virtlab::{
    clifford_table, mean_native_gates_non_identity, p_dep_for_native_fidelity, rb_fit, run_rb, same_up_to_phase,
    RbSettings, World, CLIFFORD_MEAN_NATIVE_GATES,
};
use maglab_labd::config::DEFAULT_CONFIG;
use maglab_labd::{ApiRequest, Lab, LabConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::json;

struct Outcome {
    name: &'static str,
    passed: bool,
    details: Vec<String>,
}

impl Outcome {
    fn new(name: &'static str) -> Self {
        Self { name, passed: true, details: Vec::new() }
    }

    fn require(&mut self, ok: bool, detail: impl Into<String>) {
        let d = detail.into();
        self.details.push(if ok { d } else { format!("FAILED {d}") });
        self.passed &= ok;
    }

    fn check(&mut self, bundle: &ScenarioBundle, check: &str) {
        match bundle.check(check) {
            Some(c) => self.require(c.passed, format!("{}.{}: {}", bundle.scenario, c.name, c.detail)),
            None => self.require(false, format!("{}.{check}: missing", bundle.scenario)),
        }
    }

    fn metric(&mut self, bundle: &ScenarioBundle, key: &str) -> f64 {
        let v = bundle.metric(key);
        if v.is_none() {
            self.require(false, format!("{}.{key}: missing", bundle.scenario));
        }
        v.unwrap_or(f64::NAN)
    }
}

fn context() -> ScenarioContext {
    LabConfig::from_toml(DEFAULT_CONFIG).unwrap().scenario_context().unwrap()
}

fn timed(ctx: &ScenarioContext, s: Scenario) -> (ScenarioBundle, Duration) {
    let t = Instant::now();
    let b = run_scenario(s, ctx);
    (b, t.elapsed())
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value - target).abs() <= rel * target.abs()
}

/// Field of the block as a grid of point dipoles, magnet at the origin, axis-aligned.
fn dipole_grid(spec: &MagnetSpec, n: usize, p: [f64; 3]) -> [f64; 3] {
    let d = spec.dims_mm;
    let m = spec.magnetization_axis;
    let cell = [d[0] / n as f64, d[1] / n as f64, d[2] / n as f64];
    let dv = cell[0] * cell[1] * cell[2];
    let mut b = [0.0; 3];
    for i in 0..n {
        let sx = -d[0] / 2.0 + (i as f64 + 0.5) * cell[0];
        for j in 0..n {
            let sy = -d[1] / 2.0 + (j as f64 + 0.5) * cell[1];
            for k in 0..n {
                let sz = -d[2] / 2.0 + (k as f64 + 0.5) * cell[2];
                let r = [p[0] - sx, p[1] - sy, p[2] - sz];
                let r2 = r[0] * r[0] + r[1] * r[1] + r[2] * r[2];
                let r1 = r2.sqrt();
                let mdotr = (m[0] * r[0] + m[1] * r[1] + m[2] * r[2]) / r1;
                for a in 0..3 {
                    b[a] += (3.0 * mdotr * r[a] / r1 - m[a]) / (r2 * r1);
                }
            }
        }
    }
    let k = spec.remanence * dv / (4.0 * PI);
    [b[0] * k, b[1] * k, b[2] * k]
}

fn field_anchor() -> Outcome {
    let mut o = Outcome::new("field anchor");
    let spec = MagnetSpec::default();
    let b = field_profile(&spec, &StageMount::default(), &[-160.0]).unwrap()[0].b_tesla;
    o.require(within(b, 6.2e-3, 0.02), format!("|B|(160 mm) = {:.4} mT", b * 1e3));

    let placed = spec.placed(StagePosition::ORIGIN);
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let r = rng.random_range(100.0..400.0);
        let u: f64 = rng.random_range(-1.0..1.0);
        let phi: f64 = rng.random_range(0.0..2.0 * PI);
        let s = (1.0 - u * u).sqrt();
        let p = [r * s * phi.cos(), r * s * phi.sin(), r * u];
        let a = cuboid_field(&placed, StagePosition::new(p[0], p[1], p[2])).unwrap();
        let g = dipole_grid(&placed, 64, p);
        let diff = ((a.bx - g[0]).powi(2) + (a.by - g[1]).powi(2) + (a.bz - g[2]).powi(2)).sqrt();
        let norm = (g[0] * g[0] + g[1] * g[1] + g[2] * g[2]).sqrt();
        worst = worst.max(diff / norm);
    }
    let elapsed = start.elapsed();
    o.require(worst < 1e-3, format!("dipole-grid oracle worst deviation {:.2e} over 100 points", worst));
    o.require(elapsed < Duration::from_secs(10), format!("oracle runtime {:.2} s", elapsed.as_secs_f64()));
    o
}

fn regime_reproduction(ctx: &ScenarioContext) -> Outcome {
    let mut o = Outcome::new("regime reproduction");
    let (b5, t5) = timed(ctx, Scenario::Fig2Bin5mT);
    let (b50, t50) = timed(ctx, Scenario::Fig2Bin50mT);
    o.require(!b5.partial && !b50.partial, "both scenarios complete");
    let (min5, max5) = (o.metric(&b5, "interior_minima"), o.metric(&b5, "interior_maxima"));
    o.require(min5 == 1.0 && max5 == 1.0, format!("5 mT: {min5} minimum, {max5} interior maximum"));
    let max50 = o.metric(&b50, "interior_maxima");
    o.require(max50 == 0.0, format!("50 mT: {max50} interior maxima"));
    for (name, t) in [("5 mT", t5), ("50 mT", t50)] {
        o.require(t < Duration::from_secs(60), format!("{name} runtime {:.2} s", t.as_secs_f64()));
    }
    o
}

fn larmor_span(ctx: &ScenarioContext) -> Outcome {
    let mut o = Outcome::new("larmor span");
    let (xz, _) = timed(ctx, Scenario::Fig3Xz);
    let (xy, _) = timed(ctx, Scenario::Fig3Xy);
    let lo = o.metric(&xz, "f_min_hz").min(o.metric(&xy, "f_min_hz"));
    let hi = o.metric(&xz, "f_max_hz").max(o.metric(&xy, "f_max_hz"));
    o.require(within(lo, 50e6, 0.10), format!("fig3 minimum {:.2} MHz", lo / 1e6));
    o.require(within(hi, 150e6, 0.10), format!("fig3 maximum {:.2} MHz", hi / 1e6));
    let (x, _) = timed(ctx, Scenario::Fig5ZeroFieldX);
    let first = o.metric(&x, "f_first_hz");
    let min = o.metric(&x, "f_min_hz");
    let interior = o.metric(&x, "interior_minima");
    o.require(within(first, 40e6, 0.20), format!("fig5 x sweep starts at {:.2} MHz", first / 1e6));
    o.require(within(min, 10e6, 0.20), format!("fig5 x sweep minimum {:.2} MHz", min / 1e6));
    o.require(interior >= 1.0, format!("fig5 x sweep interior minima {interior}"));
    o
}

fn coherence_sweet_spot(ctx: &ScenarioContext) -> Outcome {
    let mut o = Outcome::new("coherence sweet spot");
    let (f4, _) = timed(ctx, Scenario::Fig4SweetSpot);
    let t2s = o.metric(&f4, "t2_star_s");
    let t2h = o.metric(&f4, "t2_hahn_s");
    o.require(within(t2s, 13.41e-6, 0.10), format!("T2* = {:.2} us at x*", t2s * 1e6));
    o.require(within(t2h, 88.77e-6, 0.15), format!("T2H = {:.2} us at x*", t2h * 1e6));
    let coloc = o.metric(&f4, "colocation_mm");
    o.require(coloc.abs() <= 2.0, format!("f_L minimum vs T2* maximum {:.2} mm apart", coloc.abs()));
    let (s2, _) = timed(ctx, Scenario::Supp2NoMagnet);
    let t2s = o.metric(&s2, "t2_star_s");
    let t2h = o.metric(&s2, "t2_hahn_s");
    o.require(within(t2s, 1.70e-6, 0.15), format!("no magnet T2* = {:.3} us", t2s * 1e6));
    o.require(within(t2h, 4.23e-6, 0.15), format!("no magnet T2H = {:.3} us", t2h * 1e6));
    o
}

fn rb_algebra() -> Outcome {
    let mut o = Outcome::new("rb algebra");
    let table = clifford_table();
    o.require(table.len() == 24, format!("{} Clifford elements", table.len()));
    let closed = table.iter().all(|a| {
        table.iter().all(|b| {
            let prod = b.unitary * a.unitary;
            table.iter().filter(|c| same_up_to_phase(&c.unitary, &prod)).count() == 1
        })
    });
    o.require(closed, "closed under multiplication up to phase");
    let mean = mean_native_gates_non_identity(table);
    o.require(
        (mean * 1000.0).round() / 1000.0 == CLIFFORD_MEAN_NATIVE_GATES && CLIFFORD_MEAN_NATIVE_GATES == 3.217,
        format!("mean native gates {mean:.4}"),
    );
    let settings = RbSettings { p_dep: p_dep_for_native_fidelity(0.9998), ..RbSettings::default() };
    let start = Instant::now();
    let rec = run_rb(20_250_101, &settings).unwrap();
    let lengths: Vec<f64> = settings.lengths.iter().map(|&n| n as f64).collect();
    let fit = rb_fit(&lengths, &rec.survivals, Some(settings.baseline + 0.5 * settings.visibility)).unwrap();
    let elapsed = start.elapsed();
    let fc = fit.estimates.iter().find(|e| e.name == "F_C").map_or(f64::NAN, |e| e.value);
    o.require(
        settings.randomizations == 20 && settings.shots == 1000 && settings.lengths.iter().max() == Some(&128),
        "20 randomizations x 1000 shots, lengths up to 128",
    );
    o.require((fc - 0.99936).abs() <= 1e-4, format!("F_C = {:.4}%", fc * 100.0));
    o.require(elapsed < Duration::from_secs(120), format!("runtime {:.2} s", elapsed.as_secs_f64()));
    o
}

fn hysteresis(ctx: &ScenarioContext) -> Outcome {
    let mut o = Outcome::new("hysteresis");
    let (b, _) = timed(ctx, Scenario::Supp6Hysteresis);
    o.require(!b.partial, "scenario complete");
    for c in ["run_offset", "compensated_residual", "shifted_curves"] {
        o.check(&b, c);
    }
    o
}

fn calibration_round_trips() -> Outcome {
    let mut o = Outcome::new("calibration round trips");
    let truth = GTensor::tilted([6.7, 0.17, 0.14], 2.5);
    let model = FieldModel::from_world(&World::q8(0.025, 1));
    for seed in [11u64, 12, 13] {
        let map = synthetic_map(&model, &truth, &default_map_layout(), 0.005, seed).unwrap();
        let fit = fit_gtensor(&map, &model, &GTensorFitConfig::default()).unwrap();
        let worst = (0..3)
            .map(|k| (fit.g.principal_values[k] - truth.principal_values[k]).abs() / truth.principal_values[k])
            .fold(0.0, f64::max);
        let dmis = (fit.misalignment_deg - 2.5).abs();
        o.require(
            worst < 0.02 && dmis < 0.2,
            format!("seed {seed}: principal values within {:.2}%, misalignment off by {dmis:.3} deg", worst * 100.0),
        );
    }
    let config = SweetSpotConfig::default();
    let r = find_sweet_spot(&mut World::q8(0.025, 20_250_101), &config).unwrap();
    o.require(
        r.truth_residual_angle_deg.abs() < 0.1 && r.probes.len() <= 60 && config.budget <= 60,
        format!("sweet spot residual angle {:.4} deg after {} probes", r.truth_residual_angle_deg, r.probes.len()),
    );
    o
}

fn bundle_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    for s in std::fs::read_dir(dir).unwrap().flatten().filter(|e| e.path().is_dir()) {
        let name = s.file_name().to_string_lossy().into_owned();
        if name == "records" || name == "changes" {
            continue;
        }
        for run in std::fs::read_dir(s.path()).unwrap().flatten() {
            for f in ["map.csv", "fits.csv", "verdict.txt"] {
                out.push((format!("{name}/{f}"), std::fs::read(run.path().join(f)).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let mut o = Outcome::new("determinism");
    let run_all = |dir: &Path| {
        let mut cfg = LabConfig::from_toml(DEFAULT_CONFIG).unwrap();
        cfg.output_dir = dir.to_path_buf();
        let mut lab = Lab::open(cfg).unwrap();
        for s in Scenario::ALL {
            let r = lab.handle_request(&ApiRequest::new(0, "run_scenario", json!({"name": s.name()})));
            assert!(r.ok, "{:?}", r.error);
        }
        bundle_files(dir)
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let (fa, fb) = (run_all(a.path()), run_all(b.path()));
    o.require(fa.len() == 3 * Scenario::ALL.len(), format!("{} bundle files per pass", fa.len()));
    let differing: Vec<&str> =
        fa.iter().zip(&fb).filter(|(x, y)| x != y).map(|(x, _)| x.0.as_str()).collect();
    o.require(
        fa.len() == fb.len() && differing.is_empty(),
        format!("{} scenarios byte-identical on rerun; differing: {differing:?}", Scenario::ALL.len()),
    );
    o
}

#[test]
fn acceptance() {
    let ctx = context();
    let outcomes = [
        field_anchor(),
        regime_reproduction(&ctx),
        larmor_span(&ctx),
        coherence_sweet_spot(&ctx),
        rb_algebra(),
        hysteresis(&ctx),
        calibration_round_trips(),
        determinism(),
    ];
    println!();
    for o in &outcomes {
        println!("{} {}: {}", if o.passed { "PASS" } else { "FAIL" }, o.name, o.details.join("; "));
    }
    let failed: Vec<&str> = outcomes.iter().filter(|o| !o.passed).map(|o| o.name).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
