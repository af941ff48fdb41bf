use maglab_core::geometry::StagePosition;
use maglab_core::spinmodel::{coherence_times, drive_efficiency};
use maglab_core::virtlab::{
    fit_decay, fit_rabi, fit_resonance, run_rabi, run_ramsey, run_spectroscopy, DecayModel, SpectroscopySweep, World,
};

fn world_at(x: f64, seed: u64) -> World {
    let mut w = World::q8(0.025, seed);
    w.stage.move_to(StagePosition::new(x, 0.0, -200.0), true).unwrap();
    w
}

struct Stats {
    mean_sigma: f64,
    z_rms: f64,
}

fn stats(samples: &[(f64, f64)], truth: f64) -> Stats {
    let n = samples.len() as f64;
    let mean_sigma = samples.iter().map(|s| s.1).sum::<f64>() / n;
    let z_rms = (samples.iter().map(|s| ((s.0 - truth) / s.1).powi(2)).sum::<f64>() / n).sqrt();
    Stats { mean_sigma, z_rms }
}

/// Reported errors match the observed scatter and shrink like 1/sqrt(shots).
fn assert_consistent(per_shots: &[(u64, Stats)]) {
    for (shots, s) in per_shots {
        assert!(s.z_rms > 0.5 && s.z_rms < 2.0, "shots {shots}: z rms {}", s.z_rms);
    }
    for pair in per_shots.windows(2) {
        let ratio = pair[0].1.mean_sigma / pair[1].1.mean_sigma;
        let expected = (pair[1].0 as f64 / pair[0].0 as f64).sqrt();
        assert!((ratio / expected - 1.0).abs() < 0.35, "sigma ratio {ratio} vs {expected}");
    }
}

#[test]
fn ramsey_t2_star_estimator_is_consistent() {
    let mut out = Vec::new();
    for shots in [100u64, 400, 1600] {
        let mut samples = Vec::new();
        let mut truth = 0.0;
        for rep in 0..24u64 {
            let mut w = world_at(-65.0, 1000 + rep);
            truth = coherence_times(&w.qubit, w.larmor().unwrap().theta_deg).t2_star;
            let t: Vec<f64> = (0..60).map(|i| 45e-6 * i as f64 / 59.0).collect();
            let rec = run_ramsey(&mut w, &t, 0.15e6, shots, &mut |_| {}).unwrap();
            let fit = fit_decay(&rec, DecayModel::Ramsey).unwrap();
            let e = fit.get("t2").unwrap();
            samples.push((e.value, e.sigma));
        }
        out.push((shots, stats(&samples, truth)));
    }
    assert_consistent(&out);
}

#[test]
fn resonance_center_estimator_is_consistent() {
    let mut out = Vec::new();
    for shots in [100u64, 400, 1600] {
        let mut samples = Vec::new();
        let mut truth = 0.0;
        for rep in 0..24u64 {
            let mut w = world_at(-30.0, 2000 + rep);
            truth = w.larmor().unwrap().f_larmor;
            let sweep = SpectroscopySweep::linear(truth - 2e6, truth + 2e6, 0.025e6, 1e-6, 0.5, shots);
            let rec = run_spectroscopy(&mut w, &sweep, &mut |_| {}).unwrap();
            let fit = fit_resonance(&rec).unwrap();
            let e = fit.get("f_larmor").unwrap();
            samples.push((e.value, e.sigma));
        }
        out.push((shots, stats(&samples, truth)));
    }
    assert_consistent(&out);
}

#[test]
fn rabi_round_trip_recovers_drive_efficiency() {
    for x in [-20.0, -65.0, -110.0] {
        let mut w = world_at(x, 3);
        let lp = w.larmor().unwrap();
        let t: Vec<f64> = (0..120).map(|i| i as f64 * 0.1e-6).collect();
        let rec = run_rabi(&mut w, &t, 0.5, 2000, &mut |_| {}).unwrap();
        let fit = fit_rabi(&rec).unwrap();
        let e = fit.get("f_rabi").unwrap();
        let eta = e.value / (lp.f_larmor * 0.5);
        let eta_sigma = e.sigma / (lp.f_larmor * 0.5);
        let truth = drive_efficiency(&w.qubit, lp.theta_deg);
        assert!((eta - truth).abs() < 4.0 * eta_sigma, "x = {x}: {eta} vs {truth} +/- {eta_sigma}");
    }
}
