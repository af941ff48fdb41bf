use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::clifford::CLIFFORD_MEAN_NATIVE_GATES;
use super::experiments::detuned_rabi;
use super::{RunKind, RunRecord, VirtlabError};
use crate::lsq::{curve_fit, LsqFit, LsqOptions};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub name: String,
    #[serde(with = "crate::nonfinite")]
    pub value: f64,
    /// One standard deviation; infinite when not determined.
    #[serde(with = "crate::nonfinite")]
    pub sigma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    #[serde(with = "crate::nonfinite")]
    pub center: f64,
    #[serde(with = "crate::nonfinite")]
    pub center_sigma: f64,
    /// Full width at half maximum, Hz.
    #[serde(with = "crate::nonfinite")]
    pub linewidth: f64,
    /// Height above baseline.
    #[serde(with = "crate::nonfinite")]
    pub amplitude: f64,
    pub usable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub model: String,
    pub estimates: Vec<Estimate>,
    #[serde(with = "crate::nonfinite")]
    pub residual_rms: f64,
    pub converged: bool,
    /// False when the fit did not converge or an estimate is undetermined.
    pub usable: bool,
    /// False when nothing rose above the noise floor.
    pub detected: bool,
    pub peaks: Vec<Peak>,
    pub flags: Vec<String>,
}

impl FitResult {
    fn new(model: &str) -> Self {
        Self {
            model: model.into(),
            estimates: Vec::new(),
            residual_rms: f64::NAN,
            converged: false,
            usable: false,
            detected: true,
            peaks: Vec::new(),
            flags: Vec::new(),
        }
    }

    pub fn no_detection(model: &str) -> Self {
        Self { detected: false, converged: true, flags: vec!["no_detection".into()], ..Self::new(model) }
    }

    fn push(&mut self, name: &str, value: f64, sigma: f64) {
        let sigma = if sigma.is_nan() { f64::INFINITY } else { sigma.abs() };
        self.estimates.push(Estimate { name: name.into(), value, sigma });
    }

    pub fn get(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    pub fn value(&self, name: &str) -> Option<f64> {
        self.get(name).map(|e| e.value)
    }

    pub fn sigma(&self, name: &str) -> Option<f64> {
        self.get(name).map(|e| e.sigma)
    }

    pub fn has_flag(&self, flag: &str) -> bool {
        self.flags.iter().any(|f| f == flag)
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Binomial standard error per point with a floor for p near 0 or 1.
fn point_sigmas(record: &RunRecord) -> Vec<f64> {
    record
        .counts
        .iter()
        .zip(&record.shots)
        .map(|(&c, &n)| {
            let n = n as f64;
            let p = c as f64 / n;
            ((p * (1.0 - p) + 1.0 / n) / n).sqrt()
        })
        .collect()
}

/// Weighted least squares for `y = b + a g(x)`; returns (b, a, cost).
fn linear_offset_scale(g: &[f64], y: &[f64], w: &[f64]) -> (f64, f64, f64) {
    let (mut s, mut sg, mut sgg, mut sy, mut sgy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for ((&gi, &yi), &wi) in g.iter().zip(y).zip(w) {
        let wi = 1.0 / (wi * wi);
        s += wi;
        sg += wi * gi;
        sgg += wi * gi * gi;
        sy += wi * yi;
        sgy += wi * gi * yi;
    }
    let det = s * sgg - sg * sg;
    let (b, a) = if det.abs() > 1e-300 { ((sgg * sy - sg * sgy) / det, (s * sgy - sg * sy) / det) } else { (sy / s, 0.0) };
    let cost = g.iter().zip(y).zip(w).map(|((&gi, &yi), &wi)| ((b + a * gi - yi) / wi).powi(2)).sum();
    (b, a, cost)
}

fn logspace(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(move |i| (a + (b - a) * i as f64 / (n - 1) as f64).exp())
}

fn converged_and_determined(fit: &LsqFit, indices: &[usize]) -> bool {
    fit.converged && !fit.rank_deficient && indices.iter().all(|&i| fit.sigmas[i].is_finite())
}

// ---------------------------------------------------------------- resonance

const MAX_PEAKS: usize = 4;
const DETECTION_SIGMAS: f64 = 6.0;

/// Detuned-Rabi line normalized to unit height; `p = [f0, f_rabi, height, baseline]`.
fn rabi_line(f: f64, p: &[f64], tp: f64) -> f64 {
    let peak = detuned_rabi(p[1], 0.0, tp);
    if peak <= 0.0 {
        return p[3];
    }
    p[3] + p[2] * detuned_rabi(p[1], f - p[0], tp) / peak
}

fn lorentzian(f: f64, p: &[f64]) -> f64 {
    let u = (f - p[0]) / p[1];
    p[3] + p[2] / (1.0 + u * u)
}

/// FWHM of the normalized detuned-Rabi line.
fn rabi_fwhm(f_rabi: f64, tp: f64) -> f64 {
    let h = |d: f64| detuned_rabi(f_rabi, d, tp) / detuned_rabi(f_rabi, 0.0, tp) - 0.5;
    let (mut lo, mut hi) = (0.0, 0.2 / tp);
    while h(hi) > 0.0 && hi < 1e3 / tp {
        hi *= 2.0;
    }
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if h(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    lo + hi
}

struct PeakFit {
    peak: Peak,
    f_rabi: Option<(f64, f64)>,
    baseline: (f64, f64),
    residual_rms: f64,
    /// Weighted cost on the fit window.
    cost: f64,
    converged: bool,
    /// Model minus baseline over the full grid.
    contribution: Vec<f64>,
    model: &'static str,
}

fn fit_one_peak(f: &[f64], y: &[f64], s: &[f64], i_max: usize, base: f64, tp: Option<f64>) -> Option<PeakFit> {
    let height = y[i_max] - base;
    let half = base + 0.5 * height;
    let mut lo = i_max;
    while lo > 0 && y[lo] > half {
        lo -= 1;
    }
    let mut hi = i_max;
    while hi + 1 < y.len() && y[hi] > half {
        hi += 1;
    }
    let step = if f.len() > 1 { (f[f.len() - 1] - f[0]) / (f.len() - 1) as f64 } else { 1.0 };
    let fwhm_guess = (f[hi] - f[lo]).max(step);
    let span = (hi - lo).max(2);
    let w_lo = lo.saturating_sub(4 * span + 4);
    let w_hi = (hi + 4 * span + 4).min(f.len() - 1);
    let (fx, fy, fs) = (&f[w_lo..=w_hi], &y[w_lo..=w_hi], &s[w_lo..=w_hi]);
    let inside = |c: f64| c >= fx[0] && c <= fx[fx.len() - 1];

    let mut best: Option<PeakFit> = None;
    if let Some(tp) = tp {
        let opts = LsqOptions {
            lower: Some(vec![f64::NEG_INFINITY, 0.02 / tp, 0.0, -1.0]),
            upper: Some(vec![f64::INFINITY, 0.95 / tp, 2.0, 2.0]),
            ..LsqOptions::default()
        };
        for frt in [0.25, 0.5, 0.75] {
            let p0 = [f[i_max], frt / tp, height, base];
            let fit = curve_fit(|x, p| rabi_line(x, p, tp), fx, fy, Some(fs), &p0, &opts);
            if !inside(fit.params[0]) || !fit.params.iter().all(|v| v.is_finite()) {
                continue;
            }
            let better = best.as_ref().is_none_or(|b| fit.cost < b.cost);
            if better {
                let p = fit.params.clone();
                let contribution = f.iter().map(|&x| rabi_line(x, &p, tp) - p[3]).collect();
                best = Some(PeakFit {
                    peak: Peak {
                        center: p[0],
                        center_sigma: fit.sigmas[0],
                        linewidth: rabi_fwhm(p[1], tp),
                        amplitude: p[2],
                        usable: fit.converged && fit.sigmas[0].is_finite(),
                    },
                    f_rabi: Some((p[1], fit.sigmas[1])),
                    baseline: (p[3], fit.sigmas[3]),
                    residual_rms: fit.residual_rms,
                    cost: fit.cost,
                    converged: fit.converged,
                    contribution,
                    model: "detuned_rabi",
                });
            }
        }
    }
    if best.as_ref().is_none_or(|b| !b.peak.usable) {
        let opts = LsqOptions {
            lower: Some(vec![f64::NEG_INFINITY, step * 0.05, 0.0, -1.0]),
            ..LsqOptions::default()
        };
        let p0 = [f[i_max], 0.5 * fwhm_guess, height, base];
        let fit = curve_fit(lorentzian, fx, fy, Some(fs), &p0, &opts);
        if inside(fit.params[0]) && fit.params.iter().all(|v| v.is_finite()) {
            let p = fit.params.clone();
            best = Some(PeakFit {
                peak: Peak {
                    center: p[0],
                    center_sigma: fit.sigmas[0],
                    linewidth: 2.0 * p[1].abs(),
                    amplitude: p[2],
                    usable: fit.converged && fit.sigmas[0].is_finite(),
                },
                f_rabi: None,
                baseline: (p[3], fit.sigmas[3]),
                residual_rms: fit.residual_rms,
                cost: fit.cost,
                converged: fit.converged,
                contribution: f.iter().map(|&x| lorentzian(x, &p) - p[3]).collect(),
                model: "lorentzian",
            });
        }
    }
    best
}

/// Extracts resonances from a spectroscopy trace, strongest first.
pub fn fit_resonance(record: &RunRecord) -> Result<FitResult, VirtlabError> {
    if record.kind != RunKind::Spectroscopy {
        return Err(VirtlabError::Validation(format!("expected a spectroscopy record, got {}", record.kind.name())));
    }
    if record.len() < 5 {
        return Err(VirtlabError::Validation("need at least 5 points".into()));
    }
    let f = &record.sweep;
    let y = record.p_blockade();
    let s = point_sigmas(record);
    let base = median(&y);
    let shots = record.shots.iter().copied().min().unwrap_or(1) as f64;
    let noise = ((base * (1.0 - base)).max(1.0 / shots) / shots).sqrt();
    let tp = record.meta("pulse_duration");

    let mut residual = y.clone();
    let mut fits: Vec<PeakFit> = Vec::new();
    let mut rejected = vec![false; y.len()];
    let mut attempts = 0;
    while fits.len() < MAX_PEAKS && attempts < 4 * MAX_PEAKS {
        attempts += 1;
        let Some(i) = (0..y.len()).filter(|&i| !rejected[i]).max_by(|&a, &b| residual[a].total_cmp(&residual[b])) else {
            break;
        };
        if residual[i] - base < DETECTION_SIGMAS * noise {
            break;
        }
        let neighbour = [i.wrapping_sub(1), i + 1]
            .iter()
            .any(|&j| j < y.len() && residual[j] - base > 0.5 * DETECTION_SIGMAS * noise);
        if !neighbour {
            rejected[i] = true;
            continue;
        }
        match fit_one_peak(f, &residual, &s, i, base, tp) {
            Some(pf) if pf.peak.amplitude > DETECTION_SIGMAS * noise => {
                for (r, c) in residual.iter_mut().zip(&pf.contribution) {
                    *r -= c;
                }
                fits.push(pf);
            }
            _ => rejected[i] = true,
        }
    }

    if fits.is_empty() {
        return Ok(FitResult::no_detection("resonance"));
    }
    fits.sort_by(|a, b| b.peak.amplitude.total_cmp(&a.peak.amplitude));
    let main = &fits[0];
    let mut out = FitResult::new(main.model);
    out.push("f_larmor", main.peak.center, main.peak.center_sigma);
    out.push("linewidth", main.peak.linewidth, f64::NAN);
    out.push("amplitude", main.peak.amplitude, f64::NAN);
    out.push("baseline", main.baseline.0, main.baseline.1);
    if let Some((fr, sfr)) = main.f_rabi {
        out.push("f_rabi", fr, sfr);
    }
    out.residual_rms = main.residual_rms;
    out.converged = main.converged;
    out.usable = main.peak.usable;
    out.peaks = fits.iter().map(|p| p.peak.clone()).collect();
    Ok(out)
}

/// Picks the qubit line from resonance fits taken at different magnet
/// positions by discarding lines that stay put.
pub fn track_moving_peak(fits: &[FitResult], tolerance_hz: f64) -> Vec<Option<f64>> {
    let n = fits.len();
    let threshold = ((0.6 * n as f64).ceil() as usize).max(3);
    let stationary = |c: f64| {
        fits.iter().filter(|r| r.peaks.iter().any(|p| (p.center - c).abs() <= tolerance_hz)).count() >= threshold
    };
    fits.iter()
        .map(|r| {
            r.peaks
                .iter()
                .filter(|p| p.usable && (n < threshold || !stationary(p.center)))
                .max_by(|a, b| a.amplitude.total_cmp(&b.amplitude))
                .map(|p| p.center)
        })
        .collect()
}

// ---------------------------------------------------------------- decays

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecayModel {
    Ramsey,
    Hahn,
}

fn ramsey(t: f64, p: &[f64]) -> f64 {
    p[3] + 0.5 * p[2] * (1.0 + (2.0 * PI * p[1] * t).cos() * (-(t / p[0]).powi(2)).exp())
}

fn hahn(t: f64, p: &[f64]) -> f64 {
    p[3] + 0.5 * p[2] * (1.0 + (-(t / p[0]).abs().powf(p[1])).exp())
}

/// Weighted fit of a Ramsey (Gaussian envelope, fixed exponent 2) or Hahn-echo
/// (stretched exponential, free exponent) decay.
pub fn fit_decay(record: &RunRecord, model: DecayModel) -> Result<FitResult, VirtlabError> {
    if record.len() < 8 {
        return Err(VirtlabError::Validation("need at least 8 points".into()));
    }
    let t = &record.sweep;
    let y = record.p_blockade();
    let s = point_sigmas(record);
    let t_max = t.iter().copied().fold(0.0, f64::max);
    if t_max <= 0.0 {
        return Err(VirtlabError::Validation("wait times must span a positive range".into()));
    }
    let grid: Vec<f64> = logspace(t_max / 50.0, 5.0 * t_max, 60).collect();
    let mut out = FitResult::new(match model {
        DecayModel::Ramsey => "ramsey",
        DecayModel::Hahn => "hahn",
    });

    let (fit, t2_index) = match model {
        DecayModel::Ramsey => {
            let detuning = record.meta("detuning").unwrap_or(0.0);
            let mut start = [grid[0], detuning, 0.0, 0.0];
            let mut best = f64::INFINITY;
            for &t2 in &grid {
                let g: Vec<f64> = t.iter().map(|&ti| ramsey(ti, &[t2, detuning, 1.0, 0.0])).collect();
                let (b, a, cost) = linear_offset_scale(&g, &y, &s);
                if cost < best {
                    best = cost;
                    start = [t2, detuning, a, b];
                }
            }
            let opts = LsqOptions { lower: Some(vec![1e-3 * t_max, f64::NEG_INFINITY, -2.0, -1.0]), ..LsqOptions::default() };
            let fit = curve_fit(ramsey, t, &y, Some(&s), &start, &opts);
            out.push("t2", fit.params[0], fit.sigmas[0]);
            out.push("exponent", 2.0, 0.0);
            out.push("frequency", fit.params[1], fit.sigmas[1]);
            out.push("visibility", fit.params[2], fit.sigmas[2]);
            out.push("baseline", fit.params[3], fit.sigmas[3]);
            (fit, 0)
        }
        DecayModel::Hahn => {
            let mut start = [grid[0], 1.5, 0.0, 0.0];
            let mut best = f64::INFINITY;
            for &t2 in &grid {
                for q in [1.0, 1.5, 2.0] {
                    let g: Vec<f64> = t.iter().map(|&ti| hahn(ti, &[t2, q, 1.0, 0.0])).collect();
                    let (b, a, cost) = linear_offset_scale(&g, &y, &s);
                    if cost < best {
                        best = cost;
                        start = [t2, q, a, b];
                    }
                }
            }
            let opts = LsqOptions {
                lower: Some(vec![1e-3 * t_max, 0.5, -2.0, -1.0]),
                upper: Some(vec![f64::INFINITY, 4.0, 2.0, 2.0]),
                ..LsqOptions::default()
            };
            let fit = curve_fit(hahn, t, &y, Some(&s), &start, &opts);
            out.push("t2", fit.params[0], fit.sigmas[0]);
            out.push("exponent", fit.params[1], fit.sigmas[1]);
            out.push("visibility", fit.params[2], fit.sigmas[2]);
            out.push("baseline", fit.params[3], fit.sigmas[3]);
            (fit, 0)
        }
    };
    out.residual_rms = fit.residual_rms;
    out.converged = fit.converged;
    let t2 = fit.params[t2_index];
    let t2_sigma = fit.sigmas[t2_index];
    let vis = fit.params[2];
    let vis_sigma = fit.sigmas[2];
    if t2 > 10.0 * t_max || !(t2_sigma < t2) {
        out.flags.push("t2_unbounded".into());
    }
    if !(vis.abs() > 3.0 * vis_sigma) {
        out.flags.push("no_contrast".into());
    }
    out.usable = converged_and_determined(&fit, &[0, 1, 2, 3]) && out.flags.is_empty();
    Ok(out)
}

fn rabi_model(t: f64, p: &[f64]) -> f64 {
    p[2] + p[1] * (PI * p[0] * t).sin().powi(2)
}

/// Fits `b + vis sin^2(pi f t)` to a Rabi trace.
pub fn fit_rabi(record: &RunRecord) -> Result<FitResult, VirtlabError> {
    if record.len() < 8 {
        return Err(VirtlabError::Validation("need at least 8 points".into()));
    }
    let t = &record.sweep;
    let y = record.p_blockade();
    let s = point_sigmas(record);
    let t_max = t.iter().copied().fold(0.0, f64::max);
    let dt_min = t.windows(2).map(|w| (w[1] - w[0]).abs()).filter(|d| *d > 0.0).fold(f64::INFINITY, f64::min);
    if !(t_max > 0.0 && dt_min.is_finite()) {
        return Err(VirtlabError::Validation("durations must span a positive range".into()));
    }
    let (f_lo, f_hi) = (0.25 / t_max, 0.5 / dt_min);
    let mut start = [f_lo, 0.0, 0.0];
    let mut best = f64::INFINITY;
    for k in 0..400 {
        let fr = f_lo + (f_hi - f_lo) * k as f64 / 399.0;
        let g: Vec<f64> = t.iter().map(|&ti| (PI * fr * ti).sin().powi(2)).collect();
        let (b, a, cost) = linear_offset_scale(&g, &y, &s);
        if cost < best {
            best = cost;
            start = [fr, a, b];
        }
    }
    let fit = curve_fit(rabi_model, t, &y, Some(&s), &start, &LsqOptions::default());
    let mut out = FitResult::new("rabi");
    out.push("f_rabi", fit.params[0], fit.sigmas[0]);
    out.push("visibility", fit.params[1], fit.sigmas[1]);
    out.push("baseline", fit.params[2], fit.sigmas[2]);
    out.residual_rms = fit.residual_rms;
    out.converged = fit.converged;
    if !(fit.params[1].abs() > 3.0 * fit.sigmas[1]) {
        out.flags.push("no_contrast".into());
    }
    out.usable = converged_and_determined(&fit, &[0, 1, 2]) && out.flags.is_empty();
    Ok(out)
}

// ---------------------------------------------------------------- RB

fn rb_model(n: f64, p: &[f64], fixed_b: Option<f64>) -> f64 {
    p[0] * p[1].powf(n) + fixed_b.unwrap_or_else(|| p[2])
}

/// Fits `A alpha^N + B` and converts alpha to Clifford and native fidelities.
/// With `fixed_b` the asymptote is held at the given value.
pub fn rb_fit(lengths: &[f64], survivals: &[f64], fixed_b: Option<f64>) -> Result<FitResult, VirtlabError> {
    let mut distinct: Vec<f64> = lengths.to_vec();
    distinct.sort_by(f64::total_cmp);
    distinct.dedup();
    if distinct.len() < 4 || lengths.len() != survivals.len() {
        return Err(VirtlabError::Validation("need at least 4 distinct lengths with one survival each".into()));
    }
    let ones = vec![1.0; lengths.len()];
    let mut best = f64::INFINITY;
    let mut start = vec![0.0, 1.0];
    for k in 0..=2000 {
        let alpha = 0.8 + 0.25 * k as f64 / 2000.0;
        let g: Vec<f64> = lengths.iter().map(|&n| alpha.powf(n)).collect();
        let (b, a, cost) = match fixed_b {
            Some(b) => {
                let shifted: Vec<f64> = survivals.iter().map(|y| y - b).collect();
                let a = g.iter().zip(&shifted).map(|(x, y)| x * y).sum::<f64>() / g.iter().map(|x| x * x).sum::<f64>();
                let cost = g.iter().zip(&shifted).map(|(x, y)| (a * x - y).powi(2)).sum::<f64>();
                (b, a, cost)
            }
            None => linear_offset_scale(&g, survivals, &ones),
        };
        if cost < best {
            best = cost;
            start = if fixed_b.is_some() { vec![a, alpha] } else { vec![a, alpha, b] };
        }
    }
    let fit = curve_fit(|n, p| rb_model(n, p, fixed_b), lengths, survivals, None, &start, &LsqOptions::default());
    let (a, alpha) = (fit.params[0], fit.params[1]);
    let (sa, salpha) = (fit.sigmas[0], fit.sigmas[1]);
    let f_c = 1.0 - (1.0 - alpha) / 2.0;
    let f_n = 1.0 - (1.0 - f_c) / CLIFFORD_MEAN_NATIVE_GATES;
    let mut out = FitResult::new("rb");
    out.push("alpha", alpha, salpha);
    out.push("A", a, sa);
    match fixed_b {
        Some(b) => out.push("B", b, 0.0),
        None => out.push("B", fit.params[2], fit.sigmas[2]),
    }
    out.push("F_C", f_c, salpha / 2.0);
    out.push("F_N", f_n, salpha / 2.0 / CLIFFORD_MEAN_NATIVE_GATES);
    out.residual_rms = fit.residual_rms;
    out.converged = fit.converged;
    if !(alpha > 0.0 && alpha <= 1.0) {
        out.flags.push("unphysical".into());
    }
    let sig_ok = fit.sigmas.iter().all(|s| s.is_finite()) || best == 0.0;
    out.usable = fit.converged && sig_ok && out.flags.is_empty();
    Ok(out)
}
