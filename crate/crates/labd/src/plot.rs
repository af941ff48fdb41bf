//! Minimal SVG plots of run traces.

use std::fmt::Write;

use maglab_core::virtlab::RunKind;

use crate::store::StoredRun;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

/// Axis scale and label for a run kind.
fn x_axis(kind: RunKind) -> (f64, &'static str) {
    match kind {
        RunKind::Spectroscopy => (1e-6, "drive frequency (MHz)"),
        RunKind::Rabi => (1e6, "pulse duration (µs)"),
        RunKind::Ramsey | RunKind::Hahn => (1e6, "wait time (µs)"),
        RunKind::Rb => (1.0, "Clifford sequence length"),
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let k = if norm < 1.5 {
        1.0
    } else if norm < 3.5 {
        2.0
    } else if norm < 7.5 {
        5.0
    } else {
        10.0
    };
    k * mag
}

/// Tick positions and their labels.
fn ticks(lo: f64, hi: f64) -> Vec<(f64, String)> {
    let step = nice_step(hi - lo);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step - 1e-9).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last)
        .map(|k| {
            let t = k as f64 * step;
            (t, format!("{t:.decimals$}"))
        })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Blockade probability against the sweep variable.
pub fn run_svg(run: &StoredRun) -> String {
    let rec = &run.record;
    let (scale, xlabel) = x_axis(rec.kind);
    let xs: Vec<f64> = rec.sweep.iter().map(|v| v * scale).collect();
    let ys = rec.p_blockade();
    let (mut x0, mut x1) = xs.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !(x1 > x0) {
        x0 -= 0.5;
        x1 += 0.5;
    }
    let (y0, y1) = (0.0, 1.0);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let title = format!(
        "run {} · {} · stage ({:.2}, {:.2}, {:.2}) mm",
        run.run_id,
        rec.kind.name(),
        rec.position.x,
        rec.position.y,
        rec.position.z
    );
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(&title));
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for (t, label) in ticks(x0, x1) {
        let x = px(t);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{b:.2}" x2="{x:.2}" y2="{TOP}" stroke="#ddd"/><text x="{x:.2}" y="{ty:.2}" text-anchor="middle">{label}</text>"##,
            b = TOP + ph,
            ty = TOP + ph + 16.0
        );
    }
    for (t, label) in ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{r:.2}" y2="{y:.2}" stroke="#ddd"/><text x="{tx:.2}" y="{ty:.2}" text-anchor="end">{label}</text>"##,
            r = LEFT + pw,
            tx = LEFT - 6.0,
            ty = y + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 14.0,
        escape(xlabel)
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">blockade probability</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    let points: Vec<String> = xs.iter().zip(&ys).map(|(&x, &y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
    let _ = writeln!(s, r##"<polyline fill="none" stroke="#1f77b4" stroke-width="1.2" points="{}"/>"##, points.join(" "));
    if xs.len() <= 200 {
        for (&x, &y) in xs.iter().zip(&ys) {
            let _ = writeln!(s, r##"<circle cx="{:.2}" cy="{:.2}" r="2.2" fill="#1f77b4"/>"##, px(x), py(y));
        }
    }
    if let Some(fit) = &run.fit {
        let mut line = format!("fit {}", fit.model);
        for e in fit.estimates.iter().take(3) {
            let _ = write!(line, " · {} = {:.4e} ± {:.1e}", e.name, e.value, e.sigma);
        }
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11">{}</text>"#, LEFT + 8.0, TOP + 16.0, escape(&line));
    }
    s.push_str("</svg>\n");
    s
}
