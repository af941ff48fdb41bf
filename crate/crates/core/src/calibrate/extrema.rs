//! Counting interior extrema of a noisy 1-D curve by topographic prominence.

/// Interior local maxima whose prominence is at least `min_prominence`.
/// Returns indices into `y`.
pub fn interior_maxima(y: &[f64], min_prominence: f64) -> Vec<usize> {
    let n = y.len();
    let mut out = Vec::new();
    for i in 1..n.saturating_sub(1) {
        if !(y[i] > y[i - 1] && y[i] >= y[i + 1]) {
            continue;
        }
        // lowest point on each side before reaching higher ground
        let mut left_min = y[i];
        for &v in y[..i].iter().rev() {
            if v > y[i] {
                break;
            }
            left_min = left_min.min(v);
        }
        let mut right_min = y[i];
        for &v in &y[i + 1..] {
            if v > y[i] {
                break;
            }
            right_min = right_min.min(v);
        }
        let prominence = y[i] - left_min.max(right_min);
        if prominence >= min_prominence {
            out.push(i);
        }
    }
    out
}

pub fn interior_minima(y: &[f64], min_prominence: f64) -> Vec<usize> {
    let neg: Vec<f64> = y.iter().map(|v| -v).collect();
    interior_maxima(&neg, min_prominence)
}

/// Drops missing samples, keeping the x positions aligned.
pub fn present(x: &[f64], y: &[Option<f64>]) -> (Vec<f64>, Vec<f64>) {
    x.iter().zip(y).filter_map(|(&a, b)| b.map(|v| (a, v))).unzip()
}

/// Vertex of the least-squares parabola through `(x, y)`, if it opens upward
/// (`upward = true`) or downward.
pub fn parabola_vertex(x: &[f64], y: &[f64], upward: bool) -> Option<f64> {
    if x.len() < 3 {
        return None;
    }
    let xm = x.iter().sum::<f64>() / x.len() as f64;
    let a = nalgebra::DMatrix::from_fn(x.len(), 3, |i, j| (x[i] - xm).powi(j as i32));
    let b = nalgebra::DVector::from_column_slice(y);
    let sol = a.svd(true, true).solve(&b, 1e-12).ok()?;
    let (c1, c2) = (sol[1], sol[2]);
    if (upward && c2 <= 0.0) || (!upward && c2 >= 0.0) {
        return None;
    }
    Some(xm - c1 / (2.0 * c2))
}
