//! Golden-section minimization of a unimodal function.

const INV_PHI: f64 = 0.618_033_988_749_894_8;

#[derive(Debug, Clone, PartialEq)]
pub struct GoldenResult {
    pub x: f64,
    pub fx: f64,
    /// Final bracket.
    pub interval: (f64, f64),
    /// Every evaluation in order.
    pub history: Vec<(f64, f64)>,
    /// True when the bracket shrank below the tolerance.
    pub converged: bool,
}

/// Minimizes `f` on `[a, b]` until the bracket is narrower than `tol` or
/// `max_evals` evaluations are used. Errors from `f` abort the search.
pub fn golden_section<E, F>(mut f: F, a: f64, b: f64, tol: f64, max_evals: usize) -> Result<GoldenResult, E>
where
    F: FnMut(f64) -> Result<f64, E>,
{
    let (mut lo, mut hi) = if a <= b { (a, b) } else { (b, a) };
    let mut history = Vec::new();
    let mut eval = |x: f64, history: &mut Vec<(f64, f64)>| -> Result<f64, E> {
        let v = f(x)?;
        history.push((x, v));
        Ok(v)
    };
    if max_evals < 2 || hi - lo <= tol {
        let x = 0.5 * (lo + hi);
        let fx = if max_evals >= 1 { eval(x, &mut history)? } else { f64::NAN };
        return Ok(GoldenResult { x, fx, interval: (lo, hi), converged: hi - lo <= tol, history });
    }
    let mut c = hi - INV_PHI * (hi - lo);
    let mut d = lo + INV_PHI * (hi - lo);
    let mut fc = eval(c, &mut history)?;
    let mut fd = eval(d, &mut history)?;
    while hi - lo > tol && history.len() < max_evals {
        if fc <= fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - INV_PHI * (hi - lo);
            fc = eval(c, &mut history)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + INV_PHI * (hi - lo);
            fd = eval(d, &mut history)?;
        }
    }
    let (x, fx) = history
        .iter()
        .copied()
        .filter(|(x, _)| *x >= lo && *x <= hi)
        .min_by(|p, q| p.1.total_cmp(&q.1))
        .unwrap_or(if fc <= fd { (c, fc) } else { (d, fd) });
    Ok(GoldenResult { x, fx, interval: (lo, hi), converged: hi - lo <= tol, history })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::convert::Infallible;

    #[test]
    fn parabola_vertex() {
        let r = golden_section::<Infallible, _>(|x| Ok((x - 1.234).powi(2) + 3.0), -10.0, 10.0, 1e-6, 200).unwrap();
        assert!(r.converged);
        assert!((r.x - 1.234).abs() < 1e-6);
    }

    #[test]
    fn budget_is_respected() {
        let r = golden_section::<Infallible, _>(|x| Ok(x.abs()), -1.0, 3.0, 1e-12, 7).unwrap();
        assert_eq!(r.history.len(), 7);
        assert!(!r.converged);
    }

    #[test]
    fn errors_abort() {
        let r = golden_section(|x| if x > 0.0 { Err("boom") } else { Ok(x) }, -1.0, 1.0, 1e-3, 50);
        assert_eq!(r.unwrap_err(), "boom");
    }
}
