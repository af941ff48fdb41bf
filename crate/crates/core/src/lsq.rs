//! Damped Gauss-Newton (Levenberg-Marquardt) least squares.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct LsqOptions {
    pub max_iter: usize,
    /// Relative step tolerance.
    pub xtol: f64,
    /// Relative cost-change tolerance.
    pub ftol: f64,
    pub lambda0: f64,
    /// Relative finite-difference step.
    pub fd_step: f64,
    /// Box bounds; steps are projected back inside.
    pub lower: Option<Vec<f64>>,
    pub upper: Option<Vec<f64>>,
    /// When false, the covariance is scaled by the reduced chi-square.
    pub absolute_sigma: bool,
}

impl Default for LsqOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            xtol: 1e-10,
            ftol: 1e-14,
            lambda0: 1e-3,
            fd_step: 1e-6,
            lower: None,
            upper: None,
            absolute_sigma: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqFit {
    pub params: Vec<f64>,
    pub sigmas: Vec<f64>,
    pub covariance: DMatrix<f64>,
    /// Sum of squared residuals.
    pub cost: f64,
    pub reduced_chi2: f64,
    pub residual_rms: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Jacobian rank below the parameter count.
    pub rank_deficient: bool,
}

fn project(p: &mut [f64], opts: &LsqOptions) {
    if let Some(lo) = &opts.lower {
        for (v, l) in p.iter_mut().zip(lo) {
            *v = v.max(*l);
        }
    }
    if let Some(hi) = &opts.upper {
        for (v, h) in p.iter_mut().zip(hi) {
            *v = v.min(*h);
        }
    }
}

fn sum_sq(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum()
}

/// Central-difference Jacobian of `f` at `p`.
pub fn jacobian<F>(f: &F, p: &[f64], n_res: usize, rel_step: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = p.len();
    let mut jac = DMatrix::zeros(n_res, m);
    let mut q = p.to_vec();
    for j in 0..m {
        let h = rel_step * p[j].abs().max(1e-6);
        q[j] = p[j] + h;
        let plus = f(&q);
        q[j] = p[j] - h;
        let minus = f(&q);
        q[j] = p[j];
        for i in 0..n_res {
            jac[(i, j)] = (plus[i] - minus[i]) / (2.0 * h);
        }
    }
    jac
}

/// Minimizes `sum(residuals(p)^2)` starting from `p0`.
pub fn levenberg_marquardt<F>(residuals: F, p0: &[f64], opts: &LsqOptions) -> LsqFit
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = p0.len();
    let mut p = p0.to_vec();
    project(&mut p, opts);
    let mut r = residuals(&p);
    let n = r.len();
    let mut cost = sum_sq(&r);
    let mut lambda = opts.lambda0;
    let mut converged = false;
    let mut iterations = 0;

    if !cost.is_finite() || n < m {
        return finish(&residuals, p, r, cost, 0, false, opts);
    }

    while iterations < opts.max_iter {
        iterations += 1;
        let jac = jacobian(&residuals, &p, n, opts.fd_step);
        let jtj = jac.transpose() * &jac;
        let grad = jac.transpose() * DVector::from_column_slice(&r);
        if grad.amax() <= 1e-300 {
            converged = true;
            break;
        }

        let mut accepted = false;
        for _ in 0..40 {
            let mut a = jtj.clone();
            for k in 0..m {
                a[(k, k)] += lambda * jtj[(k, k)].max(1e-300);
            }
            let step = match a.cholesky() {
                Some(ch) => ch.solve(&(-&grad)),
                None => {
                    lambda *= 10.0;
                    continue;
                }
            };
            let mut trial: Vec<f64> = p.iter().zip(step.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, opts);
            let r_trial = residuals(&trial);
            let c_trial = sum_sq(&r_trial);
            if c_trial.is_finite() && c_trial <= cost {
                let rel_step = p
                    .iter()
                    .zip(&trial)
                    .map(|(a, b)| ((b - a) / a.abs().max(1e-300)).abs())
                    .fold(0.0, f64::max);
                let rel_cost = (cost - c_trial) / cost.max(1e-300);
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel_step < opts.xtol || rel_cost < opts.ftol || cost == 0.0 {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
            if lambda > 1e16 {
                break;
            }
        }
        if converged {
            break;
        }
        if !accepted {
            // No downhill step at any damping: a stationary point within precision.
            converged = true;
            break;
        }
    }
    finish(&residuals, p, r, cost, iterations, converged, opts)
}

fn finish<F>(
    residuals: &F,
    p: Vec<f64>,
    r: Vec<f64>,
    cost: f64,
    iterations: usize,
    converged: bool,
    opts: &LsqOptions,
) -> LsqFit
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = p.len();
    let n = r.len();
    let dof = n.saturating_sub(m).max(1) as f64;
    let reduced_chi2 = cost / dof;
    let residual_rms = if n > 0 { (cost / n as f64).sqrt() } else { f64::NAN };
    let (covariance, rank_deficient) = if n >= m && cost.is_finite() {
        // Column-equilibrate so the rank test is insensitive to parameter units.
        let mut jac = jacobian(residuals, &p, n, opts.fd_step);
        let norms: Vec<f64> = (0..m).map(|j| jac.column(j).norm()).collect();
        for (j, &c) in norms.iter().enumerate() {
            if c > 0.0 {
                jac.column_mut(j).scale_mut(1.0 / c);
            }
        }
        let svd = jac.svd(false, true);
        let smax = svd.singular_values.max();
        let rank = svd.singular_values.iter().filter(|s| **s > smax * 1e-9).count();
        let rank_deficient = rank < m || norms.iter().any(|c| !(*c > 0.0) || !c.is_finite());
        let scale = if opts.absolute_sigma { 1.0 } else { reduced_chi2 };
        let cov = match svd.v_t {
            Some(v_t) if !rank_deficient => {
                let mut inner = DMatrix::zeros(m, m);
                for k in 0..m {
                    let s2 = svd.singular_values[k].powi(2);
                    let row = v_t.row(k);
                    inner += row.transpose() * row / s2;
                }
                let d_inv = DMatrix::from_diagonal(&DVector::from_iterator(m, norms.iter().map(|c| 1.0 / c)));
                &d_inv * inner * &d_inv * scale
            }
            _ => DMatrix::from_element(m, m, f64::NAN),
        };
        (cov, rank_deficient)
    } else {
        (DMatrix::from_element(m, m, f64::NAN), true)
    };
    let sigmas = (0..m)
        .map(|k| {
            let v = covariance[(k, k)];
            if rank_deficient || !v.is_finite() {
                f64::INFINITY
            } else {
                v.max(0.0).sqrt()
            }
        })
        .collect();
    LsqFit {
        params: p,
        sigmas,
        covariance,
        cost,
        reduced_chi2,
        residual_rms,
        iterations,
        converged,
        rank_deficient,
    }
}

/// Fits `model(x, p)` to `(x, y)` with per-point standard deviations `sigma`.
pub fn curve_fit<M>(model: M, x: &[f64], y: &[f64], sigma: Option<&[f64]>, p0: &[f64], opts: &LsqOptions) -> LsqFit
where
    M: Fn(f64, &[f64]) -> f64,
{
    let residuals = |p: &[f64]| -> Vec<f64> {
        x.iter()
            .zip(y)
            .enumerate()
            .map(|(i, (&xi, &yi))| {
                let w = sigma.map_or(1.0, |s| 1.0 / s[i]);
                (model(xi, p) - yi) * w
            })
            .collect()
    };
    let mut fit = levenberg_marquardt(residuals, p0, opts);
    // Report the unweighted RMS so it is in data units.
    let n = x.len().max(1) as f64;
    fit.residual_rms = (x.iter().zip(y).map(|(&xi, &yi)| (model(xi, &fit.params) - yi).powi(2)).sum::<f64>() / n).sqrt();
    fit
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential_exactly() {
        let x: Vec<f64> = (0..40).map(|i| i as f64 * 0.25).collect();
        let truth = [2.0, 1.7, 0.3];
        let f = |t: f64, p: &[f64]| p[0] * (-t / p[1]).exp() + p[2];
        let y: Vec<f64> = x.iter().map(|&t| f(t, &truth)).collect();
        let fit = curve_fit(f, &x, &y, None, &[1.0, 1.0, 0.0], &LsqOptions::default());
        assert!(fit.converged);
        for (a, b) in fit.params.iter().zip(truth) {
            assert!(((a - b) / b).abs() < 1e-8, "{:?}", fit.params);
        }
    }

    #[test]
    fn linear_fit_errors_match_closed_form() {
        // y = a + b x with unit sigmas: var(b) = n / (n Sxx - Sx^2)
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| 1.0 + 2.0 * v + if (v as i32) % 2 == 0 { 0.1 } else { -0.1 }).collect();
        let s = vec![1.0; 10];
        let opts = LsqOptions { absolute_sigma: true, ..LsqOptions::default() };
        let fit = curve_fit(|t, p| p[0] + p[1] * t, &x, &y, Some(&s), &[0.0, 0.0], &opts);
        let n = 10.0;
        let sx: f64 = x.iter().sum();
        let sxx: f64 = x.iter().map(|v| v * v).sum();
        let var_b = n / (n * sxx - sx * sx);
        assert!((fit.sigmas[1] - var_b.sqrt()).abs() < 1e-6);
    }

    #[test]
    fn degenerate_parameter_is_rank_deficient() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y = vec![1.0; 10];
        // p[0] and p[1] only appear as a sum
        let fit = curve_fit(|_, p| p[0] + p[1], &x, &y, None, &[0.3, 0.2], &LsqOptions::default());
        assert!(fit.rank_deficient);
        assert!(fit.sigmas.iter().all(|s| s.is_infinite()));
    }

    #[test]
    fn bounds_are_respected() {
        let x: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let y: Vec<f64> = x.iter().map(|&v| -3.0 + 0.0 * v).collect();
        let opts = LsqOptions { lower: Some(vec![0.0]), ..LsqOptions::default() };
        let fit = curve_fit(|_, p| p[0], &x, &y, None, &[1.0], &opts);
        assert!(fit.params[0] >= 0.0);
    }
}
