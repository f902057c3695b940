//! Bounded Levenberg-Marquardt with a forward-difference Jacobian.
//!
//! Each iteration first tries the undamped Gauss-Newton step and only adds
//! Marquardt damping `λ·diag(JᵀJ)` when the cost fails to decrease. Steps are
//! projected onto the box bounds.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct LsqOptions {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Relative step / gradient tolerance.
    pub tol: f64,
    pub max_iterations: usize,
}

impl LsqOptions {
    pub fn unbounded(n: usize) -> Self {
        LsqOptions {
            lower: vec![f64::NEG_INFINITY; n],
            upper: vec![f64::INFINITY; n],
            tol: 1e-10,
            max_iterations: 200,
        }
    }

    pub fn bounded(lower: Vec<f64>, upper: Vec<f64>) -> Self {
        LsqOptions {
            lower,
            upper,
            tol: 1e-10,
            max_iterations: 200,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LsqSolution {
    pub params: Vec<f64>,
    /// 1σ standard errors from `s²·(JᵀJ)⁻¹`, `s²` the reduced chi-square.
    pub stderr: Vec<f64>,
    /// RMS of the (weighted) residual vector.
    pub residual_rms: f64,
    pub cost: f64,
    pub iterations: usize,
    pub converged: bool,
    /// Parameters sitting on a bound with the gradient pointing outward.
    pub at_bound: Vec<bool>,
}

fn cost_of(r: &[f64]) -> f64 {
    0.5 * r.iter().map(|x| x * x).sum::<f64>()
}

/// Relative step, absolute at exactly zero.
fn fd_step(p: f64) -> f64 {
    let h = f64::EPSILON.sqrt();
    if p == 0.0 {
        h
    } else {
        h * p.abs()
    }
}

/// Forward-difference Jacobian; steps backward where the forward point
/// would leave the box.
pub fn jacobian_forward<F>(f: &F, p: &[f64], r0: &[f64], upper: Option<&[f64]>) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = r0.len();
    let mut jac = DMatrix::zeros(m, p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        let mut h = fd_step(p[j]);
        if let Some(up) = upper {
            if p[j] + h > up[j] {
                h = -h;
            }
        }
        q[j] = p[j] + h;
        let h_eff = q[j] - p[j];
        let r1 = f(&q);
        for i in 0..m {
            jac[(i, j)] = (r1[i] - r0[i]) / h_eff;
        }
        q[j] = p[j];
    }
    jac
}

/// Forward-difference Jacobian with an explicit step `h` on every parameter.
pub fn jacobian_forward_step<F>(f: &F, p: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let r0 = f(p);
    let mut jac = DMatrix::zeros(r0.len(), p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        q[j] = p[j] + h;
        let r1 = f(&q);
        for i in 0..r0.len() {
            jac[(i, j)] = (r1[i] - r0[i]) / h;
        }
        q[j] = p[j];
    }
    jac
}

/// Central-difference Jacobian with step `h`.
pub fn jacobian_central<F>(f: &F, p: &[f64], h: f64) -> DMatrix<f64>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let m = f(p).len();
    let mut jac = DMatrix::zeros(m, p.len());
    let mut q = p.to_vec();
    for j in 0..p.len() {
        q[j] = p[j] + h;
        let rp = f(&q);
        q[j] = p[j] - h;
        let rm = f(&q);
        for i in 0..m {
            jac[(i, j)] = (rp[i] - rm[i]) / (2.0 * h);
        }
        q[j] = p[j];
    }
    jac
}

/// Damped Gauss-Newton step; parameters flagged in `active` stay put.
fn solve_damped(jtj: &DMatrix<f64>, g: &DVector<f64>, lambda: f64, active: &[bool]) -> Option<DVector<f64>> {
    let mut a = jtj.clone();
    let mut g = g.clone();
    for i in 0..a.nrows() {
        if active[i] {
            a.row_mut(i).fill(0.0);
            a.column_mut(i).fill(0.0);
            a[(i, i)] = 1.0;
            g[i] = 0.0;
            continue;
        }
        let d = jtj[(i, i)];
        a[(i, i)] += lambda * if d > 0.0 { d } else { 1.0 };
    }
    if let Some(chol) = a.clone().cholesky() {
        return Some(chol.solve(&(-g)));
    }
    if lambda == 0.0 {
        return None;
    }
    a.lu().solve(&(-g))
}

/// Parameters on a bound whose descent direction points out of the box.
fn outward(p: &[f64], g: &DVector<f64>, opts: &LsqOptions) -> Vec<bool> {
    (0..p.len())
        .map(|i| (p[i] <= opts.lower[i] && g[i] > 0.0) || (p[i] >= opts.upper[i] && g[i] < 0.0))
        .collect()
}

fn projected_grad(g: &DVector<f64>, active: &[bool]) -> f64 {
    g.iter()
        .zip(active)
        .filter(|(_, a)| !**a)
        .map(|(x, _)| x.abs())
        .fold(0.0, f64::max)
}

fn project(p: &mut [f64], lower: &[f64], upper: &[f64]) {
    for ((x, lo), hi) in p.iter_mut().zip(lower).zip(upper) {
        *x = x.clamp(*lo, *hi);
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `(JᵀJ)⁻¹` computed on the unit-diagonal rescaling, so parameters of very
/// different magnitude do not fall under the pseudo-inverse cutoff.
fn covariance(jtj: &DMatrix<f64>) -> DMatrix<f64> {
    let n = jtj.nrows();
    let d = DVector::from_iterator(
        n,
        (0..n).map(|i| {
            let v = jtj[(i, i)];
            if v > 0.0 {
                1.0 / v.sqrt()
            } else {
                1.0
            }
        }),
    );
    let scaled = DMatrix::from_fn(n, n, |i, j| jtj[(i, j)] * d[i] * d[j]);
    let inv = scaled
        .clone()
        .cholesky()
        .map(|c| c.inverse())
        .or_else(|| scaled.pseudo_inverse(1e-14).ok())
        .unwrap_or_else(|| DMatrix::from_element(n, n, f64::NAN));
    DMatrix::from_fn(n, n, |i, j| inv[(i, j)] * d[i] * d[j])
}

/// Minimise `½‖r(p)‖²` over the box given in `opts`.
pub fn least_squares<F>(residuals: F, init: &[f64], opts: &LsqOptions) -> Result<LsqSolution>
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = init.len();
    if opts.lower.len() != n || opts.upper.len() != n {
        return Err(Error::DimensionMismatch(
            "bounds length differs from parameter count".into(),
        ));
    }
    for i in 0..n {
        if !init[i].is_finite() || init[i] < opts.lower[i] || init[i] > opts.upper[i] {
            return Err(Error::FitFailed(format!(
                "initial parameter {i} = {} outside bounds [{}, {}]",
                init[i], opts.lower[i], opts.upper[i]
            )));
        }
    }
    let mut p = init.to_vec();
    let mut r = residuals(&p);
    let m = r.len();
    if m == 0 {
        return Err(Error::FitFailed("no data".into()));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::FitFailed("non-finite residuals at the initial point".into()));
    }
    let mut cost = cost_of(&r);
    let mut lambda = 0.0f64;
    let mut iterations = 0;
    let mut converged = false;
    let mut jac = jacobian_forward(&residuals, &p, &r, Some(&opts.upper));

    while iterations < opts.max_iterations {
        let jt = jac.transpose();
        let jtj = &jt * &jac;
        let g = &jt * DVector::from_column_slice(&r);
        let active = outward(&p, &g, opts);
        if projected_grad(&g, &active) <= opts.tol {
            converged = true;
            break;
        }

        let mut accepted = false;
        let stationary;
        loop {
            let Some(delta) = solve_damped(&jtj, &g, lambda, &active) else {
                lambda = if lambda == 0.0 { 1e-3 } else { lambda * 10.0 };
                if lambda > 1e20 {
                    stationary = true;
                    break;
                }
                continue;
            };
            let mut trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(a, b)| a + b).collect();
            project(&mut trial, &opts.lower, &opts.upper);
            let step: Vec<f64> = trial.iter().zip(&p).map(|(a, b)| a - b).collect();
            let small = norm(&step) <= opts.tol * (norm(&p) + opts.tol);
            let r_trial = residuals(&trial);
            let c_trial = cost_of(&r_trial);
            if c_trial.is_finite() && c_trial < cost {
                p = trial;
                r = r_trial;
                cost = c_trial;
                lambda = if lambda < 1e-9 { 0.0 } else { lambda / 10.0 };
                accepted = true;
                stationary = small;
                break;
            }
            if small {
                stationary = true;
                break;
            }
            lambda = if lambda == 0.0 { 1e-3 } else { lambda * 10.0 };
            if lambda > 1e20 {
                stationary = true;
                break;
            }
        }
        if accepted {
            iterations += 1;
            jac = jacobian_forward(&residuals, &p, &r, Some(&opts.upper));
        }
        if stationary {
            converged = true;
            break;
        }
    }
    if !converged {
        // one more gradient check at the final point
        let g = jac.transpose() * DVector::from_column_slice(&r);
        if projected_grad(&g, &outward(&p, &g, opts)) > opts.tol {
            return Err(Error::NotConverged { iterations });
        }
    }

    let jt = jac.transpose();
    let jtj = &jt * &jac;
    let g = &jt * DVector::from_column_slice(&r);
    let dof = if m > n { (m - n) as f64 } else { 1.0 };
    let s2 = 2.0 * cost / dof;
    let cov = covariance(&jtj);
    let stderr = (0..n).map(|i| (cov[(i, i)].max(0.0) * s2).sqrt()).collect();
    let at_bound = (0..n)
        .map(|i| (p[i] <= opts.lower[i] && g[i] >= 0.0) || (p[i] >= opts.upper[i] && g[i] <= 0.0))
        .collect();
    Ok(LsqSolution {
        params: p,
        stderr,
        residual_rms: (2.0 * cost / m as f64).sqrt(),
        cost,
        iterations,
        converged,
        at_bound,
    })
}

/// Weighted curve fit of `y ≈ model(x, p)` with residuals `(model − y)·w`.
pub fn curve_fit<M>(
    model: M,
    xs: &[f64],
    ys: &[f64],
    weights: Option<&[f64]>,
    init: &[f64],
    opts: &LsqOptions,
) -> Result<LsqSolution>
where
    M: Fn(f64, &[f64]) -> f64,
{
    if xs.len() != ys.len() || weights.is_some_and(|w| w.len() != xs.len()) {
        return Err(Error::DimensionMismatch(
            "x, y and weights must have equal length".into(),
        ));
    }
    least_squares(
        |p: &[f64]| {
            xs.iter()
                .zip(ys)
                .enumerate()
                .map(|(i, (&x, &y))| (model(x, p) - y) * weights.map_or(1.0, |w| w[i]))
                .collect()
        },
        init,
        opts,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_model_converges_in_one_step() {
        let xs: Vec<f64> = (1..=10).map(f64::from).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 2.5 * x).collect();
        let sol = curve_fit(|x, p| p[0] * x, &xs, &ys, None, &[1.0], &LsqOptions::unbounded(1)).unwrap();
        assert!((sol.params[0] - 2.5).abs() < 1e-12);
        assert_eq!(sol.iterations, 1);
        assert!(sol.converged);
    }

    #[test]
    fn quadratic_matches_normal_equations() {
        let xs: Vec<f64> = (0..25).map(|i| -1.0 + 0.1 * i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 0.7 - 1.3 * x + 2.1 * x * x + 0.05 * ((i * 7919 % 13) as f64 - 6.0) / 6.0)
            .collect();
        // closed-form normal equations
        let a = DMatrix::from_fn(xs.len(), 3, |i, j| xs[i].powi(j as i32));
        let y = DVector::from_column_slice(&ys);
        let at = a.transpose();
        let exact = (&at * &a).lu().solve(&(&at * y)).unwrap();
        let sol = curve_fit(
            |x, p| p[0] + p[1] * x + p[2] * x * x,
            &xs,
            &ys,
            None,
            &[0.0, 0.0, 0.0],
            &LsqOptions::unbounded(3),
        )
        .unwrap();
        for j in 0..3 {
            assert!(
                (sol.params[j] - exact[j]).abs() < 1e-10,
                "{j}: {} vs {}",
                sol.params[j],
                exact[j]
            );
        }
    }

    #[test]
    fn stderr_survives_parameter_scales_twelve_decades_apart() {
        // y = a·x·1e-6 + b with a ~ 1e6 and b ~ 1
        let xs: Vec<f64> = (0..50).map(|i| 1.0 + 0.2 * i as f64).collect();
        let ys: Vec<f64> = xs
            .iter()
            .enumerate()
            .map(|(i, x)| 2.0e6 * x * 1e-6 + 3.0 + 0.1 * ((i * 31 % 7) as f64 - 3.0))
            .collect();
        let sol = curve_fit(
            |x, p| p[0] * x * 1e-6 + p[1],
            &xs,
            &ys,
            None,
            &[1e6, 0.0],
            &LsqOptions::unbounded(2),
        )
        .unwrap();
        let a = DMatrix::from_fn(xs.len(), 2, |i, j| if j == 0 { xs[i] * 1e-6 } else { 1.0 });
        let cov = (a.transpose() * &a).try_inverse().unwrap();
        let s2 = 2.0 * sol.cost / (xs.len() - 2) as f64;
        for j in 0..2 {
            let exact = (cov[(j, j)] * s2).sqrt();
            assert!(
                (sol.stderr[j] / exact - 1.0).abs() < 1e-6,
                "{j}: {} vs {exact} params {:?} cost {} it {}",
                sol.stderr[j],
                sol.params,
                sol.cost,
                sol.iterations
            );
        }
    }

    #[test]
    fn init_at_bound_with_outward_gradient_is_flagged() {
        // data want a = −1 but a is bounded below by 0
        let xs = [1.0, 2.0, 3.0];
        let ys = [-1.0, -2.0, -3.0];
        let opts = LsqOptions::bounded(vec![0.0], vec![10.0]);
        let sol = curve_fit(|x, p| p[0] * x, &xs, &ys, None, &[0.0], &opts).unwrap();
        assert_eq!(sol.params[0], 0.0);
        assert!(sol.at_bound[0]);
    }

    #[test]
    fn init_outside_bounds_is_an_error() {
        let opts = LsqOptions::bounded(vec![0.0], vec![1.0]);
        assert!(least_squares(|p: &[f64]| vec![p[0]], &[2.0], &opts).is_err());
    }

    #[test]
    fn nonlinear_exponential_fit() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-0.7 * x).exp() + 0.2).collect();
        let sol = curve_fit(
            |x, p| p[0] * (-p[1] * x).exp() + p[2],
            &xs,
            &ys,
            None,
            &[1.0, 0.1, 0.0],
            &LsqOptions::unbounded(3),
        )
        .unwrap();
        assert!((sol.params[0] - 3.0).abs() < 1e-8);
        assert!((sol.params[1] - 0.7).abs() < 1e-8);
        assert!((sol.params[2] - 0.2).abs() < 1e-8);
    }

    #[test]
    fn max_iterations_exceeded_is_reported() {
        let xs: Vec<f64> = (0..30).map(|i| i as f64 * 0.2).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 3.0 * (-0.7 * x).exp()).collect();
        let mut opts = LsqOptions::unbounded(2);
        opts.max_iterations = 1;
        let r = curve_fit(|x, p| p[0] * (-p[1] * x).exp(), &xs, &ys, None, &[0.5, 3.0], &opts);
        assert!(matches!(r, Err(Error::NotConverged { .. })));
    }

    #[test]
    fn finite_difference_error_orders() {
        let f = |p: &[f64]| vec![p[0].sin() * p[1], (p[0] * p[1]).exp(), p[1].powi(3)];
        let p = [0.7_f64, 0.4];
        let exact = DMatrix::from_row_slice(
            3,
            2,
            &[
                p[0].cos() * p[1],
                p[0].sin(),
                p[1] * (p[0] * p[1]).exp(),
                p[0] * (p[0] * p[1]).exp(),
                0.0,
                3.0 * p[1] * p[1],
            ],
        );
        let h = 1e-3;
        let err = |j: DMatrix<f64>| (j - &exact).amax();
        let c1 = err(jacobian_central(&f, &p, h));
        let c2 = err(jacobian_central(&f, &p, h / 2.0));
        let f1 = err(jacobian_forward_step(&f, &p, h));
        let f2 = err(jacobian_forward_step(&f, &p, h / 2.0));
        let central_ratio = c1 / c2;
        let forward_ratio = f1 / f2;
        assert!((central_ratio - 4.0).abs() < 0.2, "central ratio {central_ratio}");
        assert!((forward_ratio - 2.0).abs() < 0.2, "forward ratio {forward_ratio}");
        // forward and central agree to first order in h
        let diff = (jacobian_forward_step(&f, &p, h) - jacobian_central(&f, &p, h)).amax();
        assert!(diff < 10.0 * h);
    }
}
