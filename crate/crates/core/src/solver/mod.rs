//! Warm-startable SQP minimizer for smooth objectives under box bounds and
//! smooth inequality constraints `c(x) >= 0`.
//!
//! Each iteration solves a QP built from a damped-BFGS model of the
//! Lagrangian and linearized constraints, then backtracks on an L1 exact
//! penalty merit function. The method is deterministic: same inputs, same
//! iterates.

mod qp;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, VpcError};

pub use qp::{solve_qp, QpError, QpSolution};

#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub f: f64,
    /// Inequality residuals, `>= 0` when satisfied.
    pub c: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Derivatives {
    pub grad: DVector<f64>,
    /// `num_constraints x num_vars`
    pub jac: DMatrix<f64>,
}

/// A problem the solver can minimize. Problems without analytic derivatives
/// get central finite differences.
pub trait NlpProblem {
    fn num_vars(&self) -> usize;

    fn num_constraints(&self) -> usize {
        0
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation;

    fn derivatives(&self, _x: &[f64]) -> Option<(Evaluation, Derivatives)> {
        None
    }

    /// Positive semidefinite approximation of the objective Hessian used to
    /// seed the quasi-Newton model.
    fn curvature_hint(&self, _x: &[f64]) -> Option<DMatrix<f64>> {
        None
    }
}

/// Hint (symmetrized and lifted to be safely positive definite) or identity.
fn initial_hessian<P: NlpProblem + ?Sized>(problem: &P, x: &[f64]) -> (DMatrix<f64>, bool) {
    let n = x.len();
    if let Some(h) = problem.curvature_hint(x) {
        if h.nrows() == n && h.ncols() == n && h.iter().all(|v| v.is_finite()) {
            let mut h = (&h + h.transpose()) * 0.5;
            let scale = (0..n).map(|i| h[(i, i)].abs()).fold(0.0, f64::max);
            if scale > 0.0 {
                for i in 0..n {
                    h[(i, i)] += 1e-8 * scale;
                }
                if h.clone().cholesky().is_some() {
                    return (h, true);
                }
            }
        }
    }
    (DMatrix::identity(n, n), false)
}

/// Closure-backed problem.
pub struct FnProblem<F, C = fn(&[f64]) -> Vec<f64>, G = fn(&[f64]) -> Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    pub n: usize,
    pub objective: F,
    pub constraints: Option<C>,
    pub m: usize,
    pub gradient: Option<G>,
}

impl<F> FnProblem<F>
where
    F: Fn(&[f64]) -> f64,
{
    pub fn unconstrained(n: usize, objective: F) -> Self {
        Self {
            n,
            objective,
            constraints: None,
            m: 0,
            gradient: None,
        }
    }
}

impl<F, C, G> NlpProblem for FnProblem<F, C, G>
where
    F: Fn(&[f64]) -> f64,
    C: Fn(&[f64]) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    fn num_vars(&self) -> usize {
        self.n
    }

    fn num_constraints(&self) -> usize {
        self.m
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let c = match &self.constraints {
            Some(c) => DVector::from_vec(c(x)),
            None => DVector::zeros(0),
        };
        Evaluation {
            f: (self.objective)(x),
            c,
        }
    }

    fn derivatives(&self, x: &[f64]) -> Option<(Evaluation, Derivatives)> {
        // analytic gradient with finite-difference constraint Jacobian
        let grad = self.gradient.as_ref()?;
        let eval = self.evaluate(x);
        let jac = fd_jacobian(self, x, 1e-6).ok()?.1.jac;
        Some((
            eval,
            Derivatives {
                grad: DVector::from_vec(grad(x)),
                jac,
            },
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverConfig {
    pub optimality_tol: f64,
    pub max_iterations: usize,
    pub feasibility_tol: f64,
    /// Relative step for central differences.
    pub finite_diff_step: f64,
}

impl SolverConfig {
    /// Settings used while building the memory of motion.
    pub fn offline() -> Self {
        Self {
            optimality_tol: 1e-9,
            max_iterations: 100,
            ..Self::default()
        }
    }

    /// Relaxed settings for the on-line controller.
    pub fn online() -> Self {
        Self {
            optimality_tol: 1e-3,
            max_iterations: 10,
            ..Self::default()
        }
    }
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            optimality_tol: 1e-6,
            max_iterations: 100,
            feasibility_tol: 1e-6,
            finite_diff_step: 1e-6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Converged,
    MaxIterationsExceeded,
    NumericalFailure,
    /// The QP subproblem could not be solved even in elastic form.
    SubproblemFailure,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverResult {
    pub solution: Vec<f64>,
    pub cost: f64,
    pub success: bool,
    pub status: SolverStatus,
    pub iterations: usize,
    pub solve_time: f64,
    pub max_violation: f64,
    /// `|g'd| + sum |lambda_i c_i|` at the last QP solve.
    pub kkt_residual: f64,
}

/// Per-variable bounds, `lo[i] <= x[i] <= hi[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(n: usize) -> Self {
        Self {
            lo: vec![f64::NEG_INFINITY; n],
            hi: vec![f64::INFINITY; n],
        }
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((xi, lo), hi) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *xi = xi.clamp(*lo, *hi);
        }
    }
}

/// Central-difference gradient, step scaled by `max(1, |x_i|)`.
pub fn finite_diff_gradient<F>(f: F, x: &[f64], step: f64) -> Result<Vec<f64>>
where
    F: Fn(&[f64]) -> f64,
{
    let mut xp = x.to_vec();
    let mut out = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let h = step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        let d = (fp - fm) / (2.0 * h);
        if !d.is_finite() {
            return Err(VpcError::NumericalFailure("finite differences"));
        }
        out.push(d);
    }
    Ok(out)
}

fn fd_jacobian<P: NlpProblem + ?Sized>(
    problem: &P,
    x: &[f64],
    step: f64,
) -> Result<(Evaluation, Derivatives)> {
    let eval = problem.evaluate(x);
    let n = x.len();
    let m = eval.c.len();
    let mut grad = DVector::zeros(n);
    let mut jac = DMatrix::zeros(m, n);
    let mut xp = x.to_vec();
    for i in 0..n {
        let h = step * x[i].abs().max(1.0);
        xp[i] = x[i] + h;
        let ep = problem.evaluate(&xp);
        xp[i] = x[i] - h;
        let em = problem.evaluate(&xp);
        xp[i] = x[i];
        grad[i] = (ep.f - em.f) / (2.0 * h);
        for j in 0..m {
            jac[(j, i)] = (ep.c[j] - em.c[j]) / (2.0 * h);
        }
    }
    if !grad.iter().chain(jac.iter()).all(|v| v.is_finite()) {
        return Err(VpcError::NumericalFailure("finite differences"));
    }
    Ok((eval, Derivatives { grad, jac }))
}

fn max_violation(c: &DVector<f64>) -> f64 {
    c.iter().fold(0.0f64, |acc, &ci| acc.max(-ci))
}

fn is_finite(e: &Evaluation) -> bool {
    e.f.is_finite() && e.c.iter().all(|v| v.is_finite())
}

struct Iterate {
    x: Vec<f64>,
    eval: Evaluation,
    der: Derivatives,
}

fn linearize<P: NlpProblem + ?Sized>(problem: &P, x: Vec<f64>, step: f64) -> Result<Iterate> {
    let (eval, der) = match problem.derivatives(&x) {
        Some(ed) => ed,
        None => fd_jacobian(problem, &x, step)?,
    };
    if !is_finite(&eval) || !der.grad.iter().chain(der.jac.iter()).all(|v| v.is_finite()) {
        return Err(VpcError::NumericalFailure("objective or gradient"));
    }
    Ok(Iterate { x, eval, der })
}

/// Builds `A d >= b` rows for the QP subproblem: linearized constraints
/// followed by finite bounds on the step.
fn qp_rows(it: &Iterate, bounds: &Bounds) -> (DMatrix<f64>, DVector<f64>) {
    let n = it.x.len();
    let m = it.eval.c.len();
    let nb = bounds.lo.iter().filter(|v| v.is_finite()).count()
        + bounds.hi.iter().filter(|v| v.is_finite()).count();
    let mut a = DMatrix::zeros(m + nb, n);
    let mut b = DVector::zeros(m + nb);
    a.view_mut((0, 0), (m, n)).copy_from(&it.der.jac);
    for j in 0..m {
        b[j] = -it.eval.c[j];
    }
    let mut row = m;
    for i in 0..n {
        if bounds.lo[i].is_finite() {
            a[(row, i)] = 1.0;
            b[row] = bounds.lo[i] - it.x[i];
            row += 1;
        }
        if bounds.hi[i].is_finite() {
            a[(row, i)] = -1.0;
            b[row] = it.x[i] - bounds.hi[i];
            row += 1;
        }
    }
    (a, b)
}

/// Elastic fallback when the linearization is inconsistent: one extra slack
/// variable relaxes all nonlinear rows and is penalized heavily.
fn elastic_qp(
    hess: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    m_nonlinear: usize,
) -> std::result::Result<(DVector<f64>, DVector<f64>), QpError> {
    let n = g.len();
    let rows = a.nrows();
    let mut h2 = DMatrix::zeros(n + 1, n + 1);
    h2.view_mut((0, 0), (n, n)).copy_from(hess);
    h2[(n, n)] = 1.0;
    let mut g2 = DVector::zeros(n + 1);
    g2.rows_mut(0, n).copy_from(g);
    g2[n] = 1e4 * (1.0 + g.amax());
    let mut a2 = DMatrix::zeros(rows + 1, n + 1);
    a2.view_mut((0, 0), (rows, n)).copy_from(a);
    for j in 0..m_nonlinear {
        a2[(j, n)] = 1.0;
    }
    a2[(rows, n)] = 1.0;
    let mut b2 = DVector::zeros(rows + 1);
    b2.rows_mut(0, rows).copy_from(b);
    let sol = solve_qp(&h2, &g2, &a2, &b2)?;
    Ok((
        sol.x.rows(0, n).into_owned(),
        sol.multipliers.rows(0, rows).into_owned(),
    ))
}

/// Minimizes `problem` from `warm_start` (clipped into `bounds`).
pub fn minimize<P: NlpProblem + ?Sized>(
    problem: &P,
    bounds: &Bounds,
    warm_start: &[f64],
    cfg: &SolverConfig,
) -> SolverResult {
    let start = Instant::now();
    let mut x0 = warm_start.to_vec();
    bounds.clip(&mut x0);
    let n = x0.len();

    let finish = |x: Vec<f64>, eval: &Evaluation, status, iterations, kkt| {
        let viol = max_violation(&eval.c);
        SolverResult {
            success: status == SolverStatus::Converged && viol <= cfg.feasibility_tol,
            solution: x,
            cost: eval.f,
            status,
            iterations,
            solve_time: start.elapsed().as_secs_f64(),
            max_violation: viol,
            kkt_residual: kkt,
        }
    };

    let mut it = match linearize(problem, x0.clone(), cfg.finite_diff_step) {
        Ok(it) => it,
        Err(_) => {
            let eval = problem.evaluate(&x0);
            return finish(x0, &eval, SolverStatus::NumericalFailure, 0, f64::INFINITY);
        }
    };
    let m = it.eval.c.len();
    let start_feasible = max_violation(&it.eval.c) <= cfg.feasibility_tol;
    let start_cost = it.eval.f;
    let mut best_feasible: Option<(Vec<f64>, Evaluation)> =
        start_feasible.then(|| (it.x.clone(), it.eval.clone()));

    let (mut hess, hinted) = initial_hessian(problem, &it.x);
    // Shanno-Phua scaling is only wanted on top of an identity model
    let mut first_update = !hinted;
    let mut fresh = true;
    let mut penalty = DVector::<f64>::zeros(m);
    let mut status = SolverStatus::MaxIterationsExceeded;
    let mut kkt = f64::INFINITY;
    let mut iterations = 0;

    while iterations < cfg.max_iterations {
        iterations += 1;
        let (a, b) = qp_rows(&it, bounds);
        let qp = match solve_qp(&hess, &it.der.grad, &a, &b) {
            Ok(sol) => Ok((sol.x, sol.multipliers)),
            Err(QpError::NotPositiveDefinite) => {
                let (h, hinted) = initial_hessian(problem, &it.x);
                hess = h;
                first_update = !hinted;
                fresh = true;
                solve_qp(&hess, &it.der.grad, &a, &b).map(|s| (s.x, s.multipliers))
            }
            Err(e) => Err(e),
        }
        .or_else(|_| elastic_qp(&hess, &it.der.grad, &a, &b, m));
        let (d, lambda_all) = match qp {
            Ok(v) => v,
            Err(_) => {
                status = SolverStatus::SubproblemFailure;
                break;
            }
        };
        let lambda = lambda_all.rows(0, m).into_owned();

        let viol = max_violation(&it.eval.c);
        kkt = it.der.grad.dot(&d).abs()
            + lambda
                .iter()
                .zip(it.eval.c.iter())
                .map(|(l, c)| (l * c).abs())
                .sum::<f64>();
        if kkt <= cfg.optimality_tol && viol <= cfg.feasibility_tol {
            // the last QP step is nearly free and sharpens the answer
            let mut x_try: Vec<f64> = it.x.iter().zip(d.iter()).map(|(xi, di)| xi + di).collect();
            bounds.clip(&mut x_try);
            let e = problem.evaluate(&x_try);
            if is_finite(&e)
                && e.f <= it.eval.f
                && max_violation(&e.c) <= viol.max(cfg.feasibility_tol)
            {
                it.x = x_try;
                it.eval = e;
            }
            status = SolverStatus::Converged;
            break;
        }

        for j in 0..m {
            let l = lambda[j].abs();
            penalty[j] = l.max(0.5 * (penalty[j] + l));
        }
        let merit = |e: &Evaluation| {
            e.f + e
                .c
                .iter()
                .zip(penalty.iter())
                .map(|(c, r)| r * (-c).max(0.0))
                .sum::<f64>()
        };
        let phi0 = merit(&it.eval);
        let slope = it.der.grad.dot(&d)
            - it
                .eval
                .c
                .iter()
                .zip(penalty.iter())
                .map(|(c, r)| r * (-c).max(0.0))
                .sum::<f64>();

        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..12 {
            let mut x_trial: Vec<f64> = it
                .x
                .iter()
                .zip(d.iter())
                .map(|(xi, di)| xi + alpha * di)
                .collect();
            // the QP honours the bounds only up to rounding
            bounds.clip(&mut x_trial);
            let e = problem.evaluate(&x_trial);
            if is_finite(&e) {
                let phi = merit(&e);
                if phi <= phi0 + 1e-4 * alpha * slope.min(0.0) || slope >= 0.0 && phi <= phi0 {
                    accepted = Some(x_trial);
                    break;
                }
                // safeguarded quadratic interpolation
                let denom = 2.0 * (phi - phi0 - alpha * slope);
                let a_new = if slope < 0.0 && denom > 0.0 {
                    -slope * alpha * alpha / denom
                } else {
                    0.5 * alpha
                };
                alpha = a_new.clamp(0.1 * alpha, 0.5 * alpha);
            } else {
                alpha *= 0.1;
            }
        }
        let Some(x_new) = accepted else {
            if fresh {
                // already a fresh model and still no descent: nothing more to gain
                break;
            }
            let (h, hinted) = initial_hessian(problem, &it.x);
            hess = h;
            first_update = !hinted;
            fresh = true;
            continue;
        };

        let next = match linearize(problem, x_new, cfg.finite_diff_step) {
            Ok(next) => next,
            Err(_) => {
                status = SolverStatus::NumericalFailure;
                break;
            }
        };

        // damped BFGS on the Lagrangian gradient
        let s = DVector::from_iterator(n, next.x.iter().zip(&it.x).map(|(a, b)| a - b));
        let grad_lag = |iter: &Iterate| &iter.der.grad - iter.der.jac.tr_mul(&lambda);
        let mut y = grad_lag(&next) - grad_lag(&it);
        let sy = s.dot(&y);
        if first_update && sy > 0.0 {
            let scale = y.norm_squared() / sy;
            if scale.is_finite() && scale > 0.0 {
                hess = DMatrix::identity(n, n) * scale;
            }
            first_update = false;
        }
        let bs = &hess * &s;
        let sbs = s.dot(&bs);
        if sbs > 1e-300 {
            let sy = s.dot(&y);
            if sy < 0.2 * sbs {
                let theta = 0.8 * sbs / (sbs - sy);
                y = &y * theta + &bs * (1.0 - theta);
            }
            let sy = s.dot(&y);
            if sy > 1e-300 {
                hess += &y * y.transpose() / sy - &bs * bs.transpose() / sbs;
            }
        }

        fresh = false;
        it = next;
        if max_violation(&it.eval.c) <= cfg.feasibility_tol
            && best_feasible
                .as_ref()
                .is_none_or(|(_, e)| it.eval.f < e.f)
        {
            best_feasible = Some((it.x.clone(), it.eval.clone()));
        }
    }

    // never hand back a feasible point worse than the best feasible one seen
    let final_viol = max_violation(&it.eval.c);
    if let Some((bx, be)) = best_feasible {
        let worse = final_viol > cfg.feasibility_tol || it.eval.f > be.f + cfg.optimality_tol;
        if worse && start_feasible && be.f <= start_cost + cfg.optimality_tol {
            let st = if status == SolverStatus::Converged {
                SolverStatus::MaxIterationsExceeded
            } else {
                status
            };
            return finish(bx, &be, st, iterations, kkt);
        }
    }
    finish(it.x, &it.eval, status, iterations, kkt)
}
