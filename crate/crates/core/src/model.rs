//! Feature prediction model, cost and visibility constraints of the predictive
//! controller.
//!
//! Features are predicted with the local first-order model
//! `s_{j} = s_{j-1} + Ts * L(s_{j-1}) * v_j`, where the interaction matrix is
//! re-evaluated at every predicted feature with the point depths held at their
//! goal values. The same rollout also propagates the sensitivities of the
//! predicted features with respect to the free controls, which gives the
//! analytic cost gradient and constraint Jacobian handed to the solver.

use nalgebra::{DMatrix, DVector, Matrix6, Vector6};
use serde::{Deserialize, Serialize};

use crate::camera::{FeatureVector, Intrinsics, Twist};
use crate::error::{Result, VpcError};
use crate::solver::{Derivatives, Evaluation, NlpProblem};

/// Image Jacobian mapping a camera twist to pixel velocities (`n_f x 6`).
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionMatrix(pub DMatrix<f64>);

fn point_rows(u: f64, v: f64, z: f64, intr: &Intrinsics) -> ([f64; 6], [f64; 6]) {
    let x = (u - intr.cu) / intr.fu;
    let y = (v - intr.cv) / intr.fv;
    let iz = 1.0 / z;
    let ru = [
        -iz * intr.fu,
        0.0,
        x * iz * intr.fu,
        x * y * intr.fu,
        -(1.0 + x * x) * intr.fu,
        y * intr.fu,
    ];
    let rv = [
        0.0,
        -iz * intr.fv,
        y * iz * intr.fv,
        (1.0 + y * y) * intr.fv,
        -x * y * intr.fv,
        -x * intr.fv,
    ];
    (ru, rv)
}

/// Derivative of `L(s) * v` with respect to one point's pixel coordinates.
/// Row-major 2x2: `[[d(du)/du, d(du)/dv], [d(dv)/du, d(dv)/dv]]`.
fn point_rate_jacobian(u: f64, v: f64, z: f64, tw: &[f64], intr: &Intrinsics) -> [f64; 4] {
    let x = (u - intr.cu) / intr.fu;
    let y = (v - intr.cv) / intr.fv;
    let (vz, wx, wy, wz) = (tw[2], tw[3], tw[4], tw[5]);
    [
        vz / z + y * wx - 2.0 * x * wy,
        intr.fu / intr.fv * (x * wx + wz),
        intr.fv / intr.fu * (-y * wy - wz),
        vz / z + 2.0 * y * wx - x * wy,
    ]
}

/// Point-feature interaction matrix in pixel units.
pub fn interaction_matrix(
    s: &FeatureVector,
    depths: &[f64],
    intr: &Intrinsics,
) -> Result<InteractionMatrix> {
    if depths.len() != s.n_points() {
        return Err(VpcError::DimensionMismatch {
            expected: s.n_points(),
            got: depths.len(),
        });
    }
    let mut l = DMatrix::zeros(s.len(), Twist::DIM);
    for (i, &z) in depths.iter().enumerate() {
        if z <= 0.0 {
            return Err(VpcError::NonPositiveDepth { index: i, depth: z });
        }
        let (u, v) = s.point(i);
        let (ru, rv) = point_rows(u, v, z, intr);
        for c in 0..6 {
            l[(2 * i, c)] = ru[c];
            l[(2 * i + 1, c)] = rv[c];
        }
    }
    Ok(InteractionMatrix(l))
}

/// One step of the local feature model: `s_prev + ts * L * v`.
pub fn predict_features(
    s_prev: &FeatureVector,
    v: &Twist,
    ts: f64,
    l: &InteractionMatrix,
) -> FeatureVector {
    FeatureVector(&s_prev.0 + &l.0 * v.to_vector() * ts)
}

/// Reference for the preview window, `s* - epsilon`.
pub fn desired_features(s_star: &FeatureVector, epsilon: &FeatureVector) -> FeatureVector {
    FeatureVector(&s_star.0 - &epsilon.0)
}

/// Free controls of one preview window. Controls past the last free one
/// repeat it, so the applied sequence always has `np - 1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSequence {
    pub controls: Vec<Twist>,
    pub np: usize,
}

impl ControlSequence {
    pub fn zeros(nc: usize, np: usize) -> Self {
        Self::constant(Twist::zero(), nc, np)
    }

    pub fn constant(v: Twist, nc: usize, np: usize) -> Self {
        debug_assert!(nc >= 1 && nc < np);
        Self {
            controls: vec![v; nc],
            np,
        }
    }

    pub fn from_flat(x: &[f64], np: usize) -> Self {
        Self {
            controls: x.chunks_exact(Twist::DIM).map(Twist::from_slice).collect(),
            np,
        }
    }

    pub fn nc(&self) -> usize {
        self.controls.len()
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.controls
            .iter()
            .flat_map(|t| t.to_vector().as_slice().to_vec())
            .collect()
    }

    /// The `np - 1` controls applied over the preview window.
    pub fn expanded(&self) -> Vec<Twist> {
        (0..self.np - 1)
            .map(|i| self.controls[i.min(self.nc() - 1)])
            .collect()
    }

    pub fn first(&self) -> Twist {
        self.controls[0]
    }

    /// Same controls re-laid onto another horizon shape. Extra free slots take
    /// the last available control.
    pub fn reshaped(&self, nc: usize, np: usize) -> Self {
        let last = *self.controls.last().unwrap_or(&Twist::zero());
        Self {
            controls: (0..nc)
                .map(|i| self.controls.get(i).copied().unwrap_or(last))
                .collect(),
            np,
        }
    }
}

/// Keep-out region `|(u-cu0)/au|^p + |(v-cv0)/av|^p <= 1`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Superellipse {
    pub cu0: f64,
    pub cv0: f64,
    pub au: f64,
    pub av: f64,
    #[serde(default = "default_p_exp")]
    pub p_exp: f64,
}

fn default_p_exp() -> f64 {
    4.0
}

impl Superellipse {
    pub fn residual(&self, u: f64, v: f64) -> f64 {
        let a = ((u - self.cu0) / self.au).abs();
        let b = ((v - self.cv0) / self.av).abs();
        a.powf(self.p_exp) + b.powf(self.p_exp) - 1.0
    }

    fn residual_gradient(&self, u: f64, v: f64) -> (f64, f64) {
        let du = (u - self.cu0) / self.au;
        let dv = (v - self.cv0) / self.av;
        let p = self.p_exp;
        (
            p * du.abs().powf(p - 1.0) * du.signum() / self.au,
            p * dv.abs().powf(p - 1.0) * dv.signum() / self.av,
        )
    }

    /// Euclidean distance from `(u, v)` to the region border.
    pub fn boundary_distance(&self, u: f64, v: f64) -> f64 {
        // fold into the first quadrant; the curve is symmetric about both axes
        let px = (u - self.cu0).abs();
        let py = (v - self.cv0).abs();
        let p = self.p_exp;
        let (au, av) = (self.au, self.av);
        // two explicit branches cover the quarter curve evenly for any exponent
        let branch_a = |t: f64| (au * t, av * (1.0 - t.powf(p)).max(0.0).powf(1.0 / p));
        let branch_b = |t: f64| (au * (1.0 - t.powf(p)).max(0.0).powf(1.0 / p), av * t);
        let mut best = f64::INFINITY;
        for branch in [&branch_a as &dyn Fn(f64) -> (f64, f64), &branch_b] {
            let d2 = |t: f64| {
                let (bx, by) = branch(t);
                (bx - px).powi(2) + (by - py).powi(2)
            };
            const N: usize = 64;
            let (mut k_best, mut d_best) = (0, f64::INFINITY);
            for k in 0..=N {
                let d = d2(k as f64 / N as f64);
                if d < d_best {
                    d_best = d;
                    k_best = k;
                }
            }
            let mut lo = (k_best.saturating_sub(1)) as f64 / N as f64;
            let mut hi = ((k_best + 1).min(N)) as f64 / N as f64;
            let g = 0.5 * (5f64.sqrt() - 1.0);
            let mut a = hi - g * (hi - lo);
            let mut b = lo + g * (hi - lo);
            let (mut fa, mut fb) = (d2(a), d2(b));
            for _ in 0..60 {
                if fa < fb {
                    hi = b;
                    b = a;
                    fb = fa;
                    a = hi - g * (hi - lo);
                    fa = d2(a);
                } else {
                    lo = a;
                    a = b;
                    fa = fb;
                    b = lo + g * (hi - lo);
                    fb = d2(b);
                }
            }
            best = best.min(d_best).min(fa).min(fb);
        }
        best.sqrt()
    }

    /// Positive outside the region, negative inside.
    pub fn signed_distance(&self, u: f64, v: f64) -> f64 {
        let d = self.boundary_distance(u, v);
        if self.residual(u, v) < 0.0 {
            -d
        } else {
            d
        }
    }
}

/// Axis-aligned area the features must stay in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeepInBox {
    pub u_min: f64,
    pub u_max: f64,
    pub v_min: f64,
    pub v_max: f64,
}

impl KeepInBox {
    /// Positive inside the box, negative outside.
    pub fn signed_distance(&self, u: f64, v: f64) -> f64 {
        let inside = (u - self.u_min)
            .min(self.u_max - u)
            .min(v - self.v_min)
            .min(self.v_max - v);
        if inside >= 0.0 {
            inside
        } else {
            let dx = (self.u_min - u).max(0.0).max(u - self.u_max);
            let dy = (self.v_min - v).max(0.0).max(v - self.v_max);
            -(dx * dx + dy * dy).sqrt()
        }
    }

    pub fn contains(&self, u: f64, v: f64) -> bool {
        u >= self.u_min && u <= self.u_max && v >= self.v_min && v <= self.v_max
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VisibilityRegion {
    KeepIn(KeepInBox),
    KeepOut(Superellipse),
}

impl VisibilityRegion {
    fn residual_count(&self) -> usize {
        match self {
            VisibilityRegion::KeepIn(_) => 4,
            VisibilityRegion::KeepOut(_) => 1,
        }
    }

    /// Residuals for one point, `>= 0` when satisfied, with their `(d/du, d/dv)`.
    fn point_residuals(&self, u: f64, v: f64, out: &mut Vec<(f64, f64, f64)>) {
        match self {
            VisibilityRegion::KeepIn(b) => {
                out.push((u - b.u_min, 1.0, 0.0));
                out.push((b.u_max - u, -1.0, 0.0));
                out.push((v - b.v_min, 0.0, 1.0));
                out.push((b.v_max - v, 0.0, -1.0));
            }
            VisibilityRegion::KeepOut(e) => {
                let (gu, gv) = e.residual_gradient(u, v);
                out.push((e.residual(u, v), gu, gv));
            }
        }
    }

    /// Pixel-unit signed distance, positive when the point satisfies the region.
    pub fn signed_distance(&self, u: f64, v: f64) -> f64 {
        match self {
            VisibilityRegion::KeepIn(b) => b.signed_distance(u, v),
            VisibilityRegion::KeepOut(e) => e.signed_distance(u, v),
        }
    }
}

/// Point-major residuals: for every point, every region in order (four per
/// keep-in box, one per keep-out).
pub fn visibility_residuals(s: &FeatureVector, regions: &[VisibilityRegion]) -> Vec<f64> {
    let mut buf = Vec::new();
    for (u, v) in s.points() {
        for r in regions {
            r.point_residuals(u, v, &mut buf);
        }
    }
    buf.into_iter().map(|(r, _, _)| r).collect()
}

/// Smallest pixel distance from any feature to any keep-out border; zero for
/// features inside a region, `+inf` without keep-outs.
pub fn min_distance_to_regions(s: &FeatureVector, regions: &[VisibilityRegion]) -> f64 {
    let mut best = f64::INFINITY;
    for (u, v) in s.points() {
        for r in regions {
            if let VisibilityRegion::KeepOut(e) = r {
                best = best.min(e.signed_distance(u, v).max(0.0));
            }
        }
    }
    best
}

/// Deepest pixel penetration of any feature into any region (0 when all
/// constraints hold).
pub fn max_violation_px(s: &FeatureVector, regions: &[VisibilityRegion]) -> f64 {
    let mut worst: f64 = 0.0;
    for (u, v) in s.points() {
        for r in regions {
            worst = worst.max(-r.signed_distance(u, v));
        }
    }
    worst
}

#[derive(Debug, Clone, PartialEq)]
pub struct Weights {
    /// `n_f x n_f`, feature error weight.
    pub q: DMatrix<f64>,
    /// Effort weight on the twist.
    pub r: Matrix6<f64>,
    /// Error (px rms) below which `r` starts to shrink.
    pub ramp_radius: f64,
    pub r_floor: f64,
}

impl Weights {
    pub fn new(k_q: f64, n_f: usize, r_diag: [f64; 6], ramp_radius: f64, r_floor: f64) -> Self {
        Self {
            q: DMatrix::identity(n_f, n_f) * k_q,
            r: Matrix6::from_diagonal(&Vector6::from_column_slice(&r_diag)),
            ramp_radius,
            r_floor,
        }
    }

    /// Scale applied to `r` at a given task error.
    pub fn r_scale(&self, err_rms: f64) -> f64 {
        let f = if self.ramp_radius > 0.0 {
            err_rms / self.ramp_radius
        } else {
            1.0
        };
        f.max(self.r_floor).clamp(self.r_floor, 1.0)
    }
}

/// Everything besides the controls that the prediction needs.
#[derive(Debug, Clone)]
pub struct PredictionContext {
    pub intr: Intrinsics,
    /// Depth of each point at the goal pose.
    pub goal_depths: Vec<f64>,
    pub ts: f64,
    /// Measured minus first previewed feature, held over the window.
    pub epsilon: DVector<f64>,
}

/// One VPC optimization instance: cost, constraints and their derivatives as a
/// function of the free controls.
#[derive(Debug, Clone)]
pub struct VpcProblem<'a> {
    pub s_k: &'a FeatureVector,
    pub target: &'a FeatureVector,
    pub ctx: &'a PredictionContext,
    pub q: &'a DMatrix<f64>,
    /// Effort weight already scaled by the ramp.
    pub r: Matrix6<f64>,
    pub regions: &'a [VisibilityRegion],
    pub np: usize,
    pub nc: usize,
}

struct Rollout {
    cost: f64,
    constraints: Vec<f64>,
    grad: Option<DVector<f64>>,
    jac: Option<DMatrix<f64>>,
    gauss_newton: Option<DMatrix<f64>>,
}

impl VpcProblem<'_> {
    fn residuals_per_point(&self) -> usize {
        self.regions.iter().map(|r| r.residual_count()).sum()
    }

    fn rollout(&self, x: &[f64], with_derivatives: bool) -> Rollout {
        let n_f = self.s_k.len();
        let n_pts = n_f / 2;
        let nvar = x.len();
        let intr = &self.ctx.intr;
        let reference = &self.target.0 - &self.ctx.epsilon;
        let per_point = self.residuals_per_point();
        let m = (self.np - 1) * n_pts * per_point;

        let mut s = self.s_k.0.clone();
        let mut sens = DMatrix::<f64>::zeros(n_f, nvar);
        let mut cost = 0.0;
        let mut grad = DVector::<f64>::zeros(nvar);
        let mut constraints = Vec::with_capacity(m);
        let mut jac = if with_derivatives {
            DMatrix::<f64>::zeros(m, nvar)
        } else {
            DMatrix::<f64>::zeros(0, 0)
        };
        let mut buf = Vec::with_capacity(per_point);
        let mut gn = DMatrix::<f64>::zeros(nvar, nvar);

        for i in 0..self.np - 1 {
            let block = 6 * i.min(self.nc - 1);
            let u = &x[block..block + 6];
            let mut s_next = s.clone();
            let mut sens_next = sens.clone();
            for p in 0..n_pts {
                let (pu, pv, z) = (s[2 * p], s[2 * p + 1], self.ctx.goal_depths[p]);
                let (ru, rv) = point_rows(pu, pv, z, intr);
                let du: f64 = ru.iter().zip(u).map(|(a, b)| a * b).sum();
                let dv: f64 = rv.iter().zip(u).map(|(a, b)| a * b).sum();
                s_next[2 * p] += self.ctx.ts * du;
                s_next[2 * p + 1] += self.ctx.ts * dv;
                if with_derivatives {
                    let d = point_rate_jacobian(pu, pv, z, u, intr);
                    let ts = self.ctx.ts;
                    for c in 0..nvar {
                        let a = sens[(2 * p, c)];
                        let b = sens[(2 * p + 1, c)];
                        sens_next[(2 * p, c)] += ts * (d[0] * a + d[1] * b);
                        sens_next[(2 * p + 1, c)] += ts * (d[2] * a + d[3] * b);
                    }
                    for c in 0..6 {
                        sens_next[(2 * p, block + c)] += ts * ru[c];
                        sens_next[(2 * p + 1, block + c)] += ts * rv[c];
                    }
                }
            }

            let err = &reference - &s_next;
            let qe = self.q * &err;
            cost += err.dot(&qe);
            let uv = Vector6::from_column_slice(u);
            let ru = self.r * uv;
            cost += uv.dot(&ru);
            if with_derivatives {
                grad -= sens_next.tr_mul(&qe) * 2.0;
                for c in 0..6 {
                    grad[block + c] += 2.0 * ru[c];
                }
                gn += sens_next.tr_mul(&(self.q * &sens_next)) * 2.0;
                for a in 0..6 {
                    for b in 0..6 {
                        gn[(block + a, block + b)] += 2.0 * self.r[(a, b)];
                    }
                }
            }

            for p in 0..n_pts {
                buf.clear();
                for r in self.regions {
                    r.point_residuals(s_next[2 * p], s_next[2 * p + 1], &mut buf);
                }
                for &(val, gu, gv) in &buf {
                    if with_derivatives {
                        let row = constraints.len();
                        for c in 0..nvar {
                            jac[(row, c)] =
                                gu * sens_next[(2 * p, c)] + gv * sens_next[(2 * p + 1, c)];
                        }
                    }
                    constraints.push(val);
                }
            }
            s = s_next;
            sens = sens_next;
        }

        Rollout {
            cost,
            constraints,
            grad: with_derivatives.then_some(grad),
            jac: with_derivatives.then_some(jac),
            gauss_newton: with_derivatives.then_some(gn),
        }
    }

    /// Predicted features over the window, first entry is `s_k`.
    pub fn predicted_features(&self, x: &[f64]) -> Vec<FeatureVector> {
        let mut out = vec![self.s_k.clone()];
        let n_pts = self.s_k.n_points();
        for i in 0..self.np - 1 {
            let block = 6 * i.min(self.nc - 1);
            let v = Twist::from_slice(&x[block..block + 6]);
            let prev = out.last().unwrap();
            let l = interaction_matrix(prev, &self.ctx.goal_depths[..n_pts], &self.ctx.intr)
                .expect("goal depths are positive");
            out.push(predict_features(prev, &v, self.ctx.ts, &l));
        }
        out
    }
}

impl NlpProblem for VpcProblem<'_> {
    fn num_vars(&self) -> usize {
        6 * self.nc
    }

    fn num_constraints(&self) -> usize {
        (self.np - 1) * self.s_k.n_points() * self.residuals_per_point()
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        let r = self.rollout(x, false);
        Evaluation {
            f: r.cost,
            c: DVector::from_vec(r.constraints),
        }
    }

    fn curvature_hint(&self, x: &[f64]) -> Option<DMatrix<f64>> {
        self.rollout(x, true).gauss_newton
    }

    fn derivatives(&self, x: &[f64]) -> Option<(Evaluation, Derivatives)> {
        let r = self.rollout(x, true);
        Some((
            Evaluation {
                f: r.cost,
                c: DVector::from_vec(r.constraints),
            },
            Derivatives {
                grad: r.grad.unwrap(),
                jac: r.jac.unwrap(),
            },
        ))
    }
}

/// VPC cost of a control sequence: tracking error on every predicted feature
/// (the last one acting as terminal term) plus effort on every applied control.
pub fn vpc_cost(
    v: &ControlSequence,
    s_k: &FeatureVector,
    target: &FeatureVector,
    ctx: &PredictionContext,
    w: &Weights,
    r_scale: f64,
) -> f64 {
    let problem = VpcProblem {
        s_k,
        target,
        ctx,
        q: &w.q,
        r: w.r * r_scale,
        regions: &[],
        np: v.np,
        nc: v.nc(),
    };
    problem.evaluate(&v.to_flat()).f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::{integrate_twist, project, CameraPose};
    use approx::assert_relative_eq;
    use nalgebra::Vector3;

    fn unit_intr() -> Intrinsics {
        Intrinsics {
            fu: 1.0,
            fv: 1.0,
            cu: 0.5,
            cv: 0.5,
            width: 1.0,
            height: 1.0,
        }
    }

    #[test]
    fn principal_point_block_matches_finite_differences() {
        let intr = unit_intr();
        let pts = [Vector3::new(0.0, 0.0, 1.0)];
        let pose = CameraPose::identity();
        let s = project(&pts, &pose, &intr).unwrap();
        let l = interaction_matrix(&s, &[1.0], &intr).unwrap();
        let expected = DMatrix::from_row_slice(
            2,
            6,
            &[-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, -1.0, 0.0, 1.0, 0.0, 0.0],
        );
        assert_relative_eq!(l.0, expected, epsilon = 1e-15);

        let h = 1e-6;
        for axis in 0..6 {
            let mut e = Vector6::zeros();
            e[axis] = 1.0;
            let tw = Twist::from_vector(&e);
            let sp = project(&pts, &integrate_twist(&pose, &tw, h), &intr).unwrap();
            let sm = project(&pts, &integrate_twist(&pose, &tw, -h), &intr).unwrap();
            let fd = (&sp.0 - &sm.0) / (2.0 * h);
            for r in 0..2 {
                let a = expected[(r, axis)];
                assert!((fd[r] - a).abs() <= 1e-5 * a.abs().max(1.0), "axis {axis}");
            }
        }
    }

    #[test]
    fn doubling_depth_halves_translation_columns() {
        let intr = unit_intr();
        let s = FeatureVector::from_vec(vec![0.7, 0.2]);
        let l1 = interaction_matrix(&s, &[1.0], &intr).unwrap();
        let l2 = interaction_matrix(&s, &[2.0], &intr).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert_relative_eq!(l2.0[(r, c)], 0.5 * l1.0[(r, c)], epsilon = 1e-15);
            }
            for c in 3..6 {
                assert_eq!(l2.0[(r, c)], l1.0[(r, c)]);
            }
        }
    }

    #[test]
    fn non_positive_depth_is_rejected() {
        let s = FeatureVector::from_vec(vec![0.7, 0.2]);
        assert!(matches!(
            interaction_matrix(&s, &[0.0], &unit_intr()),
            Err(VpcError::NonPositiveDepth { .. })
        ));
    }

    #[test]
    fn prediction_degenerate_cases() {
        let intr = unit_intr();
        let s = FeatureVector::from_vec(vec![0.7, 0.2, 0.1, 0.9]);
        let l = interaction_matrix(&s, &[1.0, 2.0], &intr).unwrap();
        assert_eq!(predict_features(&s, &Twist::zero(), 0.1, &l), s);
        let v = Twist::from_slice(&[0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
        assert_eq!(predict_features(&s, &v, 0.0, &l), s);
    }

    #[test]
    fn prediction_matches_naive_product() {
        let intr = unit_intr();
        let s = FeatureVector::from_vec(vec![0.7, 0.2, 0.1, 0.9]);
        let l = interaction_matrix(&s, &[1.0, 2.0], &intr).unwrap();
        let v = [0.1, -0.2, 0.3, -0.4, 0.5, -0.6];
        let ts = 0.05;
        let got = predict_features(&s, &Twist::from_slice(&v), ts, &l);
        for r in 0..4 {
            let mut acc = 0.0;
            for c in 0..6 {
                acc += l.0[(r, c)] * v[c];
            }
            assert_relative_eq!(got[r], s[r] + ts * acc, epsilon = 1e-12);
        }
    }

    #[test]
    fn desired_features_subtracts_offset() {
        let s_star = FeatureVector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(desired_features(&s_star, &FeatureVector::zeros(4)), s_star);
        assert_eq!(
            desired_features(&s_star, &s_star),
            FeatureVector::zeros(4)
        );
    }

    #[test]
    fn control_sequence_tail_repeats_last_free_control() {
        let a = Twist::from_slice(&[1.0, 0.0, 0.0, 0.0, 0.0, 0.0]);
        let b = Twist::from_slice(&[0.0, 2.0, 0.0, 0.0, 0.0, 0.0]);
        let seq = ControlSequence {
            controls: vec![a, b],
            np: 5,
        };
        assert_eq!(seq.expanded(), vec![a, b, b, b]);
        assert_eq!(ControlSequence::from_flat(&seq.to_flat(), 5), seq);
    }

    #[test]
    fn superellipse_residual_landmarks() {
        let e = Superellipse {
            cu0: 100.0,
            cv0: 200.0,
            au: 30.0,
            av: 10.0,
            p_exp: 4.0,
        };
        assert_eq!(e.residual(100.0, 200.0), -1.0);
        assert_eq!(e.residual(130.0, 200.0), 0.0);
        let regions = [
            VisibilityRegion::KeepIn(KeepInBox {
                u_min: 0.0,
                u_max: 1024.0,
                v_min: 0.0,
                v_max: 1024.0,
            }),
            VisibilityRegion::KeepOut(e),
        ];
        let s = FeatureVector::from_vec(vec![500.0, 500.0, 20.0, 900.0]);
        assert!(visibility_residuals(&s, &regions).iter().all(|&r| r > 0.0));
        assert_eq!(visibility_residuals(&s, &regions).len(), 10);
    }

    #[test]
    fn distance_to_rectangle_like_superellipse() {
        let e = Superellipse {
            cu0: 500.0,
            cv0: 500.0,
            au: 50.0,
            av: 80.0,
            p_exp: 400.0,
        };
        let regions = [VisibilityRegion::KeepOut(e)];
        let s = FeatureVector::from_vec(vec![425.0, 500.0]);
        assert_relative_eq!(min_distance_to_regions(&s, &regions), 25.0, epsilon = 1e-2);
        let on = FeatureVector::from_vec(vec![550.0, 500.0]);
        assert!(min_distance_to_regions(&on, &regions) < 1e-9);
        assert_eq!(min_distance_to_regions(&s, &[]), f64::INFINITY);
    }

    #[test]
    fn keep_in_signed_distance() {
        let b = KeepInBox {
            u_min: 0.0,
            u_max: 100.0,
            v_min: 0.0,
            v_max: 50.0,
        };
        assert_eq!(b.signed_distance(10.0, 25.0), 10.0);
        assert_eq!(b.signed_distance(-3.0, 25.0), -3.0);
        assert_relative_eq!(b.signed_distance(103.0, 54.0), -5.0, epsilon = 1e-12);
    }

    #[test]
    fn weight_ramp_is_clamped() {
        let w = Weights::new(1e-3, 8, [100.0, 100.0, 1.0, 0.5, 0.5, 0.5], 50.0, 0.1);
        assert_eq!(w.r_scale(500.0), 1.0);
        assert_eq!(w.r_scale(25.0), 0.5);
        assert_eq!(w.r_scale(0.0), 0.1);
    }
}
