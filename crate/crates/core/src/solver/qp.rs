//! Dense strictly convex QP with inequality rows, solved by the dual active-set
//! method of Goldfarb and Idnani.
//!
//! ```text
//!     minimize    1/2 x' H x + g' x
//!     subject to  A x >= b
//! ```
//!
//! Problems here are tiny in the number of variables (a handful of twists) but
//! may carry hundreds of rows, so the active-set projections are simply
//! recomputed from `H^-1` at every step instead of being updated in factored
//! form.

use nalgebra::{DMatrix, DVector};

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per row of `A`, zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpError {
    NotPositiveDefinite,
    Infeasible,
    IterationLimit,
}

pub fn solve_qp(
    h: &DMatrix<f64>,
    g: &DVector<f64>,
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<QpSolution, QpError> {
    let n = g.len();
    let m = b.len();
    let h_inv = h
        .clone()
        .cholesky()
        .ok_or(QpError::NotPositiveDefinite)?
        .inverse();
    let row_norms: Vec<f64> = (0..m).map(|j| a.row(j).norm().max(1e-300)).collect();

    let mut x = -(&h_inv * g);
    let mut active: Vec<usize> = Vec::with_capacity(n);
    let mut u: Vec<f64> = Vec::with_capacity(n);
    let mut is_active = vec![false; m];
    let max_iter = 50 * (n + m) + 100;
    let mut iterations = 0;

    let slack = |x: &DVector<f64>, j: usize| a.row(j).transpose().dot(x) - b[j];

    loop {
        // most violated row, normalized
        let mut p = None;
        let mut worst = 0.0;
        for j in 0..m {
            if is_active[j] {
                continue;
            }
            let s = slack(&x, j);
            let tol = 1e-11 * (1.0 + b[j].abs());
            if s < -tol {
                let scaled = s / row_norms[j];
                if scaled < worst {
                    worst = scaled;
                    p = Some(j);
                }
            }
        }
        let Some(p) = p else { break };

        let np_vec: DVector<f64> = a.row(p).transpose();
        let mut u_p = 0.0;
        let mut s_p = slack(&x, p);
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }
            let k = active.len();
            let hn = &h_inv * &np_vec;
            let (z, r) = if k == 0 {
                (hn.clone(), DVector::zeros(0))
            } else {
                let nmat = DMatrix::from_fn(n, k, |i, c| a[(active[c], i)]);
                let hn_mat = &h_inv * &nmat;
                let mmat = nmat.tr_mul(&hn_mat);
                let rhs = nmat.tr_mul(&hn);
                let r = match mmat.clone().cholesky() {
                    Some(ch) => ch.solve(&rhs),
                    None => mmat.lu().solve(&rhs).ok_or(QpError::Infeasible)?,
                };
                (&hn - &hn_mat * &r, r)
            };

            // dual step length: first active multiplier hitting zero
            let mut t1 = f64::INFINITY;
            let mut drop_idx = None;
            for (c, &rc) in r.iter().enumerate() {
                if rc > 0.0 {
                    let t = u[c] / rc;
                    if t < t1 {
                        t1 = t;
                        drop_idx = Some(c);
                    }
                }
            }

            let curvature = z.dot(&np_vec);
            let dependent = curvature <= 1e-12 * np_vec.dot(&hn).abs().max(1e-300);
            if dependent {
                let Some(c) = drop_idx else {
                    return Err(QpError::Infeasible);
                };
                for (ui, ri) in u.iter_mut().zip(r.iter()) {
                    *ui -= t1 * ri;
                }
                u_p += t1;
                is_active[active[c]] = false;
                active.remove(c);
                u.remove(c);
                continue;
            }

            let t2 = -s_p / curvature;
            let t = t1.min(t2);
            x += &z * t;
            for (ui, ri) in u.iter_mut().zip(r.iter()) {
                *ui -= t * ri;
            }
            u_p += t;
            if t2 <= t1 {
                active.push(p);
                u.push(u_p);
                is_active[p] = true;
                break;
            }
            let c = drop_idx.expect("finite t1 has an index");
            is_active[active[c]] = false;
            active.remove(c);
            u.remove(c);
            s_p = slack(&x, p);
        }
    }

    let mut multipliers = DVector::zeros(m);
    for (&j, &uj) in active.iter().zip(&u) {
        multipliers[j] = uj.max(0.0);
    }
    Ok(QpSolution {
        x,
        multipliers,
        iterations,
    })
}
