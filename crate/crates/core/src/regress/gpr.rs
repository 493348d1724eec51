//! Gaussian process regression with an ARD squared-exponential kernel and a
//! prior mean of zero twist at the goal features.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::time::Instant;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{QueryResult, Regressor};
use crate::camera::FeatureVector;
use crate::error::{Result, VpcError};
use crate::memory::{fmt_f64, MemoryStore, VisualConfig};
use crate::solver::{minimize, Bounds, Derivatives, Evaluation, NlpProblem, SolverConfig};

const JITTER_LADDER: [f64; 7] = [0.0, 1e-10, 1e-9, 1e-8, 1e-7, 1e-6, 1e-5];
const JITTER_CEILING: f64 = 1e-4;

#[derive(Debug, Clone)]
pub struct GprFitConfig {
    /// Keep every `subsample`-th step of each trajectory, step 0 included.
    pub subsample: usize,
    pub restarts: usize,
    /// SQP iterations per restart.
    pub max_iterations: usize,
    /// Rows used for the likelihood search; the final model uses all rows.
    pub max_fit_rows: usize,
    /// Upper bound on each inverse squared length-scale, in standardized
    /// input units.
    pub max_inverse_length_scale: f64,
    pub seed: u64,
}

impl Default for GprFitConfig {
    fn default() -> Self {
        Self {
            subsample: 20,
            restarts: 5,
            max_iterations: 60,
            max_fit_rows: 300,
            max_inverse_length_scale: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GprModel {
    /// Inverse squared length-scale per input dimension (raw units).
    pub phi: Vec<f64>,
    pub phi0_sq: f64,
    pub phi_s: f64,
    /// Training inputs, `rows x n`.
    pub x: DMatrix<f64>,
    /// `(K + phi_s I)^-1 (Y - m)`, `rows x p`.
    pub lambda: DMatrix<f64>,
    pub mean: Vec<f64>,
}

impl GprModel {
    /// Precomputes the weight matrix for fixed hyperparameters.
    pub fn with_hyperparameters(
        x: DMatrix<f64>,
        y: &DMatrix<f64>,
        mean: Vec<f64>,
        phi: Vec<f64>,
        phi0_sq: f64,
        phi_s: f64,
    ) -> Result<Self> {
        if x.nrows() == 0 {
            return Err(VpcError::EmptyStore);
        }
        if y.nrows() != x.nrows() || y.ncols() != mean.len() || phi.len() != x.ncols() {
            return Err(VpcError::DimensionMismatch {
                expected: x.nrows(),
                got: y.nrows(),
            });
        }
        if !(phi0_sq > 0.0 && phi_s > 0.0) {
            return Err(VpcError::Validation("GPR variances must be positive".into()));
        }
        let mut k = kernel_matrix(&x, &phi, phi0_sq);
        for i in 0..k.nrows() {
            k[(i, i)] += phi_s;
        }
        let chol = factor_with_jitter(&k)?;
        let resid = DMatrix::from_fn(y.nrows(), y.ncols(), |i, j| y[(i, j)] - mean[j]);
        let lambda = chol.solve(&resid);
        Ok(Self {
            phi,
            phi0_sq,
            phi_s,
            x,
            lambda,
            mean,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.mean.len()
    }

    pub fn rows(&self) -> usize {
        self.x.nrows()
    }

    /// `m + k(x_hat, X) Lambda'`.
    pub fn predict(&self, x_hat: &[f64]) -> Vec<f64> {
        let n = self.input_dim();
        let mut y = self.mean.clone();
        for i in 0..self.rows() {
            let mut q = 0.0;
            for d in 0..n {
                let diff = x_hat[d] - self.x[(i, d)];
                q += self.phi[d] * diff * diff;
            }
            let k = self.phi0_sq * (-0.5 * q).exp();
            if k == 0.0 {
                continue;
            }
            for (j, yj) in y.iter_mut().enumerate() {
                *yj += k * self.lambda[(i, j)];
            }
        }
        y
    }

    pub fn query(&self, x_hat: &[f64]) -> Result<QueryResult> {
        let start = Instant::now();
        if x_hat.len() != self.input_dim() {
            return Err(VpcError::DimensionMismatch {
                expected: self.input_dim(),
                got: x_hat.len(),
            });
        }
        let y_hat = self.predict(x_hat);
        Ok(QueryResult {
            y_hat,
            regressor: Regressor::Gpr,
            query_time: start.elapsed().as_secs_f64(),
        })
    }
}

pub fn gpr_query(model: &GprModel, x_hat: &VisualConfig) -> Result<QueryResult> {
    model.query(&x_hat.to_vec())
}

fn kernel_matrix(x: &DMatrix<f64>, phi: &[f64], phi0_sq: f64) -> DMatrix<f64> {
    let rows = x.nrows();
    let mut k = DMatrix::zeros(rows, rows);
    for i in 0..rows {
        k[(i, i)] = phi0_sq;
        for j in 0..i {
            let q: f64 = (0..x.ncols())
                .map(|d| phi[d] * (x[(i, d)] - x[(j, d)]).powi(2))
                .sum();
            let v = phi0_sq * (-0.5 * q).exp();
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    k
}

fn factor_with_jitter(k: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>> {
    let scale = (0..k.nrows()).map(|i| k[(i, i)]).fold(0.0, f64::max).max(1e-300);
    for jitter in JITTER_LADDER.iter().chain(std::iter::once(&JITTER_CEILING)) {
        let mut kj = k.clone();
        for i in 0..kj.nrows() {
            kj[(i, i)] += jitter * scale;
        }
        if let Some(ch) = kj.cholesky() {
            return Ok(ch);
        }
    }
    Err(VpcError::IllConditioned(JITTER_CEILING))
}

/// Row indices kept by per-trajectory subsampling, exact input duplicates
/// dropped.
pub fn subsample_rows(store: &MemoryStore, subsample: usize) -> Vec<usize> {
    let every = subsample.max(1);
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    let mut offset = 0;
    for traj in store.trajectories() {
        for (j, s) in traj.iter().enumerate() {
            if j % every != 0 {
                continue;
            }
            let key: Vec<u64> = s.x.to_vec().iter().map(|v| v.to_bits()).collect();
            if seen.insert(key) {
                out.push(offset + j);
            }
        }
        offset += traj.len();
    }
    out
}

/// Negative log marginal likelihood over log-hyperparameters
/// `(ln phi_1..ln phi_n, ln phi0^2, ln phi_s)`, shared across output columns.
struct Nmll {
    sqdiff: Vec<DMatrix<f64>>,
    r: DMatrix<f64>,
}

impl Nmll {
    fn new(x: &DMatrix<f64>, r: DMatrix<f64>) -> Self {
        let rows = x.nrows();
        let sqdiff = (0..x.ncols())
            .map(|d| DMatrix::from_fn(rows, rows, |i, j| (x[(i, d)] - x[(j, d)]).powi(2)))
            .collect();
        Self { sqdiff, r }
    }

    fn dim(&self) -> usize {
        self.sqdiff.len()
    }

    fn value_and_grad(&self, theta: &[f64], want_grad: bool) -> Option<(f64, Vec<f64>)> {
        let n = self.dim();
        let rows = self.r.nrows();
        let p = self.r.ncols() as f64;
        let phi: Vec<f64> = theta[..n].iter().map(|t| t.exp()).collect();
        let s0 = theta[n].exp();
        let sn = theta[n + 1].exp();
        let mut kf = DMatrix::zeros(rows, rows);
        for i in 0..rows {
            for j in 0..=i {
                let q: f64 = (0..n).map(|d| phi[d] * self.sqdiff[d][(i, j)]).sum();
                let v = s0 * (-0.5 * q).exp();
                kf[(i, j)] = v;
                kf[(j, i)] = v;
            }
        }
        let mut k = kf.clone();
        for i in 0..rows {
            k[(i, i)] += sn;
        }
        let chol = factor_with_jitter(&k).ok()?;
        let alpha = chol.solve(&self.r);
        let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
        let fit = self.r.component_mul(&alpha).sum();
        let value = 0.5 * fit
            + 0.5 * p * log_det
            + 0.5 * p * rows as f64 * (2.0 * std::f64::consts::PI).ln();
        if !value.is_finite() {
            return None;
        }
        if !want_grad {
            return Some((value, Vec::new()));
        }
        let w = chol.inverse() * p - &alpha * alpha.transpose();
        let wk = w.component_mul(&kf);
        let mut grad = vec![0.0; n + 2];
        for d in 0..n {
            grad[d] = -0.25 * phi[d] * wk.component_mul(&self.sqdiff[d]).sum();
        }
        grad[n] = 0.5 * wk.sum();
        grad[n + 1] = 0.5 * sn * w.trace();
        Some((value, grad))
    }
}

impl NlpProblem for Nmll {
    fn num_vars(&self) -> usize {
        self.dim() + 2
    }

    fn evaluate(&self, x: &[f64]) -> Evaluation {
        Evaluation {
            f: self.value_and_grad(x, false).map_or(f64::NAN, |v| v.0),
            c: DVector::zeros(0),
        }
    }

    fn derivatives(&self, x: &[f64]) -> Option<(Evaluation, Derivatives)> {
        let (f, g) = self.value_and_grad(x, true)?;
        Some((
            Evaluation {
                f,
                c: DVector::zeros(0),
            },
            Derivatives {
                grad: DVector::from_vec(g),
                jac: DMatrix::zeros(0, x.len()),
            },
        ))
    }
}

fn column_stats(m: &DMatrix<f64>, center: bool) -> (Vec<f64>, Vec<f64>) {
    let rows = m.nrows() as f64;
    (0..m.ncols())
        .map(|c| {
            let col = m.column(c);
            let mu = if center { col.sum() / rows } else { 0.0 };
            let sd = (col.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / rows).sqrt();
            (mu, if sd > 1e-12 && sd.is_finite() { sd } else { 1.0 })
        })
        .unzip()
}

/// Fits hyperparameters by maximizing the marginal likelihood (multi-start,
/// seeded) and precomputes the prediction weights.
pub fn gpr_fit(
    store: &MemoryStore,
    s_star: &FeatureVector,
    cfg: &GprFitConfig,
) -> Result<GprModel> {
    if s_star.len() != store.meta.n_f {
        return Err(VpcError::DimensionMismatch {
            expected: store.meta.n_f,
            got: s_star.len(),
        });
    }
    let rows = subsample_rows(store, cfg.subsample);
    if rows.is_empty() {
        return Err(VpcError::EmptyStore);
    }
    let n = store.n();
    let p = store.p();
    let x = DMatrix::from_fn(rows.len(), n, |i, d| store.samples[rows[i]].x.to_vec()[d]);
    let y_rows: Vec<Vec<f64>> = rows.iter().map(|&r| store.samples[r].y()).collect();
    let y = DMatrix::from_fn(rows.len(), p, |i, j| y_rows[i][j]);
    let mut mean = vec![0.0; store.meta.q];
    mean.extend_from_slice(s_star.as_slice());

    let (x_mu, x_sd) = column_stats(&x, true);
    let resid = DMatrix::from_fn(y.nrows(), p, |i, j| y[(i, j)] - mean[j]);
    let (_, r_sd) = column_stats(&resid, false);

    let fit_idx: Vec<usize> = if rows.len() > cfg.max_fit_rows {
        (0..cfg.max_fit_rows)
            .map(|i| i * rows.len() / cfg.max_fit_rows)
            .collect()
    } else {
        (0..rows.len()).collect()
    };
    let xs = DMatrix::from_fn(fit_idx.len(), n, |i, d| {
        (x[(fit_idx[i], d)] - x_mu[d]) / x_sd[d]
    });
    let rs = DMatrix::from_fn(fit_idx.len(), p, |i, j| resid[(fit_idx[i], j)] / r_sd[j]);
    let objective = Nmll::new(&xs, rs);

    let (theta, _) = optimize_hyperparameters(&objective, cfg);
    let phi: Vec<f64> = (0..n)
        .map(|d| theta[d].exp() / (x_sd[d] * x_sd[d]))
        .collect();
    GprModel::with_hyperparameters(x, &y, mean, phi, theta[n].exp(), theta[n + 1].exp())
}

/// Starting point of the first restart: unit signal, small noise, length
/// scales comparable to the spread of standardized data.
fn initial_theta(n: usize) -> Vec<f64> {
    let mut t = vec![(1.0 / n as f64).ln(); n];
    t.push(0.0);
    t.push((1e-2f64).ln());
    t
}

fn theta_bounds(n: usize, phi_max: f64) -> Bounds {
    let mut lo = vec![(1e-4f64).ln(); n];
    let mut hi = vec![phi_max.ln(); n];
    lo.push((1e-3f64).ln());
    hi.push((1e3f64).ln());
    lo.push((1e-8f64).ln());
    hi.push(0.0);
    Bounds { lo, hi }
}

fn optimize_hyperparameters(objective: &Nmll, cfg: &GprFitConfig) -> (Vec<f64>, f64) {
    let n = objective.dim();
    let bounds = theta_bounds(n, cfg.max_inverse_length_scale);
    let solver = SolverConfig {
        optimality_tol: 1e-8,
        max_iterations: cfg.max_iterations,
        ..SolverConfig::default()
    };
    let starts: Vec<Vec<f64>> = (0..cfg.restarts.max(1))
        .map(|r| {
            let mut t = initial_theta(n);
            if r > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
                for v in t[..n].iter_mut() {
                    *v += rng.random_range(-2.3..2.3);
                }
                t[n] += rng.random_range(-1.2..1.2);
                t[n + 1] = rng.random_range((1e-5f64).ln()..(1e-1f64).ln());
            }
            t
        })
        .collect();
    let results: Vec<(Vec<f64>, f64)> = starts
        .par_iter()
        .map(|t0| {
            let res = minimize(objective, &bounds, t0, &solver);
            let f0 = objective.evaluate(t0).f;
            if res.cost.is_finite() && (res.cost <= f0 || !f0.is_finite()) {
                (res.solution, res.cost)
            } else {
                (t0.clone(), f0)
            }
        })
        .collect();
    results
        .into_iter()
        .filter(|(_, f)| f.is_finite())
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap_or_else(|| (initial_theta(n), f64::INFINITY))
}

fn fmt_row(vals: impl IntoIterator<Item = f64>) -> String {
    let mut s = String::new();
    for (i, v) in vals.into_iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&fmt_f64(v));
    }
    s
}

pub fn save_gpr(model: &GprModel, path: impl AsRef<Path>) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    let n = model.input_dim();
    let p = model.output_dim();
    writeln!(w, "# vpc-gpr v1, n={n}, p={p}, rows={}", model.rows())?;
    writeln!(w, "phi0_sq={}", fmt_f64(model.phi0_sq))?;
    writeln!(w, "phi_s={}", fmt_f64(model.phi_s))?;
    writeln!(w, "phi={}", fmt_row(model.phi.iter().copied()))?;
    writeln!(w, "mean={}", fmt_row(model.mean.iter().copied()))?;
    let mut cols: Vec<String> = (1..=n).map(|i| format!("x_{i}")).collect();
    cols.extend((1..=p).map(|i| format!("lambda_{i}")));
    writeln!(w, "{}", cols.join(","))?;
    let mut line = String::new();
    for i in 0..model.rows() {
        line.clear();
        let vals = model.x.row(i).iter().chain(model.lambda.row(i).iter()).copied().collect::<Vec<_>>();
        let _ = write!(line, "{}", fmt_row(vals));
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

fn bad(line: usize, msg: impl Into<String>) -> VpcError {
    VpcError::Format {
        line,
        msg: msg.into(),
    }
}

fn parse_floats(text: &str, line: usize) -> Result<Vec<f64>> {
    text.split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|e| bad(line, format!("bad number: {e}"))))
        .collect()
}

pub fn load_gpr(path: impl AsRef<Path>) -> Result<GprModel> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let lines: Vec<String> = reader.lines().collect::<std::io::Result<_>>()?;
    let header = lines.first().ok_or_else(|| bad(1, "empty file"))?;
    let body = header
        .strip_prefix("# vpc-gpr v1")
        .ok_or_else(|| bad(1, "missing `# vpc-gpr v1` header"))?;
    let mut dims = [None; 3];
    for part in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| bad(1, "malformed header"))?;
        let v: usize = v.parse().map_err(|_| bad(1, "bad header integer"))?;
        match k {
            "n" => dims[0] = Some(v),
            "p" => dims[1] = Some(v),
            "rows" => dims[2] = Some(v),
            _ => {}
        }
    }
    let [Some(n), Some(p), Some(rows)] = dims else {
        return Err(bad(1, "header needs n, p and rows"));
    };
    let field = |idx: usize, key: &str| -> Result<&str> {
        lines
            .get(idx)
            .and_then(|l| l.strip_prefix(key))
            .and_then(|l| l.strip_prefix('='))
            .ok_or_else(|| bad(idx + 1, format!("expected `{key}=`")))
    };
    let phi0_sq = parse_floats(field(1, "phi0_sq")?, 2)?[0];
    let phi_s = parse_floats(field(2, "phi_s")?, 3)?[0];
    let phi = parse_floats(field(3, "phi")?, 4)?;
    let mean = parse_floats(field(4, "mean")?, 5)?;
    if phi.len() != n || mean.len() != p {
        return Err(bad(4, "hyperparameter lengths do not match header"));
    }
    if lines.len() != 6 + rows {
        return Err(bad(lines.len(), format!("expected {rows} data rows")));
    }
    let mut x = DMatrix::zeros(rows, n);
    let mut lambda = DMatrix::zeros(rows, p);
    for i in 0..rows {
        let vals = parse_floats(&lines[6 + i], 7 + i)?;
        if vals.len() != n + p {
            return Err(bad(7 + i, format!("expected {} columns", n + p)));
        }
        for d in 0..n {
            x[(i, d)] = vals[d];
        }
        for j in 0..p {
            lambda[(i, j)] = vals[n + j];
        }
    }
    Ok(GprModel {
        phi,
        phi0_sq,
        phi_s,
        x,
        lambda,
        mean,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nmll_gradient_matches_finite_differences() {
        let x = DMatrix::from_fn(12, 3, |i, d| ((i * 7 + d * 3) % 11) as f64 / 5.0 - 1.0);
        let r = DMatrix::from_fn(12, 2, |i, j| (i as f64 * 0.7 + j as f64).sin());
        let obj = Nmll::new(&x, r);
        let theta = vec![-0.3, 0.2, -1.0, 0.1, -3.0];
        let (_, g) = obj.value_and_grad(&theta, true).unwrap();
        for k in 0..theta.len() {
            let h = 1e-6;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[k] += h;
            tm[k] -= h;
            let fd = (obj.value_and_grad(&tp, false).unwrap().0
                - obj.value_and_grad(&tm, false).unwrap().0)
                / (2.0 * h);
            assert!((fd - g[k]).abs() < 1e-5 * (1.0 + fd.abs()), "{k}: {fd} vs {}", g[k]);
        }
    }

    #[test]
    fn single_point_shrinks_toward_mean() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, 2.0]);
        let y = DMatrix::from_row_slice(1, 2, &[3.0, -1.0]);
        let mean = vec![0.5, 0.5];
        let m = GprModel::with_hyperparameters(x, &y, mean.clone(), vec![1.0, 1.0], 2.0, 0.5).unwrap();
        let yhat = m.predict(&[1.0, 2.0]);
        let resid = ((3.0f64 - 0.5).powi(2) + (-1.5f64).powi(2)).sqrt();
        let err = ((yhat[0] - 3.0).powi(2) + (yhat[1] + 1.0).powi(2)).sqrt();
        assert!(err <= resid * 0.5 / 2.5 + 1e-12);
    }

    #[test]
    fn far_query_returns_mean() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 1.0]);
        let y = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let m = GprModel::with_hyperparameters(x, &y, vec![0.0, 7.0], vec![1.0], 1.0, 1e-3).unwrap();
        let yhat = m.predict(&[1e3]);
        assert_eq!(yhat, vec![0.0, 7.0]);
    }
}
