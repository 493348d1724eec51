//! Diagonal Gaussian mixture over start-pose parameters, used to bias
//! sampling toward regions where trajectories failed.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

const EM_ITERATIONS: usize = 200;
const KMEANS_ITERATIONS: usize = 50;
const EM_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct GmmModel {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    /// Diagonal variances, one row per component.
    pub variances: Vec<Vec<f64>>,
}

impl GmmModel {
    pub fn dim(&self) -> usize {
        self.means.first().map_or(0, Vec::len)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let mut r: f64 = rng.random();
        let mut k = self.weights.len() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            if r < *w {
                k = i;
                break;
            }
            r -= w;
        }
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect()
    }

    fn component_log_density(&self, k: usize, x: &[f64]) -> f64 {
        let ln_2pi = (2.0 * std::f64::consts::PI).ln();
        self.means[k]
            .iter()
            .zip(&self.variances[k])
            .zip(x)
            .map(|((m, v), xi)| -0.5 * (ln_2pi + v.ln() + (xi - m).powi(2) / v))
            .sum()
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let terms: Vec<f64> = (0..self.weights.len())
            .map(|k| self.weights[k].ln() + self.component_log_density(k, x))
            .collect();
        log_sum_exp(&terms)
    }
}

fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum()
}

/// k-means++ seeding followed by Lloyd iterations.
fn kmeans<R: Rng + ?Sized>(data: &[Vec<f64>], k: usize, rng: &mut R) -> Vec<usize> {
    let mut centers = vec![data[rng.random_range(0..data.len())].clone()];
    while centers.len() < k {
        let d: Vec<f64> = data
            .iter()
            .map(|x| {
                centers
                    .iter()
                    .map(|c| sq_dist(x, c))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let total: f64 = d.iter().sum();
        let idx = if total > 0.0 {
            let mut r = rng.random::<f64>() * total;
            d.iter()
                .position(|di| {
                    r -= di;
                    r < 0.0
                })
                .unwrap_or(data.len() - 1)
        } else {
            rng.random_range(0..data.len())
        };
        centers.push(data[idx].clone());
    }
    let mut assign = vec![0; data.len()];
    for _ in 0..KMEANS_ITERATIONS {
        let mut changed = false;
        for (a, x) in assign.iter_mut().zip(data) {
            let best = (0..k)
                .min_by(|&i, &j| sq_dist(x, &centers[i]).total_cmp(&sq_dist(x, &centers[j])))
                .unwrap();
            if *a != best {
                *a = best;
                changed = true;
            }
        }
        for (c, center) in centers.iter_mut().enumerate() {
            let members: Vec<&Vec<f64>> = data
                .iter()
                .zip(&assign)
                .filter(|(_, a)| **a == c)
                .map(|(x, _)| x)
                .collect();
            if members.is_empty() {
                continue;
            }
            for (d, cd) in center.iter_mut().enumerate() {
                *cd = members.iter().map(|x| x[d]).sum::<f64>() / members.len() as f64;
            }
        }
        if !changed {
            break;
        }
    }
    assign
}

/// EM fit with diagonal covariances; `None` with fewer than `3 k` samples.
pub fn fit_failure_gmm<R: Rng + ?Sized>(
    samples: &[Vec<f64>],
    k: usize,
    rng: &mut R,
) -> Option<GmmModel> {
    if k == 0 || samples.len() < 3 * k {
        return None;
    }
    let n = samples.len();
    let dim = samples[0].len();

    let global_mean: Vec<f64> = (0..dim)
        .map(|d| samples.iter().map(|x| x[d]).sum::<f64>() / n as f64)
        .collect();
    let floor: Vec<f64> = (0..dim)
        .map(|d| {
            let var = samples
                .iter()
                .map(|x| (x[d] - global_mean[d]).powi(2))
                .sum::<f64>()
                / n as f64;
            1e-6 * var + 1e-12
        })
        .collect();

    let assign = kmeans(samples, k, rng);
    let mut resp = vec![vec![0.0; k]; n];
    for (r, a) in resp.iter_mut().zip(&assign) {
        r[*a] = 1.0;
    }

    let mut model = GmmModel {
        weights: vec![1.0 / k as f64; k],
        means: vec![vec![0.0; dim]; k],
        variances: vec![vec![1.0; dim]; k],
    };
    let mut prev_ll = f64::NEG_INFINITY;
    for _ in 0..EM_ITERATIONS {
        // M step
        for c in 0..k {
            let nk: f64 = resp.iter().map(|r| r[c]).sum();
            if nk < 1e-12 {
                model.weights[c] = 1e-12;
                model.means[c] = global_mean.clone();
                model.variances[c] = floor.iter().map(|f| f * 1e6).collect();
                continue;
            }
            model.weights[c] = nk / n as f64;
            for d in 0..dim {
                let m = resp.iter().zip(samples).map(|(r, x)| r[c] * x[d]).sum::<f64>() / nk;
                let v = resp
                    .iter()
                    .zip(samples)
                    .map(|(r, x)| r[c] * (x[d] - m).powi(2))
                    .sum::<f64>()
                    / nk;
                model.means[c][d] = m;
                model.variances[c][d] = v.max(floor[d]);
            }
        }
        let total: f64 = model.weights.iter().sum();
        model.weights.iter_mut().for_each(|w| *w /= total);

        // E step
        let mut ll = 0.0;
        for (r, x) in resp.iter_mut().zip(samples) {
            let terms: Vec<f64> = (0..k)
                .map(|c| model.weights[c].ln() + model.component_log_density(c, x))
                .collect();
            let lse = log_sum_exp(&terms);
            ll += lse;
            for (rc, t) in r.iter_mut().zip(&terms) {
                *rc = (t - lse).exp();
            }
        }
        if (ll - prev_ll).abs() <= EM_TOL * ll.abs().max(1.0) {
            break;
        }
        prev_ll = ll;
    }
    Some(model)
}
