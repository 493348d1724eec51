use std::time::Instant;

use super::{QueryResult, Regressor};
use crate::error::{Result, VpcError};
use crate::memory::{MemoryStore, VisualConfig};

/// Memory inputs standardized per column, rows in `(traj, step)` order.
#[derive(Debug, Clone)]
pub struct KnnIndex {
    mean: Vec<f64>,
    scale: Vec<f64>,
    /// Row-major, `rows x n`.
    xs: Vec<f64>,
    /// Row-major, `rows x p`.
    ys: Vec<f64>,
    n: usize,
    p: usize,
    rows: usize,
}

impl KnnIndex {
    pub fn new(store: &MemoryStore) -> Result<Self> {
        if store.is_empty() {
            return Err(VpcError::EmptyStore);
        }
        let mut order: Vec<usize> = (0..store.len()).collect();
        order.sort_by_key(|&i| (store.samples[i].traj_id, store.samples[i].step_index));

        let raw: Vec<Vec<f64>> = order.iter().map(|&i| store.samples[i].x.to_vec()).collect();
        let n = raw[0].len();
        let rows = raw.len();
        let mean: Vec<f64> = (0..n)
            .map(|d| raw.iter().map(|r| r[d]).sum::<f64>() / rows as f64)
            .collect();
        let scale: Vec<f64> = (0..n)
            .map(|d| {
                let var = raw.iter().map(|r| (r[d] - mean[d]).powi(2)).sum::<f64>() / rows as f64;
                let sd = var.sqrt();
                if sd > 0.0 && sd.is_finite() {
                    sd
                } else {
                    1.0
                }
            })
            .collect();
        let xs = raw
            .iter()
            .flat_map(|r| (0..n).map(|d| (r[d] - mean[d]) / scale[d]).collect::<Vec<_>>())
            .collect();
        let ys: Vec<f64> = order.iter().flat_map(|&i| store.samples[i].y()).collect();
        Ok(Self {
            mean,
            scale,
            xs,
            ys,
            n,
            p: store.p(),
            rows,
        })
    }

    pub fn len(&self) -> usize {
        self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows == 0
    }

    pub fn output_dim(&self) -> usize {
        self.p
    }

    /// Mean output of the `k` nearest stored inputs; ties go to the earlier row.
    pub fn query(&self, x_hat: &[f64], k: usize) -> Result<QueryResult> {
        let start = Instant::now();
        if x_hat.len() != self.n {
            return Err(VpcError::DimensionMismatch {
                expected: self.n,
                got: x_hat.len(),
            });
        }
        let k = k.clamp(1, self.rows);
        let z: Vec<f64> = x_hat
            .iter()
            .zip(self.mean.iter().zip(&self.scale))
            .map(|(x, (m, s))| (x - m) / s)
            .collect();
        // sorted ascending by (distance, row)
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for (row, xr) in self.xs.chunks_exact(self.n).enumerate() {
            let d: f64 = xr.iter().zip(&z).map(|(a, b)| (a - b) * (a - b)).sum();
            if best.len() == k && d >= best[k - 1].0 {
                continue;
            }
            let pos = best.partition_point(|(bd, _)| *bd <= d);
            best.insert(pos, (d, row));
            best.truncate(k);
        }
        let y_hat = if k == 1 {
            let r = best[0].1;
            self.ys[r * self.p..(r + 1) * self.p].to_vec()
        } else {
            let mut acc = vec![0.0; self.p];
            for &(_, r) in &best {
                for (a, y) in acc.iter_mut().zip(&self.ys[r * self.p..(r + 1) * self.p]) {
                    *a += y;
                }
            }
            acc.iter_mut().for_each(|a| *a /= k as f64);
            acc
        };
        Ok(QueryResult {
            y_hat,
            regressor: Regressor::Knn,
            query_time: start.elapsed().as_secs_f64(),
        })
    }
}

/// One-shot query; builds the index on the fly.
pub fn knn_query(store: &MemoryStore, x_hat: &VisualConfig, k: usize) -> Result<QueryResult> {
    KnnIndex::new(store)?.query(&x_hat.to_vec(), k)
}
