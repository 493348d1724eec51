//! Memory-of-motion samples and their CSV persistence.

use std::fmt::Write as _;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::camera::{FeatureVector, Twist};
use crate::error::{Result, VpcError};

/// Regression input: features, pattern area and orientation.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualConfig {
    pub s: FeatureVector,
    /// px^2
    pub area: f64,
    /// radians in (-pi, pi]
    pub angle: f64,
}

impl VisualConfig {
    pub fn from_features(s: &FeatureVector) -> Self {
        let (area, angle) = super::area_angle_or_fallback(s);
        Self {
            s: s.clone(),
            area,
            angle,
        }
    }

    pub fn dim(&self) -> usize {
        self.s.len() + 2
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.s.as_slice().to_vec();
        v.push(self.area);
        v.push(self.angle);
        v
    }

    pub fn from_slice(x: &[f64]) -> Self {
        let n_f = x.len() - 2;
        Self {
            s: FeatureVector::from_vec(x[..n_f].to_vec()),
            area: x[n_f],
            angle: x[n_f + 1],
        }
    }
}

/// One stored `(x, y)` pair with its trajectory coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct MemorySample {
    pub x: VisualConfig,
    pub v: Twist,
    pub waypoint: FeatureVector,
    pub traj_id: usize,
    pub step_index: usize,
}

impl MemorySample {
    /// Regression output `(v, waypoint)`.
    pub fn y(&self) -> Vec<f64> {
        let mut y = self.v.to_vector().as_slice().to_vec();
        y.extend_from_slice(self.waypoint.as_slice());
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryMeta {
    pub n_f: usize,
    pub q: usize,
    pub n_s: usize,
    pub np: usize,
    pub seed: u64,
    pub scenario: String,
    /// Additional `key=value` header fields, kept in order.
    pub extra: Vec<(String, String)>,
}

impl MemoryMeta {
    pub fn get_extra(&self, key: &str) -> Option<&str> {
        self.extra
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MemoryStore {
    pub meta: MemoryMeta,
    pub samples: Vec<MemorySample>,
}

impl MemoryStore {
    pub fn new(meta: MemoryMeta) -> Self {
        Self {
            meta,
            samples: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Input dimension `n = n_f + 2`.
    pub fn n(&self) -> usize {
        self.meta.n_f + 2
    }

    /// Output dimension `p = q + n_f`.
    pub fn p(&self) -> usize {
        self.meta.q + self.meta.n_f
    }

    pub fn trajectory_count(&self) -> usize {
        let mut ids: Vec<usize> = self.samples.iter().map(|s| s.traj_id).collect();
        ids.dedup();
        ids.len()
    }

    /// Consecutive sample slices sharing a trajectory id.
    pub fn trajectories(&self) -> Vec<&[MemorySample]> {
        self.samples
            .chunk_by(|a, b| a.traj_id == b.traj_id)
            .collect()
    }

    pub fn x_matrix(&self) -> DMatrix<f64> {
        let n = self.n();
        DMatrix::from_fn(self.len(), n, |i, j| {
            let s = &self.samples[i];
            if j < self.meta.n_f {
                s.x.s[j]
            } else if j == self.meta.n_f {
                s.x.area
            } else {
                s.x.angle
            }
        })
    }

    pub fn y_matrix(&self) -> DMatrix<f64> {
        let rows: Vec<Vec<f64>> = self.samples.iter().map(|s| s.y()).collect();
        DMatrix::from_fn(self.len(), self.p(), |i, j| rows[i][j])
    }

    /// Appends one finished trajectory; `traj_id` is assigned here.
    pub fn push_trajectory(
        &mut self,
        features: &[FeatureVector],
        commands: &[Twist],
        waypoints: &[FeatureVector],
    ) -> usize {
        let traj_id = self.samples.last().map_or(0, |s| s.traj_id + 1);
        for (j, s) in features.iter().enumerate() {
            self.samples.push(MemorySample {
                x: VisualConfig::from_features(s),
                v: commands[j],
                waypoint: waypoints[j].clone(),
                traj_id,
                step_index: j,
            });
        }
        traj_id
    }
}

fn header_line(meta: &MemoryMeta) -> String {
    let mut h = format!(
        "# vpc-memory v1, n_f={}, q={}, n_s={}, Np={}, seed={}, scenario={}",
        meta.n_f, meta.q, meta.n_s, meta.np, meta.seed, meta.scenario
    );
    for (k, v) in &meta.extra {
        let _ = write!(h, ", {k}={v}");
    }
    h
}

fn column_line(n_f: usize, q: usize) -> String {
    let mut cols = vec!["traj".to_string(), "step".to_string()];
    cols.extend((1..=n_f).map(|i| format!("s_{i}")));
    cols.push("area".into());
    cols.push("angle".into());
    cols.extend((1..=q).map(|i| format!("v_{i}")));
    cols.extend((1..=n_f).map(|i| format!("w_{i}")));
    cols.join(",")
}

/// 17 significant digits, enough to restore every `f64` exactly.
pub(crate) fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

pub fn write_memory<W: Write>(store: &MemoryStore, mut w: W) -> Result<()> {
    writeln!(w, "{}", header_line(&store.meta))?;
    writeln!(w, "{}", column_line(store.meta.n_f, store.meta.q))?;
    let mut line = String::new();
    for s in &store.samples {
        line.clear();
        let _ = write!(line, "{},{}", s.traj_id, s.step_index);
        for v in s.x.to_vec().into_iter().chain(s.y()) {
            line.push(',');
            line.push_str(&fmt_f64(v));
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_memory(store: &MemoryStore, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_memory(store, std::io::BufWriter::new(file))
}

fn format_err(line: usize, msg: impl Into<String>) -> VpcError {
    VpcError::Format {
        line,
        msg: msg.into(),
    }
}

fn parse_header(line: &str) -> Result<MemoryMeta> {
    let body = line
        .strip_prefix("# vpc-memory v1")
        .ok_or_else(|| format_err(1, "missing `# vpc-memory v1` header"))?;
    let mut fields = Vec::new();
    for part in body.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| format_err(1, format!("malformed header field `{part}`")))?;
        fields.push((k.to_string(), v.to_string()));
    }
    let take = |key: &str| -> Result<String> {
        fields
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.clone())
            .ok_or_else(|| format_err(1, format!("header lacks `{key}`")))
    };
    let num = |key: &str| -> Result<u64> {
        take(key)?
            .parse()
            .map_err(|_| format_err(1, format!("header field `{key}` is not an integer")))
    };
    let known = ["n_f", "q", "n_s", "Np", "seed", "scenario"];
    Ok(MemoryMeta {
        n_f: num("n_f")? as usize,
        q: num("q")? as usize,
        n_s: num("n_s")? as usize,
        np: num("Np")? as usize,
        seed: num("seed")?,
        scenario: take("scenario")?,
        extra: fields
            .iter()
            .filter(|(k, _)| !known.contains(&k.as_str()))
            .cloned()
            .collect(),
    })
}

pub fn read_memory<R: BufRead>(r: R) -> Result<MemoryStore> {
    let mut lines = r.lines();
    let first = lines
        .next()
        .ok_or_else(|| format_err(1, "empty file"))??;
    let meta = parse_header(first.trim_end())?;
    if meta.n_f == 0 || meta.n_f % 2 != 0 {
        return Err(format_err(1, "n_f must be a positive even number"));
    }
    let second = lines
        .next()
        .ok_or_else(|| format_err(2, "missing column header"))??;
    if second.trim_end() != column_line(meta.n_f, meta.q) {
        return Err(format_err(2, "column header does not match dimensions"));
    }
    let n = meta.n_f + 2;
    let p = meta.q + meta.n_f;
    let width = 2 + n + p;
    let mut samples: Vec<MemorySample> = Vec::new();
    for (idx, line) in lines.enumerate() {
        let lineno = idx + 3;
        let line = line?;
        let line = line.trim_end();
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != width {
            return Err(format_err(
                lineno,
                format!("expected {width} columns, found {}", parts.len()),
            ));
        }
        let traj_id: usize = parts[0]
            .parse()
            .map_err(|_| format_err(lineno, "bad trajectory id"))?;
        let step_index: usize = parts[1]
            .parse()
            .map_err(|_| format_err(lineno, "bad step index"))?;
        let vals = parts[2..]
            .iter()
            .map(|t| t.parse::<f64>())
            .collect::<std::result::Result<Vec<f64>, _>>()
            .map_err(|e| format_err(lineno, format!("bad number: {e}")))?;
        if let Some(prev) = samples.last() {
            if (traj_id, step_index) <= (prev.traj_id, prev.step_index) {
                return Err(format_err(lineno, "rows are not sorted by (traj, step)"));
            }
        }
        samples.push(MemorySample {
            x: VisualConfig::from_slice(&vals[..n]),
            v: Twist::from_slice(&vals[n..n + meta.q]),
            waypoint: FeatureVector::from_vec(vals[n + meta.q..].to_vec()),
            traj_id,
            step_index,
        });
    }
    Ok(MemoryStore { meta, samples })
}

pub fn load_memory(path: impl AsRef<Path>) -> Result<MemoryStore> {
    let file = std::fs::File::open(path)?;
    read_memory(BufReader::new(file))
}
