//! Seeded strategy comparison on a shared list of start configurations.

use std::fmt::Write as _;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::camera::{CameraPose, FeatureVector};
use crate::controller::{run_episode, EpisodeResult, FailureReason, Strategy, StrategyKind};
use crate::error::{Result, VpcError};
use crate::memory::generate_initial_features;
use crate::scenario::{PoseSpec, Scenario};
use crate::solver::SolverConfig;

/// A strategy paired with the preview length it runs at.
#[derive(Debug, Clone)]
pub struct StrategySpec {
    pub strategy: Strategy,
    pub np: usize,
}

impl StrategySpec {
    pub fn new(strategy: Strategy, np: usize) -> Self {
        Self { strategy, np }
    }

    pub fn label(&self) -> String {
        format!("{}-np{}", self.strategy.name(), self.np)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub strategy: String,
    pub trial: usize,
    pub start_pose: PoseSpec,
    pub success: bool,
    pub failure_reason: FailureReason,
    pub steps: usize,
    /// Mean optimal cost per cycle.
    pub mean_cost: f64,
    pub final_error_px: f64,
    pub memory_steps: usize,
    /// seconds; wall clock, not reproducible
    pub mean_solve_time: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyStats {
    pub strategy: String,
    pub np: usize,
    /// percent
    pub r: f64,
    /// Mean wall-clock seconds per solver call.
    pub t_c: f64,
    /// Mean over trials of the per-cycle cost divided by `np`.
    pub l_bar: f64,
    pub trials: usize,
    pub seed: u64,
    pub solver_calls: usize,
    /// Reference figures for the matching configuration, when there is one.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceStats>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReferenceStats {
    pub r: f64,
    pub t_c: f64,
    pub l_bar: f64,
}

fn reference_for(kind: &StrategyKind, np: usize) -> Option<ReferenceStats> {
    let (r, t_c, l_bar) = match (kind, np) {
        (StrategyKind::PrevIteration, 3) => (80.0, 0.085, 49.3),
        (StrategyKind::PrevIteration, 30) => (83.0, 0.550, 52.9),
        (StrategyKind::Knn { .. }, 3) => (92.0, 0.074, 19.6),
        (StrategyKind::Gpr(_), 3) => (93.0, 0.080, 16.4),
        _ => return None,
    };
    Some(ReferenceStats { r, t_c, l_bar })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub scenario: String,
    pub seed: u64,
    pub trials: usize,
    /// Hash of the shared start list.
    pub start_hash: String,
    pub stats: Vec<StrategyStats>,
    pub records: Vec<TrialRecord>,
}

impl BenchmarkReport {
    pub fn stats_for(&self, label: &str) -> Option<&StrategyStats> {
        self.stats.iter().find(|s| s.strategy == label)
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    /// Plain-text stats table.
    pub fn table(&self) -> String {
        let mut t = format!(
            "{:<12} {:>7} {:>10} {:>10} {:>7}\n",
            "strategy", "r(%)", "t_c(s)", "l_bar", "trials"
        );
        for s in &self.stats {
            let _ = writeln!(
                t,
                "{:<12} {:>7.1} {:>10.2e} {:>10.3} {:>7}",
                s.strategy, s.r, s.t_c, s.l_bar, s.trials
            );
        }
        t
    }
}

/// Valid start poses drawn once from `seed` (or the scenario's fixed start).
pub fn draw_starts(scenario: &Scenario, trials: usize, seed: u64) -> Result<Vec<CameraPose>> {
    if trials == 0 {
        return Err(VpcError::EmptyTrialSet);
    }
    if let Some(p) = scenario.start_pose {
        return Ok(vec![p; trials]);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..trials)
        .map(|_| generate_initial_features(scenario, &mut rng, None).map(|s| s.pose))
        .collect()
}

pub fn start_list_hash(starts: &[CameraPose]) -> String {
    let mut h = Sha256::new();
    for p in starts {
        let q = p.orientation.quaternion();
        for v in [p.position.x, p.position.y, p.position.z, q.w, q.i, q.j, q.k] {
            h.update(v.to_le_bytes());
        }
    }
    hex::encode(&h.finalize()[..8])
}

fn record(
    label: &str,
    trial: usize,
    start: &CameraPose,
    ep: &EpisodeResult,
    s_star: &FeatureVector,
) -> TrialRecord {
    let mean = |v: &[f64]| {
        if v.is_empty() {
            0.0
        } else {
            v.iter().sum::<f64>() / v.len() as f64
        }
    };
    TrialRecord {
        strategy: label.to_string(),
        trial,
        start_pose: PoseSpec::from_pose(start),
        success: ep.success,
        failure_reason: ep.failure_reason,
        steps: ep.steps(),
        mean_cost: mean(&ep.costs),
        final_error_px: ep.final_error(s_star),
        memory_steps: ep.memory_active.iter().filter(|a| **a).count(),
        mean_solve_time: mean(&ep.solve_times),
    }
}

/// Runs every strategy on the same start list. `on_episode` sees each
/// finished episode (for trajectory dumps).
pub fn run_benchmark_with<F>(
    scenario: &Scenario,
    strategies: &[StrategySpec],
    trials: usize,
    seed: u64,
    on_episode: F,
) -> Result<BenchmarkReport>
where
    F: Fn(&str, usize, &EpisodeResult) -> Result<()> + Sync,
{
    let starts = draw_starts(scenario, trials, seed)?;
    let cfg = SolverConfig::online();
    let jobs: Vec<(usize, usize)> = (0..strategies.len())
        .flat_map(|s| (0..trials).map(move |t| (s, t)))
        .collect();
    let scenarios: Vec<Scenario> = strategies.iter().map(|s| scenario.with_horizon(s.np)).collect();
    let episodes: Vec<Result<(TrialRecord, f64, usize, f64)>> = jobs
        .par_iter()
        .map(|&(si, t)| {
            let spec = &strategies[si];
            let scen = &scenarios[si];
            let ep = run_episode(scen, &spec.strategy, &starts[t], scen.tolerances.time_limit_s, &cfg);
            let label = spec.label();
            on_episode(&label, t, &ep)?;
            let rec = record(&label, t, &starts[t], &ep, &scenario.s_star);
            let normalized = rec.mean_cost / spec.np as f64;
            Ok((rec, ep.solve_times.iter().sum(), ep.solve_times.len(), normalized))
        })
        .collect();
    let mut rows = Vec::with_capacity(episodes.len());
    for e in episodes {
        rows.push(e?);
    }

    let stats = strategies
        .iter()
        .enumerate()
        .map(|(si, spec)| {
            let mine: Vec<&(TrialRecord, f64, usize, f64)> = rows[si * trials..(si + 1) * trials].iter().collect();
            let successes = mine.iter().filter(|r| r.0.success).count();
            let calls: usize = mine.iter().map(|r| r.2).sum();
            let time: f64 = mine.iter().map(|r| r.1).sum();
            StrategyStats {
                strategy: spec.label(),
                np: spec.np,
                r: 100.0 * successes as f64 / trials as f64,
                t_c: if calls > 0 { time / calls as f64 } else { 0.0 },
                l_bar: mine.iter().map(|r| r.3).sum::<f64>() / trials as f64,
                trials,
                seed,
                solver_calls: calls,
                reference: reference_for(&spec.strategy.kind, spec.np),
            }
        })
        .collect();

    Ok(BenchmarkReport {
        scenario: scenario.hash(),
        seed,
        trials,
        start_hash: start_list_hash(&starts),
        stats,
        records: rows.into_iter().map(|r| r.0).collect(),
    })
}

pub fn run_benchmark(
    scenario: &Scenario,
    strategies: &[StrategySpec],
    trials: usize,
    seed: u64,
) -> Result<BenchmarkReport> {
    run_benchmark_with(scenario, strategies, trials, seed, |_, _, _| Ok(()))
}

/// Per-cycle CSV of an episode; the final measurement row has no command.
pub fn write_trajectory<W: Write>(ep: &EpisodeResult, mut w: W) -> Result<()> {
    let n_f = ep.features.first().map_or(0, |s| s.len());
    let mut cols = vec!["t".to_string()];
    cols.extend((1..=n_f).map(|i| format!("s_{i}")));
    cols.extend((1..=6).map(|i| format!("v_{i}")));
    cols.extend(["cost", "solve_time", "memory_active"].map(String::from));
    cols.extend((1..=n_f).map(|i| format!("waypoint_{i}")));
    writeln!(w, "{}", cols.join(","))?;
    for (k, s) in ep.features.iter().enumerate() {
        let mut line = format!("{}", k as f64 * ep.ts);
        for v in s.iter() {
            let _ = write!(line, ",{v}");
        }
        match ep.commands.get(k) {
            Some(v) => {
                for c in v.to_vector().iter() {
                    let _ = write!(line, ",{c}");
                }
                let _ = write!(
                    line,
                    ",{},{},{}",
                    ep.costs[k],
                    ep.solve_times[k],
                    u8::from(ep.memory_active[k])
                );
                match &ep.waypoints[k] {
                    Some(wp) => wp.iter().for_each(|c| {
                        let _ = write!(line, ",{c}");
                    }),
                    None => line.push_str(&",".repeat(n_f)),
                }
            }
            None => line.push_str(&",".repeat(9 + n_f)),
        }
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn emit_trajectory(ep: &EpisodeResult, path: impl AsRef<Path>) -> Result<()> {
    let file = std::fs::File::create(path)?;
    write_trajectory(ep, std::io::BufWriter::new(file))
}
