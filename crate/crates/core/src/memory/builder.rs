//! Off-line generation of successful VPC trajectories.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::gmm::{fit_failure_gmm, GmmModel};
use super::store::{MemoryMeta, MemoryStore, VisualConfig};
use super::compute_way_point;
use crate::camera::{integrate_twist, measure, CameraPose, FeatureVector, Twist};
use crate::controller::{solve_vpc, DEFAULT_TRIGGER_PX};
use crate::error::{Result, VpcError};
use crate::model::{max_violation_px, min_distance_to_regions, ControlSequence};
use crate::regress::{assemble_warm_start, extract_way_point, KnnIndex};
use crate::scenario::Scenario;
use crate::solver::SolverConfig;

/// Number of fixed fallback directions (both signs of each twist axis).
pub const PREDEFINED_DIRECTIONS: usize = 12;
pub const RANDOM_DIRECTIONS: usize = 10;

#[derive(Debug, Clone)]
pub struct StartSample {
    pub features: FeatureVector,
    pub pose: CameraPose,
    /// Offsets from the goal pose, `(dx, dy, dz, rx, ry, rz)`.
    pub params: [f64; 6],
}

fn in_box(p: &[f64], scenario: &Scenario) -> bool {
    let b = &scenario.pose_box;
    p.iter()
        .zip(b.lo.iter().zip(&b.hi))
        .all(|(v, (lo, hi))| v >= lo && v <= hi)
}

fn start_is_valid(s: &FeatureVector, scenario: &Scenario) -> bool {
    s.points().all(|(u, v)| {
        scenario.keep_in.contains(u, v) && scenario.keepouts.iter().all(|e| e.residual(u, v) >= 0.0)
    })
}

/// Draws a start pose (uniform over the pose box, or from `bias` with its
/// mixing probability) whose features are visible and outside all keep-outs.
pub fn generate_initial_features<R: Rng + ?Sized>(
    scenario: &Scenario,
    rng: &mut R,
    bias: Option<(&GmmModel, f64)>,
) -> Result<StartSample> {
    let b = &scenario.pose_box;
    for _ in 0..scenario.max_rejects {
        let params: [f64; 6] = match bias {
            Some((gmm, mix)) if rng.random::<f64>() < mix => {
                let p = gmm.sample(rng);
                if !in_box(&p, scenario) {
                    continue;
                }
                [p[0], p[1], p[2], p[3], p[4], p[5]]
            }
            _ => std::array::from_fn(|i| {
                if b.hi[i] > b.lo[i] {
                    rng.random_range(b.lo[i]..=b.hi[i])
                } else {
                    b.lo[i]
                }
            }),
        };
        let pose = scenario.pose_from_params(&params);
        let Ok(features) = measure(scenario, &pose) else {
            continue;
        };
        if start_is_valid(&features, scenario) {
            return Ok(StartSample {
                features,
                pose,
                params,
            });
        }
    }
    Err(VpcError::SamplingExhausted(scenario.max_rejects))
}

/// Memory consultation inside [`find_solution`].
#[derive(Clone, Copy)]
pub struct MemoryAssist<'a> {
    pub index: &'a KnnIndex,
    pub n_t: usize,
    pub n_th: usize,
    pub k: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FindPhase {
    Memory,
    Previous,
    Predefined(usize),
    Random(usize),
    Failed,
}

#[derive(Debug, Clone)]
pub struct FindOutcome {
    pub v: Twist,
    pub success: bool,
    pub solver_calls: usize,
    pub phase: FindPhase,
}

/// Tries warm starts in a fixed order until a solve succeeds: memory (when
/// close to a keep-out and the store is dense enough), the previous solution,
/// the twelve signed axis directions, then seeded random twists.
///
/// `solve(target, warm)` returns the first control and the solver's success
/// flag.
#[allow(clippy::too_many_arguments)]
pub fn find_solution<R, S>(
    s_l: &FeatureVector,
    s_star: &FeatureVector,
    v_prev: &Twist,
    assist: Option<MemoryAssist<'_>>,
    is_close: bool,
    v_max: &[f64; 6],
    rng: &mut R,
    mut solve: S,
) -> FindOutcome
where
    R: Rng + ?Sized,
    S: FnMut(&FeatureVector, &Twist) -> (Twist, bool),
{
    let mut calls = 0;
    let mut best_effort = None;
    let mut attempt = |target: &FeatureVector, warm: &Twist, calls: &mut usize| {
        *calls += 1;
        let (v, ok) = solve(target, warm);
        if best_effort.is_none() {
            best_effort = Some(v);
        }
        (v, ok)
    };

    let memory = assist.filter(|a| is_close && a.n_t > a.n_th);
    let first = match memory.and_then(|a| {
        let y = a.index.query(&VisualConfig::from_features(s_l).to_vec(), a.k).ok()?;
        let warm = assemble_warm_start(&y.y_hat, Twist::DIM, 2, 1).ok()?.first();
        let way = extract_way_point(&y.y_hat, Twist::DIM, s_l.len()).ok()?;
        Some((warm, way))
    }) {
        Some((warm, way)) => (attempt(&way, &warm, &mut calls), FindPhase::Memory),
        None => (attempt(s_star, v_prev, &mut calls), FindPhase::Previous),
    };
    if first.0 .1 {
        return FindOutcome {
            v: first.0 .0,
            success: true,
            solver_calls: calls,
            phase: first.1,
        };
    }

    for i in 0..PREDEFINED_DIRECTIONS {
        let axis = i / 2;
        let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
        let mut w = [0.0; 6];
        w[axis] = sign * 0.5 * v_max[axis];
        let (v, ok) = attempt(s_star, &Twist::from_slice(&w), &mut calls);
        if ok {
            return FindOutcome {
                v,
                success: true,
                solver_calls: calls,
                phase: FindPhase::Predefined(i),
            };
        }
    }
    for i in 0..RANDOM_DIRECTIONS {
        let w: [f64; 6] = std::array::from_fn(|a| rng.random_range(-v_max[a]..=v_max[a]));
        let (v, ok) = attempt(s_star, &Twist::from_slice(&w), &mut calls);
        if ok {
            return FindOutcome {
                v,
                success: true,
                solver_calls: calls,
                phase: FindPhase::Random(i),
            };
        }
    }
    FindOutcome {
        v: best_effort.unwrap_or_default(),
        success: false,
        solver_calls: calls,
        phase: FindPhase::Failed,
    }
}

#[derive(Debug, Clone)]
pub struct BuildConfig {
    pub trajectories: usize,
    pub np: usize,
    pub n_s: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    /// Trajectories required before memory assists the search.
    pub n_th: usize,
    pub trigger_distance: f64,
    pub knn_k: usize,
    pub gmm_components: usize,
    /// Failures between GMM refits.
    pub refit_every: usize,
    pub bias_mix: f64,
    /// Attempts run in parallel between commits.
    pub batch_size: usize,
    /// Give up after this many attempts; defaults to `50 * trajectories`.
    pub max_attempts: Option<usize>,
}

impl BuildConfig {
    pub fn new(trajectories: usize, seed: u64) -> Self {
        Self {
            trajectories,
            np: 10,
            n_s: 5,
            seed,
            solver: SolverConfig::offline(),
            n_th: 50,
            trigger_distance: DEFAULT_TRIGGER_PX,
            knn_k: 1,
            gmm_components: 3,
            refit_every: 25,
            bias_mix: 0.5,
            batch_size: 16,
            max_attempts: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BuildOutcome {
    pub store: MemoryStore,
    /// Start pose of every committed trajectory, in store order.
    pub start_poses: Vec<CameraPose>,
    pub attempts: usize,
    pub failed_starts: Vec<[f64; 6]>,
    /// False when `max_attempts` ran out first.
    pub complete: bool,
}

struct Rollout {
    start: StartSample,
    features: Vec<FeatureVector>,
    commands: Vec<Twist>,
    success: bool,
}

fn attempt_rng(seed: u64, attempt: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(attempt as u64 + 1);
    rng
}

fn roll(
    scenario: &Scenario,
    start: StartSample,
    index: Option<&KnnIndex>,
    n_t: usize,
    cfg: &BuildConfig,
    rng: &mut ChaCha8Rng,
) -> Rollout {
    let regions = scenario.regions();
    let keepouts = scenario.keepout_regions();
    let tol = scenario.tolerances;
    let max_steps = (tol.time_limit_s / scenario.ts).round() as usize;
    let mut pose = start.pose;
    let mut features = Vec::new();
    let mut commands = Vec::new();
    let mut v_prev = Twist::zero();
    let mut success = false;
    while let Ok(s) = measure(scenario, &pose) {
        features.push(s.clone());
        if max_violation_px(&s, &regions) > tol.violation_px {
            break;
        }
        if s.rms_error(&scenario.s_star) < tol.conv_px {
            success = true;
            break;
        }
        if commands.len() >= max_steps {
            break;
        }
        let assist = index.map(|index| MemoryAssist {
            index,
            n_t,
            n_th: cfg.n_th,
            k: cfg.knn_k,
        });
        let close = min_distance_to_regions(&s, &keepouts) < cfg.trigger_distance;
        let found = find_solution(
            &s,
            &scenario.s_star,
            &v_prev,
            assist,
            close,
            &scenario.v_max,
            rng,
            |target, warm| {
                let w = ControlSequence::constant(*warm, scenario.nc, scenario.np);
                let (sol, res) = solve_vpc(scenario, &s, target, &w, &cfg.solver);
                (sol.first(), res.success)
            },
        );
        if !found.success {
            break;
        }
        commands.push(found.v);
        v_prev = found.v;
        pose = integrate_twist(&pose, &found.v, scenario.ts);
    }
    Rollout {
        start,
        features,
        commands,
        success,
    }
}

/// Builds a memory of `cfg.trajectories` successful trajectories.
pub fn build_memory(scenario: &Scenario, cfg: &BuildConfig) -> Result<BuildOutcome> {
    build_memory_with(scenario, cfg, None, |_, _| Ok(()))
}

/// Like [`build_memory`], optionally resuming from a partial store, calling
/// `checkpoint(store, attempts)` after every committed batch.
pub fn build_memory_with<F>(
    scenario: &Scenario,
    cfg: &BuildConfig,
    resume: Option<MemoryStore>,
    mut checkpoint: F,
) -> Result<BuildOutcome>
where
    F: FnMut(&MemoryStore, usize) -> Result<()>,
{
    if cfg.trajectories == 0 {
        return Err(VpcError::Validation("need at least one trajectory".into()));
    }
    let scen = scenario.with_horizon(cfg.np);
    let meta = MemoryMeta {
        n_f: scen.n_f(),
        q: Twist::DIM,
        n_s: cfg.n_s,
        np: cfg.np,
        seed: cfg.seed,
        scenario: scenario.hash(),
        extra: Vec::new(),
    };
    let (mut store, mut attempt) = match resume {
        Some(store) => {
            if store.meta.n_f != meta.n_f
                || store.meta.scenario != meta.scenario
                || store.meta.np != meta.np
                || store.meta.n_s != meta.n_s
                || store.meta.seed != meta.seed
            {
                return Err(VpcError::Validation(
                    "partial memory was built with different settings".into(),
                ));
            }
            let attempt = store
                .meta
                .get_extra("attempt")
                .and_then(|a| a.parse().ok())
                .unwrap_or(0);
            (store, attempt)
        }
        None => (MemoryStore::new(meta), 0),
    };
    let max_attempts = cfg.max_attempts.unwrap_or(50 * cfg.trajectories);
    let mut n_t = store.trajectory_count();
    let mut start_poses = Vec::new();
    let mut failed: Vec<[f64; 6]> = Vec::new();
    let mut since_refit = 0;
    let mut gmm: Option<GmmModel> = None;

    while n_t < cfg.trajectories && attempt < max_attempts {
        let index = if n_t > cfg.n_th {
            Some(KnnIndex::new(&store)?)
        } else {
            None
        };
        let batch: Vec<usize> = (attempt..(attempt + cfg.batch_size.max(1)).min(max_attempts)).collect();
        let results: Vec<Result<Rollout>> = batch
            .par_iter()
            .map(|&a| {
                let mut rng = attempt_rng(cfg.seed, a);
                let bias = gmm.as_ref().map(|g| (g, cfg.bias_mix));
                let start = generate_initial_features(&scen, &mut rng, bias)?;
                Ok(roll(&scen, start, index.as_ref(), n_t, cfg, &mut rng))
            })
            .collect();
        attempt += batch.len();

        for r in results {
            let r = r?;
            if r.success {
                if n_t >= cfg.trajectories {
                    continue;
                }
                let last = r.features.len() - 1;
                let waypoints: Vec<FeatureVector> = (0..=last)
                    .map(|j| compute_way_point(&r.features, j, cfg.n_s, &scen.s_star))
                    .collect();
                let mut commands = r.commands.clone();
                commands.push(Twist::zero());
                store.push_trajectory(&r.features, &commands, &waypoints);
                start_poses.push(r.start.pose);
                n_t += 1;
            } else {
                failed.push(r.start.params);
                since_refit += 1;
                if since_refit >= cfg.refit_every {
                    since_refit = 0;
                    let data: Vec<Vec<f64>> = failed.iter().map(|p| p.to_vec()).collect();
                    let mut rng = attempt_rng(cfg.seed ^ 0x474d_4d00, failed.len());
                    gmm = fit_failure_gmm(&data, cfg.gmm_components, &mut rng);
                }
            }
        }
        store.meta.extra = vec![("attempt".into(), attempt.to_string())];
        checkpoint(&store, attempt)?;
    }
    store.meta.extra.clear();
    Ok(BuildOutcome {
        complete: n_t >= cfg.trajectories,
        store,
        start_poses,
        attempts: attempt,
        failed_starts: failed,
    })
}
