//! Receding-horizon visual predictive control loop with optional
//! memory-of-motion warm starts near visibility constraints.

use std::sync::Arc;

use nalgebra::DVector;

use crate::camera::{feature_depths, integrate_twist, measure, CameraPose, FeatureVector, Twist, DEPTH_EPSILON};
use crate::memory::VisualConfig;
use crate::model::{max_violation_px, min_distance_to_regions, ControlSequence, PredictionContext, VpcProblem};
use crate::regress::{assemble_warm_start, extract_way_point, GprModel, KnnIndex};
use crate::scenario::Scenario;
use crate::solver::{minimize, SolverConfig, SolverResult, SolverStatus};

/// Pixel distance to the nearest keep-out under which memory is consulted.
pub const DEFAULT_TRIGGER_PX: f64 = 20.0;

#[derive(Debug, Clone)]
pub enum StrategyKind {
    PrevIteration,
    Knn { index: Arc<KnnIndex>, k: usize },
    Gpr(Arc<GprModel>),
}

#[derive(Debug, Clone)]
pub struct Strategy {
    pub kind: StrategyKind,
    pub trigger_distance: f64,
}

impl Strategy {
    pub fn prev_iteration() -> Self {
        Self {
            kind: StrategyKind::PrevIteration,
            trigger_distance: DEFAULT_TRIGGER_PX,
        }
    }

    pub fn knn(index: Arc<KnnIndex>) -> Self {
        Self {
            kind: StrategyKind::Knn { index, k: 1 },
            trigger_distance: DEFAULT_TRIGGER_PX,
        }
    }

    pub fn gpr(model: Arc<GprModel>) -> Self {
        Self {
            kind: StrategyKind::Gpr(model),
            trigger_distance: DEFAULT_TRIGGER_PX,
        }
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            StrategyKind::PrevIteration => "previt",
            StrategyKind::Knn { .. } => "knn",
            StrategyKind::Gpr(_) => "gpr",
        }
    }

    pub fn uses_memory(&self) -> bool {
        !matches!(self.kind, StrategyKind::PrevIteration)
    }

    /// Memory output `(v, way point)` for a measurement.
    fn query(&self, s: &FeatureVector) -> Option<(Vec<f64>, f64)> {
        let x = VisualConfig::from_features(s).to_vec();
        let r = match &self.kind {
            StrategyKind::PrevIteration => return None,
            StrategyKind::Knn { index, k } => index.query(&x, *k),
            StrategyKind::Gpr(model) => model.query(&x),
        };
        r.ok().map(|r| (r.y_hat, r.query_time))
    }
}

#[derive(Debug, Clone)]
pub struct StepDiagnostics {
    pub memory_active: bool,
    pub waypoint: Option<FeatureVector>,
    pub min_distance: f64,
    pub cost: f64,
    pub solve_time: f64,
    pub query_time: f64,
    pub iterations: usize,
    pub status: SolverStatus,
    pub solver_success: bool,
}

/// Solves one VPC instance from measurement `s_k` toward `target`.
pub fn solve_vpc(
    scenario: &Scenario,
    s_k: &FeatureVector,
    target: &FeatureVector,
    warm: &ControlSequence,
    cfg: &SolverConfig,
) -> (ControlSequence, SolverResult) {
    let ctx = PredictionContext {
        intr: scenario.intrinsics,
        goal_depths: scenario.goal_depths.clone(),
        ts: scenario.ts,
        epsilon: DVector::zeros(s_k.len()),
    };
    let regions = scenario.regions();
    let w = &scenario.weights;
    let r_scale = w.r_scale(s_k.rms_error(&scenario.s_star));
    let problem = VpcProblem {
        s_k,
        target,
        ctx: &ctx,
        q: &w.q,
        r: w.r * r_scale,
        regions: &regions,
        np: scenario.np,
        nc: scenario.nc,
    };
    let warm = warm.reshaped(scenario.nc, scenario.np);
    let bounds = scenario.control_bounds(scenario.nc);
    let res = minimize(&problem, &bounds, &warm.to_flat(), cfg);
    (ControlSequence::from_flat(&res.solution, scenario.np), res)
}

/// One control cycle: choose target and warm start, solve, return the first
/// control of the new sequence.
pub fn vpc_step(
    s_meas: &FeatureVector,
    prev_solution: &ControlSequence,
    strategy: &Strategy,
    scenario: &Scenario,
    cfg: &SolverConfig,
) -> (Twist, ControlSequence, StepDiagnostics) {
    let min_distance = min_distance_to_regions(s_meas, &scenario.keepout_regions());
    let mut target = scenario.s_star.clone();
    let mut warm = prev_solution.reshaped(scenario.nc, scenario.np);
    let mut memory_active = false;
    let mut waypoint = None;
    let mut query_time = 0.0;

    if strategy.uses_memory() && min_distance < strategy.trigger_distance {
        if let Some((y_hat, qt)) = strategy.query(s_meas) {
            query_time = qt;
            let q = Twist::DIM;
            if let (Ok(w), Ok(s_bar)) = (
                assemble_warm_start(&y_hat, q, scenario.np, scenario.nc),
                extract_way_point(&y_hat, q, scenario.n_f()),
            ) {
                warm = w;
                target = s_bar.clone();
                waypoint = Some(s_bar);
                memory_active = true;
            }
        }
    }

    let (solution, res) = solve_vpc(scenario, s_meas, &target, &warm, cfg);
    let diag = StepDiagnostics {
        memory_active,
        waypoint,
        min_distance,
        cost: res.cost,
        solve_time: res.solve_time,
        query_time,
        iterations: res.iterations,
        status: res.status,
        solver_success: res.success,
    };
    (solution.first(), solution, diag)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureReason {
    None,
    ConstraintViolation,
    Timeout,
    SolverAbort,
    DepthFault,
}

#[derive(Debug, Clone)]
pub struct EpisodeResult {
    /// Measured features, one per cycle including the final one.
    pub features: Vec<FeatureVector>,
    /// Applied twist per cycle; one shorter than `features`.
    pub commands: Vec<Twist>,
    pub solve_times: Vec<f64>,
    /// Optimal VPC cost per cycle.
    pub costs: Vec<f64>,
    pub memory_active: Vec<bool>,
    pub waypoints: Vec<Option<FeatureVector>>,
    pub poses: Vec<CameraPose>,
    pub success: bool,
    pub failure_reason: FailureReason,
    pub ts: f64,
}

impl EpisodeResult {
    pub fn steps(&self) -> usize {
        self.commands.len()
    }

    pub fn final_error(&self, s_star: &FeatureVector) -> f64 {
        self.features.last().map_or(f64::INFINITY, |s| s.rms_error(s_star))
    }
}

/// Closed-loop simulation from `start` until convergence, a violation beyond
/// tolerance, a fault, or `time_limit` seconds.
pub fn run_episode(
    scenario: &Scenario,
    strategy: &Strategy,
    start: &CameraPose,
    time_limit: f64,
    cfg: &SolverConfig,
) -> EpisodeResult {
    let regions = scenario.regions();
    let tol = scenario.tolerances;
    let max_steps = (time_limit / scenario.ts).round() as usize;
    let mut out = EpisodeResult {
        features: Vec::new(),
        commands: Vec::new(),
        solve_times: Vec::new(),
        costs: Vec::new(),
        memory_active: Vec::new(),
        waypoints: Vec::new(),
        poses: Vec::new(),
        success: false,
        failure_reason: FailureReason::Timeout,
        ts: scenario.ts,
    };
    let mut pose = *start;
    let mut solution = ControlSequence::zeros(scenario.nc, scenario.np);

    loop {
        let depth_ok = feature_depths(scenario, &pose)
            .iter()
            .all(|z| *z > DEPTH_EPSILON);
        let s = match measure(scenario, &pose) {
            Ok(s) if depth_ok => s,
            _ => {
                out.failure_reason = FailureReason::DepthFault;
                break;
            }
        };
        out.features.push(s.clone());
        out.poses.push(pose);
        if max_violation_px(&s, &regions) > tol.violation_px {
            out.failure_reason = FailureReason::ConstraintViolation;
            break;
        }
        if s.rms_error(&scenario.s_star) < tol.conv_px {
            out.failure_reason = FailureReason::None;
            out.success = true;
            break;
        }
        if out.commands.len() >= max_steps {
            out.failure_reason = FailureReason::Timeout;
            break;
        }
        let (v, next, diag) = vpc_step(&s, &solution, strategy, scenario, cfg);
        if diag.status == SolverStatus::NumericalFailure || !v.is_finite() {
            out.failure_reason = FailureReason::SolverAbort;
            break;
        }
        out.commands.push(v);
        out.solve_times.push(diag.solve_time);
        out.costs.push(diag.cost);
        out.memory_active.push(diag.memory_active);
        out.waypoints.push(diag.waypoint);
        solution = next;
        pose = integrate_twist(&pose, &v, scenario.ts);
    }
    out
}
