//! Independent oracles shared by the topic tests and the acceptance suite.
#![allow(dead_code)]

use nalgebra::{DMatrix, UnitQuaternion, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vpc_core::camera::{
    integrate_twist, point_depths, project, CameraPose, FeatureVector, Intrinsics, Twist,
};
use vpc_core::memory::{MemoryMeta, MemorySample, MemoryStore, VisualConfig};
use vpc_core::model::{interaction_matrix, ControlSequence, PredictionContext, VpcProblem};
use vpc_core::regress::{gpr_query, GprModel, KnnIndex};
use vpc_core::scenario::{load_scenario, Scenario};
use vpc_core::solver::{minimize, Bounds, FnProblem, NlpProblem, SolverConfig};

pub fn scenario_path(name: &str) -> String {
    format!("{}/scenarios/{name}", env!("CARGO_MANIFEST_DIR"))
}

pub fn scenario(name: &str) -> Scenario {
    load_scenario(scenario_path(name)).expect("bundled scenario loads")
}

pub fn desk_intrinsics() -> Intrinsics {
    Intrinsics {
        fu: 500.0,
        fv: 500.0,
        cu: 512.0,
        cv: 512.0,
        width: 1024.0,
        height: 1024.0,
    }
}

/// Uniform draw in `[-a, a]`.
fn sym(rng: &mut ChaCha8Rng, a: f64) -> f64 {
    rng.random_range(-a..=a)
}

/// Worst relative Frobenius error between the analytic interaction matrix
/// and central differences of the plant's one-step feature map, over
/// `configs` random poses with the true point depths.
pub fn interaction_matrix_fd_error(configs: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let intr = desk_intrinsics();
    let ts = 1.0 / 30.0;
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..configs {
        let axis = Vector3::new(sym(&mut rng, 1.0), sym(&mut rng, 1.0), sym(&mut rng, 1.0));
        let pose = CameraPose::new(
            Vector3::new(sym(&mut rng, 0.2), sym(&mut rng, 0.2), rng.random_range(-1.2..-0.3)),
            UnitQuaternion::from_scaled_axis(axis.normalize() * sym(&mut rng, 0.5)),
        );
        let pts: Vec<Vector3<f64>> = (0..4)
            .map(|_| Vector3::new(sym(&mut rng, 0.15), sym(&mut rng, 0.15), sym(&mut rng, 0.1)))
            .collect();
        let s = project(&pts, &pose, &intr).expect("points in front");
        let l = interaction_matrix(&s, &point_depths(&pts, &pose), &intr).unwrap().0;
        let mut fd = DMatrix::zeros(s.len(), 6);
        for c in 0..6 {
            let mut e = [0.0; 6];
            e[c] = h;
            let plus = project(&pts, &integrate_twist(&pose, &Twist::from_slice(&e), ts), &intr);
            e[c] = -h;
            let minus = project(&pts, &integrate_twist(&pose, &Twist::from_slice(&e), ts), &intr);
            let col = (&plus.unwrap().0 - &minus.unwrap().0) / (2.0 * h * ts);
            fd.set_column(c, &col);
        }
        worst = worst.max((&l - &fd).norm() / l.norm());
    }
    worst
}

/// Store with hand-picked samples; `y = (v, waypoint)`.
pub fn toy_store(rows: usize, seed: u64) -> MemoryStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut store = MemoryStore::new(MemoryMeta {
        n_f: 8,
        q: 6,
        n_s: 5,
        np: 10,
        seed,
        scenario: "toy".into(),
        extra: Vec::new(),
    });
    for r in 0..rows {
        let base = [400.0, 400.0, 600.0, 400.0, 600.0, 600.0, 400.0, 600.0];
        let s: Vec<f64> = base.iter().map(|b| b + sym(&mut rng, 80.0)).collect();
        let s = FeatureVector::from_vec(s);
        let v: Vec<f64> = (0..6).map(|_| sym(&mut rng, 0.5)).collect();
        let w: Vec<f64> = base.iter().map(|b| b + sym(&mut rng, 20.0)).collect();
        store.samples.push(MemorySample {
            x: VisualConfig::from_features(&s),
            v: Twist::from_slice(&v),
            waypoint: FeatureVector::from_vec(w),
            traj_id: r,
            step_index: 0,
        });
    }
    store
}

/// Dense GP posterior mean evaluated by Gauss-Jordan elimination.
pub fn dense_gpr_mean(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    mean: &[f64],
    phi: &[f64],
    phi0_sq: f64,
    phi_s: f64,
    x_hat: &[f64],
) -> Vec<f64> {
    let n = x.len();
    let p = mean.len();
    let kern = |a: &[f64], b: &[f64]| {
        let q: f64 = a.iter().zip(b).zip(phi).map(|((ai, bi), f)| f * (ai - bi).powi(2)).sum();
        phi0_sq * (-0.5 * q).exp()
    };
    // augmented system [K + phi_s I | Y - m]
    let mut a: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| kern(&x[i], &x[j])).collect();
            row[i] += phi_s;
            row.extend((0..p).map(|c| y[i][c] - mean[c]));
            row
        })
        .collect();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        let d = a[col][col];
        for v in a[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for c in 0..n + p {
                        a[r][c] -= f * a[col][c];
                    }
                }
            }
        }
    }
    (0..p)
        .map(|c| mean[c] + (0..n).map(|i| kern(x_hat, &x[i]) * a[i][n + c]).sum::<f64>())
        .collect()
}

pub struct GprOracleReport {
    pub max_query_error: f64,
    pub max_interpolation_error: f64,
}

/// Five-sample toy: library queries against the dense oracle, then
/// interpolation of the training outputs with a vanishing noise term.
pub fn gpr_oracle_check(seed: u64) -> GprOracleReport {
    let store = toy_store(5, seed);
    let xs: Vec<Vec<f64>> = store.samples.iter().map(|s| s.x.to_vec()).collect();
    let ys: Vec<Vec<f64>> = store.samples.iter().map(|s| s.y()).collect();
    let mut mean = vec![0.0; 6];
    mean.extend_from_slice(&[400.0, 400.0, 600.0, 400.0, 600.0, 600.0, 400.0, 600.0]);
    // length scales of the order of the input spread
    let mut phi = vec![1.0 / 80.0f64.powi(2); 8];
    phi.push(1.0 / 20000.0f64.powi(2));
    phi.push(1.0);
    let (phi0_sq, phi_s) = (2.0, 1e-3);

    let model = GprModel::with_hyperparameters(
        store.x_matrix(),
        &store.y_matrix(),
        mean.clone(),
        phi.clone(),
        phi0_sq,
        phi_s,
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut max_query_error: f64 = 0.0;
    for _ in 0..100 {
        let base = &store.samples[rng.random_range(0..5)].x.s;
        let s: Vec<f64> = base.as_slice().iter().map(|b| b + sym(&mut rng, 60.0)).collect();
        let xq = VisualConfig::from_features(&FeatureVector::from_vec(s));
        let got = gpr_query(&model, &xq).unwrap().y_hat;
        let want = dense_gpr_mean(&xs, &ys, &mean, &phi, phi0_sq, phi_s, &xq.to_vec());
        for (g, w) in got.iter().zip(&want) {
            max_query_error = max_query_error.max((g - w).abs());
        }
    }

    let exact = GprModel::with_hyperparameters(
        store.x_matrix(),
        &store.y_matrix(),
        mean,
        phi,
        phi0_sq,
        1e-12,
    )
    .unwrap();
    let mut max_interpolation_error: f64 = 0.0;
    for s in &store.samples {
        let got = gpr_query(&exact, &s.x).unwrap().y_hat;
        for (g, w) in got.iter().zip(s.y()) {
            max_interpolation_error = max_interpolation_error.max((g - w).abs());
        }
    }
    GprOracleReport {
        max_query_error,
        max_interpolation_error,
    }
}

/// Number of stored rows whose `K = 1` self-query is not bit-identical to the
/// stored output.
pub fn knn_self_query_mismatches(store: &MemoryStore) -> usize {
    let index = KnnIndex::new(store).unwrap();
    store
        .samples
        .iter()
        .filter(|s| index.query(&s.x.to_vec(), 1).unwrap().y_hat != s.y())
        .count()
}

pub struct SolverContractReport {
    pub bowl_error: f64,
    pub box_error: f64,
    pub disk_error: f64,
    /// Instances where the result is worse than its feasible warm start.
    pub monotone_failures: usize,
    pub monotone_instances: usize,
}

/// Tolerance for the exactness checks: the optimality measure bounds the
/// predicted decrease, so the iterate error scales with its square root.
pub fn exact_config() -> SolverConfig {
    SolverConfig {
        optimality_tol: 1e-12,
        ..SolverConfig::offline()
    }
}

pub fn bowl_error() -> f64 {
    let c = [1.5, -2.0, 0.25, 3.0, -0.5, 0.0];
    let w = [1.0, 4.0, 0.5, 2.0, 10.0, 1.0];
    let f = move |x: &[f64]| -> f64 { (0..6).map(|i| w[i] * (x[i] - c[i]).powi(2)).sum() };
    let r = minimize(
        &FnProblem::unconstrained(6, f),
        &Bounds::unbounded(6),
        &[5.0; 6],
        &exact_config(),
    );
    r.solution.iter().zip(c).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

pub fn box_error() -> f64 {
    let p = [2.0, -3.0, 0.3, -0.7];
    let bounds = Bounds {
        lo: vec![-1.0, -1.0, -1.0, -0.5],
        hi: vec![1.0, 1.0, 1.0, 0.5],
    };
    let f = move |x: &[f64]| -> f64 { (0..4).map(|i| (x[i] - p[i]).powi(2)).sum() };
    let r = minimize(
        &FnProblem::unconstrained(4, f),
        &bounds,
        &[0.0; 4],
        &exact_config(),
    );
    (0..4)
        .map(|i| (r.solution[i] - p[i].clamp(bounds.lo[i], bounds.hi[i])).abs())
        .fold(0.0, f64::max)
}

/// Linear objective over the unit disk, compared with the best point of a
/// dense polar grid covering the disk.
pub fn disk_error() -> f64 {
    let c = [0.6, -1.3];
    let problem = FnProblem {
        n: 2,
        objective: move |x: &[f64]| c[0] * x[0] + c[1] * x[1],
        constraints: Some(|x: &[f64]| vec![1.0 - x[0] * x[0] - x[1] * x[1]]),
        m: 1,
        gradient: None::<fn(&[f64]) -> Vec<f64>>,
    };
    let r = minimize(&problem, &Bounds::unbounded(2), &[0.1, 0.1], &exact_config());
    let mut best = (f64::INFINITY, 0.0, 0.0);
    let (n_r, n_t) = (200, 20_000);
    for i in 0..=n_r {
        let rad = i as f64 / n_r as f64;
        for k in 0..n_t {
            let t = k as f64 / n_t as f64 * std::f64::consts::TAU;
            let (x, y) = (rad * t.cos(), rad * t.sin());
            let v = c[0] * x + c[1] * y;
            if v < best.0 {
                best = (v, x, y);
            }
        }
    }
    (r.cost - best.0)
        .abs()
        .max((r.solution[0] - best.1).abs())
        .max((r.solution[1] - best.2).abs())
}

/// Random VPC instances on `scen`: from a feasible warm start the on-line
/// solver never returns a worse or infeasible answer.
pub fn warm_start_monotone_failures(scen: &Scenario, instances: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let regions = scen.regions();
    let ctx = PredictionContext {
        intr: scen.intrinsics,
        goal_depths: scen.goal_depths.clone(),
        ts: scen.ts,
        epsilon: nalgebra::DVector::zeros(scen.n_f()),
    };
    let bounds = scen.control_bounds(scen.nc);
    let cfg = SolverConfig::online();
    let mut failures = 0;
    let mut done = 0;
    while done < instances {
        let p: [f64; 6] =
            std::array::from_fn(|i| rng.random_range(scen.pose_box.lo[i]..=scen.pose_box.hi[i]));
        let Ok(s_k) = vpc_core::camera::measure(scen, &scen.pose_from_params(&p)) else {
            continue;
        };
        let problem = VpcProblem {
            s_k: &s_k,
            target: &scen.s_star,
            ctx: &ctx,
            q: &scen.weights.q,
            r: scen.weights.r,
            regions: &regions,
            np: scen.np,
            nc: scen.nc,
        };
        let mut x0: Vec<f64> = (0..6 * scen.nc)
            .map(|i| rng.random_range(bounds.lo[i]..=bounds.hi[i]))
            .collect();
        // shrink toward zero until the preview is feasible
        let mut feasible = false;
        for _ in 0..30 {
            if problem.evaluate(&x0).c.iter().all(|&c| c >= 0.0) {
                feasible = true;
                break;
            }
            x0.iter_mut().for_each(|v| *v *= 0.5);
        }
        if !feasible {
            continue;
        }
        done += 1;
        let f0 = problem.evaluate(&x0).f;
        let r = minimize(&problem, &bounds, &x0, &cfg);
        if !(r.cost <= f0 + cfg.optimality_tol && r.max_violation <= cfg.feasibility_tol) {
            failures += 1;
        }
    }
    failures
}

pub fn solver_contract(scen: &Scenario) -> SolverContractReport {
    SolverContractReport {
        bowl_error: bowl_error(),
        box_error: box_error(),
        disk_error: disk_error(),
        monotone_failures: warm_start_monotone_failures(scen, 50, 3),
        monotone_instances: 50,
    }
}

/// Replay of a finished store through the plant from each trajectory's
/// recorded start pose.
pub struct MemoryIntegrity {
    /// Worst mismatch between a stored feature and the replayed plant (px).
    pub max_step_error_px: f64,
    /// Worst gap between a stored successor and the first-order prediction
    /// from its predecessor (px); informative only.
    pub max_model_gap_px: f64,
    /// Every trajectory's last `n_s` way points equal `s*` bit-exactly.
    pub tails_exact: bool,
}

pub fn memory_integrity(
    scen: &Scenario,
    store: &MemoryStore,
    start_poses: &[CameraPose],
) -> MemoryIntegrity {
    let n_s = store.meta.n_s;
    let mut max_err: f64 = 0.0;
    let mut max_gap: f64 = 0.0;
    let mut tails_exact = true;
    assert_eq!(store.trajectory_count(), start_poses.len());
    for (traj, pose0) in store.trajectories().iter().zip(start_poses) {
        let mut pose = *pose0;
        for (j, sample) in traj.iter().enumerate() {
            let s_meas = vpc_core::camera::measure(scen, &pose).unwrap();
            max_err = max_err.max((&s_meas.0 - &sample.x.s.0).amax());
            pose = integrate_twist(&pose, &sample.v, scen.ts);
            if j + 1 < traj.len() {
                let predicted = predicted_successor(scen, &sample.x.s, &sample.v);
                max_gap = max_gap.max((&predicted.0 - &traj[j + 1].x.s.0).amax());
            }
        }
        for sample in traj.iter().rev().take(n_s.min(traj.len())) {
            tails_exact &= sample.waypoint == scen.s_star;
        }
    }
    MemoryIntegrity {
        max_step_error_px: max_err,
        max_model_gap_px: max_gap,
        tails_exact,
    }
}

/// First-order model successor with the goal depths.
fn predicted_successor(scen: &Scenario, s: &FeatureVector, v: &Twist) -> FeatureVector {
    let l = interaction_matrix(s, &scen.goal_depths, &scen.intrinsics).unwrap();
    vpc_core::model::predict_features(s, v, scen.ts, &l)
}

/// Constant-control sequence helper for cost checks.
pub fn constant_sequence(v: [f64; 6], np: usize) -> ControlSequence {
    ControlSequence::constant(Twist::from_slice(&v), 1, np)
}

/// Episodes that reach `conv_px` within `time_limit` seconds with the
/// keep-outs removed, out of `starts` seeded starts.
pub fn unconstrained_successes(
    scen: &Scenario,
    strategy: &vpc_core::controller::Strategy,
    np: usize,
    starts: usize,
    seed: u64,
    time_limit: f64,
) -> usize {
    let free = scen.without_keepouts().with_horizon(np);
    let poses = vpc_core::bench::draw_starts(&free, starts, seed).unwrap();
    poses
        .iter()
        .filter(|p| {
            let ep = vpc_core::controller::run_episode(
                &free,
                strategy,
                p,
                time_limit,
                &SolverConfig::online(),
            );
            ep.success && ep.final_error(&free.s_star) < 2.0
        })
        .count()
}
