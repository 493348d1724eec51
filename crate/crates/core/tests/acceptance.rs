//! Acceptance gate: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

mod common;

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::Instant;

use vpc_core::bench::{run_benchmark, StrategySpec};
use vpc_core::controller::{run_episode, FailureReason, Strategy};
use vpc_core::memory::{build_memory, save_memory, BuildConfig, BuildOutcome};
use vpc_core::regress::{gpr_fit, save_gpr, GprFitConfig, GprModel, KnnIndex};
use vpc_core::scenario::Scenario;
use vpc_core::solver::SolverConfig;

const MEMORY_TRAJECTORIES: usize = 200;
const MEMORY_SEED: u64 = 1;
const BENCH_TRIALS: usize = 50;
const BENCH_SEED: u64 = 7;
const STALL_TRAJECTORIES: usize = 100;
const STALL_MEMORY_SEED: u64 = 1;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            detail: detail.into(),
        }
    }
}

type Check<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

struct Memory {
    scen: Scenario,
    built: BuildOutcome,
    knn: Arc<KnnIndex>,
    gpr: Arc<GprModel>,
}

fn memory_for(scen: Scenario, trajectories: usize, seed: u64) -> Memory {
    let built = build_memory(&scen, &BuildConfig::new(trajectories, seed)).expect("memory builds");
    let knn = Arc::new(KnnIndex::new(&built.store).unwrap());
    let gpr = Arc::new(gpr_fit(&built.store, &scen.s_star, &GprFitConfig::default()).unwrap());
    Memory {
        scen,
        built,
        knn,
        gpr,
    }
}

fn four_strategies(mem: &Memory) -> Vec<StrategySpec> {
    vec![
        StrategySpec::new(Strategy::prev_iteration(), 3),
        StrategySpec::new(Strategy::prev_iteration(), 30),
        StrategySpec::new(Strategy::knn(mem.knn.clone()), 3),
        StrategySpec::new(Strategy::gpr(mem.gpr.clone()), 3),
    ]
}

fn strategy_comparison(mem: &Memory) -> Outcome {
    let rep = run_benchmark(&mem.scen, &four_strategies(mem), BENCH_TRIALS, BENCH_SEED).unwrap();
    println!("{}", rep.table().trim_end());
    let base = rep.stats_for("previt-np3").unwrap();
    let long = rep.stats_for("previt-np30").unwrap();
    let mut pass = mem.built.store.trajectory_count() >= 200;
    let mut notes = Vec::new();
    for label in ["knn-np3", "gpr-np3"] {
        let s = rep.stats_for(label).unwrap();
        let (a, b, c) = (s.r >= base.r + 5.0, s.t_c <= 0.5 * long.t_c, s.l_bar < base.l_bar);
        pass &= a && b && c;
        notes.push(format!("{label}: rate {a}, time {b}, cost {c}"));
    }
    for s in &rep.stats {
        if let Some(r) = &s.reference {
            notes.push(format!(
                "{} reference r {} t_c {} l_bar {}",
                s.strategy, r.r, r.t_c, r.l_bar
            ));
        }
    }
    Outcome::new(pass, notes.join("; "))
}

fn occlusion_stall() -> Outcome {
    let t0 = Instant::now();
    let scen = common::scenario("stall_case.json");
    let start = scen.start_pose.expect("stall case has a fixed start");
    let cfg = SolverConfig::online();
    let limit = scen.tolerances.time_limit_s;
    let prev = run_episode(&scen, &Strategy::prev_iteration(), &start, limit, &cfg);

    let last = prev.commands.last().map(|v| v.to_vector());
    let command_ratio = last.map_or(f64::INFINITY, |v| {
        (0..6).map(|i| v[i].abs() / scen.v_max[i]).fold(0.0, f64::max)
    });
    let second = (1.0 / scen.ts).round() as usize;
    let tail = &prev.features[prev.features.len().saturating_sub(second + 1)..];
    let errs: Vec<f64> = tail.iter().map(|s| s.rms_error(&scen.s_star)).collect();
    let plateau = errs.iter().cloned().fold(f64::MIN, f64::max) - errs.iter().cloned().fold(f64::MAX, f64::min);

    let mem = memory_for(scen.clone(), STALL_TRAJECTORIES, STALL_MEMORY_SEED);
    let gpr = run_episode(&scen, &Strategy::gpr(mem.gpr.clone()), &start, limit, &cfg);
    let elapsed = t0.elapsed().as_secs_f64();

    let pass = prev.failure_reason == FailureReason::Timeout
        && command_ratio < 1e-3
        && plateau < 1.0
        && gpr.success
        && elapsed < 120.0;
    Outcome::new(
        pass,
        format!(
            "prev-it {:?} at {:.1} px, last |v|/bound {command_ratio:.2e}, plateau {plateau:.3} px; gpr {:?} after {} steps; {elapsed:.0} s",
            prev.failure_reason,
            prev.final_error(&scen.s_star),
            gpr.failure_reason,
            gpr.steps()
        ),
    )
}

fn unconstrained(mem: &Memory) -> Outcome {
    let mut counts = Vec::new();
    for spec in four_strategies(mem) {
        let ok = common::unconstrained_successes(&mem.scen, &spec.strategy, spec.np, 20, 5, 15.0);
        counts.push((spec.label(), ok));
    }
    let pass = counts.iter().all(|(_, ok)| *ok == 20);
    let detail = counts.iter().map(|(l, ok)| format!("{l} {ok}/20")).collect::<Vec<_>>().join(", ");
    Outcome::new(pass, detail)
}

fn gpr_oracle() -> Outcome {
    let r = common::gpr_oracle_check(31);
    Outcome::new(
        r.max_query_error < 1e-9 && r.max_interpolation_error < 1e-6,
        format!(
            "query error {:.2e}, interpolation error {:.2e}",
            r.max_query_error, r.max_interpolation_error
        ),
    )
}

fn knn_exactness(mem: &Memory) -> Outcome {
    let toy = common::knn_self_query_mismatches(&common::toy_store(500, 3));
    let real = common::knn_self_query_mismatches(&mem.built.store);
    Outcome::new(
        toy == 0 && real == 0,
        format!("mismatches: toy {toy}/500, built store {real}/{}", mem.built.store.samples.len()),
    )
}

fn interaction_matrix() -> Outcome {
    let err = common::interaction_matrix_fd_error(100, 17);
    Outcome::new(err < 1e-4, format!("worst relative error {err:.2e}"))
}

fn solver_contract(scen: &Scenario) -> Outcome {
    let r = common::solver_contract(scen);
    Outcome::new(
        r.bowl_error < 1e-6 && r.box_error < 1e-6 && r.disk_error < 1e-4 && r.monotone_failures == 0,
        format!(
            "bowl {:.1e}, box {:.1e}, disk {:.1e}, monotone failures {}/{}",
            r.bowl_error, r.box_error, r.disk_error, r.monotone_failures, r.monotone_instances
        ),
    )
}

fn memory_integrity(mem: &Memory) -> Outcome {
    let r = common::memory_integrity(&mem.scen, &mem.built.store, &mem.built.start_poses);
    Outcome::new(
        r.max_step_error_px <= 5.0 && r.tails_exact,
        format!(
            "replay error {:.2e} px, first-order gap {:.2} px, tails exact {}",
            r.max_step_error_px, r.max_model_gap_px, r.tails_exact
        ),
    )
}

fn determinism(mem: &Memory, dir: &Path) -> Outcome {
    let store = dir.join("memory.csv");
    save_memory(&mem.built.store, &store).unwrap();
    save_gpr(&mem.gpr, dir.join("memory.csv.gpr")).unwrap();
    let scen = common::scenario_path("sim_paper.json");
    let records = |name: &str| {
        let report = dir.join(name);
        let out = Command::new(env!("CARGO_BIN_EXE_vpc"))
            .args(["run", "--scenario", &scen, "--memory"])
            .arg(&store)
            .args(["--strategy", "previt", "--strategy", "knn", "--strategy", "gpr"])
            .args(["--trials", "6", "--seed", "13", "--report"])
            .arg(&report)
            .output()
            .unwrap();
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let mut v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(report).unwrap()).unwrap();
        let mut recs = v["records"].take();
        for r in recs.as_array_mut().unwrap() {
            r.as_object_mut().unwrap().remove("mean_solve_time");
        }
        recs
    };
    let (a, b) = (records("a.json"), records("b.json"));
    let n = a.as_array().map_or(0, |r| r.len());
    Outcome::new(n == 18 && a == b, format!("{n} records compared"))
}

fn main() {
    let t0 = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let scen = common::scenario("sim_paper.json");
    let mem = memory_for(scen.clone(), MEMORY_TRAJECTORIES, MEMORY_SEED);
    println!(
        "memory: {} trajectories, {} samples, {} attempts, {:.0} s",
        mem.built.store.trajectory_count(),
        mem.built.store.samples.len(),
        mem.built.attempts,
        t0.elapsed().as_secs_f64()
    );

    let criteria: Vec<Check> = vec![
        ("strategy comparison trend", Box::new(|| strategy_comparison(&mem))),
        ("occlusion stall and escape", Box::new(occlusion_stall)),
        ("unconstrained convergence", Box::new(|| unconstrained(&mem))),
        ("gpr oracle equivalence", Box::new(gpr_oracle)),
        ("k-nn exactness", Box::new(|| knn_exactness(&mem))),
        ("interaction matrix gradient", Box::new(interaction_matrix)),
        ("solver contract", Box::new(|| solver_contract(&scen))),
        ("memory integrity", Box::new(|| memory_integrity(&mem))),
        ("determinism", Box::new(|| determinism(&mem, dir.path()))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let o = check();
        failed += usize::from(!o.pass);
        println!(
            "criterion {} {name}: {} ({}; {:.1} s)",
            i + 1,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
