use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};

use vpc_core::bench::{emit_trajectory, run_benchmark_with, StrategySpec};
use vpc_core::camera::FeatureVector;
use vpc_core::controller::Strategy;
use vpc_core::memory::{build_memory_with, load_memory, save_memory, BuildConfig, MemoryStore, VisualConfig};
use vpc_core::regress::{gpr_fit, load_gpr, save_gpr, GprFitConfig, GprModel, KnnIndex};
use vpc_core::scenario::load_scenario;
use vpc_core::{Result, VpcError};

#[derive(Parser)]
#[command(name = "vpc", version, about = "Visual predictive control with a memory of motion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate successful trajectories and store them as a memory file.
    BuildMemory {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        trajectories: usize,
        #[arg(long, default_value_t = 10)]
        np: usize,
        #[arg(long, default_value_t = 5)]
        ns: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Continue from `<out>.partial` if present.
        #[arg(long)]
        resume: bool,
    },
    /// Fit the Gaussian process regressor; writes `<memory>.gpr`.
    FitGpr {
        #[arg(long)]
        memory: PathBuf,
        #[arg(long, default_value_t = 20)]
        subsample: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Goal features are taken from here instead of the stored trajectory tails.
        #[arg(long)]
        scenario: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Benchmark strategies on a shared seeded start list.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        /// `previt`, `knn` or `gpr`, optionally `name:Np`; repeatable.
        #[arg(long = "strategy", required = true)]
        strategies: Vec<String>,
        /// Preview length for strategies without an explicit one.
        #[arg(long, default_value_t = 3)]
        np: usize,
        #[arg(long)]
        memory: Option<PathBuf>,
        #[arg(long, default_value_t = 100)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        traj_dir: Option<PathBuf>,
    },
    /// Query a regressor with one visual configuration.
    Query {
        #[arg(long)]
        memory: PathBuf,
        #[arg(long, value_enum)]
        regressor: RegressorArg,
        /// JSON array: features, or features followed by area and angle.
        #[arg(long)]
        x: PathBuf,
        #[arg(long, default_value_t = 1)]
        k: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum RegressorArg {
    Knn,
    Gpr,
}

fn partial_path(out: &Path) -> PathBuf {
    let mut p = out.as_os_str().to_owned();
    p.push(".partial");
    PathBuf::from(p)
}

fn gpr_path(memory: &Path) -> PathBuf {
    let mut p = memory.as_os_str().to_owned();
    p.push(".gpr");
    PathBuf::from(p)
}

/// Goal features recovered from the way point of a trajectory's last sample.
fn goal_from_store(store: &MemoryStore) -> Result<FeatureVector> {
    store
        .samples
        .last()
        .map(|s| s.waypoint.clone())
        .ok_or(VpcError::EmptyStore)
}

fn load_or_fit_gpr(memory: &Path, store: &MemoryStore, s_star: &FeatureVector) -> Result<GprModel> {
    let path = gpr_path(memory);
    if path.exists() {
        load_gpr(path)
    } else {
        gpr_fit(store, s_star, &GprFitConfig::default())
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::BuildMemory {
            scenario,
            trajectories,
            np,
            ns,
            seed,
            out,
            resume,
        } => {
            let scen = load_scenario(&scenario)?;
            let mut cfg = BuildConfig::new(trajectories, seed);
            cfg.np = np;
            cfg.n_s = ns;
            let partial = partial_path(&out);
            let previous = if resume && partial.exists() {
                Some(load_memory(&partial)?)
            } else {
                None
            };
            let outcome = build_memory_with(&scen, &cfg, previous, |store, _| save_memory(store, &partial))?;
            save_memory(&outcome.store, &out)?;
            if outcome.complete {
                let _ = std::fs::remove_file(&partial);
            }
            eprintln!(
                "stored {} trajectories ({} samples) after {} attempts",
                outcome.store.trajectory_count(),
                outcome.store.len(),
                outcome.attempts
            );
            if !outcome.complete {
                return Err(VpcError::NumericalFailure("memory build (attempt budget exhausted)"));
            }
        }
        Command::FitGpr {
            memory,
            subsample,
            seed,
            scenario,
            out,
        } => {
            let store = load_memory(&memory)?;
            let s_star = match scenario {
                Some(p) => load_scenario(p)?.s_star,
                None => goal_from_store(&store)?,
            };
            let cfg = GprFitConfig {
                subsample,
                seed,
                ..GprFitConfig::default()
            };
            let model = gpr_fit(&store, &s_star, &cfg)?;
            let path = out.unwrap_or_else(|| gpr_path(&memory));
            save_gpr(&model, &path)?;
            eprintln!("fitted on {} rows, wrote {}", model.rows(), path.display());
        }
        Command::Run {
            scenario,
            strategies,
            np,
            memory,
            trials,
            seed,
            report,
            traj_dir,
        } => {
            let scen = load_scenario(&scenario)?;
            let store = memory.as_ref().map(load_memory).transpose()?;
            let mut knn: Option<Arc<KnnIndex>> = None;
            let mut gpr: Option<Arc<GprModel>> = None;
            let mut specs = Vec::new();
            for s in &strategies {
                let (name, n) = match s.split_once(':') {
                    Some((a, b)) => (
                        a,
                        b.parse()
                            .map_err(|_| VpcError::Validation(format!("bad horizon in `{s}`")))?,
                    ),
                    None => (s.as_str(), np),
                };
                if n < 2 {
                    return Err(VpcError::Validation("Np must be at least 2".into()));
                }
                let strategy = match name {
                    "previt" => Strategy::prev_iteration(),
                    "knn" | "gpr" => {
                        let (Some(store), Some(mem_path)) = (&store, &memory) else {
                            return Err(VpcError::MissingMemory(name.into()));
                        };
                        if name == "knn" {
                            let idx = match &knn {
                                Some(i) => i.clone(),
                                None => knn.insert(Arc::new(KnnIndex::new(store)?)).clone(),
                            };
                            Strategy::knn(idx)
                        } else {
                            let model = match &gpr {
                                Some(m) => m.clone(),
                                None => gpr
                                    .insert(Arc::new(load_or_fit_gpr(mem_path, store, &scen.s_star)?))
                                    .clone(),
                            };
                            Strategy::gpr(model)
                        }
                    }
                    other => {
                        return Err(VpcError::Validation(format!("unknown strategy `{other}`")));
                    }
                };
                specs.push(StrategySpec::new(strategy, n));
            }
            if let Some(dir) = &traj_dir {
                std::fs::create_dir_all(dir)?;
            }
            let rep = run_benchmark_with(&scen, &specs, trials, seed, |label, trial, ep| {
                match &traj_dir {
                    Some(dir) => emit_trajectory(ep, dir.join(format!("{label}_trial{trial:04}.csv"))),
                    None => Ok(()),
                }
            })?;
            print!("{}", rep.table());
            println!("start list {}", rep.start_hash);
            if let Some(path) = report {
                rep.write_json(path)?;
            }
        }
        Command::Query {
            memory,
            regressor,
            x,
            k,
        } => {
            let store = load_memory(&memory)?;
            let raw: Vec<f64> = serde_json::from_str(&std::fs::read_to_string(&x)?)?;
            let n_f = store.meta.n_f;
            let xv = if raw.len() == n_f {
                VisualConfig::from_features(&FeatureVector::from_vec(raw)).to_vec()
            } else if raw.len() == n_f + 2 {
                raw
            } else {
                return Err(VpcError::DimensionMismatch {
                    expected: n_f + 2,
                    got: raw.len(),
                });
            };
            let result = match regressor {
                RegressorArg::Knn => KnnIndex::new(&store)?.query(&xv, k)?,
                RegressorArg::Gpr => {
                    let s_star = goal_from_store(&store)?;
                    load_or_fit_gpr(&memory, &store, &s_star)?.query(&xv)?
                }
            };
            println!("{}", serde_json::to_string(&result.y_hat)?);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_validation() { 2 } else { 3 })
        }
    }
}
