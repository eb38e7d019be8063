use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use clmrmp::bench::{export_results, parse_sweep, run_batch, run_trial, write_trajectory_csv, BatchOptions, ExecutionSummary, NamedConfig, PlanFile};
use clmrmp::oracle::{execute_plan, soundness_suite, CheckKind};
use clmrmp::planner::{verify_plan, BiasKind, PlannerConfig, PlannerKind};
use clmrmp::{builtin, load_environment, Environment, Error};
use serde_json::json;

const EXIT_NO_PLAN: u8 = 2;
const EXIT_CONFIG: u8 = 3;
const EXIT_INVALID: u8 = 4;

#[derive(Parser)]
#[command(name = "clmrmp", version, about = "Chance-constrained multi-robot planning with cooperative localization")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Plan one query and write the plan, report and trajectory.
    Plan {
        /// Environment JSON file or built-in name.
        env: String,
        #[command(flatten)]
        opts: PlannerArgs,
        #[arg(long, default_value_t = PlannerKind::Rrt)]
        planner: PlannerKind,
        #[arg(long, default_value_t = BiasKind::None)]
        bias: BiasKind,
        #[arg(long, default_value_t = 0.0)]
        epsilon: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a seeded trial batch over a configuration sweep.
    Bench {
        env: String,
        #[arg(long, default_value_t = 50)]
        trials: usize,
        /// e.g. `planners=rrt,est;bias=clone,weight,rebranch;eps=0,0.1,0.5`
        #[arg(long, default_value = "")]
        sweep: String,
        #[arg(long, default_value_t = 0)]
        seed_base: u64,
        /// Closed-loop rollouts per solved trial.
        #[arg(long)]
        rollouts: Option<usize>,
        #[command(flatten)]
        opts: PlannerArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-validate a plan file and execute it in closed loop.
    Validate {
        plan_file: PathBuf,
        #[arg(long, default_value_t = 10_000)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Monte-Carlo soundness suites for the collision and availability checks.
    CheckTheorems {
        #[arg(long, default_value_t = 500)]
        cases: usize,
        #[arg(long, default_value_t = 100_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct PlannerArgs {
    /// Wall-clock budget in seconds; 0 disables it.
    #[arg(long, default_value_t = 60.0)]
    time_budget: f64,
    #[arg(long, default_value_t = 100_000)]
    max_iterations: usize,
    /// Weight of trace(Gamma) in the nearest-neighbour metric.
    #[arg(long, default_value_t = 0.0)]
    cov_weight: f64,
    #[arg(long, default_value_t = 0.05)]
    goal_bias: f64,
    #[arg(long, default_value_t = 5)]
    edge_steps: usize,
    /// Plan without any exteroceptive measurement.
    #[arg(long)]
    disable_ext: bool,
}

impl PlannerArgs {
    fn config(&self) -> PlannerConfig {
        PlannerConfig {
            time_budget: (self.time_budget > 0.0).then_some(self.time_budget),
            max_iterations: self.max_iterations,
            cov_weight: self.cov_weight,
            goal_bias: self.goal_bias,
            edge_steps: self.edge_steps,
            use_exteroception: !self.disable_ext,
            ..PlannerConfig::default()
        }
    }
}

enum Failure {
    Code(u8),
    Error(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Error(e)
    }
}

fn resolve_env(arg: &str) -> Result<Environment, Error> {
    let path = Path::new(arg);
    if path.exists() {
        load_environment(path)
    } else {
        builtin(arg)
    }
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), Error> {
    let text = serde_json::to_string_pretty(value).expect("json values serialize") + "\n";
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn create_dir(dir: &Path) -> Result<(), Error> {
    fs::create_dir_all(dir).map_err(|e| Error::Io {
        path: dir.to_path_buf(),
        source: e,
    })
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Plan {
            env,
            opts,
            planner,
            bias,
            epsilon,
            seed,
            out,
        } => {
            let env = resolve_env(&env)?;
            let config = PlannerConfig {
                planner,
                bias,
                epsilon,
                seed,
                ..opts.config()
            };
            let named = NamedConfig::new(config.clone());
            let trial = run_trial(&env, &named, 0, seed, &BatchOptions::default())?;
            let report = &trial.record.report;
            println!(
                "{}: {} after {} iterations, tree size {}",
                env.name,
                if report.success { "plan found" } else { "no plan" },
                report.iterations,
                report.tree_size
            );
            eprintln!("planning time {:.3} s", trial.elapsed);
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_json(
                    &dir.join("result.json"),
                    &json!({ "environment": env.name, "config": config, "record": trial.record }),
                )?;
                write_json(&dir.join("timing.json"), &json!({ "elapsed_s": trial.elapsed }))?;
                if let Some(p) = &trial.plan {
                    PlanFile::new(&env, &config, p.clone()).save(&dir.join("plan.json"))?;
                    write_trajectory_csv(&dir.join("trajectory.csv"), &trial.trajectory)?;
                }
            }
            match (&trial.plan, trial.record.verified) {
                (None, _) => Err(Failure::Code(EXIT_NO_PLAN)),
                (Some(_), Some(false)) => Err(Failure::Code(EXIT_INVALID)),
                _ => Ok(()),
            }
        }
        Command::Bench {
            env,
            trials,
            sweep,
            seed_base,
            rollouts,
            opts,
            out,
        } => {
            let env = resolve_env(&env)?;
            let configs = parse_sweep(&sweep, &opts.config())?;
            let options = BatchOptions {
                rollouts,
                rollout_seed: seed_base,
            };
            let result = run_batch(&env, &configs, trials, seed_base, &options)?;
            for s in &result.stats {
                println!(
                    "{:<24} success {}/{}  rr-rejection median {:.4}",
                    s.config, s.successes, s.trials, s.rejection_robot_robot.median
                );
            }
            export_results(&result, &out)?;
            Ok(())
        }
        Command::Validate {
            plan_file,
            rollouts,
            seed,
            out,
        } => {
            let file = PlanFile::load(&plan_file)?;
            let (env, gains) = file.resolve()?;
            let check = verify_plan(&env, &gains, &file.plan)?;
            let report = execute_plan(&env, &gains, &file.plan, rollouts, seed)?;
            let summary = ExecutionSummary::from_report(&report, &env);
            let ok = check.is_valid() && summary.within_budget;
            let value = json!({
                "verified": check.is_valid(),
                "violations": check.violations,
                "execution": summary,
                "report": report,
            });
            println!(
                "re-validation {}; execution max rates obstacle {:.4} robot-robot {:.4} cl {:.4}, min goal {:.4}: {}",
                if check.is_valid() { "passed" } else { "failed" },
                summary.max_obstacle_rate,
                summary.max_robot_robot_rate,
                summary.max_cl_failure_rate,
                summary.min_goal_rate,
                if summary.within_budget { "within budget" } else { "over budget" }
            );
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_json(&dir.join("validation.json"), &value)?;
            }
            if ok {
                Ok(())
            } else {
                Err(Failure::Code(EXIT_INVALID))
            }
        }
        Command::CheckTheorems {
            cases,
            samples,
            seed,
            out,
        } => {
            let mut sound = true;
            let mut reports = Vec::new();
            for kind in [CheckKind::RobotRobot, CheckKind::ExtEnabled] {
                let r = soundness_suite(kind, cases, samples, seed)?;
                println!(
                    "{kind:?}: {} cases, {} accepted, {} violations",
                    r.cases.len(),
                    r.accepted(),
                    r.violations().len()
                );
                sound &= r.is_sound();
                reports.push(r);
            }
            if let Some(dir) = out {
                create_dir(&dir)?;
                write_json(&dir.join("soundness.json"), &json!(reports))?;
            }
            if sound {
                Ok(())
            } else {
                Err(Failure::Code(EXIT_INVALID))
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Code(c)) => ExitCode::from(c),
        Err(Failure::Error(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::Consistency(_) => ExitCode::from(EXIT_INVALID),
                Error::Numeric(_) => ExitCode::FAILURE,
                _ => ExitCode::from(EXIT_CONFIG),
            }
        }
    }
}
