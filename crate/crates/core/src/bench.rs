//! Trial batching, sweep parsing, statistics and result export.

use std::fs;
use std::io::Write;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::statistics::{Data, Max, Min, OrderStatistics, Statistics};

use crate::environment::{Environment, EnvironmentFile};
use crate::error::{Error, Result};
use crate::gaussian::max_eigenvalue;
use crate::oracle::{execute_plan, RolloutReport};
use crate::planner::{plan, verify_plan, BiasKind, MotionPlan, PlanReport, PlannerConfig, PlannerKind, RejectCause};
use crate::propagation::GainSet;

/// A planner configuration with a row label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedConfig {
    pub label: String,
    pub config: PlannerConfig,
}

impl NamedConfig {
    pub fn new(config: PlannerConfig) -> Self {
        let label = if config.bias == BiasKind::None || config.epsilon == 0.0 {
            format!("{}-baseline", config.planner)
        } else {
            format!("{}-{}-{}", config.planner, config.bias, config.epsilon)
        };
        Self { label, config }
    }
}

fn parse_list<T>(key: &str, value: &str, parse: impl Fn(&str) -> Option<T>) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| parse(v.trim()).ok_or_else(|| Error::config(key, format!("cannot parse `{}`", v.trim()))))
        .collect()
}

fn parse_one<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::config(key, format!("cannot parse `{}`", value.trim())))
}

/// Expands a sweep description such as
/// `planners=rrt,est;bias=clone,weight,rebranch;eps=0,0.1,0.5` into one
/// configuration per cell. `eps=0` (or `bias=none`) yields a single
/// unbiased baseline per planner. Scalar keys `time`, `iterations`,
/// `cov_weight`, `goal_bias` and `edge_steps` override `base`.
pub fn parse_sweep(spec: &str, base: &PlannerConfig) -> Result<Vec<NamedConfig>> {
    let mut planners = vec![base.planner];
    let mut biases = vec![base.bias];
    let mut eps = vec![base.epsilon];
    let mut base = base.clone();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, value) = part
            .split_once('=')
            .ok_or_else(|| Error::config("sweep", format!("`{part}` is not key=value")))?;
        let key = key.trim();
        match key {
            "planners" | "planner" => planners = parse_list(key, value, |v| v.parse().ok())?,
            "bias" | "biases" => biases = parse_list(key, value, |v| v.parse().ok())?,
            "eps" | "epsilon" => {
                eps = parse_list(key, value, |v| v.parse::<f64>().ok().filter(|e| (0.0..=1.0).contains(e)))?
            }
            "time" | "time_budget" => base.time_budget = Some(parse_one(key, value)?),
            "iterations" | "max_iterations" => base.max_iterations = parse_one(key, value)?,
            "cov_weight" => base.cov_weight = parse_one(key, value)?,
            "goal_bias" => base.goal_bias = parse_one(key, value)?,
            "edge_steps" => base.edge_steps = parse_one(key, value)?,
            other => return Err(Error::config("sweep", format!("unknown key `{other}`"))),
        }
    }
    let mut out: Vec<NamedConfig> = Vec::new();
    for &planner in &planners {
        for &bias in &biases {
            for &epsilon in &eps {
                let (bias, epsilon) = if bias == BiasKind::None || epsilon == 0.0 {
                    (BiasKind::None, 0.0)
                } else {
                    (bias, epsilon)
                };
                let cfg = PlannerConfig {
                    planner,
                    bias,
                    epsilon,
                    ..base.clone()
                };
                cfg.validate()?;
                let named = NamedConfig::new(cfg);
                if !out.iter().any(|c| c.label == named.label) {
                    out.push(named);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
    pub mean: f64,
}

impl Quantiles {
    /// NaN everywhere for an empty sample.
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                min: f64::NAN,
                q25: f64::NAN,
                median: f64::NAN,
                q75: f64::NAN,
                max: f64::NAN,
                mean: f64::NAN,
            };
        }
        let mut d = Data::new(values.to_vec());
        Self {
            min: d.min(),
            q25: d.lower_quartile(),
            median: d.median(),
            q75: d.upper_quartile(),
            max: d.max(),
            mean: values.mean(),
        }
    }

    fn fields(&self) -> [f64; 6] {
        [self.min, self.q25, self.median, self.q75, self.max, self.mean]
    }
}

/// Empirical execution summary of one successful trial.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutionSummary {
    pub rollouts: usize,
    pub max_obstacle_rate: f64,
    pub max_robot_robot_rate: f64,
    pub max_cl_failure_rate: f64,
    pub min_goal_rate: f64,
    pub within_budget: bool,
}

impl ExecutionSummary {
    pub fn from_report(report: &RolloutReport, env: &Environment) -> Self {
        Self {
            rollouts: report.rollouts,
            max_obstacle_rate: report.max_obstacle_rate(),
            max_robot_robot_rate: report.max_robot_robot_rate(),
            max_cl_failure_rate: report.max_cl_failure_rate(),
            min_goal_rate: report.min_goal_rate(),
            within_budget: report.within_budget(&env.budget),
        }
    }
}

/// Everything reproducible about one trial. The report's `elapsed` is zeroed;
/// wall time lives in [`TrialResult::elapsed`] only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub config: String,
    pub planner: PlannerKind,
    pub bias: BiasKind,
    pub epsilon: f64,
    pub trial: usize,
    pub seed: u64,
    pub report: PlanReport,
    /// Independent re-validation verdict for a returned plan.
    pub verified: Option<bool>,
    pub execution: Option<ExecutionSummary>,
}

/// Nominal workspace position and `2 sigma` radius of every robot at one step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryRow {
    pub step: usize,
    pub positions: Vec<Vec<f64>>,
    pub two_sigma: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct TrialResult {
    pub record: TrialRecord,
    pub elapsed: f64,
    pub plan: Option<MotionPlan>,
    pub trajectory: Vec<TrajectoryRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchStats {
    pub config: String,
    pub planner: PlannerKind,
    pub bias: BiasKind,
    pub epsilon: f64,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub seeds: Vec<u64>,
    pub iterations: Quantiles,
    pub tree_size: Quantiles,
    pub rejection_obstacle: Quantiles,
    pub rejection_robot_robot: Quantiles,
    pub rejection_cl: Quantiles,
    pub rejection_numeric: Quantiles,
    /// Successes that passed independent re-validation.
    pub verified: usize,
    /// Successes whose Monte-Carlo execution stayed within budget.
    pub executed_within_budget: usize,
}

impl BenchStats {
    pub fn rejection(&self, cause: RejectCause) -> &Quantiles {
        match cause {
            RejectCause::Obstacle => &self.rejection_obstacle,
            RejectCause::RobotRobot => &self.rejection_robot_robot,
            RejectCause::Cl => &self.rejection_cl,
            RejectCause::Numeric => &self.rejection_numeric,
        }
    }
}

/// Wall-clock distribution of one configuration, kept apart from the
/// reproducible statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub config: String,
    /// Seconds over all trials.
    pub all: Quantiles,
    /// Seconds over successful trials.
    pub solved: Quantiles,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct BatchOptions {
    /// Closed-loop rollouts per successful plan; `None` skips execution.
    pub rollouts: Option<usize>,
    /// Seed of the execution oracle.
    pub rollout_seed: u64,
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    pub stats: Vec<BenchStats>,
    pub timing: Vec<TimingStats>,
    pub trials: Vec<TrialResult>,
}

/// Two-sigma radius of every robot's workspace block of `gamma`.
pub fn two_sigma_radii(env: &Environment, gamma: &nalgebra::DMatrix<f64>) -> Vec<f64> {
    (0..env.model.num_robots())
        .map(|i| {
            let idx = env.model.workspace_indices(i);
            let block = gamma.select_rows(idx).select_columns(idx);
            2.0 * max_eigenvalue(&block).max(0.0).sqrt()
        })
        .collect()
}

/// Plans once and, on success, re-validates and optionally executes the plan.
pub fn run_trial(env: &Environment, named: &NamedConfig, trial: usize, seed: u64, options: &BatchOptions) -> Result<TrialResult> {
    let config = PlannerConfig {
        seed,
        ..named.config.clone()
    };
    let outcome = plan(env, &config)?;
    let mut record = TrialRecord {
        config: named.label.clone(),
        planner: config.planner,
        bias: config.bias,
        epsilon: config.epsilon,
        trial,
        seed,
        report: PlanReport {
            elapsed: Default::default(),
            ..outcome.report.clone()
        },
        verified: None,
        execution: None,
    };
    let mut trajectory = Vec::new();
    if let Some(p) = &outcome.plan {
        // the plan is checked against the model it was planned under
        let check_env = if config.use_exteroception {
            env.clone()
        } else {
            env.without_exteroception()
        };
        let gains = GainSet::lqr(check_env.model.robots(), config.lqr_q, config.lqr_r)?;
        let check = verify_plan(&check_env, &gains, p)?;
        record.verified = Some(check.is_valid());
        for (k, b) in check.beliefs.iter().enumerate() {
            trajectory.push(TrajectoryRow {
                step: k,
                positions: (0..env.model.num_robots())
                    .map(|i| env.model.workspace_position(&b.mean, i))
                    .collect(),
                two_sigma: two_sigma_radii(env, &b.gamma()),
            });
        }
        if let Some(n) = options.rollouts {
            let rep = execute_plan(&check_env, &gains, p, n, options.rollout_seed)?;
            record.execution = Some(ExecutionSummary::from_report(&rep, &check_env));
        }
    }
    Ok(TrialResult {
        record,
        elapsed: outcome.report.elapsed.as_secs_f64(),
        plan: outcome.plan,
        trajectory,
    })
}

fn aggregate(named: &NamedConfig, trials: &[&TrialResult]) -> (BenchStats, TimingStats) {
    let col = |f: &dyn Fn(&TrialResult) -> f64| -> Vec<f64> { trials.iter().map(|t| f(t)).collect() };
    let successes = trials.iter().filter(|t| t.record.report.success).count();
    let rate = |cause| Quantiles::of(&col(&|t| t.record.report.rejection_rate(cause)));
    let stats = BenchStats {
        config: named.label.clone(),
        planner: named.config.planner,
        bias: named.config.bias,
        epsilon: named.config.epsilon,
        trials: trials.len(),
        successes,
        success_rate: if trials.is_empty() {
            0.0
        } else {
            successes as f64 / trials.len() as f64
        },
        seeds: trials.iter().map(|t| t.record.seed).collect(),
        iterations: Quantiles::of(&col(&|t| t.record.report.iterations as f64)),
        tree_size: Quantiles::of(&col(&|t| t.record.report.tree_size as f64)),
        rejection_obstacle: rate(RejectCause::Obstacle),
        rejection_robot_robot: rate(RejectCause::RobotRobot),
        rejection_cl: rate(RejectCause::Cl),
        rejection_numeric: rate(RejectCause::Numeric),
        verified: trials.iter().filter(|t| t.record.verified == Some(true)).count(),
        executed_within_budget: trials
            .iter()
            .filter(|t| t.record.execution.as_ref().is_some_and(|e| e.within_budget))
            .count(),
    };
    let solved: Vec<f64> = trials.iter().filter(|t| t.record.report.success).map(|t| t.elapsed).collect();
    let timing = TimingStats {
        config: named.label.clone(),
        all: Quantiles::of(&col(&|t| t.elapsed)),
        solved: Quantiles::of(&solved),
    };
    (stats, timing)
}

/// Runs `trials` seeded queries per configuration on a worker pool. Trial
/// `t` uses seed `seed_base + t` under every configuration.
pub fn run_batch(
    env: &Environment,
    configs: &[NamedConfig],
    trials: usize,
    seed_base: u64,
    options: &BatchOptions,
) -> Result<BatchResult> {
    if trials == 0 {
        return Err(Error::config("trials", "must be at least 1"));
    }
    for c in configs {
        c.config.validate()?;
    }
    let jobs: Vec<(usize, usize)> = (0..configs.len())
        .flat_map(|c| (0..trials).map(move |t| (c, t)))
        .collect();
    let results: Vec<TrialResult> = jobs
        .par_iter()
        .map(|&(c, t)| run_trial(env, &configs[c], t, seed_base.wrapping_add(t as u64), options))
        .collect::<Result<_>>()?;
    let mut stats = Vec::new();
    let mut timing = Vec::new();
    for (c, named) in configs.iter().enumerate() {
        let mine: Vec<&TrialResult> = results[c * trials..(c + 1) * trials].iter().collect();
        let (s, t) = aggregate(named, &mine);
        stats.push(s);
        timing.push(t);
    }
    Ok(BatchResult {
        stats,
        timing,
        trials: results,
    })
}

const QUANTILE_NAMES: [&str; 6] = ["min", "q25", "median", "q75", "max", "mean"];

fn quantile_headers(prefix: &str) -> Vec<String> {
    QUANTILE_NAMES.iter().map(|q| format!("{prefix}_{q}")).collect()
}

pub fn stats_header() -> Vec<String> {
    let mut h: Vec<String> = ["config", "planner", "bias", "epsilon", "trials", "successes", "success_rate", "seeds"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    for p in ["iterations", "tree_size", "rej_obstacle", "rej_robot_robot", "rej_cl", "rej_numeric"] {
        h.extend(quantile_headers(p));
    }
    h.push("verified".into());
    h.push("executed_within_budget".into());
    h
}

fn stats_row(s: &BenchStats) -> Vec<String> {
    let seeds = match (s.seeds.first(), s.seeds.last()) {
        (Some(a), Some(b)) => format!("{a}-{b}"),
        _ => String::new(),
    };
    let mut row = vec![
        s.config.clone(),
        s.planner.to_string(),
        s.bias.to_string(),
        s.epsilon.to_string(),
        s.trials.to_string(),
        s.successes.to_string(),
        s.success_rate.to_string(),
        seeds,
    ];
    for q in [
        &s.iterations,
        &s.tree_size,
        &s.rejection_obstacle,
        &s.rejection_robot_robot,
        &s.rejection_cl,
        &s.rejection_numeric,
    ] {
        row.extend(q.fields().iter().map(f64::to_string));
    }
    row.push(s.verified.to_string());
    row.push(s.executed_within_budget.to_string());
    row
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| Error::io(path, std::io::Error::other(e)))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, std::io::Error::other(e))
}

pub fn write_trajectory_csv(path: &Path, rows: &[TrajectoryRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let n = rows.first().map_or(0, |r| r.positions.len());
    let dim = rows.first().and_then(|r| r.positions.first()).map_or(0, Vec::len);
    let mut header = vec!["step".to_string()];
    for i in 0..n {
        for d in ["x", "y", "z"].iter().take(dim) {
            header.push(format!("r{i}_{d}"));
        }
    }
    header.extend((0..n).map(|i| format!("r{i}_two_sigma")));
    w.write_record(&header).map_err(csv_err(path))?;
    for r in rows {
        let mut rec = vec![r.step.to_string()];
        rec.extend(r.positions.iter().flatten().map(f64::to_string));
        rec.extend(r.two_sigma.iter().map(f64::to_string));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Writes `stats.csv`, `trials.jsonl`, `timing.csv` and one trajectory CSV
/// per successful trial under `out_dir/trajectories`. Every file except
/// `timing.csv` depends on seeds only.
pub fn export_results(result: &BatchResult, out_dir: &Path) -> Result<()> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let path = out_dir.join("stats.csv");
    let mut w = csv_writer(&path)?;
    w.write_record(stats_header()).map_err(csv_err(&path))?;
    for s in &result.stats {
        w.write_record(stats_row(s)).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let path = out_dir.join("trials.jsonl");
    let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
    for t in &result.trials {
        let line = serde_json::to_string(&t.record).map_err(|e| Error::io(&path, e.into()))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&path, e))?;
    }

    let path = out_dir.join("timing.csv");
    let mut w = csv_writer(&path)?;
    let mut header = vec!["config".to_string()];
    header.extend(quantile_headers("all_s"));
    header.extend(quantile_headers("solved_s"));
    w.write_record(&header).map_err(csv_err(&path))?;
    for t in &result.timing {
        let mut row = vec![t.config.clone()];
        row.extend(t.all.fields().iter().chain(t.solved.fields().iter()).map(f64::to_string));
        w.write_record(&row).map_err(csv_err(&path))?;
    }
    w.flush().map_err(|e| Error::io(&path, e))?;

    let solved: Vec<&TrialResult> = result.trials.iter().filter(|t| !t.trajectory.is_empty()).collect();
    if !solved.is_empty() {
        let dir = out_dir.join("trajectories");
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        for t in solved {
            let name = format!("{}_trial{:03}.csv", t.record.config, t.record.trial);
            write_trajectory_csv(&dir.join(name), &t.trajectory)?;
        }
    }
    Ok(())
}

/// Self-contained plan file: the environment, the feedback weights and the plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanFile {
    pub environment: EnvironmentFile,
    pub lqr_q: f64,
    pub lqr_r: f64,
    /// False when the plan was made with exteroception disabled.
    #[serde(default = "default_true")]
    pub use_exteroception: bool,
    pub plan: MotionPlan,
}

fn default_true() -> bool {
    true
}

impl PlanFile {
    pub fn new(env: &Environment, config: &PlannerConfig, plan: MotionPlan) -> Self {
        Self {
            environment: env.to_file(),
            lqr_q: config.lqr_q,
            lqr_r: config.lqr_r,
            use_exteroception: config.use_exteroception,
            plan,
        }
    }

    /// Environment the plan must be checked against, and its gains.
    pub fn resolve(&self) -> Result<(Environment, GainSet)> {
        let mut env = Environment::from_file(self.environment.clone())?;
        if !self.use_exteroception {
            env = env.without_exteroception();
        }
        let gains = GainSet::lqr(env.model.robots(), self.lqr_q, self.lqr_r)?;
        Ok((env, gains))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).expect("plan files serialize");
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::builtin;

    fn quick() -> PlannerConfig {
        PlannerConfig {
            goal_bias: 0.5,
            time_budget: None,
            max_iterations: 300,
            ..PlannerConfig::default()
        }
    }

    #[test]
    fn sweep_expands_with_one_baseline_per_planner() {
        let c = parse_sweep("planners=rrt,est;bias=clone,weight,rebranch;eps=0,0.1,0.5", &PlannerConfig::default()).unwrap();
        assert_eq!(c.len(), 2 * (1 + 3 * 2));
        assert_eq!(c.iter().filter(|c| c.label.ends_with("baseline")).count(), 2);
        let c = parse_sweep("planners=est;bias=weight;eps=0.25;time=15;cov_weight=100", &PlannerConfig::default()).unwrap();
        assert_eq!(c.len(), 1);
        assert_eq!(c[0].label, "est-weight-0.25");
        assert_eq!(c[0].config.time_budget, Some(15.0));
        assert_eq!(c[0].config.cov_weight, 100.0);
    }

    #[test]
    fn bad_sweeps_name_the_field() {
        let base = PlannerConfig::default();
        assert!(matches!(parse_sweep("eps=2", &base), Err(Error::Config { .. })));
        assert!(matches!(parse_sweep("bias=magic", &base), Err(Error::Config { field, .. }) if field == "bias"));
        assert!(parse_sweep("nonsense", &base).is_err());
    }

    #[test]
    fn quantiles_of_small_samples() {
        let q = Quantiles::of(&[4.0, 1.0, 3.0, 2.0]);
        assert_eq!((q.min, q.max, q.mean), (1.0, 4.0, 2.5));
        assert_eq!(q.median, 2.5);
        assert!(Quantiles::of(&[]).median.is_nan());
    }

    #[test]
    fn trivial_batch_succeeds_and_is_deterministic() {
        let env = builtin("trivial2").unwrap();
        let cfgs = vec![NamedConfig::new(quick())];
        let run = || run_batch(&env, &cfgs, 3, 7, &BatchOptions::default()).unwrap();
        let a = run();
        assert_eq!(a.stats[0].success_rate, 1.0);
        assert_eq!(a.stats[0].seeds, vec![7, 8, 9]);
        assert_eq!(a.stats[0].verified, 3);
        assert_eq!(a.stats, run().stats);
        assert!(run_batch(&env, &cfgs, 0, 0, &BatchOptions::default()).is_err());
    }

    #[test]
    fn export_writes_expected_files() {
        let env = builtin("trivial2").unwrap();
        let cfgs = vec![NamedConfig::new(quick())];
        let res = run_batch(&env, &cfgs, 1, 0, &BatchOptions { rollouts: Some(1000), rollout_seed: 1 }).unwrap();
        assert!(res.trials[0].record.execution.as_ref().unwrap().within_budget);
        let dir = tempfile::tempdir().unwrap();
        export_results(&res, dir.path()).unwrap();
        let t = res.trials[0].plan.as_ref().unwrap().horizon();
        let traj = fs::read_to_string(dir.path().join("trajectories/rrt-baseline_trial000.csv")).unwrap();
        assert_eq!(traj.lines().count(), 1 + t + 1);
        let stats = fs::read_to_string(dir.path().join("stats.csv")).unwrap();
        assert_eq!(stats.lines().count(), 2);
        assert_eq!(fs::read_to_string(dir.path().join("trials.jsonl")).unwrap().lines().count(), 1);
    }

    #[test]
    fn empty_stats_give_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let empty = BatchResult {
            stats: vec![],
            timing: vec![],
            trials: vec![],
        };
        export_results(&empty, dir.path()).unwrap();
        let stats = fs::read_to_string(dir.path().join("stats.csv")).unwrap();
        assert_eq!(stats.lines().count(), 1);
        assert!(stats.starts_with("config,planner,bias,epsilon"));
    }

    #[test]
    fn two_sigma_column_matches_gamma() {
        let env = builtin("trivial2").unwrap();
        let res = run_trial(&env, &NamedConfig::new(quick()), 0, 3, &BatchOptions::default()).unwrap();
        let p = res.plan.unwrap();
        let gains = GainSet::lqr(env.model.robots(), 1.0, 1.0).unwrap();
        let check = verify_plan(&env, &gains, &p).unwrap();
        for (row, b) in res.trajectory.iter().zip(&check.beliefs) {
            let g = b.gamma();
            for i in 0..2 {
                // 2x2 block: closed-form largest eigenvalue
                let (a, bb, d) = (g[(2 * i, 2 * i)], g[(2 * i, 2 * i + 1)], g[(2 * i + 1, 2 * i + 1)]);
                let lmax = 0.5 * (a + d) + (0.25 * (a - d).powi(2) + bb * bb).sqrt();
                assert!((row.two_sigma[i] - 2.0 * lmax.sqrt()).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn plan_file_round_trip() {
        let env = builtin("trivial2").unwrap();
        let cfg = quick();
        let p = plan(&env, &cfg).unwrap().plan.unwrap();
        let f = PlanFile::new(&env, &cfg, p);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.json");
        f.save(&path).unwrap();
        let g = PlanFile::load(&path).unwrap();
        assert_eq!(f, g);
        let (env2, _) = g.resolve().unwrap();
        assert_eq!(env2.model, env.model);
    }
}
