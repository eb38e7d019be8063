//! Belief-space RRT and EST over expected team beliefs.

mod context;
mod motion_plan;
mod tree;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::biasing::{self, BiasState, RebranchOutcome};
use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::validation::Rejection;

pub use context::{Candidate, SearchContext};
pub use motion_plan::{extract_plan, verify_plan, MotionPlan, PlanCheck, StepViolation};
pub use tree::{BeliefNode, BeliefTree, TreeOptions};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlannerKind {
    #[default]
    Rrt,
    Est,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasKind {
    #[default]
    None,
    Clone,
    Weight,
    Rebranch,
}

impl fmt::Display for PlannerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PlannerKind::Rrt => "rrt",
            PlannerKind::Est => "est",
        })
    }
}

impl fmt::Display for BiasKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BiasKind::None => "none",
            BiasKind::Clone => "clone",
            BiasKind::Weight => "weight",
            BiasKind::Rebranch => "rebranch",
        })
    }
}

impl FromStr for PlannerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "rrt" => Ok(PlannerKind::Rrt),
            "est" => Ok(PlannerKind::Est),
            other => Err(Error::Argument(format!("unknown planner `{other}` (rrt|est)"))),
        }
    }
}

impl FromStr for BiasKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "none" => Ok(BiasKind::None),
            "clone" | "cloning" => Ok(BiasKind::Clone),
            "weight" | "weighting" => Ok(BiasKind::Weight),
            "rebranch" | "rebranching" => Ok(BiasKind::Rebranch),
            other => Err(Error::Argument(format!(
                "unknown bias `{other}` (none|clone|weight|rebranch)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    pub planner: PlannerKind,
    pub bias: BiasKind,
    /// Rate of the CL bias.
    pub epsilon: f64,
    /// Rate of classic goal biasing, independent of `epsilon`.
    pub goal_bias: f64,
    pub max_iterations: usize,
    /// Wall-clock limit in seconds; `None` means iterations only.
    pub time_budget: Option<f64>,
    /// Control steps per edge.
    pub edge_steps: usize,
    pub seed: u64,
    /// EST neighbourhood radius; defaults to 10% of the workspace diagonal.
    pub est_radius: Option<f64>,
    /// Weight of the `trace(Gamma)` term in the nearest-neighbour metric.
    pub cov_weight: f64,
    /// Distance weight given to nodes whose robots all coincide.
    pub weight_cap: f64,
    pub lqr_q: f64,
    pub lqr_r: f64,
    /// When false, no exteroceptive measurement is ever scheduled.
    pub use_exteroception: bool,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            planner: PlannerKind::Rrt,
            bias: BiasKind::None,
            epsilon: 0.0,
            goal_bias: 0.05,
            max_iterations: 100_000,
            time_budget: Some(60.0),
            edge_steps: 5,
            seed: 0,
            est_radius: None,
            cov_weight: 0.0,
            weight_cap: 1e6,
            lqr_q: 1.0,
            lqr_r: 1.0,
            use_exteroception: true,
        }
    }
}

impl PlannerConfig {
    pub fn validate(&self) -> Result<()> {
        let rate = |field: &str, v: f64| {
            if (0.0..=1.0).contains(&v) {
                Ok(())
            } else {
                Err(Error::config(field, format!("{v} is not in [0, 1]")))
            }
        };
        rate("epsilon", self.epsilon)?;
        rate("goal_bias", self.goal_bias)?;
        if self.edge_steps == 0 {
            return Err(Error::config("edge_steps", "must be at least 1"));
        }
        if let Some(t) = self.time_budget {
            if !(t > 0.0) {
                return Err(Error::config("time_budget", "must be positive"));
            }
        }
        if let Some(r) = self.est_radius {
            if !(r > 0.0) {
                return Err(Error::config("est_radius", "must be positive"));
            }
        }
        if !(self.cov_weight >= 0.0) {
            return Err(Error::config("cov_weight", "must be non-negative"));
        }
        if !(self.weight_cap > 0.0 && self.weight_cap.is_finite()) {
            return Err(Error::config("weight_cap", "must be positive and finite"));
        }
        if !(self.lqr_q > 0.0 && self.lqr_r > 0.0) {
            return Err(Error::config("lqr_q/lqr_r", "LQR weights must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectCause {
    Obstacle,
    RobotRobot,
    Cl,
    Numeric,
}

impl From<Rejection> for RejectCause {
    fn from(r: Rejection) -> Self {
        match r {
            Rejection::Obstacle { .. } => RejectCause::Obstacle,
            Rejection::RobotRobot { .. } => RejectCause::RobotRobot,
            Rejection::ClUnavailable { .. } => RejectCause::Cl,
            Rejection::Numeric => RejectCause::Numeric,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RejectionTally {
    pub obstacle: u64,
    pub robot_robot: u64,
    pub cl: u64,
    pub numeric: u64,
}

impl RejectionTally {
    pub fn record(&mut self, cause: RejectCause) {
        *self.get_mut(cause) += 1;
    }

    fn get_mut(&mut self, cause: RejectCause) -> &mut u64 {
        match cause {
            RejectCause::Obstacle => &mut self.obstacle,
            RejectCause::RobotRobot => &mut self.robot_robot,
            RejectCause::Cl => &mut self.cl,
            RejectCause::Numeric => &mut self.numeric,
        }
    }

    pub fn get(&self, cause: RejectCause) -> u64 {
        match cause {
            RejectCause::Obstacle => self.obstacle,
            RejectCause::RobotRobot => self.robot_robot,
            RejectCause::Cl => self.cl,
            RejectCause::Numeric => self.numeric,
        }
    }

    pub fn total(&self) -> u64 {
        self.obstacle + self.robot_robot + self.cl + self.numeric
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RebranchStats {
    pub attempts: u64,
    pub inserted: u64,
    pub noops: u64,
    pub rejected: u64,
}

/// Summary of one planning query. `elapsed` is wall time and is left out of
/// serialized records so they stay reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub success: bool,
    pub iterations: u64,
    pub tree_size: usize,
    /// Extension attempts, rebranch attempts included.
    pub attempts: u64,
    /// Rejected attempts by cause, failed rebranches included.
    pub rejections: RejectionTally,
    pub rebranch: RebranchStats,
    pub plan_steps: Option<usize>,
    pub goal_node: Option<usize>,
    #[serde(skip)]
    pub elapsed: Duration,
}

impl PlanReport {
    /// Rejections of one cause per attempt.
    pub fn rejection_rate(&self, cause: RejectCause) -> f64 {
        if self.attempts == 0 {
            0.0
        } else {
            self.rejections.get(cause) as f64 / self.attempts as f64
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanOutcome {
    pub plan: Option<MotionPlan>,
    pub report: PlanReport,
    pub tree: BeliefTree,
}

/// Where an RRT sample came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleKind {
    Clone,
    Goal,
    Uniform,
}

/// One RRT sample over the composed workspace. A single uniform draw is
/// partitioned into CL-bias, goal-bias and uniform segments.
pub fn sample_rrt_target<R: Rng + ?Sized>(
    ctx: &SearchContext,
    config: &PlannerConfig,
    bias: &mut BiasState,
    rng: &mut R,
) -> (Vec<f64>, SampleKind) {
    let p: f64 = rng.random();
    let clone_rate = if config.bias == BiasKind::Clone {
        config.epsilon
    } else {
        0.0
    };
    if p < clone_rate {
        let mut s = ctx.uniform_sample(rng);
        biasing::clone_sample(&mut s, ctx.workspace_dim(), bias);
        (s, SampleKind::Clone)
    } else if p < clone_rate + config.goal_bias {
        (ctx.goal_sample(), SampleKind::Goal)
    } else {
        (ctx.uniform_sample(rng), SampleKind::Uniform)
    }
}

/// RRT selection: nearest node to a (possibly biased) sample.
pub fn select_rrt<R: Rng + ?Sized>(
    tree: &BeliefTree,
    ctx: &SearchContext,
    config: &PlannerConfig,
    bias: &mut BiasState,
    rng: &mut R,
) -> (usize, Vec<f64>) {
    if config.bias == BiasKind::Weight {
        let p: f64 = rng.random();
        if p < config.epsilon {
            let node = biasing::biased_pdf_sample(tree, rng);
            return (node, ctx.uniform_sample(rng));
        }
    }
    let (target, _) = sample_rrt_target(ctx, config, bias, rng);
    (tree.nearest(&target), target)
}

/// EST selection: distance-weight PDF with probability `epsilon` when
/// weighting, otherwise the sparsity PDF. Cloning instead picks the node
/// nearest a cloned sample and returns that sample as the steering target.
pub fn select_est<R: Rng + ?Sized>(
    tree: &BeliefTree,
    ctx: &SearchContext,
    config: &PlannerConfig,
    bias: &mut BiasState,
    rng: &mut R,
) -> (usize, Option<Vec<f64>>) {
    let p: f64 = rng.random();
    if p < config.epsilon {
        match config.bias {
            BiasKind::Weight => return (biasing::biased_pdf_sample(tree, rng), None),
            BiasKind::Clone => {
                let mut s = ctx.uniform_sample(rng);
                biasing::clone_sample(&mut s, ctx.workspace_dim(), bias);
                return (tree.nearest(&s), Some(s));
            }
            _ => {}
        }
    }
    (tree.sample_sparse(rng), None)
}

fn deadline_passed(start: Instant, budget: Option<f64>) -> bool {
    budget.is_some_and(|b| start.elapsed().as_secs_f64() >= b)
}

/// Runs one planning query. The returned plan is the first whose terminal
/// node satisfies every robot's goal check.
pub fn plan(env: &Environment, config: &PlannerConfig) -> Result<PlanOutcome> {
    config.validate()?;
    let start = Instant::now();
    let ctx = SearchContext::new(env, config)?;
    let root = env.root_belief()?;
    if let Err(rej) = ctx.validator().validate(&root.mean, &root.gamma(), &[]) {
        return Err(Error::Setup(format!("root belief is not valid: {rej:?}")));
    }
    let options = TreeOptions {
        sparsity_radius: (config.planner == PlannerKind::Est)
            .then(|| config.est_radius.unwrap_or(0.1 * env.geometry.workspace.diagonal())),
        weight_cap: config.weight_cap,
        cov_weight: config.cov_weight,
    };
    let mut tree = BeliefTree::new(ctx.model(), root, options);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut bias = BiasState::new(ctx.model().num_robots());
    let mut report = PlanReport::default();
    let mut goal = ctx.goal_reached(tree.node(0)).then_some(0);

    while goal.is_none() && report.iterations < config.max_iterations as u64 {
        if deadline_passed(start, config.time_budget) {
            break;
        }
        report.iterations += 1;
        let (mut node, mut target) = match config.planner {
            PlannerKind::Rrt => {
                let (n, t) = select_rrt(&tree, &ctx, config, &mut bias, &mut rng);
                (n, Some(t))
            }
            PlannerKind::Est => select_est(&tree, &ctx, config, &mut bias, &mut rng),
        };
        if config.bias == BiasKind::Rebranch && rng.random::<f64>() < config.epsilon {
            report.attempts += 1;
            report.rebranch.attempts += 1;
            let (tip, outcome) = biasing::rebranch(&ctx, &mut tree, node, &mut bias);
            match outcome {
                RebranchOutcome::Inserted => {
                    report.rebranch.inserted += 1;
                    if ctx.goal_reached(tree.node(tip)) {
                        goal = Some(tip);
                        break;
                    }
                }
                RebranchOutcome::NoOp => report.rebranch.noops += 1,
                RebranchOutcome::Rejected(cause) => {
                    report.rebranch.rejected += 1;
                    report.rejections.record(cause);
                }
            }
            node = tip;
        }
        if config.planner == PlannerKind::Est && target.is_none() && rng.random::<f64>() < config.goal_bias {
            target = Some(ctx.goal_sample());
        }
        report.attempts += 1;
        let from = &tree.node(node).belief;
        let candidate = match &target {
            Some(t) => ctx.extend_toward(from, t, config.edge_steps),
            None => {
                let u = ctx.random_control(&mut rng);
                ctx.extend_constant(from, &u, config.edge_steps)
            }
        };
        match candidate {
            Ok(c) => {
                let id = tree.insert(ctx.model(), node, c);
                if ctx.goal_reached(tree.node(id)) {
                    goal = Some(id);
                }
            }
            Err(cause) => report.rejections.record(cause),
        }
    }

    let plan = match goal {
        Some(g) => Some(extract_plan(&tree, ctx.model(), g)?),
        None => None,
    };
    report.success = plan.is_some();
    report.goal_node = goal;
    report.plan_steps = plan.as_ref().map(|p| p.horizon());
    report.tree_size = tree.len();
    report.elapsed = start.elapsed();
    Ok(PlanOutcome { plan, report, tree })
}
