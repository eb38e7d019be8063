use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::propagation::{ExpectedBelief, GainSet, Propagator};
use crate::team::{MeasurementSchedule, TeamModel};
use crate::validation::Rejection;

use super::BeliefTree;

const REPLAY_TOL: f64 = 1e-9;

/// Per-robot nominal controls (`T` each) and states (`T + 1` each) plus the
/// shared measurement schedule (`T` steps).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionPlan {
    pub controls: Vec<Vec<Vec<f64>>>,
    pub states: Vec<Vec<Vec<f64>>>,
    pub schedule: MeasurementSchedule,
}

impl MotionPlan {
    pub fn horizon(&self) -> usize {
        self.schedule.len()
    }

    pub fn num_robots(&self) -> usize {
        self.states.len()
    }

    pub fn composed_control(&self, k: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.controls.iter().map(|c| c[k].len()).sum(),
            self.controls.iter().flat_map(|c| c[k].iter().copied()),
        )
    }

    pub fn composed_state(&self, k: usize) -> DVector<f64> {
        DVector::from_iterator(
            self.states.iter().map(|s| s[k].len()).sum(),
            self.states.iter().flat_map(|s| s[k].iter().copied()),
        )
    }

    /// Shape check plus replay of the controls through the nominal dynamics.
    pub fn check_replay(&self, model: &TeamModel) -> Result<()> {
        let t = self.horizon();
        let n = model.num_robots();
        if self.controls.len() != n || self.states.len() != n {
            return Err(Error::Consistency(format!("plan covers {} robots, model has {n}", self.states.len())));
        }
        for i in 0..n {
            if self.controls[i].len() != t || self.states[i].len() != t + 1 {
                return Err(Error::Consistency(format!("robot {i} has inconsistent plan lengths")));
            }
            let (ns, nc) = (model.state_range(i).len(), model.control_range(i).len());
            if self.states[i].iter().any(|s| s.len() != ns) || self.controls[i].iter().any(|u| u.len() != nc) {
                return Err(Error::Consistency(format!("robot {i} has wrongly sized plan entries")));
            }
        }
        self.schedule.validate(model)?;
        let sys = model.system();
        for k in 0..t {
            let next = sys.step_mean(&self.composed_state(k), &self.composed_control(k));
            let err = (next - self.composed_state(k + 1)).amax();
            if !(err <= REPLAY_TOL) {
                return Err(Error::Consistency(format!(
                    "nominal replay diverges by {err} at step {k}"
                )));
            }
        }
        Ok(())
    }
}

/// Concatenates the edges from the root to `goal` and splits the composed
/// sequences per robot.
pub fn extract_plan(tree: &BeliefTree, model: &TeamModel, goal: usize) -> Result<MotionPlan> {
    let n = model.num_robots();
    let root = &tree.node(0).belief.mean;
    let split_state = |x: &DVector<f64>, i: usize| x.rows(model.state_range(i).start, model.state_range(i).len()).iter().copied().collect::<Vec<_>>();
    let mut plan = MotionPlan {
        controls: vec![Vec::new(); n],
        states: (0..n).map(|i| vec![split_state(root, i)]).collect(),
        schedule: MeasurementSchedule::default(),
    };
    for id in tree.path(goal).into_iter().skip(1) {
        let edge = &tree.node(id).edge;
        for (k, u) in edge.controls.iter().enumerate() {
            for i in 0..n {
                let r = model.control_range(i);
                plan.controls[i].push(u.rows(r.start, r.len()).iter().copied().collect());
                plan.states[i].push(split_state(&edge.states[k + 1], i));
            }
            plan.schedule.steps.push(edge.schedule[k].clone());
        }
    }
    plan.check_replay(model)?;
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepViolation {
    /// Time index of the offending belief.
    pub step: usize,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Obstacle { robot: usize },
    RobotRobot { i: usize, j: usize },
    ClUnavailable { pair: usize },
    Goal { robot: usize },
    Numeric,
}

impl From<Rejection> for ViolationKind {
    fn from(r: Rejection) -> Self {
        match r {
            Rejection::Obstacle { robot } => ViolationKind::Obstacle { robot },
            Rejection::RobotRobot { i, j } => ViolationKind::RobotRobot { i, j },
            Rejection::ClUnavailable { pair } => ViolationKind::ClUnavailable { pair },
            Rejection::Numeric => ViolationKind::Numeric,
        }
    }
}

/// Result of re-propagating a plan from the root and re-running every check.
#[derive(Debug, Clone)]
pub struct PlanCheck {
    /// Expected beliefs at steps `0..=T`.
    pub beliefs: Vec<ExpectedBelief>,
    pub violations: Vec<StepViolation>,
}

impl PlanCheck {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Independent validation pass: rebuilds `Sigma` and `Lambda` from the root
/// with the plan's controls and schedule, checks every step and the goals.
pub fn verify_plan(env: &Environment, gains: &GainSet, plan: &MotionPlan) -> Result<PlanCheck> {
    let model = &env.model;
    plan.check_replay(model)?;
    let validator = env.validator()?;
    let propagator = Propagator::for_team(model, gains)?;
    let root = env.root_belief()?;
    if (&root.mean - plan.composed_state(0)).amax() > REPLAY_TOL {
        return Err(Error::Consistency("plan does not start at the environment's start means".into()));
    }
    let mut violations = Vec::new();
    if let Err(r) = validator.validate(&root.mean, &root.gamma(), &[]) {
        violations.push(StepViolation { step: 0, kind: r.into() });
    }
    let mut beliefs = vec![root];
    for k in 0..plan.horizon() {
        let (c, r) = plan.schedule.materialize(model, k)?;
        let prev = beliefs.last().expect("root pushed");
        let next = match propagator.step(prev, &plan.composed_control(k), &c, &r) {
            Ok(b) => b,
            Err(_) => {
                violations.push(StepViolation {
                    step: k + 1,
                    kind: ViolationKind::Numeric,
                });
                return Ok(PlanCheck { beliefs, violations });
            }
        };
        if let Err(rej) = validator.validate(&next.mean, &next.gamma(), &plan.schedule.steps[k]) {
            violations.push(StepViolation {
                step: k + 1,
                kind: rej.into(),
            });
        }
        beliefs.push(next);
    }
    let last = beliefs.last().expect("non-empty");
    let gamma = last.gamma();
    for robot in 0..model.num_robots() {
        if !validator.goal_ok(&last.mean, &gamma, robot) {
            violations.push(StepViolation {
                step: plan.horizon(),
                kind: ViolationKind::Goal { robot },
            });
        }
    }
    Ok(PlanCheck { beliefs, violations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::builtin;
    use crate::planner::{plan, PlannerConfig, SearchContext, TreeOptions};

    #[test]
    fn root_goal_gives_empty_plan() {
        let env = builtin("hive2").unwrap();
        let ctx = SearchContext::new(&env, &PlannerConfig::default()).unwrap();
        let tree = BeliefTree::new(ctx.model(), env.root_belief().unwrap(), TreeOptions::default());
        let p = extract_plan(&tree, ctx.model(), 0).unwrap();
        assert_eq!(p.horizon(), 0);
        assert_eq!(p.states[0].len(), 1);
        assert!(p.controls.iter().all(|c| c.is_empty()));
    }

    #[test]
    fn edge_lengths_add_up() {
        let env = builtin("hive2").unwrap();
        let ctx = SearchContext::new(&env, &PlannerConfig::default()).unwrap();
        let root = env.root_belief().unwrap();
        let mut tree = BeliefTree::new(ctx.model(), root.clone(), TreeOptions::default());
        let e1 = ctx.extend_toward(&root, &[2.5, 2.5, 3.5, 2.5], 2).unwrap();
        let mid = e1.beliefs[1].clone();
        let a = tree.insert(ctx.model(), 0, e1);
        let e2 = ctx.extend_toward(&mid, &[2.5, 4.0, 3.5, 3.5], 3).unwrap();
        let b = tree.insert(ctx.model(), a, e2);
        let p = extract_plan(&tree, ctx.model(), b).unwrap();
        assert_eq!(p.horizon(), 5);
        assert_eq!(p.states[1].len(), 6);
        // replay oracle: x_{k+1} = x_k + u_k for single integrators
        for i in 0..2 {
            for k in 0..5 {
                for d in 0..2 {
                    let x = p.states[i][k][d] + p.controls[i][k][d];
                    assert!((x - p.states[i][k + 1][d]).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn tampered_plan_fails_replay() {
        let env = builtin("trivial2").unwrap();
        let cfg = PlannerConfig {
            goal_bias: 0.5,
            time_budget: None,
            max_iterations: 200,
            ..PlannerConfig::default()
        };
        let mut p = plan(&env, &cfg).unwrap().plan.unwrap();
        p.controls[0][0][0] += 0.1;
        assert!(matches!(p.check_replay(&env.model), Err(Error::Consistency(_))));
    }

    #[test]
    fn returned_plans_pass_independent_check() {
        let env = builtin("trivial2").unwrap();
        let cfg = PlannerConfig {
            goal_bias: 0.5,
            time_budget: None,
            max_iterations: 200,
            ..PlannerConfig::default()
        };
        let p = plan(&env, &cfg).unwrap().plan.unwrap();
        let gains = GainSet::lqr(env.model.robots(), 1.0, 1.0).unwrap();
        let check = verify_plan(&env, &gains, &p).unwrap();
        assert!(check.is_valid(), "{:?}", check.violations);
        assert_eq!(check.beliefs.len(), p.horizon() + 1);
    }
}
