use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::propagation::{EdgeRecord, ExpectedBelief, GainSet, Propagator};
use crate::team::TeamModel;
use crate::validation::{Validator, Workspace};

use super::{BeliefNode, PlannerConfig, RejectCause};

/// A validated edge: one belief per control step plus the edge record.
#[derive(Debug, Clone)]
pub struct Candidate {
    pub beliefs: Vec<ExpectedBelief>,
    pub edge: EdgeRecord,
}

/// Everything an extension needs: team, checks, propagator and steering data.
#[derive(Debug, Clone)]
pub struct SearchContext {
    model: TeamModel,
    validator: Validator,
    propagator: Propagator,
    gains: GainSet,
    workspace: Workspace,
    goal_sample: Vec<f64>,
    use_exteroception: bool,
    // per robot: pinv(P B) and P A, with P the workspace selection
    steer_inv: Vec<DMatrix<f64>>,
    steer_drift: Vec<DMatrix<f64>>,
}

impl SearchContext {
    pub fn new(env: &Environment, config: &PlannerConfig) -> Result<Self> {
        let model = if config.use_exteroception {
            env.model.clone()
        } else {
            env.model.without_pairs()
        };
        let gains = GainSet::lqr(model.robots(), config.lqr_q, config.lqr_r)?;
        let propagator = Propagator::for_team(&model, &gains)?;
        let validator = Validator::new(
            &model,
            env.geometry.clone(),
            env.goals.clone(),
            &env.budget,
            env.divide_pair_budget,
        )?;
        let mut steer_inv = Vec::new();
        let mut steer_drift = Vec::new();
        for r in model.robots() {
            let p = DMatrix::from_fn(r.workspace_proj.len(), r.state_dim(), |i, j| {
                if r.workspace_proj[i] == j {
                    1.0
                } else {
                    0.0
                }
            });
            let pb = &p * &r.b;
            let inv = pb
                .pseudo_inverse(1e-12)
                .map_err(|e| Error::Numeric(format!("steering pseudo-inverse: {e}")))?;
            steer_inv.push(inv);
            steer_drift.push(&p * &r.a);
        }
        Ok(Self {
            goal_sample: env.goals.iter().flat_map(|g| g.center.iter().copied()).collect(),
            workspace: env.geometry.workspace.clone(),
            use_exteroception: config.use_exteroception,
            model,
            validator,
            propagator,
            gains,
            steer_inv,
            steer_drift,
        })
    }

    pub fn model(&self) -> &TeamModel {
        &self.model
    }

    pub fn validator(&self) -> &Validator {
        &self.validator
    }

    pub fn propagator(&self) -> &Propagator {
        &self.propagator
    }

    pub fn gains(&self) -> &GainSet {
        &self.gains
    }

    pub fn workspace_dim(&self) -> usize {
        self.model.workspace_dim()
    }

    /// Independent uniform workspace position for every robot, concatenated.
    pub fn uniform_sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        let n = self.model.num_robots();
        let mut s = Vec::with_capacity(n * self.workspace_dim());
        for _ in 0..n {
            for (lo, hi) in self.workspace.min.iter().zip(&self.workspace.max) {
                s.push(rng.random_range(*lo..*hi));
            }
        }
        s
    }

    /// Goal centres of all robots, concatenated.
    pub fn goal_sample(&self) -> Vec<f64> {
        self.goal_sample.clone()
    }

    pub fn goal_reached(&self, node: &BeliefNode) -> bool {
        self.validator.all_goals_ok(&node.belief.mean, &node.gamma)
    }

    /// Control that moves each robot's workspace position toward `target`
    /// in one step, clamped to the control bounds.
    pub fn steer(&self, x: &DVector<f64>, target: &[f64]) -> DVector<f64> {
        let w = self.workspace_dim();
        let mut u = DVector::zeros(self.model.control_dim());
        for (i, r) in self.model.robots().iter().enumerate() {
            let xs = x.rows(self.model.state_range(i).start, r.state_dim());
            let drift = &self.steer_drift[i] * xs;
            let d = DVector::from_fn(w, |k, _| target[i * w + k] - drift[k]);
            let ui = &self.steer_inv[i] * d;
            let off = self.model.control_range(i).start;
            for (k, &(lo, hi)) in r.control_bounds.iter().enumerate() {
                u[off + k] = ui[k].clamp(lo, hi);
            }
        }
        u
    }

    pub fn random_control<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let bounds: Vec<(f64, f64)> = self
            .model
            .robots()
            .iter()
            .flat_map(|r| r.control_bounds.iter().copied())
            .collect();
        DVector::from_iterator(
            bounds.len(),
            bounds.iter().map(|&(lo, hi)| if lo < hi { rng.random_range(lo..=hi) } else { lo }),
        )
    }

    /// Propagates `steps` controls from `from`. Each step schedules every
    /// pair whose availability check passes on the predicted belief, runs the
    /// update, then validates the resulting belief.
    pub fn rollout(
        &self,
        from: &ExpectedBelief,
        steps: usize,
        mut control: impl FnMut(usize, &DVector<f64>) -> DVector<f64>,
    ) -> std::result::Result<Candidate, RejectCause> {
        let mut beliefs = Vec::with_capacity(steps);
        let mut edge = EdgeRecord {
            controls: Vec::with_capacity(steps),
            states: Vec::with_capacity(steps + 1),
            schedule: Vec::with_capacity(steps),
        };
        edge.states.push(from.mean.clone());
        let mut current = from.clone();
        for s in 0..steps {
            let u = control(s, &current.mean);
            let pred = self
                .propagator
                .predict(&current, &u)
                .map_err(|_| RejectCause::Numeric)?;
            let active = if self.use_exteroception {
                self.validator.enabled_pairs(&pred.mean, &pred.gamma())
            } else {
                Vec::new()
            };
            let (c, r) = self
                .model
                .assemble_measurement(&active)
                .map_err(|_| RejectCause::Numeric)?;
            let next = self
                .propagator
                .update(pred, &c, &r)
                .map_err(|_| RejectCause::Numeric)?;
            self.validator
                .validate(&next.mean, &next.gamma(), &active)
                .map_err(RejectCause::from)?;
            edge.controls.push(u);
            edge.states.push(next.mean.clone());
            edge.schedule.push(active);
            beliefs.push(next.clone());
            current = next;
        }
        Ok(Candidate { beliefs, edge })
    }

    pub fn extend_toward(
        &self,
        from: &ExpectedBelief,
        target: &[f64],
        steps: usize,
    ) -> std::result::Result<Candidate, RejectCause> {
        self.rollout(from, steps, |_, x| self.steer(x, target))
    }

    pub fn extend_constant(
        &self,
        from: &ExpectedBelief,
        u: &DVector<f64>,
        steps: usize,
    ) -> std::result::Result<Candidate, RejectCause> {
        self.rollout(from, steps, |_, _| u.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::builtin;

    fn ctx() -> (Environment, SearchContext) {
        let env = builtin("hive2").unwrap();
        let c = SearchContext::new(&env, &PlannerConfig::default()).unwrap();
        (env, c)
    }

    #[test]
    fn steering_reaches_close_target_in_one_step() {
        let (env, ctx) = ctx();
        let root = env.root_belief().unwrap();
        let mut target = ctx.model().workspace_positions(&root.mean);
        target[0] += 0.3;
        target[3] -= 0.2;
        let c = ctx.extend_toward(&root, &target, 1).unwrap();
        let reached = ctx.model().workspace_positions(&c.beliefs[0].mean);
        for (a, b) in reached.iter().zip(&target) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn steering_respects_bounds() {
        let (env, ctx) = ctx();
        let root = env.root_belief().unwrap();
        let u = ctx.steer(&root.mean, &[9.0, 9.0, -5.0, 1.5]);
        assert_eq!(u.as_slice(), &[0.5, 0.5, -0.5, 0.0]);
    }

    #[test]
    fn target_at_mean_gives_zero_controls() {
        let (env, ctx) = ctx();
        let root = env.root_belief().unwrap();
        let target = ctx.model().workspace_positions(&root.mean);
        let c = ctx.extend_toward(&root, &target, 5).unwrap();
        assert!(c.edge.controls.iter().all(|u| u.iter().all(|&v| v == 0.0)));
        assert_eq!(c.beliefs[4].mean, root.mean);
        assert_eq!(c.beliefs[4].time_index, 5);
        assert!(c.beliefs[4].sigma.trace() > root.sigma.trace());
    }

    #[test]
    fn close_confident_robots_schedule_the_pair_every_step() {
        let (env, ctx) = ctx();
        let mut root = env.root_belief().unwrap();
        // 0.8 m apart, inside r_ext = 1.5 with room for the contour
        root.mean[2] = root.mean[0] + 0.8;
        root.mean[3] = root.mean[1];
        let target = ctx.model().workspace_positions(&root.mean);
        let c = ctx.extend_toward(&root, &target, 5).unwrap();
        assert!(c.edge.schedule.iter().all(|s| s == &vec![0]));
    }

    #[test]
    fn disabled_exteroception_never_schedules() {
        let env = builtin("hive2").unwrap();
        let cfg = PlannerConfig {
            use_exteroception: false,
            ..PlannerConfig::default()
        };
        let ctx = SearchContext::new(&env, &cfg).unwrap();
        let mut root = env.root_belief().unwrap();
        root.mean[2] = root.mean[0] + 1.2;
        root.mean[3] = root.mean[1];
        let c = ctx.extend_constant(&root, &DVector::zeros(4), 3).unwrap();
        assert!(c.edge.schedule.iter().all(|s| s.is_empty()));
    }
}
