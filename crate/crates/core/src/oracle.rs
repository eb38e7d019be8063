//! Monte-Carlo oracles: plain probability-mass estimates and closed-loop
//! execution of motion plans against sampled true states.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::Environment;
use crate::error::{Error, Result};
use crate::gaussian::{psd_sqrt, repair_psd, sample_gaussian, DifferenceBelief};
use crate::planner::MotionPlan;
use crate::propagation::{GainSet, LinearSystem};
use crate::validation::{check_ext_enabled, check_robot_robot, ProbabilityBudget};

const MIN_SAMPLES: usize = 1000;
const ROLLOUT_CHUNK: usize = 256;

/// Three binomial standard errors at probability `p` over `n` draws.
pub fn three_sigma(p: f64, n: usize) -> f64 {
    3.0 * (p * (1.0 - p) / n as f64).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McEstimate {
    pub probability: f64,
    pub stderr: f64,
    pub samples: usize,
}

/// Fraction of draws from `N(mean, cov)` for which `event` holds.
pub fn mc_probability<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    event: impl Fn(&DVector<f64>) -> bool,
    samples: usize,
    rng: &mut R,
) -> Result<McEstimate> {
    if samples < MIN_SAMPLES {
        return Err(Error::Argument(format!(
            "at least {MIN_SAMPLES} samples required, got {samples}"
        )));
    }
    let cov = repair_psd(cov)?;
    let sqrt = psd_sqrt(&cov);
    let hits = (0..samples)
        .filter(|_| event(&sample_gaussian(mean, &sqrt, rng)))
        .count();
    let p = hits as f64 / samples as f64;
    Ok(McEstimate {
        probability: p,
        stderr: (p * (1.0 - p) / samples as f64).sqrt(),
        samples,
    })
}

/// Rollout-local RNG: one ChaCha stream per rollout index.
fn rollout_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Plant, feedback gain and initial distribution of a closed loop.
#[derive(Debug, Clone)]
pub struct ClosedLoop {
    system: LinearSystem,
    gain: DMatrix<f64>,
    q_sqrt: DMatrix<f64>,
    x0: DVector<f64>,
    sigma0: DMatrix<f64>,
    sigma0_sqrt: DMatrix<f64>,
}

/// True and estimated states of one rollout, steps `0..=T`.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub truth: Vec<DVector<f64>>,
    pub estimate: Vec<DVector<f64>>,
}

impl ClosedLoop {
    pub fn new(system: LinearSystem, gain: DMatrix<f64>, x0: DVector<f64>, sigma0: DMatrix<f64>) -> Result<Self> {
        let n = system.state_dim();
        if gain.shape() != (system.control_dim(), n) || x0.len() != n || sigma0.shape() != (n, n) {
            return Err(Error::Dimension("closed-loop dimensions do not agree".into()));
        }
        let sigma0 = repair_psd(&sigma0)?;
        Ok(Self {
            q_sqrt: psd_sqrt(system.q()),
            sigma0_sqrt: psd_sqrt(&sigma0),
            system,
            gain,
            x0,
            sigma0,
        })
    }

    /// One rollout of true dynamics, Kalman filter and the feedback law
    /// `u = u_nom - K (x_hat - x_nom)`. `measure(k, x_true)` returns the
    /// `(C, R)` used in the update of transition `k -> k+1`. Returns `None`
    /// on a numeric blow-up.
    pub fn run<R: Rng + ?Sized>(
        &self,
        controls: &[DVector<f64>],
        nominal: &[DVector<f64>],
        rng: &mut R,
        mut measure: impl FnMut(usize, &DVector<f64>) -> (DMatrix<f64>, DMatrix<f64>),
    ) -> Option<Trajectory> {
        let a = self.system.a();
        let b = self.system.b();
        let n = self.system.state_dim();
        let mut x = sample_gaussian(&self.x0, &self.sigma0_sqrt, rng);
        let mut xh = self.x0.clone();
        let mut p = self.sigma0.clone();
        let mut out = Trajectory {
            truth: vec![x.clone()],
            estimate: vec![xh.clone()],
        };
        let zero = DVector::zeros(n);
        for (k, u_nom) in controls.iter().enumerate() {
            let u = u_nom - &self.gain * (&xh - &nominal[k]);
            x = a * &x + b * &u + sample_gaussian(&zero, &self.q_sqrt, rng);
            xh = a * &xh + b * &u;
            p = a * &p * a.transpose() + self.system.q();
            let (c, r) = measure(k, &x);
            if c.nrows() > 0 {
                let v = sample_gaussian(&DVector::zeros(c.nrows()), &psd_sqrt(&r), rng);
                let y = &c * &x + v;
                let s = &c * &p * c.transpose() + &r;
                let s = (&s + s.transpose()) * 0.5;
                let m = s.nrows();
                let chol = s
                    .clone()
                    .cholesky()
                    .or_else(|| (s + DMatrix::identity(m, m) * 1e-12).cholesky())?;
                let pct = &p * c.transpose();
                let gain_t = chol.solve(&pct.transpose());
                let innov = y - &c * &xh;
                xh += gain_t.transpose() * innov;
                p = &p - gain_t.transpose() * (&c * &p);
                p = (&p + p.transpose()) * 0.5;
            }
            if !x.iter().chain(xh.iter()).all(|v| v.is_finite()) {
                return None;
            }
            out.truth.push(x.clone());
            out.estimate.push(xh.clone());
        }
        Some(out)
    }

    /// Empirical covariance of `x_true - x_nom` at every step, from
    /// `rollouts` runs with a fixed measurement `(C, R)`.
    pub fn deviation_covariance(
        &self,
        controls: &[DVector<f64>],
        nominal: &[DVector<f64>],
        c: &DMatrix<f64>,
        r: &DMatrix<f64>,
        rollouts: usize,
        seed: u64,
    ) -> Vec<DMatrix<f64>> {
        let n = self.system.state_dim();
        let steps = controls.len() + 1;
        let chunks = rollouts.div_ceil(ROLLOUT_CHUNK);
        let partial: Vec<(Vec<DMatrix<f64>>, usize)> = (0..chunks)
            .into_par_iter()
            .map(|ch| {
                let mut acc = vec![DMatrix::zeros(n, n); steps];
                let mut count = 0;
                for idx in ch * ROLLOUT_CHUNK..((ch + 1) * ROLLOUT_CHUNK).min(rollouts) {
                    let mut rng = rollout_rng(seed, idx);
                    if let Some(t) = self.run(controls, nominal, &mut rng, |_, _| (c.clone(), r.clone())) {
                        for (k, x) in t.truth.iter().enumerate() {
                            let d = x - &nominal[k];
                            acc[k] += &d * d.transpose();
                        }
                        count += 1;
                    }
                }
                (acc, count)
            })
            .collect();
        let mut total = vec![DMatrix::zeros(n, n); steps];
        let mut count = 0;
        for (acc, c) in partial {
            for (t, a) in total.iter_mut().zip(acc) {
                *t += a;
            }
            count += c;
        }
        total.into_iter().map(|m| m / count.max(1) as f64).collect()
    }
}

/// Empirical violation rates of an executed plan. Per-step tables are
/// indexed `[k][robot]` for `k` in `0..=T`; step 0 is the start.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RolloutReport {
    pub rollouts: usize,
    /// Rollouts dropped after a numeric blow-up.
    pub excluded: usize,
    pub seed: u64,
    /// Body disc touches an obstacle or leaves the workspace.
    pub obstacle: Vec<Vec<f64>>,
    /// Body disc overlaps any teammate's.
    pub robot_robot: Vec<Vec<f64>>,
    /// Some scheduled exteroceptive measurement involving the robot was
    /// not available because the true states were too far apart.
    pub cl_failure: Vec<Vec<f64>>,
    /// Terminal position inside the goal region.
    pub goal: Vec<f64>,
}

fn max_rate(table: &[Vec<f64>]) -> f64 {
    table.iter().flatten().copied().fold(0.0, f64::max)
}

impl RolloutReport {
    pub fn valid_rollouts(&self) -> usize {
        self.rollouts - self.excluded
    }

    pub fn max_obstacle_rate(&self) -> f64 {
        max_rate(&self.obstacle)
    }

    pub fn max_robot_robot_rate(&self) -> f64 {
        max_rate(&self.robot_robot)
    }

    pub fn max_cl_failure_rate(&self) -> f64 {
        max_rate(&self.cl_failure)
    }

    pub fn min_goal_rate(&self) -> f64 {
        self.goal.iter().copied().fold(1.0, f64::min)
    }

    /// Every rate within its budget plus a three-sigma sampling margin.
    pub fn within_budget(&self, budget: &ProbabilityBudget) -> bool {
        let n = self.valid_rollouts().max(1);
        self.max_obstacle_rate() <= budget.p_obs + three_sigma(budget.p_obs, n)
            && self.max_robot_robot_rate() <= budget.p_rob + three_sigma(budget.p_rob, n)
            && self.max_cl_failure_rate() <= budget.p_ncl + three_sigma(budget.p_ncl, n)
            && self.min_goal_rate() >= budget.p_safe - three_sigma(budget.p_safe, n)
    }
}

#[derive(Clone)]
struct Tally {
    obstacle: Vec<Vec<u64>>,
    robot_robot: Vec<Vec<u64>>,
    cl: Vec<Vec<u64>>,
    goal: Vec<u64>,
    valid: usize,
}

impl Tally {
    fn new(steps: usize, n: usize) -> Self {
        Self {
            obstacle: vec![vec![0; n]; steps],
            robot_robot: vec![vec![0; n]; steps],
            cl: vec![vec![0; n]; steps],
            goal: vec![0; n],
            valid: 0,
        }
    }

    fn merge(&mut self, other: Tally) {
        let add = |a: &mut Vec<Vec<u64>>, b: Vec<Vec<u64>>| {
            for (ra, rb) in a.iter_mut().zip(b) {
                for (x, y) in ra.iter_mut().zip(rb) {
                    *x += y;
                }
            }
        };
        add(&mut self.obstacle, other.obstacle);
        add(&mut self.robot_robot, other.robot_robot);
        add(&mut self.cl, other.cl);
        for (x, y) in self.goal.iter_mut().zip(other.goal) {
            *x += y;
        }
        self.valid += other.valid;
    }
}

/// Executes `plan` `rollouts` times in closed loop and tallies constraint
/// events against the true states. A scheduled pair measurement is only
/// delivered when the true positions are within `r_ext`; otherwise it is
/// dropped and counted as a CL failure for both robots.
pub fn execute_plan(
    env: &Environment,
    gains: &GainSet,
    plan: &MotionPlan,
    rollouts: usize,
    seed: u64,
) -> Result<RolloutReport> {
    let model = &env.model;
    plan.check_replay(model)?;
    let root = env.root_belief()?;
    let n = model.num_robots();
    let t = plan.horizon();
    let loop_ = ClosedLoop::new(model.system().clone(), gains.composed().clone(), root.mean.clone(), root.sigma.clone())?;
    let controls: Vec<DVector<f64>> = (0..t).map(|k| plan.composed_control(k)).collect();
    let nominal: Vec<DVector<f64>> = (0..=t).map(|k| plan.composed_state(k)).collect();
    let geometry = &env.geometry;
    let bodies: Vec<f64> = model.robots().iter().map(|r| r.body_radius).collect();
    let (prop_c, prop_r) = model.assemble_measurement(&[])?;

    let chunks = rollouts.div_ceil(ROLLOUT_CHUNK);
    let partial: Vec<Tally> = (0..chunks)
        .into_par_iter()
        .map(|ch| {
            let mut tally = Tally::new(t + 1, n);
            for idx in ch * ROLLOUT_CHUNK..((ch + 1) * ROLLOUT_CHUNK).min(rollouts) {
                let mut rng = rollout_rng(seed, idx);
                let mut cl_fail = vec![vec![false; n]; t + 1];
                let run = loop_.run(&controls, &nominal, &mut rng, |k, x| {
                    let mut delivered = Vec::new();
                    for &p in &plan.schedule.steps[k] {
                        if model.pair_within_radius(x, p) {
                            delivered.push(p);
                        } else {
                            let pair = &model.pairs()[p];
                            cl_fail[k + 1][pair.i] = true;
                            cl_fail[k + 1][pair.j] = true;
                        }
                    }
                    if delivered.is_empty() {
                        (prop_c.clone(), prop_r.clone())
                    } else {
                        model.assemble_measurement(&delivered).expect("schedule was validated")
                    }
                });
                let Some(traj) = run else { continue };
                tally.valid += 1;
                for (k, x) in traj.truth.iter().enumerate() {
                    let pos: Vec<Vec<f64>> = (0..n).map(|i| model.workspace_position(x, i)).collect();
                    for i in 0..n {
                        if !geometry.ball_is_free(&pos[i], bodies[i]) {
                            tally.obstacle[k][i] += 1;
                        }
                        let hit = (0..n).any(|j| {
                            j != i && model.workspace_distance(x, i, j) <= bodies[i] + bodies[j]
                        });
                        if hit {
                            tally.robot_robot[k][i] += 1;
                        }
                        if cl_fail[k][i] {
                            tally.cl[k][i] += 1;
                        }
                    }
                }
                let last = traj.truth.last().expect("start state");
                for (i, g) in env.goals.iter().enumerate() {
                    let p = model.workspace_position(last, i);
                    let d = p.iter().zip(&g.center).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
                    if d <= g.radius {
                        tally.goal[i] += 1;
                    }
                }
            }
            tally
        })
        .collect();
    let mut total = Tally::new(t + 1, n);
    for p in partial {
        total.merge(p);
    }
    let denom = total.valid.max(1) as f64;
    let rate = |table: Vec<Vec<u64>>| -> Vec<Vec<f64>> {
        table
            .into_iter()
            .map(|row| row.into_iter().map(|c| c as f64 / denom).collect())
            .collect()
    };
    Ok(RolloutReport {
        rollouts,
        excluded: rollouts - total.valid,
        seed,
        obstacle: rate(total.obstacle),
        robot_robot: rate(total.robot_robot),
        cl_failure: rate(total.cl),
        goal: total.goal.into_iter().map(|c| c as f64 / denom).collect(),
    })
}

/// Which contour check a soundness suite exercises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CheckKind {
    /// `check_robot_robot` against the collision event `|d| <= r_i + r_j`.
    RobotRobot,
    /// `check_ext_enabled` against the out-of-range event `|d| > r_ext`.
    ExtEnabled,
}

/// One randomized case of a soundness suite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundnessCase {
    pub mean: [f64; 2],
    pub eigenvalues: [f64; 2],
    pub angle: f64,
    /// Sum of body radii, or the exteroceptive range.
    pub radius: f64,
    pub bound: f64,
    pub accepted: bool,
    /// Monte-Carlo event probability; only estimated for accepted cases.
    pub probability: Option<f64>,
}

impl SoundnessCase {
    /// Allowed probability: the bound plus three binomial standard errors.
    pub fn tolerance(&self, samples: usize) -> f64 {
        self.bound + three_sigma(self.bound, samples)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SoundnessReport {
    pub kind: CheckKind,
    pub samples: usize,
    pub cases: Vec<SoundnessCase>,
}

impl SoundnessReport {
    pub fn accepted(&self) -> usize {
        self.cases.iter().filter(|c| c.accepted).count()
    }

    /// Accepted cases whose estimated probability exceeds the tolerance.
    pub fn violations(&self) -> Vec<&SoundnessCase> {
        self.cases
            .iter()
            .filter(|c| c.probability.is_some_and(|p| p > c.tolerance(self.samples)))
            .collect()
    }

    pub fn is_sound(&self) -> bool {
        self.violations().is_empty()
    }
}

const SUITE_BOUNDS: [f64; 3] = [0.01, 0.05, 0.1];

/// Randomized 2-D difference beliefs: means in `[0, 3]^2`, covariance
/// eigenvalues in `[1e-4, 0.25]` under a random rotation, bounds from
/// {0.01, 0.05, 0.1}. Every accepted case gets a Monte-Carlo estimate.
pub fn soundness_suite(kind: CheckKind, cases: usize, samples: usize, seed: u64) -> Result<SoundnessReport> {
    let drawn: Vec<(DifferenceBelief, SoundnessCase)> = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..cases)
            .map(|_| {
                let mean = [rng.random_range(0.0..=3.0), rng.random_range(0.0..=3.0)];
                let eig = [rng.random_range(1e-4..=0.25), rng.random_range(1e-4..=0.25)];
                let angle = rng.random_range(0.0..std::f64::consts::PI);
                let radius = match kind {
                    CheckKind::RobotRobot => rng.random_range(0.1..=1.0),
                    CheckKind::ExtEnabled => rng.random_range(0.5..=4.0),
                };
                let bound = SUITE_BOUNDS[rng.random_range(0..SUITE_BOUNDS.len())];
                let (c, s) = (angle.cos(), angle.sin());
                let rot = DMatrix::from_row_slice(2, 2, &[c, -s, s, c]);
                let cov = &rot * DMatrix::from_diagonal(&DVector::from_row_slice(&eig)) * rot.transpose();
                let diff = DifferenceBelief::new(DVector::from_row_slice(&mean), cov)?;
                let accepted = match kind {
                    CheckKind::RobotRobot => check_robot_robot(&diff, radius / 2.0, radius / 2.0, bound),
                    CheckKind::ExtEnabled => check_ext_enabled(&diff, radius, bound),
                };
                Ok((
                    diff,
                    SoundnessCase {
                        mean,
                        eigenvalues: eig,
                        angle,
                        radius,
                        bound,
                        accepted,
                        probability: None,
                    },
                ))
            })
            .collect::<Result<_>>()?
    };
    let cases = drawn
        .into_par_iter()
        .enumerate()
        .map(|(i, (diff, mut case))| {
            if case.accepted {
                let mut rng = rollout_rng(seed ^ 0x5eed, i);
                let r = case.radius;
                let est = match kind {
                    CheckKind::RobotRobot => mc_probability(diff.mean(), diff.covariance(), |d| d.norm() <= r, samples, &mut rng),
                    CheckKind::ExtEnabled => mc_probability(diff.mean(), diff.covariance(), |d| d.norm() > r, samples, &mut rng),
                }?;
                case.probability = Some(est.probability);
            }
            Ok(case)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SoundnessReport { kind, samples, cases })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::builtin;
    use crate::planner::{plan, PlannerConfig};
    use crate::propagation::{lqr_gain, ExpectedBelief, Propagator};

    #[test]
    fn certain_event_and_point_mass() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = DVector::zeros(2);
        let e = mc_probability(&m, &DMatrix::identity(2, 2), |x| x.norm() <= 1e9, 2000, &mut rng).unwrap();
        assert_eq!(e.probability, 1.0);
        let p = DVector::from_vec(vec![0.5, 0.5]);
        let e = mc_probability(&p, &DMatrix::zeros(2, 2), |x| x.norm() < 1.0, 1000, &mut rng).unwrap();
        assert_eq!(e.probability, 1.0);
        assert!(mc_probability(&m, &DMatrix::zeros(2, 2), |_| true, 10, &mut rng).is_err());
    }

    #[test]
    fn contour_mass_matches_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 100_000;
        let e = mc_probability(
            &DVector::zeros(2),
            &(DMatrix::identity(2, 2) * 0.01),
            |x| x.norm() <= 0.24478,
            n,
            &mut rng,
        )
        .unwrap();
        assert!(e.probability >= 0.95 - three_sigma(0.95, n));
    }

    #[test]
    fn same_seed_same_estimate() {
        let cov = DMatrix::identity(2, 2) * 0.3;
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            mc_probability(&DVector::zeros(2), &cov, |x| x[0] > 0.2, 5000, &mut rng).unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn small_suites_are_sound_and_reproducible() {
        for kind in [CheckKind::RobotRobot, CheckKind::ExtEnabled] {
            let a = soundness_suite(kind, 40, 4000, 11).unwrap();
            assert!(a.accepted() > 0);
            assert!(a.is_sound(), "{:?}", a.violations());
            assert_eq!(a, soundness_suite(kind, 40, 4000, 11).unwrap());
        }
    }

    #[test]
    fn closed_loop_matches_gamma() {
        let k = lqr_gain(
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
            &DMatrix::identity(2, 2),
        )
        .unwrap();
        let eye = DMatrix::<f64>::identity(2, 2);
        let sys = LinearSystem::new(eye.clone(), eye.clone(), &eye * 0.01).unwrap();
        let x0 = DVector::zeros(2);
        let s0 = &eye * 0.001;
        let cl = ClosedLoop::new(sys.clone(), k.clone(), x0.clone(), s0.clone()).unwrap();
        let u = DVector::from_vec(vec![0.1, 0.05]);
        let controls = vec![u.clone(); 10];
        let mut nominal = vec![x0.clone()];
        for c in &controls {
            nominal.push(sys.step_mean(nominal.last().unwrap(), c));
        }
        let r = &eye * 0.01;
        let emp = cl.deviation_covariance(&controls, &nominal, &eye, &r, 4000, 3);
        let prop = Propagator::new(sys, k).unwrap();
        let mut b = ExpectedBelief::root(x0, s0).unwrap();
        for c in &controls {
            b = prop.step(&b, c, &eye, &r).unwrap();
        }
        let rel = (&emp[10] - b.gamma()).norm() / b.gamma().norm();
        assert!(rel < 0.1, "relative error {rel}");
    }

    #[test]
    fn noiseless_execution_follows_nominal() {
        let mut env = builtin("trivial2").unwrap();
        let cfg = PlannerConfig {
            goal_bias: 0.5,
            time_budget: None,
            max_iterations: 200,
            ..PlannerConfig::default()
        };
        let p = plan(&env, &cfg).unwrap().plan.unwrap();
        // strip all noise
        let mut robots = env.model.robots().to_vec();
        for r in &mut robots {
            r.q = DMatrix::zeros(2, 2);
            if let Some(s) = &mut r.proprioceptive {
                s.r = DMatrix::zeros(2, 2);
            }
        }
        env.model = crate::team::TeamModel::compose(robots, env.model.pairs().to_vec()).unwrap();
        for s in &mut env.starts {
            *s = crate::gaussian::GaussianBelief::new(s.mean().clone(), DMatrix::zeros(2, 2)).unwrap();
        }
        let gains = GainSet::lqr(env.model.robots(), 1.0, 1.0).unwrap();
        let rep = execute_plan(&env, &gains, &p, 50, 1).unwrap();
        assert_eq!(rep.max_obstacle_rate(), 0.0);
        assert_eq!(rep.max_robot_robot_rate(), 0.0);
        assert_eq!(rep.max_cl_failure_rate(), 0.0);
        assert_eq!(rep.min_goal_rate(), 1.0);
        assert_eq!(rep.excluded, 0);
    }

    #[test]
    fn report_is_seed_deterministic_and_cl_free_without_pairs() {
        let env = builtin("trivial2").unwrap();
        let cfg = PlannerConfig {
            goal_bias: 0.5,
            time_budget: None,
            max_iterations: 200,
            ..PlannerConfig::default()
        };
        let p = plan(&env, &cfg).unwrap().plan.unwrap();
        assert!(!p.schedule.has_exteroceptive());
        let gains = GainSet::lqr(env.model.robots(), 1.0, 1.0).unwrap();
        let a = execute_plan(&env, &gains, &p, 600, 9).unwrap();
        let b = execute_plan(&env, &gains, &p, 600, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.max_cl_failure_rate(), 0.0);
        assert!(a.within_budget(&env.budget));
    }
}
