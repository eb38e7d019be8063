//! Conservative chance-constraint checks based on spherical probability contours.
//!
//! Every check bounds the relevant Gaussian by a sphere that holds the
//! required mass and then tests the sphere deterministically, so a `true`
//! answer implies the probabilistic constraint holds.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{difference_parts, ContourScale, DifferenceBelief, GaussianBelief};
use crate::team::TeamModel;

const BUDGET_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityBudget {
    pub p_safe: f64,
    pub p_obs: f64,
    pub p_rob: f64,
    pub p_ncl: f64,
}

impl ProbabilityBudget {
    pub fn new(p_safe: f64, p_obs: f64, p_rob: f64, p_ncl: f64) -> Result<Self> {
        let b = Self {
            p_safe,
            p_obs,
            p_rob,
            p_ncl,
        };
        b.validate()?;
        Ok(b)
    }

    /// Budget that splits `1 - p_safe` evenly over the three violation types.
    pub fn even(per_kind: f64) -> Result<Self> {
        Self::new(1.0 - 3.0 * per_kind, per_kind, per_kind, per_kind)
    }

    pub fn validate(&self) -> Result<()> {
        let parts = [
            ("p_safe", self.p_safe),
            ("p_obs", self.p_obs),
            ("p_rob", self.p_rob),
            ("p_ncl", self.p_ncl),
        ];
        for (name, v) in parts {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::config(
                    format!("budget.{name}"),
                    format!("{v} is not a probability"),
                ));
            }
        }
        let sum = self.p_obs + self.p_rob + self.p_ncl;
        if (sum - (1.0 - self.p_safe)).abs() > BUDGET_TOL {
            return Err(Error::config(
                "budget",
                format!(
                    "p_obs + p_rob + p_ncl = {sum} but 1 - p_safe = {}",
                    1.0 - self.p_safe
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Obstacle {
    Rect { min: Vec<f64>, max: Vec<f64> },
    Disc { center: Vec<f64>, radius: f64 },
}

impl Obstacle {
    /// Euclidean distance from `p` to the obstacle (zero inside).
    pub fn distance(&self, p: &[f64]) -> f64 {
        match self {
            Obstacle::Rect { min, max } => p
                .iter()
                .zip(min.iter().zip(max))
                .map(|(&x, (&lo, &hi))| (x - x.clamp(lo, hi)).powi(2))
                .sum::<f64>()
                .sqrt(),
            Obstacle::Disc { center, radius } => (dist(p, center) - radius).max(0.0),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Obstacle::Rect { min, .. } => min.len(),
            Obstacle::Disc { center, .. } => center.len(),
        }
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>()
        .sqrt()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GoalRegion {
    pub center: Vec<f64>,
    pub radius: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Workspace {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl Workspace {
    /// Whether the ball of `radius` around `p` lies inside the bounds.
    pub fn contains_ball(&self, p: &[f64], radius: f64) -> bool {
        p.iter()
            .zip(self.min.iter().zip(&self.max))
            .all(|(&x, (&lo, &hi))| x - radius >= lo && x + radius <= hi)
    }

    pub fn diagonal(&self) -> f64 {
        dist(&self.min, &self.max)
    }
}

/// Static geometry: bounds plus obstacles. The bounds act as an obstacle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub workspace: Workspace,
    pub obstacles: Vec<Obstacle>,
}

impl Geometry {
    /// True if a ball of `radius` at `p` stays in the workspace and off every obstacle.
    pub fn ball_is_free(&self, p: &[f64], radius: f64) -> bool {
        self.workspace.contains_ball(p, radius)
            && self.obstacles.iter().all(|o| o.distance(p) > radius)
    }
}

/// Obstacle check on a robot's workspace marginal of `Gamma`.
pub fn check_obstacles(
    marginal: &GaussianBelief,
    body_radius: f64,
    geometry: &Geometry,
    p_obs: f64,
) -> bool {
    match ContourScale::new(marginal.dim(), p_obs) {
        Ok(scale) => obstacle_clear(&scale, marginal.mean().as_slice(), marginal.covariance(), body_radius, geometry),
        Err(_) => false,
    }
}

fn obstacle_clear(
    scale: &ContourScale,
    mean: &[f64],
    cov: &DMatrix<f64>,
    body_radius: f64,
    geometry: &Geometry,
) -> bool {
    geometry.ball_is_free(mean, scale.radius_unchecked(cov) + body_radius)
}

/// Robot-robot collision check on the difference belief.
pub fn check_robot_robot(diff: &DifferenceBelief, r_i: f64, r_j: f64, p_rob: f64) -> bool {
    ContourScale::new(diff.dim(), p_rob)
        .map(|s| separated(&s, diff, r_i + r_j))
        .unwrap_or(false)
}

fn separated(scale: &ContourScale, diff: &DifferenceBelief, min_gap: f64) -> bool {
    diff.mean.norm() - scale.radius_unchecked(&diff.covariance) > min_gap
}

/// Exteroceptive availability check on the difference belief.
pub fn check_ext_enabled(diff: &DifferenceBelief, r_ext: f64, p_ncl: f64) -> bool {
    ContourScale::new(diff.dim(), p_ncl)
        .map(|s| within(&s, diff, r_ext))
        .unwrap_or(false)
}

fn within(scale: &ContourScale, diff: &DifferenceBelief, r_ext: f64) -> bool {
    diff.mean.norm() + scale.radius_unchecked(&diff.covariance) < r_ext
}

/// Goal check: the sphere holding `p_safe` mass must lie inside the goal disc.
pub fn check_goal(marginal: &GaussianBelief, goal: &GoalRegion, p_safe: f64) -> bool {
    ContourScale::new(marginal.dim(), 1.0 - p_safe)
        .map(|s| goal_contains(&s, marginal.mean().as_slice(), marginal.covariance(), goal))
        .unwrap_or(false)
}

fn goal_contains(scale: &ContourScale, mean: &[f64], cov: &DMatrix<f64>, goal: &GoalRegion) -> bool {
    dist(mean, &goal.center) + scale.radius_unchecked(cov) <= goal.radius
}

/// Why a belief was rejected.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rejection {
    Obstacle { robot: usize },
    RobotRobot { i: usize, j: usize },
    ClUnavailable { pair: usize },
    Numeric,
}

/// All checks for one team, with contour scales precomputed.
#[derive(Debug, Clone)]
pub struct Validator {
    workspace_indices: Vec<Vec<usize>>,
    body_radii: Vec<f64>,
    pairs: Vec<(usize, usize, f64)>,
    geometry: Geometry,
    goals: Vec<GoalRegion>,
    obs_scale: ContourScale,
    rob_scale: ContourScale,
    ncl_scale: ContourScale,
    goal_scale: ContourScale,
}

impl Validator {
    /// With `divide_pair_budget`, each pairwise check gets `p / (N - 1)` so the
    /// per-robot sums over partners stay within budget.
    pub fn new(
        model: &TeamModel,
        geometry: Geometry,
        goals: Vec<GoalRegion>,
        budget: &ProbabilityBudget,
        divide_pair_budget: bool,
    ) -> Result<Self> {
        budget.validate()?;
        let n = model.num_robots();
        if goals.len() != n {
            return Err(Error::config("goals", format!("{} goals for {n} robots", goals.len())));
        }
        let w = model.workspace_dim();
        let share = if divide_pair_budget { (n - 1) as f64 } else { 1.0 };
        let scale = |field: &str, tail: f64| {
            ContourScale::new(w, tail).map_err(|e| Error::config(field, e.to_string()))
        };
        Ok(Self {
            workspace_indices: (0..n).map(|i| model.workspace_indices(i).to_vec()).collect(),
            body_radii: model.robots().iter().map(|r| r.body_radius).collect(),
            pairs: model.pairs().iter().map(|p| (p.i, p.j, p.r_ext)).collect(),
            geometry,
            goals,
            obs_scale: scale("budget.p_obs", budget.p_obs)?,
            rob_scale: scale("budget.p_rob", budget.p_rob / share)?,
            ncl_scale: scale("budget.p_ncl", budget.p_ncl / share)?,
            goal_scale: scale("budget.p_safe", 1.0 - budget.p_safe)?,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geometry
    }

    pub fn goals(&self) -> &[GoalRegion] {
        &self.goals
    }

    fn ws_mean(&self, mean: &DVector<f64>, robot: usize) -> Vec<f64> {
        self.workspace_indices[robot].iter().map(|&i| mean[i]).collect()
    }

    fn ws_cov(&self, gamma: &DMatrix<f64>, robot: usize) -> DMatrix<f64> {
        let idx = &self.workspace_indices[robot];
        DMatrix::from_fn(idx.len(), idx.len(), |a, b| gamma[(idx[a], idx[b])])
    }

    pub fn difference(&self, mean: &DVector<f64>, gamma: &DMatrix<f64>, i: usize, j: usize) -> DifferenceBelief {
        difference_parts(mean, gamma, &self.workspace_indices[i], &self.workspace_indices[j])
    }

    pub fn obstacle_ok(&self, mean: &DVector<f64>, gamma: &DMatrix<f64>, robot: usize) -> bool {
        obstacle_clear(
            &self.obs_scale,
            &self.ws_mean(mean, robot),
            &self.ws_cov(gamma, robot),
            self.body_radii[robot],
            &self.geometry,
        )
    }

    pub fn robot_robot_ok(&self, mean: &DVector<f64>, gamma: &DMatrix<f64>, i: usize, j: usize) -> bool {
        let d = self.difference(mean, gamma, i, j);
        separated(&self.rob_scale, &d, self.body_radii[i] + self.body_radii[j])
    }

    pub fn ext_enabled(&self, mean: &DVector<f64>, gamma: &DMatrix<f64>, pair: usize) -> bool {
        let (i, j, r_ext) = self.pairs[pair];
        within(&self.ncl_scale, &self.difference(mean, gamma, i, j), r_ext)
    }

    /// Pairs whose exteroceptive measurement is provably available.
    pub fn enabled_pairs(&self, mean: &DVector<f64>, gamma: &DMatrix<f64>) -> Vec<usize> {
        (0..self.pairs.len())
            .filter(|&p| self.ext_enabled(mean, gamma, p))
            .collect()
    }

    pub fn goal_ok(&self, mean: &DVector<f64>, gamma: &DMatrix<f64>, robot: usize) -> bool {
        goal_contains(
            &self.goal_scale,
            &self.ws_mean(mean, robot),
            &self.ws_cov(gamma, robot),
            &self.goals[robot],
        )
    }

    pub fn all_goals_ok(&self, mean: &DVector<f64>, gamma: &DMatrix<f64>) -> bool {
        (0..self.goals.len()).all(|r| self.goal_ok(mean, gamma, r))
    }

    /// Safety constraints of one belief: obstacles for each robot, separation
    /// for each unordered pair, availability of each pair measured on arrival.
    pub fn validate(
        &self,
        mean: &DVector<f64>,
        gamma: &DMatrix<f64>,
        measured_pairs: &[usize],
    ) -> std::result::Result<(), Rejection> {
        let n = self.workspace_indices.len();
        for robot in 0..n {
            if !self.obstacle_ok(mean, gamma, robot) {
                return Err(Rejection::Obstacle { robot });
            }
        }
        for i in 0..n {
            for j in i + 1..n {
                if !self.robot_robot_ok(mean, gamma, i, j) {
                    return Err(Rejection::RobotRobot { i, j });
                }
            }
        }
        for &pair in measured_pairs {
            if pair >= self.pairs.len() || !self.ext_enabled(mean, gamma, pair) {
                return Err(Rejection::ClUnavailable { pair });
            }
        }
        Ok(())
    }
}

/// Boolean form of [`Validator::validate`] for a belief `(mean, Gamma)`.
pub fn valid_belief(
    validator: &Validator,
    mean: &DVector<f64>,
    gamma: &DMatrix<f64>,
    measured_pairs: &[usize],
) -> bool {
    validator.validate(mean, gamma, measured_pairs).is_ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::team::standard_team;

    fn belief(mean: &[f64], cov: DMatrix<f64>) -> GaussianBelief {
        GaussianBelief::new(DVector::from_column_slice(mean), cov).unwrap()
    }

    fn eye2() -> DMatrix<f64> {
        DMatrix::identity(2, 2)
    }

    fn diff(mean: &[f64], cov: DMatrix<f64>) -> DifferenceBelief {
        DifferenceBelief::new(DVector::from_column_slice(mean), cov).unwrap()
    }

    fn geometry_with_rect() -> Geometry {
        Geometry {
            workspace: Workspace {
                min: vec![-10.0, -10.0],
                max: vec![10.0, 10.0],
            },
            obstacles: vec![Obstacle::Rect {
                min: vec![1.0, -1.0],
                max: vec![2.0, 1.0],
            }],
        }
    }

    #[test]
    fn budget_identity() {
        assert!(ProbabilityBudget::new(0.85, 0.05, 0.05, 0.05).is_ok());
        assert!(ProbabilityBudget::new(0.9, 0.05, 0.05, 0.05).is_err());
        assert!(ProbabilityBudget::new(1.1, -0.05, 0.0, -0.05).is_err());
        let b = ProbabilityBudget::even(0.05).unwrap();
        assert!((b.p_safe - 0.85).abs() < 1e-15);
    }

    #[test]
    fn obstacle_examples() {
        let g = geometry_with_rect();
        // 1 m clearance, point robot, no uncertainty
        assert!(check_obstacles(&belief(&[0.0, 0.0], DMatrix::zeros(2, 2)), 0.0, &g, 0.05));
        // 0.3 m from the edge with contour 0.2448 + body 0.1
        assert!(!check_obstacles(&belief(&[0.7, 0.0], eye2() * 0.01), 0.1, &g, 0.05));
        // shrinking the body makes the same belief valid (0.2448 < 0.3)
        assert!(check_obstacles(&belief(&[0.7, 0.0], eye2() * 0.01), 0.05, &g, 0.05));
        // mean inside the obstacle
        assert!(!check_obstacles(&belief(&[1.5, 0.0], DMatrix::zeros(2, 2)), 0.0, &g, 0.05));
    }

    #[test]
    fn disc_obstacle_and_bounds() {
        let g = Geometry {
            workspace: Workspace {
                min: vec![0.0, 0.0],
                max: vec![10.0, 10.0],
            },
            obstacles: vec![Obstacle::Disc {
                center: vec![5.0, 5.0],
                radius: 1.0,
            }],
        };
        assert!(check_obstacles(&belief(&[5.0, 7.0], DMatrix::zeros(2, 2)), 0.5, &g, 0.05));
        assert!(!check_obstacles(&belief(&[5.0, 6.4], DMatrix::zeros(2, 2)), 0.5, &g, 0.05));
        // leaving the workspace is a collision
        assert!(!check_obstacles(&belief(&[0.05, 2.0], DMatrix::zeros(2, 2)), 0.1, &g, 0.05));
    }

    #[test]
    fn robot_robot_examples() {
        assert!(check_robot_robot(&diff(&[1.0, 0.0], eye2() * 0.01), 0.1, 0.1, 0.05));
        assert!(!check_robot_robot(&diff(&[0.0, 0.0], eye2() * 0.01), 0.1, 0.1, 0.05));
        assert!(!check_robot_robot(&diff(&[0.0, 0.0], DMatrix::zeros(2, 2)), 0.1, 0.1, 0.05));
        assert!(check_robot_robot(&diff(&[0.25, 0.0], DMatrix::zeros(2, 2)), 0.1, 0.1, 0.05));
    }

    #[test]
    fn ext_enabled_examples() {
        assert!(check_ext_enabled(&diff(&[0.2, 0.0], eye2() * 0.01), 0.5, 0.05));
        assert!(check_ext_enabled(&diff(&[0.49, 0.0], DMatrix::zeros(2, 2)), 0.5, 0.05));
        assert!(!check_ext_enabled(&diff(&[0.4, 0.0], eye2() * 0.01), 0.5, 0.05));
    }

    #[test]
    fn goal_examples() {
        let goal = GoalRegion {
            center: vec![0.0, 0.0],
            radius: 0.3,
        };
        assert!(check_goal(&belief(&[0.0, 0.0], DMatrix::zeros(2, 2)), &goal, 0.85));
        // sqrt(-2 ln 0.15 * 0.01) = 0.19479; 0.1 + 0.19479 <= 0.3
        assert!(check_goal(&belief(&[0.1, 0.0], eye2() * 0.01), &goal, 0.85));
        let small = GoalRegion {
            center: vec![0.0, 0.0],
            radius: 0.15,
        };
        assert!(!check_goal(&belief(&[0.0, 0.0], eye2() * 0.01), &small, 0.85));
    }

    #[test]
    fn validator_matches_free_functions() {
        let m = standard_team(2, 0.5, 0.01, 0.01, 0.1).unwrap();
        let goals = vec![
            GoalRegion {
                center: vec![5.0, 5.0],
                radius: 0.5,
            };
            2
        ];
        let v = Validator::new(
            &m,
            geometry_with_rect(),
            goals,
            &ProbabilityBudget::even(0.05).unwrap(),
            true,
        )
        .unwrap();
        let mean = DVector::from_vec(vec![-2.0, 0.0, -2.4, 0.0]);
        let gamma = DMatrix::identity(4, 4) * 0.0005;
        assert_eq!(v.validate(&mean, &gamma, &[]), Ok(()));
        assert_eq!(v.validate(&mean, &gamma, &[0]), Ok(()));
        // too close for the robot bodies
        let close = DVector::from_vec(vec![-2.0, 0.0, -2.1, 0.0]);
        assert_eq!(
            v.validate(&close, &gamma, &[]),
            Err(Rejection::RobotRobot { i: 0, j: 1 })
        );
        // valid without measurements, but the scheduled pair is beyond r_ext
        let apart = DVector::from_vec(vec![-2.0, 0.0, -3.0, 0.0]);
        assert_eq!(v.validate(&apart, &gamma, &[]), Ok(()));
        assert_eq!(
            v.validate(&apart, &gamma, &[0]),
            Err(Rejection::ClUnavailable { pair: 0 })
        );
        let into_obstacle = DVector::from_vec(vec![1.5, 0.0, -3.0, 0.0]);
        assert_eq!(
            v.validate(&into_obstacle, &gamma, &[]),
            Err(Rejection::Obstacle { robot: 0 })
        );
    }
}
