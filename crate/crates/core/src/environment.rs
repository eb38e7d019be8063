//! Planning environments and their JSON file format.
//!
//! Matrices are written as `{"shape": [rows, cols], "data": [...]}` in
//! row-major order. Lengths are meters, covariances square meters.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianBelief;
use crate::propagation::ExpectedBelief;
use crate::team::{block_diag, ExteroPair, RobotModel, Sensor, TeamModel, DEFAULT_U_MAX};
use crate::validation::{Geometry, GoalRegion, Obstacle, ProbabilityBudget, Validator, Workspace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatrixSpec {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

impl MatrixSpec {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            data.extend(m.row(r).iter().copied());
        }
        Self {
            shape: [m.nrows(), m.ncols()],
            data,
        }
    }

    pub fn to_matrix(&self, field: &str) -> Result<DMatrix<f64>> {
        let [r, c] = self.shape;
        if self.data.len() != r * c {
            return Err(Error::config(
                field,
                format!("shape {r}x{c} needs {} entries, got {}", r * c, self.data.len()),
            ));
        }
        Ok(DMatrix::from_row_slice(r, c, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    #[serde(rename = "C")]
    pub c: MatrixSpec,
    #[serde(rename = "R")]
    pub r: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BeliefSpec {
    pub mean: Vec<f64>,
    pub cov: MatrixSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RobotSpec {
    #[serde(rename = "A")]
    pub a: MatrixSpec,
    #[serde(rename = "B")]
    pub b: MatrixSpec,
    #[serde(rename = "Q")]
    pub q: MatrixSpec,
    #[serde(default)]
    pub proprioceptive: Option<SensorSpec>,
    pub body_radius: f64,
    #[serde(default)]
    pub workspace_proj: Option<Vec<usize>>,
    #[serde(default)]
    pub control_bounds: Option<Vec<[f64; 2]>>,
    pub start: BeliefSpec,
    pub goal: GoalRegion,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairSpec {
    pub i: usize,
    pub j: usize,
    #[serde(rename = "C")]
    pub c: MatrixSpec,
    #[serde(rename = "R")]
    pub r: MatrixSpec,
    pub r_ext: f64,
}

fn default_true() -> bool {
    true
}

/// On-disk form of an [`Environment`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentFile {
    pub name: String,
    #[serde(default)]
    pub description: String,
    pub workspace: Workspace,
    #[serde(default)]
    pub obstacles: Vec<Obstacle>,
    pub robots: Vec<RobotSpec>,
    #[serde(default)]
    pub pairs: Vec<PairSpec>,
    pub budget: ProbabilityBudget,
    #[serde(default = "default_true")]
    pub divide_pair_budget: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Environment {
    pub name: String,
    pub description: String,
    pub geometry: Geometry,
    pub model: TeamModel,
    pub starts: Vec<GaussianBelief>,
    pub goals: Vec<GoalRegion>,
    pub budget: ProbabilityBudget,
    pub divide_pair_budget: bool,
}

impl Environment {
    /// Validates every invariant, including validity of the start beliefs.
    pub fn new(
        name: String,
        description: String,
        geometry: Geometry,
        model: TeamModel,
        starts: Vec<GaussianBelief>,
        goals: Vec<GoalRegion>,
        budget: ProbabilityBudget,
        divide_pair_budget: bool,
    ) -> Result<Self> {
        let env = Self {
            name,
            description,
            geometry,
            model,
            starts,
            goals,
            budget,
            divide_pair_budget,
        };
        env.check()?;
        Ok(env)
    }

    fn check(&self) -> Result<()> {
        self.budget.validate()?;
        let w = self.model.workspace_dim();
        let ws = &self.geometry.workspace;
        if ws.min.len() != w || ws.max.len() != w || ws.min.iter().zip(&ws.max).any(|(a, b)| !(a < b)) {
            return Err(Error::config("workspace", "bounds must be ordered with one entry per axis"));
        }
        for (k, o) in self.geometry.obstacles.iter().enumerate() {
            let field = format!("obstacles[{k}]");
            if o.dim() != w {
                return Err(Error::config(field, "dimension does not match workspace"));
            }
            let inside = |p: &[f64]| p.iter().zip(ws.min.iter().zip(&ws.max)).all(|(x, (lo, hi))| x >= lo && x <= hi);
            match o {
                Obstacle::Rect { min, max } => {
                    if max.len() != w || min.iter().zip(max).any(|(a, b)| !(a < b)) {
                        return Err(Error::config(field, "rectangle has an empty interior"));
                    }
                    if !inside(min) || !inside(max) {
                        return Err(Error::config(field, "rectangle leaves the workspace"));
                    }
                }
                Obstacle::Disc { center, radius } => {
                    if !(*radius > 0.0) {
                        return Err(Error::config(field, "disc radius must be positive"));
                    }
                    if !inside(center) {
                        return Err(Error::config(field, "disc centre outside the workspace"));
                    }
                }
            }
        }
        let n = self.model.num_robots();
        if self.starts.len() != n || self.goals.len() != n {
            return Err(Error::config("robots", "each robot needs one start and one goal"));
        }
        for (i, (s, r)) in self.starts.iter().zip(self.model.robots()).enumerate() {
            if s.dim() != r.state_dim() {
                return Err(Error::config(format!("robots[{i}].start"), "dimension does not match the state"));
            }
        }
        for (i, g) in self.goals.iter().enumerate() {
            let field = format!("robots[{i}].goal");
            if !(g.radius > 0.0) {
                return Err(Error::config(field, "goal radius must be positive"));
            }
            if g.center.len() != w || !ws.contains_ball(&g.center, 0.0) {
                return Err(Error::config(field, "goal centre must lie in the workspace"));
            }
        }
        let validator = self.validator()?;
        let root = self.root_belief()?;
        if let Err(rej) = validator.validate(&root.mean, &root.gamma(), &[]) {
            let field = match rej {
                crate::validation::Rejection::Obstacle { robot } => format!("robots[{robot}].start"),
                crate::validation::Rejection::RobotRobot { i, j } => format!("robots[{i}].start/robots[{j}].start"),
                _ => "robots".to_string(),
            };
            return Err(Error::config(field, format!("start beliefs are not valid ({rej:?})")));
        }
        Ok(())
    }

    pub fn validator(&self) -> Result<Validator> {
        Validator::new(
            &self.model,
            self.geometry.clone(),
            self.goals.clone(),
            &self.budget,
            self.divide_pair_budget,
        )
    }

    /// Composed start belief; robots start independent.
    pub fn root_belief(&self) -> Result<ExpectedBelief> {
        let mean = DVector::from_iterator(
            self.model.state_dim(),
            self.starts.iter().flat_map(|s| s.mean().iter().copied()),
        );
        let sigma = block_diag(self.starts.iter().map(|s| s.covariance()));
        ExpectedBelief::root(mean, sigma)
    }

    /// Same environment with every exteroceptive pair removed.
    pub fn without_exteroception(&self) -> Self {
        let mut e = self.clone();
        e.model = self.model.without_pairs();
        e
    }

    pub fn to_file(&self) -> EnvironmentFile {
        let robots = self
            .model
            .robots()
            .iter()
            .zip(self.starts.iter().zip(&self.goals))
            .map(|(r, (s, g))| RobotSpec {
                a: MatrixSpec::from_matrix(&r.a),
                b: MatrixSpec::from_matrix(&r.b),
                q: MatrixSpec::from_matrix(&r.q),
                proprioceptive: r.proprioceptive.as_ref().map(|s| SensorSpec {
                    c: MatrixSpec::from_matrix(&s.c),
                    r: MatrixSpec::from_matrix(&s.r),
                }),
                body_radius: r.body_radius,
                workspace_proj: Some(r.workspace_proj.clone()),
                control_bounds: Some(r.control_bounds.iter().map(|&(a, b)| [a, b]).collect()),
                start: BeliefSpec {
                    mean: s.mean().iter().copied().collect(),
                    cov: MatrixSpec::from_matrix(s.covariance()),
                },
                goal: g.clone(),
            })
            .collect();
        let pairs = self
            .model
            .pairs()
            .iter()
            .map(|p| PairSpec {
                i: p.i,
                j: p.j,
                c: MatrixSpec::from_matrix(&p.c),
                r: MatrixSpec::from_matrix(&p.r),
                r_ext: p.r_ext,
            })
            .collect();
        EnvironmentFile {
            name: self.name.clone(),
            description: self.description.clone(),
            workspace: self.geometry.workspace.clone(),
            obstacles: self.geometry.obstacles.clone(),
            robots,
            pairs,
            budget: self.budget,
            divide_pair_budget: self.divide_pair_budget,
        }
    }

    pub fn from_file(file: EnvironmentFile) -> Result<Self> {
        let mut robots = Vec::new();
        let mut starts = Vec::new();
        let mut goals = Vec::new();
        for (i, spec) in file.robots.into_iter().enumerate() {
            let f = |name: &str| format!("robots[{i}].{name}");
            let a = spec.a.to_matrix(&f("A"))?;
            let b = spec.b.to_matrix(&f("B"))?;
            let q = spec.q.to_matrix(&f("Q"))?;
            let n = a.nrows();
            let m = b.ncols();
            let proprioceptive = match spec.proprioceptive {
                Some(s) => Some(Sensor {
                    c: s.c.to_matrix(&f("proprioceptive.C"))?,
                    r: s.r.to_matrix(&f("proprioceptive.R"))?,
                }),
                None => None,
            };
            let w = file.workspace.min.len();
            let robot = RobotModel {
                a,
                b,
                q,
                proprioceptive,
                body_radius: spec.body_radius,
                workspace_proj: spec.workspace_proj.unwrap_or_else(|| (0..w.min(n)).collect()),
                control_bounds: spec
                    .control_bounds
                    .map(|v| v.into_iter().map(|[a, b]| (a, b)).collect())
                    .unwrap_or_else(|| vec![(-DEFAULT_U_MAX, DEFAULT_U_MAX); m]),
            };
            robot
                .validate()
                .map_err(|e| Error::config(format!("robots[{i}]"), e.to_string()))?;
            let cov = spec.start.cov.to_matrix(&f("start.cov"))?;
            let start = GaussianBelief::new(DVector::from_vec(spec.start.mean), cov)
                .map_err(|e| Error::config(f("start"), e.to_string()))?;
            robots.push(robot);
            starts.push(start);
            goals.push(spec.goal);
        }
        let pairs = file
            .pairs
            .into_iter()
            .enumerate()
            .map(|(k, p)| {
                Ok(ExteroPair {
                    i: p.i,
                    j: p.j,
                    c: p.c.to_matrix(&format!("pairs[{k}].C"))?,
                    r: p.r.to_matrix(&format!("pairs[{k}].R"))?,
                    r_ext: p.r_ext,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = TeamModel::compose(robots, pairs).map_err(|e| Error::config("robots", e.to_string()))?;
        Self::new(
            file.name,
            file.description,
            Geometry {
                workspace: file.workspace,
                obstacles: file.obstacles,
            },
            model,
            starts,
            goals,
            file.budget,
            file.divide_pair_budget,
        )
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: EnvironmentFile = serde_json::from_str(text).map_err(|e| Error::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Self::from_file(file)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_file()).expect("environment serializes")
    }
}

pub fn load_environment(path: impl AsRef<Path>) -> Result<Environment> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Environment::from_json(&text)
}

const BUILTIN: &[(&str, &str)] = &[
    ("corridor2", include_str!("../../../envs/corridor2.json")),
    ("pincer2", include_str!("../../../envs/pincer2.json")),
    ("hive2", include_str!("../../../envs/hive2.json")),
    ("random2", include_str!("../../../envs/random2.json")),
    ("trivial2", include_str!("../../../envs/trivial2.json")),
];

/// Names of the shipped environments.
pub fn builtin_names() -> Vec<&'static str> {
    BUILTIN.iter().map(|(n, _)| *n).collect()
}

/// One of the shipped environments by name.
pub fn builtin(name: &str) -> Result<Environment> {
    let (_, text) = BUILTIN
        .iter()
        .find(|(n, _)| *n == name)
        .ok_or_else(|| Error::Argument(format!("no built-in environment `{name}`")))?;
    Environment::from_json(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matrix_spec_is_row_major() {
        let m = MatrixSpec {
            shape: [2, 3],
            data: vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
        }
        .to_matrix("m")
        .unwrap();
        assert_eq!(m[(0, 2)], 3.0);
        assert_eq!(m[(1, 0)], 4.0);
        assert_eq!(MatrixSpec::from_matrix(&m).data, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
    }

    #[test]
    fn bad_shape_names_the_field() {
        let err = MatrixSpec {
            shape: [2, 2],
            data: vec![1.0],
        }
        .to_matrix("robots[0].Q")
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "robots[0].Q"));
    }

    #[test]
    fn hive2_matches_evaluation_team() {
        let env = builtin("hive2").unwrap();
        assert_eq!(env.model.num_robots(), 2);
        let eye = DMatrix::<f64>::identity(2, 2);
        for r in env.model.robots() {
            assert_eq!(r.a, eye);
            assert_eq!(r.b, eye);
            assert_eq!(r.q, &eye * 0.01);
        }
        assert!(env.model.robots()[0].proprioceptive.is_some());
        assert!(env.model.robots()[1].proprioceptive.is_none());
        let b = env.budget;
        assert_eq!((b.p_obs, b.p_rob, b.p_ncl), (0.05, 0.05, 0.05));
    }

    #[test]
    fn every_builtin_loads_and_round_trips() {
        for name in builtin_names() {
            let env = builtin(name).unwrap();
            let again = Environment::from_json(&env.to_json()).unwrap();
            assert_eq!(env, again, "{name}");
            let root = env.root_belief().unwrap();
            assert!(env.validator().unwrap().validate(&root.mean, &root.gamma(), &[]).is_ok());
        }
    }

    fn edit(name: &str, f: impl FnOnce(&mut EnvironmentFile)) -> Result<Environment> {
        let mut file = builtin(name).unwrap().to_file();
        f(&mut file);
        Environment::from_file(file)
    }

    #[test]
    fn budget_violation_is_rejected() {
        let err = edit("hive2", |f| f.budget.p_obs = 0.1).unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "budget"));
    }

    #[test]
    fn start_inside_obstacle_is_rejected() {
        let err = edit("random2", |f| {
            let c = f.robots[0].start.mean.clone();
            f.obstacles.push(Obstacle::Disc {
                center: c,
                radius: 0.5,
            });
        })
        .unwrap_err();
        assert!(matches!(err, Error::Config { ref field, .. } if field == "robots[0].start"));
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = Environment::from_json("{\n  \"name\": 3\n}").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        assert!(matches!(
            load_environment("/nonexistent/env.json"),
            Err(Error::Io { .. })
        ));
    }
}
