//! Per-robot linear-Gaussian models and the composed team system.

use std::ops::Range;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::propagation::LinearSystem;

/// Default per-axis bound on a single control step.
pub const DEFAULT_U_MAX: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct Sensor {
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RobotModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub q: DMatrix<f64>,
    /// `None` means the robot has no proprioceptive sensor.
    pub proprioceptive: Option<Sensor>,
    pub body_radius: f64,
    /// State indices of the workspace coordinates.
    pub workspace_proj: Vec<usize>,
    /// Inclusive per-control-dimension interval.
    pub control_bounds: Vec<(f64, f64)>,
}

fn is_psd(m: &DMatrix<f64>) -> bool {
    crate::gaussian::repair_psd(m).is_ok()
}

impl RobotModel {
    /// A `w`-dimensional single integrator: `A = B = I`, `Q = q_scale I`,
    /// controls bounded by `u_max` per axis.
    pub fn single_integrator(w: usize, q_scale: f64, body_radius: f64) -> Self {
        Self {
            a: DMatrix::identity(w, w),
            b: DMatrix::identity(w, w),
            q: DMatrix::identity(w, w) * q_scale,
            proprioceptive: None,
            body_radius,
            workspace_proj: (0..w).collect(),
            control_bounds: vec![(-DEFAULT_U_MAX, DEFAULT_U_MAX); w],
        }
    }

    pub fn with_proprioception(mut self, c: DMatrix<f64>, r: DMatrix<f64>) -> Self {
        self.proprioceptive = Some(Sensor { c, r });
        self
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn workspace_dim(&self) -> usize {
        self.workspace_proj.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.state_dim();
        let dim = |what: &str, m: &DMatrix<f64>, r: usize, c: usize| -> Result<()> {
            if m.nrows() != r || m.ncols() != c {
                return Err(Error::Dimension(format!(
                    "{what} is {}x{}, expected {r}x{c}",
                    m.nrows(),
                    m.ncols()
                )));
            }
            Ok(())
        };
        if n == 0 {
            return Err(Error::Dimension("robot state dimension is zero".into()));
        }
        dim("A", &self.a, n, n)?;
        if self.b.nrows() != n {
            return Err(Error::Dimension(format!(
                "B has {} rows, expected {n}",
                self.b.nrows()
            )));
        }
        dim("Q", &self.q, n, n)?;
        if !is_psd(&self.q) {
            return Err(Error::Model("process noise Q is not PSD".into()));
        }
        if let Some(s) = &self.proprioceptive {
            if s.c.ncols() != n {
                return Err(Error::Dimension(format!(
                    "proprioceptive C has {} columns, expected {n}",
                    s.c.ncols()
                )));
            }
            dim("R_prop", &s.r, s.c.nrows(), s.c.nrows())?;
            if !is_psd(&s.r) {
                return Err(Error::Model("proprioceptive R is not PSD".into()));
            }
        }
        if !(2..=3).contains(&self.workspace_proj.len()) {
            return Err(Error::Dimension(format!(
                "workspace projection must have 2 or 3 entries, got {}",
                self.workspace_proj.len()
            )));
        }
        if self.workspace_proj.iter().any(|&i| i >= n) {
            return Err(Error::Dimension(
                "workspace projection index outside the state".into(),
            ));
        }
        if self.control_bounds.len() != self.control_dim() {
            return Err(Error::Dimension(format!(
                "{} control bounds for {} controls",
                self.control_bounds.len(),
                self.control_dim()
            )));
        }
        if self.control_bounds.iter().any(|&(lo, hi)| !(lo <= hi)) {
            return Err(Error::Model("control bound with lower > upper".into()));
        }
        if !(self.body_radius >= 0.0) {
            return Err(Error::Model("body radius must be non-negative".into()));
        }
        Ok(())
    }
}

/// Relative measurement between robots `i < j` over the stacked state `[x_i; x_j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ExteroPair {
    pub i: usize,
    pub j: usize,
    pub c: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub r_ext: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TeamModel {
    robots: Vec<RobotModel>,
    pairs: Vec<ExteroPair>,
    system: LinearSystem,
    state_offsets: Vec<Range<usize>>,
    control_offsets: Vec<Range<usize>>,
    workspace_indices: Vec<Vec<usize>>,
    prop_c: DMatrix<f64>,
    prop_r: DMatrix<f64>,
}

pub fn block_diag<'a>(blocks: impl IntoIterator<Item = &'a DMatrix<f64>>) -> DMatrix<f64> {
    let blocks: Vec<_> = blocks.into_iter().collect();
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

fn offsets(sizes: impl Iterator<Item = usize>) -> Vec<Range<usize>> {
    let mut start = 0;
    sizes
        .map(|n| {
            let r = start..start + n;
            start += n;
            r
        })
        .collect()
}

impl TeamModel {
    pub fn compose(robots: Vec<RobotModel>, pairs: Vec<ExteroPair>) -> Result<Self> {
        if robots.len() < 2 {
            return Err(Error::Model(format!(
                "a team needs at least 2 robots, got {}",
                robots.len()
            )));
        }
        for (idx, r) in robots.iter().enumerate() {
            r.validate()
                .map_err(|e| Error::Model(format!("robot {idx}: {e}")))?;
        }
        let w = robots[0].workspace_dim();
        if robots.iter().any(|r| r.workspace_dim() != w) {
            return Err(Error::Dimension(
                "all robots must share the workspace dimension".into(),
            ));
        }
        for (idx, p) in pairs.iter().enumerate() {
            if p.i >= p.j || p.j >= robots.len() {
                return Err(Error::Model(format!(
                    "pair {idx}: need i < j < {}, got ({}, {})",
                    robots.len(),
                    p.i,
                    p.j
                )));
            }
            let cols = robots[p.i].state_dim() + robots[p.j].state_dim();
            if p.c.ncols() != cols {
                return Err(Error::Dimension(format!(
                    "pair {idx}: C_ext has {} columns, expected {cols}",
                    p.c.ncols()
                )));
            }
            if p.r.nrows() != p.c.nrows() || p.r.ncols() != p.c.nrows() {
                return Err(Error::Dimension(format!(
                    "pair {idx}: R_ext must be {0}x{0}",
                    p.c.nrows()
                )));
            }
            if !is_psd(&p.r) {
                return Err(Error::Model(format!("pair {idx}: R_ext is not PSD")));
            }
            if !(p.r_ext >= 0.0) {
                return Err(Error::Model(format!("pair {idx}: r_ext must be >= 0")));
            }
        }

        let state_offsets = offsets(robots.iter().map(RobotModel::state_dim));
        let control_offsets = offsets(robots.iter().map(RobotModel::control_dim));
        let workspace_indices = robots
            .iter()
            .zip(&state_offsets)
            .map(|(r, off)| r.workspace_proj.iter().map(|&i| off.start + i).collect())
            .collect();
        let system = LinearSystem::new(
            block_diag(robots.iter().map(|r| &r.a)),
            block_diag(robots.iter().map(|r| &r.b)),
            block_diag(robots.iter().map(|r| &r.q)),
        )?;

        let n_total = state_offsets.last().map_or(0, |r| r.end);
        let prop_rows: usize = robots
            .iter()
            .filter_map(|r| r.proprioceptive.as_ref())
            .map(|s| s.c.nrows())
            .sum();
        let mut prop_c = DMatrix::zeros(prop_rows, n_total);
        let mut row = 0;
        for (r, off) in robots.iter().zip(&state_offsets) {
            if let Some(s) = &r.proprioceptive {
                prop_c
                    .view_mut((row, off.start), (s.c.nrows(), s.c.ncols()))
                    .copy_from(&s.c);
                row += s.c.nrows();
            }
        }
        let prop_r = block_diag(
            robots
                .iter()
                .filter_map(|r| r.proprioceptive.as_ref())
                .map(|s| &s.r),
        );

        Ok(Self {
            robots,
            pairs,
            system,
            state_offsets,
            control_offsets,
            workspace_indices,
            prop_c,
            prop_r,
        })
    }

    pub fn robots(&self) -> &[RobotModel] {
        &self.robots
    }

    pub fn pairs(&self) -> &[ExteroPair] {
        &self.pairs
    }

    pub fn num_robots(&self) -> usize {
        self.robots.len()
    }

    pub fn workspace_dim(&self) -> usize {
        self.robots[0].workspace_dim()
    }

    pub fn state_dim(&self) -> usize {
        self.system.state_dim()
    }

    pub fn control_dim(&self) -> usize {
        self.system.control_dim()
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn state_range(&self, robot: usize) -> Range<usize> {
        self.state_offsets[robot].clone()
    }

    pub fn control_range(&self, robot: usize) -> Range<usize> {
        self.control_offsets[robot].clone()
    }

    /// Global indices of robot `robot`'s workspace coordinates.
    pub fn workspace_indices(&self, robot: usize) -> &[usize] {
        &self.workspace_indices[robot]
    }

    pub fn workspace_position(&self, x: &DVector<f64>, robot: usize) -> Vec<f64> {
        self.workspace_indices[robot].iter().map(|&i| x[i]).collect()
    }

    /// Workspace positions of all robots, concatenated.
    pub fn workspace_positions(&self, x: &DVector<f64>) -> Vec<f64> {
        self.workspace_indices
            .iter()
            .flat_map(|idx| idx.iter().map(|&i| x[i]))
            .collect()
    }

    /// Composed `(C_k, R_k)`: proprioceptive stack above one block per active pair.
    pub fn assemble_measurement(&self, active: &[usize]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if let Some(&bad) = active.iter().find(|&&p| p >= self.pairs.len()) {
            return Err(Error::Argument(format!(
                "unknown exteroceptive pair {bad} (model has {})",
                self.pairs.len()
            )));
        }
        if active.is_empty() {
            return Ok((self.prop_c.clone(), self.prop_r.clone()));
        }
        let ext_rows: usize = active.iter().map(|&p| self.pairs[p].c.nrows()).sum();
        let n = self.state_dim();
        let rows = self.prop_c.nrows() + ext_rows;
        let mut c = DMatrix::zeros(rows, n);
        c.view_mut((0, 0), (self.prop_c.nrows(), n))
            .copy_from(&self.prop_c);
        let mut row = self.prop_c.nrows();
        for &p in active {
            let pair = &self.pairs[p];
            let (oi, oj) = (&self.state_offsets[pair.i], &self.state_offsets[pair.j]);
            let (ni, nj) = (oi.len(), oj.len());
            let m = pair.c.nrows();
            c.view_mut((row, oi.start), (m, ni))
                .copy_from(&pair.c.columns(0, ni));
            c.view_mut((row, oj.start), (m, nj))
                .copy_from(&pair.c.columns(ni, nj));
            row += m;
        }
        let r = block_diag(
            std::iter::once(&self.prop_r).chain(active.iter().map(|&p| &self.pairs[p].r)),
        );
        Ok((c, r))
    }

    /// Mean-level availability test: workspace distance within `r_ext`.
    pub fn pair_within_radius(&self, x: &DVector<f64>, pair: usize) -> bool {
        let p = &self.pairs[pair];
        self.workspace_distance(x, p.i, p.j) <= p.r_ext
    }

    pub fn workspace_distance(&self, x: &DVector<f64>, i: usize, j: usize) -> f64 {
        self.workspace_indices[i]
            .iter()
            .zip(&self.workspace_indices[j])
            .map(|(&a, &b)| (x[a] - x[b]).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// Copy of this model with all exteroceptive pairs removed.
    pub fn without_pairs(&self) -> Self {
        let mut m = self.clone();
        m.pairs.clear();
        m
    }
}

/// Per-step sets of active exteroceptive pairs. Step `k` holds the pairs used
/// by the measurement update of the transition `k -> k+1`.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct MeasurementSchedule {
    pub steps: Vec<Vec<usize>>,
}

impl MeasurementSchedule {
    pub fn new(steps: Vec<Vec<usize>>) -> Self {
        Self { steps }
    }

    pub fn empty(len: usize) -> Self {
        Self {
            steps: vec![Vec::new(); len],
        }
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn validate(&self, model: &TeamModel) -> Result<()> {
        for (k, step) in self.steps.iter().enumerate() {
            if let Some(&bad) = step.iter().find(|&&p| p >= model.pairs().len()) {
                return Err(Error::Argument(format!(
                    "schedule step {k} references unknown pair {bad}"
                )));
            }
        }
        Ok(())
    }

    pub fn materialize(&self, model: &TeamModel, k: usize) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        let step = self
            .steps
            .get(k)
            .ok_or_else(|| Error::Argument(format!("schedule has no step {k}")))?;
        model.assemble_measurement(step)
    }

    pub fn has_exteroceptive(&self) -> bool {
        self.steps.iter().any(|s| !s.is_empty())
    }
}

/// The evaluation team: `n` planar single integrators with `Q = 0.01 I`;
/// robots with even zero-based index (odd one-based) carry `C_prop = I`,
/// and every pair shares `C_ext = [I, -I]`.
pub fn standard_team(n: usize, r_ext: f64, r_prop: f64, r_ext_noise: f64, body_radius: f64) -> Result<TeamModel> {
    let eye = DMatrix::<f64>::identity(2, 2);
    let robots = (0..n)
        .map(|i| {
            let r = RobotModel::single_integrator(2, 0.01, body_radius);
            if i % 2 == 0 {
                r.with_proprioception(eye.clone(), &eye * r_prop)
            } else {
                r
            }
        })
        .collect();
    let mut c_ext = DMatrix::zeros(2, 4);
    c_ext.view_mut((0, 0), (2, 2)).copy_from(&eye);
    c_ext.view_mut((0, 2), (2, 2)).copy_from(&(-&eye));
    let mut pairs = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            pairs.push(ExteroPair {
                i,
                j,
                c: c_ext.clone(),
                r: &eye * r_ext_noise,
                r_ext,
            });
        }
    }
    TeamModel::compose(robots, pairs)
}
