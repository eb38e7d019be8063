//! Expected-belief propagation for a linear system under a Kalman filter and
//! a linear feedback law about the nominal trajectory.
//!
//! The expected belief at step `k` is `N(X_k, Gamma_k)` with
//! `Gamma_k = Sigma_k + Lambda_k`: `Sigma` is the online filter covariance and
//! `Lambda` the spread of the filter mean caused by measurements that are not
//! known at planning time. One step with control `u`, measurement `(C, R)`
//! and closed-loop matrix `A - B K`:
//!
//! ```text
//! mean'   = A mean + B u
//! Sbar    = A Sigma A^T + Q
//! L       = Sbar C^T (C Sbar C^T + R)^-1
//! Sigma'  = Sbar - L C Sbar
//! Lambda' = (A - B K) Lambda (A - B K)^T + L C Sbar
//! ```

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::gaussian::repair_psd;
use crate::team::{block_diag, MeasurementSchedule, RobotModel, TeamModel};

const INNOVATION_JITTER: f64 = 1e-12;
const RICCATI_TOL: f64 = 1e-10;
const RICCATI_MAX_ITER: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    q: DMatrix<f64>,
}

impl LinearSystem {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, q: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || b.nrows() != n || q.nrows() != n || q.ncols() != n {
            return Err(Error::Dimension(format!(
                "inconsistent system: A {}x{}, B {}x{}, Q {}x{}",
                a.nrows(),
                a.ncols(),
                b.nrows(),
                b.ncols(),
                q.nrows(),
                q.ncols()
            )));
        }
        Ok(Self { a, b, q })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn q(&self) -> &DMatrix<f64> {
        &self.q
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn control_dim(&self) -> usize {
        self.b.ncols()
    }

    /// Nominal (noise-free) transition.
    pub fn step_mean(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        &self.a * x + &self.b * u
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpectedBelief {
    pub mean: DVector<f64>,
    pub sigma: DMatrix<f64>,
    pub lambda: DMatrix<f64>,
    pub time_index: usize,
}

impl ExpectedBelief {
    /// Root belief: the initial estimate is known, so `Lambda_0 = 0`.
    pub fn root(mean: DVector<f64>, sigma0: DMatrix<f64>) -> Result<Self> {
        if sigma0.nrows() != mean.len() || sigma0.ncols() != mean.len() {
            return Err(Error::Dimension("root covariance does not match mean".into()));
        }
        let n = mean.len();
        Ok(Self {
            mean,
            sigma: repair_psd(&sigma0)?,
            lambda: DMatrix::zeros(n, n),
            time_index: 0,
        })
    }

    pub fn gamma(&self) -> DMatrix<f64> {
        &self.sigma + &self.lambda
    }
}

/// Spectral radius of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}

/// Infinite-horizon discrete LQR gain by fixed-point Riccati iteration.
pub fn lqr_gain(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    q_cost: &DMatrix<f64>,
    r_cost: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    let at = a.transpose();
    let bt = b.transpose();
    let gain = |p: &DMatrix<f64>| -> Result<DMatrix<f64>> {
        let s = r_cost + &bt * p * b;
        let chol = s
            .cholesky()
            .ok_or_else(|| Error::Model("R + B^T P B is not positive definite".into()))?;
        Ok(chol.solve(&(&bt * p * a)))
    };
    let mut p = q_cost.clone();
    for _ in 0..RICCATI_MAX_ITER {
        let k = gain(&p)?;
        let next = q_cost + &at * &p * a - &at * &p * b * &k;
        let next = (&next + next.transpose()) * 0.5;
        let delta = (&next - &p).amax();
        p = next;
        if !p.iter().all(|v| v.is_finite()) {
            break;
        }
        if delta < RICCATI_TOL {
            let k = gain(&p)?;
            let rho = spectral_radius(&(a - b * &k));
            if rho >= 1.0 {
                return Err(Error::Model(format!(
                    "LQR closed loop is not Schur stable (spectral radius {rho})"
                )));
            }
            return Ok(k);
        }
    }
    Err(Error::Model(
        "Riccati recursion did not converge; (A, B) may not be stabilizable".into(),
    ))
}

/// Per-robot feedback gains and their block-diagonal composition.
#[derive(Debug, Clone, PartialEq)]
pub struct GainSet {
    per_robot: Vec<DMatrix<f64>>,
    composed: DMatrix<f64>,
}

impl GainSet {
    pub fn new(robots: &[RobotModel], per_robot: Vec<DMatrix<f64>>) -> Result<Self> {
        if robots.len() != per_robot.len() {
            return Err(Error::Dimension("one gain per robot required".into()));
        }
        for (i, (r, k)) in robots.iter().zip(&per_robot).enumerate() {
            if k.nrows() != r.control_dim() || k.ncols() != r.state_dim() {
                return Err(Error::Dimension(format!("gain {i} has wrong shape")));
            }
            let rho = spectral_radius(&(&r.a - &r.b * k));
            if rho >= 1.0 {
                return Err(Error::Model(format!(
                    "gain {i} is not stabilizing (spectral radius {rho})"
                )));
            }
        }
        let composed = block_diag(per_robot.iter());
        Ok(Self {
            per_robot,
            composed,
        })
    }

    /// LQR gains with `Q_cost = q_weight I` and `R_cost = r_weight I` for every robot.
    pub fn lqr(robots: &[RobotModel], q_weight: f64, r_weight: f64) -> Result<Self> {
        let gains = robots
            .iter()
            .map(|r| {
                lqr_gain(
                    &r.a,
                    &r.b,
                    &(DMatrix::identity(r.state_dim(), r.state_dim()) * q_weight),
                    &(DMatrix::identity(r.control_dim(), r.control_dim()) * r_weight),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(robots, gains)
    }

    pub fn per_robot(&self) -> &[DMatrix<f64>] {
        &self.per_robot
    }

    pub fn composed(&self) -> &DMatrix<f64> {
        &self.composed
    }
}

/// State after the time update but before the measurement update.
#[derive(Debug, Clone)]
pub struct Prediction {
    pub mean: DVector<f64>,
    pub sigma_bar: DMatrix<f64>,
    /// `(A - B K) Lambda (A - B K)^T`
    pub lambda_bar: DMatrix<f64>,
    pub time_index: usize,
}

impl Prediction {
    /// `Gamma` at the next step. It does not depend on the measurement matrix.
    pub fn gamma(&self) -> DMatrix<f64> {
        &self.sigma_bar + &self.lambda_bar
    }
}

/// Belief propagator for a fixed system and feedback gain.
#[derive(Debug, Clone)]
pub struct Propagator {
    system: LinearSystem,
    gain: DMatrix<f64>,
    closed_loop: DMatrix<f64>,
}

impl Propagator {
    pub fn new(system: LinearSystem, gain: DMatrix<f64>) -> Result<Self> {
        if gain.nrows() != system.control_dim() || gain.ncols() != system.state_dim() {
            return Err(Error::Dimension("gain shape does not match system".into()));
        }
        let closed_loop = system.a() - system.b() * &gain;
        Ok(Self {
            system,
            gain,
            closed_loop,
        })
    }

    pub fn for_team(model: &TeamModel, gains: &GainSet) -> Result<Self> {
        Self::new(model.system().clone(), gains.composed().clone())
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn gain(&self) -> &DMatrix<f64> {
        &self.gain
    }

    pub fn predict(&self, belief: &ExpectedBelief, u: &DVector<f64>) -> Result<Prediction> {
        let n = self.system.state_dim();
        if belief.mean.len() != n || u.len() != self.system.control_dim() {
            return Err(Error::Dimension(format!(
                "belief dimension {} / control dimension {} do not match system {}x{}",
                belief.mean.len(),
                u.len(),
                n,
                self.system.control_dim()
            )));
        }
        let a = self.system.a();
        let sigma_bar = a * &belief.sigma * a.transpose() + self.system.q();
        let lambda_bar = &self.closed_loop * &belief.lambda * self.closed_loop.transpose();
        Ok(Prediction {
            mean: self.system.step_mean(&belief.mean, u),
            sigma_bar,
            lambda_bar,
            time_index: belief.time_index + 1,
        })
    }

    pub fn update(&self, pred: Prediction, c: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<ExpectedBelief> {
        let n = self.system.state_dim();
        if c.ncols() != n || r.nrows() != c.nrows() || r.ncols() != c.nrows() {
            return Err(Error::Dimension(format!(
                "measurement C {}x{} / R {}x{} incompatible with state dimension {n}",
                c.nrows(),
                c.ncols(),
                r.nrows(),
                r.ncols()
            )));
        }
        let Prediction {
            mean,
            sigma_bar,
            lambda_bar,
            time_index,
        } = pred;
        let (sigma, lambda) = if c.nrows() == 0 {
            (sigma_bar, lambda_bar)
        } else {
            let cs = c * &sigma_bar;
            let s = &cs * c.transpose() + r;
            let s = (&s + s.transpose()) * 0.5;
            let chol = match s.clone().cholesky() {
                Some(ch) => ch,
                None => {
                    let m = s.nrows();
                    (s + DMatrix::identity(m, m) * INNOVATION_JITTER)
                        .cholesky()
                        .ok_or_else(|| Error::Numeric("singular innovation covariance".into()))?
                }
            };
            // L C Sbar = (C Sbar)^T S^-1 (C Sbar)
            let info = cs.transpose() * chol.solve(&cs);
            (&sigma_bar - &info, &lambda_bar + &info)
        };
        Ok(ExpectedBelief {
            mean,
            sigma: repair_psd(&sigma)?,
            lambda: repair_psd(&lambda)?,
            time_index,
        })
    }

    pub fn step(
        &self,
        belief: &ExpectedBelief,
        u: &DVector<f64>,
        c: &DMatrix<f64>,
        r: &DMatrix<f64>,
    ) -> Result<ExpectedBelief> {
        self.update(self.predict(belief, u)?, c, r)
    }
}

/// One propagation step of the expected belief.
pub fn propagate_step(
    system: &LinearSystem,
    belief: &ExpectedBelief,
    u: &DVector<f64>,
    c: &DMatrix<f64>,
    r: &DMatrix<f64>,
    gain: &DMatrix<f64>,
) -> Result<ExpectedBelief> {
    Propagator::new(system.clone(), gain.clone())?.step(belief, u, c, r)
}

/// Nominal controls, nominal states (one more than controls) and the
/// measurement schedule of one tree edge.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EdgeRecord {
    pub controls: Vec<DVector<f64>>,
    pub states: Vec<DVector<f64>>,
    pub schedule: Vec<Vec<usize>>,
}

impl EdgeRecord {
    pub fn len(&self) -> usize {
        self.controls.len()
    }

    pub fn is_empty(&self) -> bool {
        self.controls.is_empty()
    }
}

/// Folds [`Propagator::step`] over an edge. Returns every intermediate belief
/// (one per control) and the edge record.
pub fn propagate_edge(
    propagator: &Propagator,
    model: &TeamModel,
    from: &ExpectedBelief,
    controls: &[DVector<f64>],
    schedule: &MeasurementSchedule,
) -> Result<(Vec<ExpectedBelief>, EdgeRecord)> {
    if schedule.len() != controls.len() {
        return Err(Error::Argument(format!(
            "schedule has {} steps for {} controls",
            schedule.len(),
            controls.len()
        )));
    }
    let mut beliefs = Vec::with_capacity(controls.len());
    let mut states = Vec::with_capacity(controls.len() + 1);
    states.push(from.mean.clone());
    let mut current = from.clone();
    for (k, u) in controls.iter().enumerate() {
        let (c, r) = schedule.materialize(model, k)?;
        current = propagator.step(&current, u, &c, &r)?;
        states.push(current.mean.clone());
        beliefs.push(current.clone());
    }
    Ok((
        beliefs,
        EdgeRecord {
            controls: controls.to_vec(),
            states,
            schedule: schedule.steps.clone(),
        },
    ))
}
