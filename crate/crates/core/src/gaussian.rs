//! Gaussian belief arithmetic: marginals, pairwise difference beliefs and
//! the spherical probability contours used by every constraint check.

use std::ops::Range;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use rand_distr::StandardNormal;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Eigenvalues down to this (negative) value are treated as round-off and clamped.
pub const PSD_TOLERANCE: f64 = 1e-9;

/// Symmetrizes `m` and clamps tiny negative eigenvalues to zero.
///
/// Fails when an eigenvalue is below `-PSD_TOLERANCE`.
pub fn repair_psd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if !m.is_square() {
        return Err(Error::Dimension(format!(
            "covariance must be square, got {}x{}",
            m.nrows(),
            m.ncols()
        )));
    }
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("covariance has non-finite entries".into()));
    }
    let sym = (m + m.transpose()) * 0.5;
    if sym.nrows() == 0 || sym.clone().cholesky().is_some() {
        return Ok(sym);
    }
    let eig = SymmetricEigen::new(sym.clone());
    let min = eig.eigenvalues.min();
    if min < -PSD_TOLERANCE {
        return Err(Error::Numeric(format!(
            "covariance is not positive semidefinite (min eigenvalue {min:e})"
        )));
    }
    if min >= 0.0 {
        return Ok(sym);
    }
    let clamped = eig.eigenvalues.map(|v| v.max(0.0));
    let rebuilt = &eig.eigenvectors * DMatrix::from_diagonal(&clamped) * eig.eigenvectors.transpose();
    Ok((&rebuilt + rebuilt.transpose()) * 0.5)
}

/// Largest eigenvalue of a symmetric matrix (closed form up to 2x2).
pub fn max_eigenvalue(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)],
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let half_diff = 0.5 * (a - d);
            0.5 * (a + d) + (half_diff * half_diff + b * b).sqrt()
        }
        _ => SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.max(),
    }
}

fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    match m.nrows() {
        0 => 0.0,
        1 => m[(0, 0)],
        2 => {
            let (a, b, d) = (m[(0, 0)], 0.5 * (m[(0, 1)] + m[(1, 0)]), m[(1, 1)]);
            let half_diff = 0.5 * (a - d);
            0.5 * (a + d) - (half_diff * half_diff + b * b).sqrt()
        }
        _ => SymmetricEigen::new((m + m.transpose()) * 0.5).eigenvalues.min(),
    }
}

/// Chi-squared quantile: the `x` with `P(chi2_dof <= x) = prob`.
pub fn chi2_quantile(dof: usize, prob: f64) -> Result<f64> {
    if !(prob > 0.0 && prob < 1.0) {
        return Err(Error::Argument(format!("probability {prob} outside (0, 1)")));
    }
    match dof {
        0 => Err(Error::Argument("chi-squared needs at least one degree of freedom".into())),
        2 => Ok(-2.0 * (1.0 - prob).ln()),
        _ => {
            let dist = ChiSquared::new(dof as f64)
                .map_err(|e| Error::Argument(format!("chi-squared({dof}): {e}")))?;
            Ok(dist.inverse_cdf(prob))
        }
    }
}

/// Precomputed scale `alpha` of a spherical probability contour.
///
/// The sphere of radius `sqrt(alpha * lambda_max)` around the mean of a
/// `dim`-dimensional Gaussian holds at least `1 - tail_prob` of its mass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContourScale {
    dim: usize,
    alpha: f64,
}

impl ContourScale {
    pub fn new(dim: usize, tail_prob: f64) -> Result<Self> {
        if !(tail_prob > 0.0 && tail_prob < 1.0) {
            return Err(Error::Argument(format!(
                "tail probability {tail_prob} outside (0, 1)"
            )));
        }
        Ok(Self {
            dim,
            alpha: chi2_quantile(dim, 1.0 - tail_prob)?,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Radius for an already-repaired covariance; no PSD check.
    pub fn radius_unchecked(&self, cov: &DMatrix<f64>) -> f64 {
        (self.alpha * max_eigenvalue(cov).max(0.0)).sqrt()
    }

    pub fn radius(&self, cov: &DMatrix<f64>) -> Result<f64> {
        if cov.nrows() != self.dim || cov.ncols() != self.dim {
            return Err(Error::Dimension(format!(
                "contour expects {0}x{0} covariance, got {1}x{2}",
                self.dim,
                cov.nrows(),
                cov.ncols()
            )));
        }
        if min_eigenvalue(cov) < -PSD_TOLERANCE {
            return Err(Error::Numeric("contour covariance is not PSD".into()));
        }
        Ok(self.radius_unchecked(cov))
    }
}

/// Radius of the origin-centred sphere holding at least `1 - tail_prob` of
/// the mass of `N(0, cov)`.
pub fn contour_radius(cov: &DMatrix<f64>, tail_prob: f64) -> Result<f64> {
    ContourScale::new(cov.nrows(), tail_prob)?.radius(cov)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GaussianBelief {
    mean: DVector<f64>,
    covariance: DMatrix<f64>,
}

impl GaussianBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        if covariance.nrows() != mean.len() || covariance.ncols() != mean.len() {
            return Err(Error::Dimension(format!(
                "mean has dimension {} but covariance is {}x{}",
                mean.len(),
                covariance.nrows(),
                covariance.ncols()
            )));
        }
        if mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("mean has non-finite entries".into()));
        }
        let covariance = repair_psd(&covariance)?;
        Ok(Self { mean, covariance })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Sub-mean and principal covariance sub-block over `block`.
    pub fn marginal(&self, block: Range<usize>) -> Result<GaussianBelief> {
        if block.start > block.end || block.end > self.dim() {
            return Err(Error::Dimension(format!(
                "block {block:?} out of range for dimension {}",
                self.dim()
            )));
        }
        let len = block.len();
        Ok(Self {
            mean: self.mean.rows(block.start, len).into_owned(),
            covariance: self
                .covariance
                .view((block.start, block.start), (len, len))
                .into_owned(),
        })
    }

    /// Marginal over an arbitrary index list (e.g. a robot's workspace coordinates).
    pub fn select(&self, indices: &[usize]) -> Result<GaussianBelief> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.dim()) {
            return Err(Error::Dimension(format!(
                "index {bad} out of range for dimension {}",
                self.dim()
            )));
        }
        Ok(Self {
            mean: self.mean.select_rows(indices),
            covariance: self.covariance.select_rows(indices).select_columns(indices),
        })
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        sample_gaussian(&self.mean, &psd_sqrt(&self.covariance), rng)
    }
}

/// Belief over `x_i - x_j` projected to the workspace.
#[derive(Debug, Clone, PartialEq)]
pub struct DifferenceBelief {
    pub(crate) mean: DVector<f64>,
    pub(crate) covariance: DMatrix<f64>,
}

impl DifferenceBelief {
    pub fn new(mean: DVector<f64>, covariance: DMatrix<f64>) -> Result<Self> {
        let b = GaussianBelief::new(mean, covariance)?;
        Ok(Self {
            mean: b.mean,
            covariance: b.covariance,
        })
    }

    pub fn mean(&self) -> &DVector<f64> {
        &self.mean
    }

    pub fn covariance(&self) -> &DMatrix<f64> {
        &self.covariance
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Difference belief from raw composed mean/covariance, without validation.
pub(crate) fn difference_parts(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    proj_i: &[usize],
    proj_j: &[usize],
) -> DifferenceBelief {
    let w = proj_i.len();
    let mut dm = DVector::zeros(w);
    let mut dc = DMatrix::zeros(w, w);
    for a in 0..w {
        dm[a] = mean[proj_i[a]] - mean[proj_j[a]];
        for b in 0..w {
            let (ia, ib, ja, jb) = (proj_i[a], proj_i[b], proj_j[a], proj_j[b]);
            // var(xi - xj) = Sii + Sjj - Sij - Sji
            dc[(a, b)] = cov[(ia, ib)] + cov[(ja, jb)] - cov[(ia, jb)] - cov[(ja, ib)];
        }
    }
    let dc = (&dc + dc.transpose()) * 0.5;
    DifferenceBelief {
        mean: dm,
        covariance: dc,
    }
}

/// Belief of the workspace difference between two robots of a composed belief.
pub fn difference_belief(
    b: &GaussianBelief,
    proj_i: &[usize],
    proj_j: &[usize],
) -> Result<DifferenceBelief> {
    if proj_i.len() != proj_j.len() || proj_i.is_empty() {
        return Err(Error::Argument(format!(
            "projections must be non-empty and equal length ({} vs {})",
            proj_i.len(),
            proj_j.len()
        )));
    }
    if proj_i.iter().any(|i| proj_j.contains(i)) {
        return Err(Error::Argument("projection index sets overlap".into()));
    }
    if let Some(&bad) = proj_i.iter().chain(proj_j).find(|&&i| i >= b.dim()) {
        return Err(Error::Dimension(format!(
            "index {bad} out of range for dimension {}",
            b.dim()
        )));
    }
    let mut diff = difference_parts(&b.mean, &b.covariance, proj_i, proj_j);
    diff.covariance = repair_psd(&diff.covariance)?;
    Ok(diff)
}

/// Symmetric square root `S` with `S S^T = cov`, tolerant of singular covariances.
pub fn psd_sqrt(cov: &DMatrix<f64>) -> DMatrix<f64> {
    if cov.nrows() == 0 {
        return cov.clone();
    }
    if let Some(ch) = cov.clone().cholesky() {
        return ch.l();
    }
    let eig = SymmetricEigen::new((cov + cov.transpose()) * 0.5);
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&roots)
}

/// Draws from `N(mean, S S^T)` given a square-root factor `S`.
pub fn sample_gaussian<R: Rng + ?Sized>(
    mean: &DVector<f64>,
    sqrt_cov: &DMatrix<f64>,
    rng: &mut R,
) -> DVector<f64> {
    let z = DVector::from_fn(sqrt_cov.ncols(), |_, _| rng.sample::<f64, _>(StandardNormal));
    mean + sqrt_cov * z
}
