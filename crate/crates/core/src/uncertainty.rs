//! Gaussian beliefs on SO(3).
//!
//! Uncertainty lives in the tangent space about a mean rotation: sampling
//! injects tangent-space noise onto the manifold (`q = Exp(ε) ⊗ q̄`), the
//! sample covariance maps residuals back with the logarithmic map, and the
//! negative log likelihood evaluates the injected density (up to its constant
//! term).

use nalgebra::{Cholesky, Matrix3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::so3::{TangentSO3, UnitQuaternion};

/// Smallest learnable standard deviation (radians) from covariance logits.
pub const SIGMA_MIN: f64 = 1e-4;

/// Jitter added to covariances before Cholesky factorization.
pub const COV_JITTER: f64 = 1e-12;

/// Symmetric positive semi-definite 3x3 covariance over tangent coordinates,
/// radians².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CovSO3 {
    m: Matrix3<f64>,
}

impl CovSO3 {
    /// Validates symmetry and positive semi-definiteness, then stores the
    /// symmetrized matrix.
    pub fn new(m: Matrix3<f64>) -> Result<Self> {
        let asym = (m - m.transpose()).norm();
        if asym > 1e-9 {
            return Err(Error::NotPositiveSemidefinite {
                reason: format!("asymmetry {asym:.3e}"),
            });
        }
        let sym = (m + m.transpose()) * 0.5;
        let min_eig = sym
            .symmetric_eigenvalues()
            .iter()
            .fold(f64::INFINITY, |a, &b| a.min(b));
        if min_eig < -1e-10 {
            return Err(Error::NotPositiveSemidefinite {
                reason: format!("eigenvalue {min_eig:.3e}"),
            });
        }
        Ok(CovSO3 { m: sym })
    }

    pub fn zeros() -> Self {
        CovSO3 { m: Matrix3::zeros() }
    }

    pub fn identity() -> Self {
        CovSO3 { m: Matrix3::identity() }
    }

    /// Diagonal covariance from per-axis variances.
    pub fn from_diagonal(var: &Vector3<f64>) -> Result<Self> {
        if var.iter().any(|v| *v < 0.0) {
            return Err(Error::NotPositiveSemidefinite {
                reason: format!("negative diagonal entry in {var:?}"),
            });
        }
        Ok(CovSO3 { m: Matrix3::from_diagonal(var) })
    }

    pub fn isotropic(var: f64) -> Result<Self> {
        Self::from_diagonal(&Vector3::new(var, var, var))
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.m
    }

    pub fn diagonal(&self) -> Vector3<f64> {
        self.m.diagonal()
    }

    pub fn trace(&self) -> f64 {
        self.m.trace()
    }

    /// A factor `F` with `F Fᵀ = Σ`: Cholesky when positive definite, the
    /// eigendecomposition square root for the semi-definite remainder.
    pub fn sqrt_factor(&self) -> Matrix3<f64> {
        if let Some(chol) = Cholesky::new(self.m) {
            return chol.l();
        }
        let eig = self.m.symmetric_eigen();
        let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
        eig.eigenvectors * Matrix3::from_diagonal(&sqrt_vals)
    }
}

/// Elementwise sum `Σ_t = Σ_e + Σ_a`; the epistemic term is not rescaled by
/// the head count.
pub fn combine(epistemic: &CovSO3, aleatoric: &CovSO3) -> CovSO3 {
    CovSO3 { m: epistemic.m + aleatoric.m }
}

/// A probabilistic rotation estimate: mean plus epistemic, aleatoric, and
/// total tangent-space covariances.
#[derive(Debug, Clone, Copy)]
pub struct RotationBelief {
    pub mean: UnitQuaternion,
    pub epistemic: CovSO3,
    pub aleatoric: CovSO3,
    pub total: CovSO3,
    /// Set when the ensemble spread violated the π/2 validity condition of
    /// the closed-form mean.
    pub dispersion_warning: bool,
}

impl RotationBelief {
    pub fn new(
        mean: UnitQuaternion,
        epistemic: CovSO3,
        aleatoric: CovSO3,
        dispersion_warning: bool,
    ) -> Self {
        let total = combine(&epistemic, &aleatoric);
        RotationBelief { mean, epistemic, aleatoric, total, dispersion_warning }
    }
}

/// Draws `Exp(ε) ⊗ mean` with `ε ~ N(0, Σ)`.
///
/// A zero covariance returns the mean exactly.
pub fn sample_rotation<R: Rng + ?Sized>(
    mean: &UnitQuaternion,
    cov: &CovSO3,
    rng: &mut R,
) -> UnitQuaternion {
    if cov.m == Matrix3::zeros() {
        return *mean;
    }
    let factor = cov.sqrt_factor();
    let z = Vector3::new(
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
        rng.sample(StandardNormal),
    );
    UnitQuaternion::exp(&(factor * z)).mul(mean)
}

/// Sample covariance of rotations about a provided mean.
///
/// Residuals are `φ_i = Log(q_i ⊗ mean⁻¹)` and the estimate is
/// `Σ φ_i φ_iᵀ / (H − 1)` with no re-centering.
pub fn sample_covariance(mean: &UnitQuaternion, samples: &[UnitQuaternion]) -> Result<CovSO3> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples { got: samples.len(), need: 2 });
    }
    let inv_mean = mean.inverse();
    let mut m = Matrix3::zeros();
    for q in samples {
        let phi = q.mul(&inv_mean).log();
        m += phi * phi.transpose();
    }
    Ok(CovSO3 { m: m / (samples.len() - 1) as f64 })
}

/// Negative log likelihood of `q` under the injected Gaussian about `q_t`.
///
/// `½ φᵀ Σ⁻¹ φ + ½ log det Σ` with `φ = Log(q ⊗ q_t⁻¹)`; the `(2π)^{3/2}`
/// normalization constant is omitted. Solved through a jittered Cholesky
/// factorization, never an explicit inverse.
pub fn so3_nll(q: &UnitQuaternion, q_t: &UnitQuaternion, cov: &CovSO3) -> Result<f64> {
    let phi = q.mul(&q_t.inverse()).log();
    nll_of_residual(&phi, cov)
}

/// NLL evaluated directly on a tangent residual.
pub fn nll_of_residual(phi: &TangentSO3, cov: &CovSO3) -> Result<f64> {
    let jittered = cov.m + Matrix3::identity() * COV_JITTER;
    let chol = Cholesky::new(jittered).ok_or(Error::SingularCovariance)?;
    let solved = chol.solve(phi);
    let log_det: f64 = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
    Ok(0.5 * phi.dot(&solved) + 0.5 * log_det)
}

/// Diagonal covariance from three log-standard-deviation logits.
///
/// `Σ = diag(exp(u_k)²)` with each standard deviation floored at
/// [`SIGMA_MIN`] so the log-determinant stays bounded on easy samples.
pub fn cov_from_logits(u: &Vector3<f64>) -> CovSO3 {
    cov_from_logits_floored(u, SIGMA_MIN)
}

/// [`cov_from_logits`] with an explicit standard-deviation floor.
///
/// The floor caps the per-sample NLL weight at `1/floor²`; without a
/// problem-appropriate floor, well-fit samples acquire enormous weights and
/// starve the rest of the dataset of gradient.
pub fn cov_from_logits_floored(u: &Vector3<f64>, floor: f64) -> CovSO3 {
    let var = u.map(|ui| {
        let sigma = ui.exp().max(floor);
        sigma * sigma
    });
    CovSO3 { m: Matrix3::from_diagonal(&var) }
}

/// Consistency summary between tangent errors and reported covariances.
#[derive(Debug, Clone, Copy)]
pub struct CalibrationReport {
    /// Per-axis fraction of errors with `|φ_k| ≤ 3 √Σ_kk`.
    pub within_3_sigma: [f64; 3],
    /// Mean squared Mahalanobis distance; 3 when perfectly calibrated.
    pub mean_mahalanobis_sq: f64,
    pub mean_nll: f64,
    pub count: usize,
}

/// Scores a list of errors against their reported covariances.
pub fn calibration_report(errors: &[TangentSO3], covs: &[CovSO3]) -> Result<CalibrationReport> {
    if errors.len() != covs.len() {
        return Err(Error::LengthMismatch { left: errors.len(), right: covs.len() });
    }
    if errors.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let mut within = [0usize; 3];
    let mut maha = 0.0;
    let mut nll = 0.0;
    for (phi, cov) in errors.iter().zip(covs) {
        for k in 0..3 {
            if phi[k].abs() <= 3.0 * cov.m[(k, k)].sqrt() {
                within[k] += 1;
            }
        }
        let jittered = cov.m + Matrix3::identity() * COV_JITTER;
        let chol = Cholesky::new(jittered).ok_or(Error::SingularCovariance)?;
        maha += phi.dot(&chol.solve(phi));
        nll += nll_of_residual(phi, cov)?;
    }
    let n = errors.len() as f64;
    Ok(CalibrationReport {
        within_3_sigma: [within[0] as f64 / n, within[1] as f64 / n, within[2] as f64 / n],
        mean_mahalanobis_sq: maha / n,
        mean_nll: nll / n,
        count: errors.len(),
    })
}
