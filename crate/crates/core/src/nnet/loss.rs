//! Training losses and their exact gradients with respect to raw network
//! outputs.
//!
//! The rotation loss differentiates through quaternion normalization, the
//! fixed right-multiplication by the inverse target, and the logarithmic map.
//! The map `h(r) = 2 atan2(‖v‖, w) · v/‖v‖` is homogeneous of degree zero, so
//! its ambient Jacobian both absorbs arbitrary input scales and annihilates
//! the radial direction.

use nalgebra::{Matrix3x4, Matrix4, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::so3::UnitQuaternion;
use crate::uncertainty::SIGMA_MIN;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    Mse,
    GaussianNll1d,
    So3Nll,
}

/// Squared error and its gradient with respect to the prediction.
pub fn mse(pred: f64, target: f64) -> (f64, f64) {
    let d = pred - target;
    (d * d, 2.0 * d)
}

/// One-dimensional Gaussian negative log likelihood with a regressed log
/// standard deviation (constant term omitted).
///
/// `σ = max(exp(u), SIGMA_MIN)`; below the floor the logit gradient is zero.
/// Returns `(value, ∂/∂pred, ∂/∂u)`.
pub fn gaussian_nll_1d(pred: f64, log_sigma: f64, target: f64) -> (f64, f64, f64) {
    let sigma = log_sigma.exp().max(SIGMA_MIN);
    let inv_var = 1.0 / (sigma * sigma);
    let r = pred - target;
    let value = 0.5 * r * r * inv_var + sigma.ln();
    let d_pred = r * inv_var;
    let d_log_sigma = if log_sigma.exp() > SIGMA_MIN { 1.0 - r * r * inv_var } else { 0.0 };
    (value, d_pred, d_log_sigma)
}

/// 4x4 matrix of right multiplication: `a ⊗ b = R(b) · a` on scalar-first
/// coefficient vectors.
fn right_mul_matrix(b: &UnitQuaternion) -> Matrix4<f64> {
    let (bw, bx, by, bz) = (b.w(), b.x(), b.y(), b.z());
    Matrix4::new(
        bw, -bx, -by, -bz, //
        bx, bw, bz, -by, //
        by, -bz, bw, bx, //
        bz, by, -bx, bw,
    )
}

/// Series switch point for the log-map Jacobian; below this vector norm the
/// exact expression cancels catastrophically.
const LOG_JAC_TAYLOR: f64 = 1e-4;

/// Ambient Jacobian of `h(w, v) = 2 atan2(‖v‖, w) · v/‖v‖` at a unit
/// quaternion, as a 3x4 matrix over `(w, x, y, z)`.
fn log_map_jacobian(r: &UnitQuaternion) -> Matrix3x4<f64> {
    let v = r.vector_part();
    let w = r.w();
    let s = v.norm();

    let mut jac = Matrix3x4::zeros();
    let d_w = -2.0 * v;
    if s < LOG_JAC_TAYLOR {
        // h = c(s²)·v with c = (2/w)(1 − s²/(3w²) + s⁴/(5w⁴) − …)
        let w2 = w * w;
        let c = (2.0 / w) * (1.0 - s * s / (3.0 * w2) + s.powi(4) / (5.0 * w2 * w2));
        let c_prime = (2.0 / w) * (-1.0 / (3.0 * w2) + 2.0 * s * s / (5.0 * w2 * w2));
        for i in 0..3 {
            jac[(i, 0)] = d_w[i];
            for j in 0..3 {
                jac[(i, j + 1)] = 2.0 * c_prime * v[i] * v[j] + if i == j { c } else { 0.0 };
            }
        }
    } else {
        let theta = 2.0 * s.atan2(w);
        let a = theta / s;
        let b = 2.0 * w / (s * s) - theta / (s * s * s);
        for i in 0..3 {
            jac[(i, 0)] = d_w[i];
            for j in 0..3 {
                jac[(i, j + 1)] = b * v[i] * v[j] + if i == j { a } else { 0.0 };
            }
        }
    }
    jac
}

/// Tangent residual `φ = Log(normalize(raw) ⊗ q_t⁻¹)` and its 3x4 Jacobian
/// with respect to the raw 4-vector.
pub fn so3_residual_with_jacobian(
    raw: &Vector4<f64>,
    target: &UnitQuaternion,
) -> Result<(Vector3<f64>, Matrix3x4<f64>)> {
    let q = UnitQuaternion::normalize(*raw)?;
    let m = right_mul_matrix(&target.inverse());
    let r_vec = m * q.as_vector();
    let r = UnitQuaternion::normalize_with_eps(r_vec, 0.0)?;

    // Canonical flip: Log(−r) = Log(r), so the chain picks up the sign.
    let (r_canon, sign) = if r.w() < 0.0 { (r.neg(), -1.0) } else { (r, 1.0) };
    let phi = r_canon.log();

    let norm = raw.norm();
    let q_vec = q.as_vector();
    let normalize_jac = (Matrix4::identity() - q_vec * q_vec.transpose()) / norm;
    let jac = log_map_jacobian(&r_canon) * (m * normalize_jac) * sign;
    Ok((phi, jac))
}

/// Rotation NLL of a raw quaternion head output against a unit target under
/// the diagonal covariance parametrized by `logits` (floored log standard
/// deviations; see [`crate::uncertainty::cov_from_logits`]).
///
/// Returns `(value, ∂/∂raw, ∂/∂logits)`.
pub fn so3_nll_loss(
    raw: &Vector4<f64>,
    logits: &Vector3<f64>,
    target: &UnitQuaternion,
) -> Result<(f64, Vector4<f64>, Vector3<f64>)> {
    so3_nll_loss_floored(raw, logits, target, SIGMA_MIN)
}

/// [`so3_nll_loss`] with an explicit sigma floor.
///
/// The floor bounds the per-sample quadratic weight `1/σ²`; on data whose
/// residuals can shrink far below it, a problem-scale floor keeps easy
/// samples from monopolizing the gradient.
pub fn so3_nll_loss_floored(
    raw: &Vector4<f64>,
    logits: &Vector3<f64>,
    target: &UnitQuaternion,
    floor: f64,
) -> Result<(f64, Vector4<f64>, Vector3<f64>)> {
    let (phi, jac) = so3_residual_with_jacobian(raw, target)?;

    let mut value = 0.0;
    let mut d_phi = Vector3::zeros();
    let mut d_logits = Vector3::zeros();
    for k in 0..3 {
        let sigma = logits[k].exp().max(floor);
        let inv_var = 1.0 / (sigma * sigma);
        value += 0.5 * phi[k] * phi[k] * inv_var + sigma.ln();
        d_phi[k] = phi[k] * inv_var;
        d_logits[k] =
            if logits[k].exp() > floor { 1.0 - phi[k] * phi[k] * inv_var } else { 0.0 };
    }
    let d_raw = jac.transpose() * d_phi;
    Ok((value, d_raw, d_logits))
}
