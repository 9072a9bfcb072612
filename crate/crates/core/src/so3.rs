//! Unit-quaternion rotation algebra: Hamilton products, exponential and
//! logarithmic maps, rotation-matrix conversions, and the three classical
//! metrics on SO(3).
//!
//! Conventions, fixed once for the whole crate:
//! - quaternions are stored scalar-first `(w, x, y, z)` and multiply with the
//!   Hamilton convention;
//! - tangent vectors are axis-angle 3-vectors whose magnitude is the rotation
//!   angle in radians (the half-angle lives inside the quaternion);
//! - the canonical representative of the double cover has `w >= 0`, with ties
//!   at `w == 0` broken by the first nonzero vector component being positive.

use nalgebra::{Matrix3, Vector3, Vector4};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Default degeneracy threshold for quaternion normalization.
pub const EPS_NORM: f64 = 1e-8;

/// Rotation angle below which exp/log switch to series expansions.
pub const THETA_TAYLOR: f64 = 1e-6;

/// Axis-angle tangent coordinates of SO(3), radians.
pub type TangentSO3 = Vector3<f64>;

/// The three bijective metrics on SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RotationMetric {
    /// Geodesic angle, `‖Log(R_a R_bᵀ)‖₂`, radians in `[0, π]`.
    Angular,
    /// Frobenius distance between rotation matrices, `‖R_a − R_b‖_F`.
    Chordal,
    /// `min(‖q_a − q_b‖₂, ‖q_a + q_b‖₂)` over the double cover.
    Quaternionic,
}

/// A unit quaternion representing a rotation.
///
/// The invariant `w² + x² + y² + z² = 1` holds (to machine precision) after
/// every constructor and operation. `q` and `−q` denote the same rotation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitQuaternion {
    w: f64,
    x: f64,
    y: f64,
    z: f64,
}

impl UnitQuaternion {
    pub fn identity() -> Self {
        UnitQuaternion { w: 1.0, x: 0.0, y: 0.0, z: 0.0 }
    }

    /// Normalizes a raw 4-vector into a unit quaternion.
    ///
    /// The sign of the input is preserved: raw network outputs are not
    /// canonicalized here. Fails with `DegenerateNorm` when the norm is at or
    /// below [`EPS_NORM`].
    pub fn normalize(v: Vector4<f64>) -> Result<Self> {
        Self::normalize_with_eps(v, EPS_NORM)
    }

    /// Same as [`UnitQuaternion::normalize`] with an explicit threshold.
    pub fn normalize_with_eps(v: Vector4<f64>, eps: f64) -> Result<Self> {
        let norm = v.norm();
        if !(norm > eps) {
            return Err(Error::DegenerateNorm { norm, threshold: eps });
        }
        if (norm - 1.0).abs() <= 1e-12 {
            // Already unit: dividing would perturb the last bits, which
            // breaks exact write/read roundtrips of serialized rotations.
            return Ok(UnitQuaternion { w: v[0], x: v[1], y: v[2], z: v[3] });
        }
        Ok(UnitQuaternion { w: v[0] / norm, x: v[1] / norm, y: v[2] / norm, z: v[3] / norm })
    }

    /// Builds from scalar-first components, normalizing them.
    pub fn from_wxyz(w: f64, x: f64, y: f64, z: f64) -> Result<Self> {
        Self::normalize(Vector4::new(w, x, y, z))
    }

    /// Rotation of `angle` radians about a (not necessarily unit) axis.
    pub fn from_axis_angle(axis: &Vector3<f64>, angle: f64) -> Result<Self> {
        let norm = axis.norm();
        if !(norm > EPS_NORM) {
            return Err(Error::DegenerateNorm { norm, threshold: EPS_NORM });
        }
        Ok(Self::exp(&(axis * (angle / norm))))
    }

    pub fn w(&self) -> f64 {
        self.w
    }

    pub fn x(&self) -> f64 {
        self.x
    }

    pub fn y(&self) -> f64 {
        self.y
    }

    pub fn z(&self) -> f64 {
        self.z
    }

    /// Components as a scalar-first 4-vector.
    pub fn as_vector(&self) -> Vector4<f64> {
        Vector4::new(self.w, self.x, self.y, self.z)
    }

    /// Vector (imaginary) part.
    pub fn vector_part(&self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    /// Hamilton product `self ⊗ rhs`, renormalized.
    pub fn mul(&self, rhs: &UnitQuaternion) -> UnitQuaternion {
        let (aw, ax, ay, az) = (self.w, self.x, self.y, self.z);
        let (bw, bx, by, bz) = (rhs.w, rhs.x, rhs.y, rhs.z);
        let w = aw * bw - ax * bx - ay * by - az * bz;
        let x = aw * bx + ax * bw + ay * bz - az * by;
        let y = aw * by - ax * bz + ay * bw + az * bx;
        let z = aw * bz + ax * by - ay * bx + az * bw;
        let n = (w * w + x * x + y * y + z * z).sqrt();
        UnitQuaternion { w: w / n, x: x / n, y: y / n, z: z / n }
    }

    /// Inverse rotation (conjugate for unit quaternions).
    pub fn inverse(&self) -> UnitQuaternion {
        UnitQuaternion { w: self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    /// Flips the sign so that `w >= 0`; at `w == 0` the first nonzero vector
    /// component is made positive.
    pub fn canonicalized(&self) -> UnitQuaternion {
        let flip = if self.w != 0.0 {
            self.w < 0.0
        } else if self.x != 0.0 {
            self.x < 0.0
        } else if self.y != 0.0 {
            self.y < 0.0
        } else {
            self.z < 0.0
        };
        if flip {
            UnitQuaternion { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
        } else {
            *self
        }
    }

    pub fn neg(&self) -> UnitQuaternion {
        UnitQuaternion { w: -self.w, x: -self.x, y: -self.y, z: -self.z }
    }

    pub fn dot(&self, rhs: &UnitQuaternion) -> f64 {
        self.w * rhs.w + self.x * rhs.x + self.y * rhs.y + self.z * rhs.z
    }

    /// Capitalized exponential map: axis-angle tangent vector to quaternion.
    ///
    /// `q = (cos(θ/2), sin(θ/2)·φ/θ)` with `θ = ‖φ‖`; a second-order series
    /// replaces `sin(θ/2)/θ` below [`THETA_TAYLOR`].
    pub fn exp(phi: &TangentSO3) -> UnitQuaternion {
        let theta = phi.norm();
        let k = if theta < THETA_TAYLOR {
            0.5 - theta * theta / 48.0
        } else {
            (0.5 * theta).sin() / theta
        };
        let w = (0.5 * theta).cos();
        UnitQuaternion { w, x: k * phi[0], y: k * phi[1], z: k * phi[2] }
    }

    /// Capitalized logarithmic map, principal value with `‖φ‖ ∈ [0, π]`.
    ///
    /// The input is sign-canonicalized internally, so `q` and `−q` map to the
    /// same tangent vector. At θ = π the axis comes straight from the vector
    /// part, whose sign follows the canonicalization tie-break (the map is
    /// not continuous across that boundary).
    pub fn log(&self) -> TangentSO3 {
        let q = self.canonicalized();
        let v = q.vector_part();
        let s = v.norm();
        if s < THETA_TAYLOR {
            // θ/s = 2·atan2(s, w)/s ≈ (2/w)(1 − s²/(3w²)) for small s
            v * (2.0 / q.w) * (1.0 - s * s / (3.0 * q.w * q.w))
        } else {
            v * (2.0 * s.atan2(q.w) / s)
        }
    }

    /// Rotation angle in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let s = self.vector_part().norm();
        2.0 * s.atan2(self.w.abs())
    }

    /// Applies the rotation to a 3-vector.
    pub fn rotate(&self, v: &Vector3<f64>) -> Vector3<f64> {
        let u = self.vector_part();
        let t = 2.0 * u.cross(v);
        v + self.w * t + u.cross(&t)
    }

    /// Converts to a 3x3 rotation matrix.
    pub fn to_matrix(&self) -> Matrix3<f64> {
        let (w, x, y, z) = (self.w, self.x, self.y, self.z);
        Matrix3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        )
    }

    /// Converts a rotation matrix to the canonical-sign quaternion.
    ///
    /// Rejects matrices whose orthonormality defect `‖RᵀR − I‖_F` or
    /// determinant deviation exceeds 1e-6.
    pub fn from_matrix(m: &Matrix3<f64>) -> Result<Self> {
        let defect = (m.transpose() * m - Matrix3::identity()).norm();
        if defect > 1e-6 {
            return Err(Error::NotARotation {
                reason: format!("orthonormality defect {defect:.3e}"),
            });
        }
        let det = m.determinant();
        if (det - 1.0).abs() > 1e-6 {
            return Err(Error::NotARotation { reason: format!("determinant {det}") });
        }

        // Shepperd's method: branch on the largest diagonal combination.
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let (w, x, y, z);
        if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            w = 0.25 * s;
            x = (m[(2, 1)] - m[(1, 2)]) / s;
            y = (m[(0, 2)] - m[(2, 0)]) / s;
            z = (m[(1, 0)] - m[(0, 1)]) / s;
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(2, 1)] - m[(1, 2)]) / s;
            x = 0.25 * s;
            y = (m[(0, 1)] + m[(1, 0)]) / s;
            z = (m[(0, 2)] + m[(2, 0)]) / s;
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            w = (m[(0, 2)] - m[(2, 0)]) / s;
            x = (m[(0, 1)] + m[(1, 0)]) / s;
            y = 0.25 * s;
            z = (m[(1, 2)] + m[(2, 1)]) / s;
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            w = (m[(1, 0)] - m[(0, 1)]) / s;
            x = (m[(0, 2)] + m[(2, 0)]) / s;
            y = (m[(1, 2)] + m[(2, 1)]) / s;
            z = 0.25 * s;
        }
        Ok(UnitQuaternion::normalize(Vector4::new(w, x, y, z))?.canonicalized())
    }

    /// Geodesic distance `‖Log(q_a ⊗ q_b⁻¹)‖₂` in radians.
    pub fn angular_distance(&self, other: &UnitQuaternion) -> f64 {
        self.mul(&other.inverse()).angle()
    }

    /// Frobenius distance between the rotation matrices.
    pub fn chordal_distance(&self, other: &UnitQuaternion) -> f64 {
        (self.to_matrix() - other.to_matrix()).norm()
    }

    /// Euclidean distance on the double cover, `min(‖q_a ∓ q_b‖₂)`.
    pub fn quaternionic_distance(&self, other: &UnitQuaternion) -> f64 {
        let d = (self.as_vector() - other.as_vector()).norm();
        let s = (self.as_vector() + other.as_vector()).norm();
        d.min(s)
    }
}

impl std::fmt::Display for UnitQuaternion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} {} {} {}", self.w, self.x, self.y, self.z)
    }
}

/// Distance between two rotations under the requested metric.
pub fn distance(metric: RotationMetric, a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    match metric {
        RotationMetric::Angular => a.angular_distance(b),
        RotationMetric::Chordal => a.chordal_distance(b),
        RotationMetric::Quaternionic => a.quaternionic_distance(b),
    }
}

/// Uniform random rotation: a normalized 4-vector of i.i.d. standard normals.
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> UnitQuaternion {
    loop {
        let v = Vector4::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if let Ok(q) = UnitQuaternion::normalize(v) {
            return q;
        }
    }
}

/// Skew-symmetric (hat) matrix of a 3-vector.
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v[2], v[1], v[2], 0.0, -v[0], -v[1], v[0], 0.0)
}

/// Left Jacobian of SO(3): `J = I + (1−cosθ)/θ² φ^ + (θ−sinθ)/θ³ (φ^)²`.
pub fn left_jacobian(phi: &TangentSO3) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    if theta2 < THETA_TAYLOR * THETA_TAYLOR {
        Matrix3::identity() + 0.5 * k + (k * k) / 6.0
    } else {
        let theta = theta2.sqrt();
        Matrix3::identity()
            + ((1.0 - theta.cos()) / theta2) * k
            + ((theta - theta.sin()) / (theta2 * theta)) * (k * k)
    }
}

/// Inverse of the left Jacobian of SO(3).
pub fn left_jacobian_inv(phi: &TangentSO3) -> Matrix3<f64> {
    let theta2 = phi.norm_squared();
    let k = hat(phi);
    if theta2 < THETA_TAYLOR * THETA_TAYLOR {
        Matrix3::identity() - 0.5 * k + (k * k) / 12.0
    } else {
        let theta = theta2.sqrt();
        let coeff = 1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin());
        Matrix3::identity() - 0.5 * k + coeff * (k * k)
    }
}
