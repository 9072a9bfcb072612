//! Rigid transforms in 3D and their exponential/logarithmic maps.
//!
//! Tangent vectors stack translation first: `ξ = (ρ, φ)` with `ρ` in meters
//! and `φ` the axis-angle rotation in radians.

use nalgebra::{Vector3, Vector6};

use crate::so3::{left_jacobian, left_jacobian_inv, TangentSO3, UnitQuaternion};

/// SE(3) tangent coordinates: translational part first, rotational part last.
pub type TangentSE3 = Vector6<f64>;

/// A rigid transform: rotation plus translation in meters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseSE3 {
    pub rotation: UnitQuaternion,
    pub translation: Vector3<f64>,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        PoseSE3 { rotation: UnitQuaternion::identity(), translation: Vector3::zeros() }
    }

    pub fn new(rotation: UnitQuaternion, translation: Vector3<f64>) -> Self {
        PoseSE3 { rotation, translation }
    }

    /// Composition `self ∘ rhs`: applies `rhs` first, then `self`.
    pub fn compose(&self, rhs: &PoseSE3) -> PoseSE3 {
        PoseSE3 {
            rotation: self.rotation.mul(&rhs.rotation),
            translation: self.translation + self.rotation.rotate(&rhs.translation),
        }
    }

    pub fn inverse(&self) -> PoseSE3 {
        let inv_rot = self.rotation.inverse();
        PoseSE3 { rotation: inv_rot, translation: -inv_rot.rotate(&self.translation) }
    }

    /// Applies the transform to a point.
    pub fn transform_point(&self, p: &Vector3<f64>) -> Vector3<f64> {
        self.rotation.rotate(p) + self.translation
    }

    /// SE(3) exponential map with the left Jacobian acting on translation.
    pub fn exp(xi: &TangentSE3) -> PoseSE3 {
        let rho = Vector3::new(xi[0], xi[1], xi[2]);
        let phi = Vector3::new(xi[3], xi[4], xi[5]);
        PoseSE3 {
            rotation: UnitQuaternion::exp(&phi),
            translation: left_jacobian(&phi) * rho,
        }
    }

    /// SE(3) logarithmic map; rotational magnitude must be below π.
    pub fn log(&self) -> TangentSE3 {
        let phi: TangentSO3 = self.rotation.log();
        let rho = left_jacobian_inv(&phi) * self.translation;
        Vector6::new(rho[0], rho[1], rho[2], phi[0], phi[1], phi[2])
    }
}
