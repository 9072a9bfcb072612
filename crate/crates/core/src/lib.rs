//! Probabilistic rotation regression on SO(3).
//!
//! The crate provides exact quaternion and rigid-transform algebra, rotation
//! averaging under the angular/chordal/quaternionic metrics, Gaussian beliefs
//! on the rotation manifold, a small feed-forward network with exact
//! backpropagation, multi-headed uncertainty estimators for 1D targets and
//! rotations, synthetic experiment drivers, and pose-graph fusion of learned
//! rotation beliefs with odometry.

pub mod averaging;
pub mod error;
pub mod experiments;
pub mod fusion;
pub mod hydranet;
pub mod nnet;
pub mod se3;
pub mod so3;
pub mod uncertainty;

pub use error::{Error, Result};
pub use se3::{PoseSE3, TangentSE3};
pub use so3::{RotationMetric, TangentSO3, UnitQuaternion};
