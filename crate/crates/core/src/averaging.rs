//! Rotation means under the three metrics on SO(3).
//!
//! The quaternionic mean has a closed form (normalized arithmetic mean of
//! sign-aligned unit quaternions) and is the production path; the chordal
//! mean projects through an SVD, and the angular (Karcher) mean iterates in
//! the tangent space.

use nalgebra::{Matrix3, Vector3, Vector4};

use crate::error::{Error, Result};
use crate::so3::UnitQuaternion;

/// One rotation observation with an optional non-negative weight.
#[derive(Debug, Clone, Copy)]
pub struct RotationSample {
    pub q: UnitQuaternion,
    pub weight: f64,
}

impl RotationSample {
    pub fn new(q: UnitQuaternion) -> Self {
        RotationSample { q, weight: 1.0 }
    }

    pub fn weighted(q: UnitQuaternion, weight: f64) -> Self {
        RotationSample { q, weight }
    }
}

impl From<UnitQuaternion> for RotationSample {
    fn from(q: UnitQuaternion) -> Self {
        RotationSample::new(q)
    }
}

/// Result of the closed-form quaternionic mean.
///
/// `dispersion_warning` is raised when some pair of samples is farther than
/// π/2 apart geodesically, outside the validity region of the closed form.
/// The mean is still returned: heads of an ensemble may legitimately disagree
/// strongly on out-of-distribution inputs.
#[derive(Debug, Clone, Copy)]
pub struct QuatMean {
    pub mean: UnitQuaternion,
    pub dispersion_warning: bool,
}

/// Result of the iterative Karcher mean.
#[derive(Debug, Clone, Copy)]
pub struct KarcherMean {
    pub mean: UnitQuaternion,
    pub iterations: usize,
}

fn check_weights(samples: &[RotationSample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }
    let total: f64 = samples.iter().map(|s| s.weight).sum();
    if !(total > 0.0) || samples.iter().any(|s| s.weight < 0.0) {
        return Err(Error::InvalidConfig(format!(
            "weights must be non-negative with positive sum (sum {total})"
        )));
    }
    Ok(total)
}

fn pairwise_dispersion_exceeds(samples: &[RotationSample], limit: f64) -> bool {
    for i in 0..samples.len() {
        for j in (i + 1)..samples.len() {
            if samples[i].q.angular_distance(&samples[j].q) > limit {
                return true;
            }
        }
    }
    false
}

/// Closed-form rotation mean under the quaternionic metric.
///
/// Samples are sign-aligned to the first (flipping any `q_i` with
/// `dot(q_i, q_1) < 0`), summed with their weights, and normalized. Fails
/// with `DegenerateNorm` when the aligned sum cancels (antipodal inputs).
pub fn quat_mean(samples: &[RotationSample]) -> Result<QuatMean> {
    check_weights(samples)?;
    let reference = samples[0].q;
    let mut sum = Vector4::zeros();
    for s in samples {
        let aligned = if s.q.dot(&reference) < 0.0 { s.q.neg() } else { s.q };
        sum += aligned.as_vector() * s.weight;
    }
    let mean = UnitQuaternion::normalize(sum)?;
    Ok(QuatMean {
        mean,
        dispersion_warning: pairwise_dispersion_exceeds(samples, std::f64::consts::FRAC_PI_2),
    })
}

/// Rotation mean under the chordal metric via SVD projection.
///
/// The weighted arithmetic mean of the rotation matrices is projected back
/// onto SO(3) as `R̄ = U diag(1, 1, det(UVᵀ)) Vᵀ`, which keeps the
/// determinant at +1 even when the mean matrix has negative determinant.
pub fn chordal_mean(samples: &[RotationSample]) -> Result<Matrix3<f64>> {
    let total = check_weights(samples)?;
    let mut m = Matrix3::zeros();
    for s in samples {
        m += s.q.to_matrix() * (s.weight / total);
    }
    let svd = m.svd(true, true);
    let sigma = svd.singular_values;
    if sigma[1] < 1e-9 {
        return Err(Error::RankDeficient { sigma: sigma[1] });
    }
    let u = svd.u.expect("svd requested u");
    let v_t = svd.v_t.expect("svd requested v_t");
    let det = (u * v_t).determinant();
    let fix = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
    Ok(u * fix * v_t)
}

/// Iterative rotation mean under the angular (geodesic) metric.
///
/// Starts from [`quat_mean`] and repeats
/// `q ← Exp(Σ wᵢ Log(qᵢ ⊗ q⁻¹) / Σ wᵢ) ⊗ q` until the tangent update norm
/// drops below `tol` or `max_iter` is exhausted.
pub fn karcher_mean(samples: &[RotationSample], tol: f64, max_iter: usize) -> Result<KarcherMean> {
    let total = check_weights(samples)?;
    let mut mean = quat_mean(samples)?.mean;
    for iter in 0..max_iter {
        let mut update = Vector3::zeros();
        let inv = mean.inverse();
        for s in samples {
            update += s.q.mul(&inv).log() * (s.weight / total);
        }
        mean = UnitQuaternion::exp(&update).mul(&mean);
        if update.norm() < tol {
            return Ok(KarcherMean { mean, iterations: iter + 1 });
        }
    }
    Err(Error::NoConvergence { iterations: max_iter, residual: f64::NAN })
}

/// Default tolerance for [`karcher_mean`].
pub const KARCHER_TOL: f64 = 1e-10;
/// Default iteration budget for [`karcher_mean`].
pub const KARCHER_MAX_ITER: usize = 100;

/// Keeps [`quat_mean`] failure modes distinguishable for callers that only
/// care about the mean itself.
pub fn quat_mean_of(quats: &[UnitQuaternion]) -> Result<QuatMean> {
    let samples: Vec<RotationSample> = quats.iter().copied().map(RotationSample::new).collect();
    quat_mean(&samples)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::random_rotation;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::PI;

    fn cone_samples(rng: &mut ChaCha12Rng, base: &UnitQuaternion, n: usize, half_angle: f64) -> Vec<RotationSample> {
        (0..n)
            .map(|_| {
                let axis = random_rotation(rng).rotate(&Vector3::x());
                let theta = rng.random::<f64>() * half_angle;
                RotationSample::new(UnitQuaternion::exp(&(axis * theta)).mul(base))
            })
            .collect()
    }

    #[test]
    fn mean_of_identical_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(20);
        let q = random_rotation(&mut rng);
        let samples = vec![RotationSample::new(q); 3];
        let out = quat_mean(&samples).unwrap();
        assert!(out.mean.angular_distance(&q) < 1e-12);
        assert!(!out.dispersion_warning);

        let km = karcher_mean(&[RotationSample::new(q)], KARCHER_TOL, KARCHER_MAX_ITER).unwrap();
        assert!(km.mean.angular_distance(&q) < 1e-12);
        assert_eq!(km.iterations, 1);

        let cm = chordal_mean(&[RotationSample::new(q), RotationSample::new(q)]).unwrap();
        assert!((cm - q.to_matrix()).norm() < 1e-12);
    }

    #[test]
    fn symmetric_perturbations_cancel() {
        let mut rng = ChaCha12Rng::seed_from_u64(21);
        let q = random_rotation(&mut rng);
        let eps = 0.3;
        let samples = vec![
            RotationSample::new(UnitQuaternion::exp(&Vector3::new(0.0, 0.0, eps)).mul(&q)),
            RotationSample::new(UnitQuaternion::exp(&Vector3::new(0.0, 0.0, -eps)).mul(&q)),
        ];
        let out = quat_mean(&samples).unwrap();
        assert!(out.mean.angular_distance(&q) < 1e-12);
    }

    #[test]
    fn empty_input_rejected() {
        assert!(matches!(quat_mean(&[]), Err(Error::TooFewSamples { .. })));
    }

    #[test]
    fn antipodal_cancellation_is_degenerate() {
        // Alignment to the first sample forces a non-negative dot for every
        // flipped sample, so the aligned sum always has norm at least the
        // first weight. Cancellation therefore needs a zero-weight reference:
        // the remaining pair is orthogonal to it (no flip) and antipodal.
        let samples = vec![
            RotationSample::weighted(UnitQuaternion::from_wxyz(0.0, 1.0, 0.0, 0.0).unwrap(), 0.0),
            RotationSample::new(UnitQuaternion::from_wxyz(0.0, 0.0, 1.0, 0.0).unwrap()),
            RotationSample::new(UnitQuaternion::from_wxyz(0.0, 0.0, -1.0, 0.0).unwrap()),
        ];
        let err = quat_mean(&samples).unwrap_err();
        assert!(matches!(err, Error::DegenerateNorm { .. }));
    }

    #[test]
    fn dispersion_warning_raised_but_mean_returned() {
        let q = UnitQuaternion::identity();
        let far = UnitQuaternion::exp(&Vector3::new(0.0, 2.0, 0.0));
        let out = quat_mean(&[RotationSample::new(q), RotationSample::new(far)]).unwrap();
        assert!(out.dispersion_warning);
    }

    #[test]
    fn karcher_two_samples_is_geodesic_midpoint() {
        let mut rng = ChaCha12Rng::seed_from_u64(22);
        for _ in 0..20 {
            let q1 = random_rotation(&mut rng);
            let delta = random_rotation(&mut rng).rotate(&Vector3::x()) * (rng.random::<f64>() * 1.2);
            let q2 = UnitQuaternion::exp(&delta).mul(&q1);
            let midpoint = UnitQuaternion::exp(&(0.5 * delta)).mul(&q1);
            let km = karcher_mean(
                &[RotationSample::new(q1), RotationSample::new(q2)],
                KARCHER_TOL,
                KARCHER_MAX_ITER,
            )
            .unwrap();
            assert!(km.mean.angular_distance(&midpoint) < 1e-9);
        }
    }

    #[test]
    fn chordal_projection_restores_positive_determinant() {
        // π rotations about x, y, z average to −I/3, whose SVD projection
        // must still land on SO(3) with determinant +1.
        let samples: Vec<RotationSample> = [
            Vector3::new(PI, 0.0, 0.0),
            Vector3::new(0.0, PI, 0.0),
            Vector3::new(0.0, 0.0, PI),
        ]
        .iter()
        .map(|phi| RotationSample::new(UnitQuaternion::exp(phi)))
        .collect();
        let mean_matrix: Matrix3<f64> =
            samples.iter().map(|s| s.q.to_matrix() / 3.0).sum();
        assert!(mean_matrix.determinant() < 0.0);
        let r = chordal_mean(&samples).unwrap();
        assert!((r.determinant() - 1.0).abs() < 1e-10);
        assert!((r.transpose() * r - Matrix3::identity()).norm() < 1e-10);
    }

    #[test]
    fn chordal_rank_deficiency_detected() {
        let samples = vec![
            RotationSample::new(UnitQuaternion::identity()),
            RotationSample::new(UnitQuaternion::exp(&Vector3::new(PI, 0.0, 0.0))),
        ];
        // Mean matrix diag(1, 0, 0) has two vanishing singular values.
        let err = chordal_mean(&samples).unwrap_err();
        assert!(matches!(err, Error::RankDeficient { .. }));
    }

    #[test]
    fn bi_invariance_of_quat_mean() {
        let mut rng = ChaCha12Rng::seed_from_u64(23);
        for _ in 0..20 {
            let base = random_rotation(&mut rng);
            let samples = cone_samples(&mut rng, &base, 5, 0.4);
            let c = random_rotation(&mut rng);
            let left: Vec<RotationSample> =
                samples.iter().map(|s| RotationSample::new(c.mul(&s.q))).collect();
            let direct = quat_mean(&left).unwrap().mean;
            let composed = c.mul(&quat_mean(&samples).unwrap().mean);
            assert!(direct.angular_distance(&composed) < 1e-9);
        }
    }

    #[test]
    fn sign_flips_leave_mean_unchanged() {
        let mut rng = ChaCha12Rng::seed_from_u64(24);
        let base = random_rotation(&mut rng);
        let samples = cone_samples(&mut rng, &base, 6, 0.4);
        let reference = quat_mean(&samples).unwrap().mean;
        for mask in 1_u32..64 {
            let flipped: Vec<RotationSample> = samples
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    if mask & (1 << i) != 0 {
                        RotationSample::new(s.q.neg())
                    } else {
                        *s
                    }
                })
                .collect();
            let mean = quat_mean(&flipped).unwrap().mean;
            assert!(mean.angular_distance(&reference) < 1e-9);
        }
    }

    #[test]
    fn three_means_agree_on_concentrated_samples() {
        let mut rng = ChaCha12Rng::seed_from_u64(25);
        for _ in 0..10 {
            let base = random_rotation(&mut rng);
            // Max pairwise angle below 10°: perturbations within 4.5°.
            let samples = cone_samples(&mut rng, &base, 5, 0.078);
            let qm = quat_mean(&samples).unwrap().mean;
            let km = karcher_mean(&samples, KARCHER_TOL, KARCHER_MAX_ITER).unwrap().mean;
            let cm = UnitQuaternion::from_matrix(&chordal_mean(&samples).unwrap()).unwrap();
            assert!(qm.angular_distance(&km) < 1e-4);
            assert!(qm.angular_distance(&cm) < 1e-4);
        }
    }

    #[test]
    fn quat_mean_is_locally_optimal() {
        let mut rng = ChaCha12Rng::seed_from_u64(26);
        let base = random_rotation(&mut rng);
        let samples = cone_samples(&mut rng, &base, 5, 0.5);
        let cost = |q: &UnitQuaternion| -> f64 {
            samples.iter().map(|s| s.q.quaternionic_distance(q).powi(2) * s.weight).sum()
        };
        let mean = quat_mean(&samples).unwrap().mean;
        let at_mean = cost(&mean);
        for s in &samples {
            assert!(at_mean <= cost(&s.q) + 1e-12);
        }
    }

    #[test]
    fn weighted_mean_reduces_to_uniform() {
        let mut rng = ChaCha12Rng::seed_from_u64(27);
        let base = random_rotation(&mut rng);
        let samples = cone_samples(&mut rng, &base, 4, 0.3);
        let weighted: Vec<RotationSample> =
            samples.iter().map(|s| RotationSample::weighted(s.q, 2.5)).collect();
        let a = quat_mean(&samples).unwrap().mean;
        let b = quat_mean(&weighted).unwrap().mean;
        assert!(a.angular_distance(&b) < 1e-12);
    }
}
