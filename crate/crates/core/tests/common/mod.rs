//! Shared oracles for integration tests, implemented independently of the
//! library paths they check.

use nalgebra::{Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rotreg_core::so3::UnitQuaternion;

/// Geodesic angle between two rotations straight from the quaternion dot
/// product: θ = 2·acos(|q_a · q_b|).
pub fn oracle_angle(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    2.0 * a.dot(b).abs().clamp(-1.0, 1.0).acos()
}

/// Euclidean double-cover distance computed from raw components.
pub fn oracle_quat_dist(a: &UnitQuaternion, b: &UnitQuaternion) -> f64 {
    let av = a.as_vector();
    let bv = b.as_vector();
    (av - bv).norm().min((av + bv).norm())
}

/// Weighted sum of squared distances under a metric closure.
fn cost<F: Fn(&UnitQuaternion, &UnitQuaternion) -> f64>(
    samples: &[UnitQuaternion],
    candidate: &UnitQuaternion,
    metric: &F,
) -> f64 {
    samples.iter().map(|q| metric(q, candidate).powi(2)).sum()
}

/// Brute-force rotation mean: a coarse tangent-space grid around a base
/// rotation followed by shrinking local grid refinement.
///
/// Independent of the averaging module: candidates come from `Exp(δ) ⊗ base`
/// and costs from the metric closure alone.
pub fn grid_search_mean<F>(
    samples: &[UnitQuaternion],
    base: &UnitQuaternion,
    initial_radius: f64,
    metric: F,
) -> UnitQuaternion
where
    F: Fn(&UnitQuaternion, &UnitQuaternion) -> f64,
{
    let mut center = *base;
    let mut radius = initial_radius;
    let mut best = cost(samples, &center, &metric);
    // Seven shrink-by-half rounds of an 11^3 grid reach ~1e-4 resolution
    // from a 0.5 rad start.
    for _ in 0..7 {
        let steps = 11i32;
        let mut best_delta = Vector3::zeros();
        for i in -steps / 2..=steps / 2 {
            for j in -steps / 2..=steps / 2 {
                for k in -steps / 2..=steps / 2 {
                    let delta = Vector3::new(
                        i as f64 / (steps / 2) as f64,
                        j as f64 / (steps / 2) as f64,
                        k as f64 / (steps / 2) as f64,
                    ) * radius;
                    let candidate = UnitQuaternion::exp(&delta).mul(&center);
                    let c = cost(samples, &candidate, &metric);
                    if c < best {
                        best = c;
                        best_delta = delta;
                    }
                }
            }
        }
        center = UnitQuaternion::exp(&best_delta).mul(&center);
        radius /= 2.0;
    }
    center
}

/// Error function via the Abramowitz & Stegun 7.1.26 rational approximation
/// (absolute error below 1.5e-7).
pub fn erf(x: f64) -> f64 {
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592 + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// CDF of the chi distribution with 3 degrees of freedom:
/// `F(x) = erf(x/√2) − √(2/π)·x·exp(−x²/2)`.
pub fn chi3_cdf(x: f64) -> f64 {
    if x <= 0.0 {
        return 0.0;
    }
    erf(x / std::f64::consts::SQRT_2)
        - (2.0 / std::f64::consts::PI).sqrt() * x * (-0.5 * x * x).exp()
}

/// Uniform random rotation drawn independently of the library helper.
pub fn oracle_random_rotation(rng: &mut ChaCha12Rng) -> UnitQuaternion {
    use rand_distr::StandardNormal;
    loop {
        let v = Vector4::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if v.norm() > 1e-3 {
            return UnitQuaternion::normalize(v).expect("non-degenerate");
        }
    }
}

/// Random unit axis.
pub fn random_axis(rng: &mut ChaCha12Rng) -> Vector3<f64> {
    use rand_distr::StandardNormal;
    loop {
        let v = Vector3::new(
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
            rng.sample(StandardNormal),
        );
        if v.norm() > 1e-3 {
            return v.normalize();
        }
    }
}

/// Samples within a cone of the given half-angle around a base rotation.
pub fn cone_samples(
    rng: &mut ChaCha12Rng,
    base: &UnitQuaternion,
    n: usize,
    half_angle: f64,
) -> Vec<UnitQuaternion> {
    (0..n)
        .map(|_| {
            let axis = random_axis(rng);
            let angle = rng.random::<f64>() * half_angle;
            UnitQuaternion::exp(&(axis * angle)).mul(base)
        })
        .collect()
}
