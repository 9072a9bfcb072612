//! Synthetic experiment drivers: data generators, training configurations,
//! and CSV report writers.

pub mod hemisphere;
pub mod one_d;

pub use hemisphere::{
    gen_hemisphere, run_hemisphere, Camera, HemisphereConfig, HemisphereDataset, HemisphereReport,
};
pub use one_d::{gen_1d, run_1d, Config1D, Dataset1D, Run1DReport};

/// Linear-interpolation quantile of an unsorted sample.
pub(crate) fn quantile(values: &[f64], p: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("no NaNs in quantile input"));
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quantile_interpolates() {
        let v = [4.0, 1.0, 3.0, 2.0];
        assert_eq!(quantile(&v, 0.0), 1.0);
        assert_eq!(quantile(&v, 1.0), 4.0);
        assert_eq!(quantile(&v, 0.5), 2.5);
    }
}
