//! Trajectory error metrics.
//!
//! m-ATE is pinned as the per-frame mean of translational and angular
//! deviation after rigidly aligning the first frames. Segment errors follow
//! the KITTI convention, with the eight evaluation lengths scaled to the
//! trajectory: `len_i = i/10` of the total ground-truth path length for
//! `i = 1..=8`.

use crate::error::{Error, Result};
use crate::se3::PoseSE3;

/// Summary trajectory errors.
#[derive(Debug, Clone)]
pub struct TrajMetrics {
    /// Mean translational deviation, meters.
    pub mate_translation_m: f64,
    /// Mean angular deviation, degrees.
    pub mate_rotation_deg: f64,
    /// Mean relative translation error over all segments, percent.
    pub seg_translation_percent: f64,
    /// Mean relative rotation error over all segments, degrees per 100 m.
    pub seg_rotation_deg_per_100m: f64,
    /// Per-length breakdown: (segment length m, translation %, deg/100 m).
    pub per_length: Vec<(f64, f64, f64)>,
}

fn cumulative_path(poses: &[PoseSE3]) -> Vec<f64> {
    let mut acc = vec![0.0; poses.len()];
    for i in 1..poses.len() {
        acc[i] = acc[i - 1] + (poses[i].translation - poses[i - 1].translation).norm();
    }
    acc
}

/// Compares an estimated trajectory against ground truth.
///
/// Both trajectories are world-frame pose sequences of equal length; the
/// estimate is rigidly moved so its first frame coincides with the ground
/// truth before errors are accumulated.
pub fn traj_metrics(estimate: &[PoseSE3], ground_truth: &[PoseSE3]) -> Result<TrajMetrics> {
    if estimate.len() != ground_truth.len() {
        return Err(Error::LengthMismatch { left: estimate.len(), right: ground_truth.len() });
    }
    if estimate.is_empty() {
        return Err(Error::TooFewSamples { got: 0, need: 1 });
    }

    // Align frame 0.
    let gauge = ground_truth[0].compose(&estimate[0].inverse());
    let aligned: Vec<PoseSE3> = estimate.iter().map(|p| gauge.compose(p)).collect();

    let n = aligned.len() as f64;
    let mut trans_sum = 0.0;
    let mut rot_sum = 0.0;
    for (est, gt) in aligned.iter().zip(ground_truth) {
        trans_sum += (est.translation - gt.translation).norm();
        rot_sum += est.rotation.angular_distance(&gt.rotation);
    }

    let path = cumulative_path(ground_truth);
    let total = *path.last().unwrap();
    let mut per_length = Vec::new();
    let mut seg_t_acc = 0.0;
    let mut seg_r_acc = 0.0;
    let mut seg_lengths_used = 0usize;
    for i in 1..=8usize {
        let len = total * i as f64 / 10.0;
        if len <= 0.0 {
            continue;
        }
        let mut t_acc = 0.0;
        let mut r_acc = 0.0;
        let mut count = 0usize;
        for start in 0..ground_truth.len() {
            let target = path[start] + len;
            let end = match path[start..].iter().position(|&d| d >= target) {
                Some(offset) => start + offset,
                None => break,
            };
            let gt_rel = ground_truth[start].inverse().compose(&ground_truth[end]);
            let est_rel = aligned[start].inverse().compose(&aligned[end]);
            let err = gt_rel.inverse().compose(&est_rel);
            t_acc += err.translation.norm() / len * 100.0;
            r_acc += err.rotation.angular_distance(&crate::so3::UnitQuaternion::identity())
                .to_degrees()
                / len
                * 100.0;
            count += 1;
        }
        if count > 0 {
            let t = t_acc / count as f64;
            let r = r_acc / count as f64;
            per_length.push((len, t, r));
            seg_t_acc += t;
            seg_r_acc += r;
            seg_lengths_used += 1;
        }
    }

    Ok(TrajMetrics {
        mate_translation_m: trans_sum / n,
        mate_rotation_deg: (rot_sum / n).to_degrees(),
        seg_translation_percent: if seg_lengths_used > 0 {
            seg_t_acc / seg_lengths_used as f64
        } else {
            0.0
        },
        seg_rotation_deg_per_100m: if seg_lengths_used > 0 {
            seg_r_acc / seg_lengths_used as f64
        } else {
            0.0
        },
        per_length,
    })
}
