//! Synthetic hemisphere world: a monocular camera on a 25 m hemisphere
//! observes a 6x6 landmark grid, and the network regresses the camera
//! orientation from the 72 noisy pixel coordinates.
//!
//! Poses combine a uniform azimuth with a signed polar angle drawn from a
//! band around the apex; the test band is wider than the training band, so
//! large polar angles are out of distribution. The optical axis always
//! points at the grid centre and the camera "up" direction follows world z
//! (world x at the degenerate apex), so every landmark stays on the sensor.

use nalgebra::{DMatrix, DVector, Vector2, Vector3};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::hydranet::{predict_so3_batch, train_so3, HydraNetSO3, So3Arch};
use crate::nnet::{HeadReduction, LossKind, OptimizerKind, TrainConfig};
use crate::se3::PoseSE3;
use crate::so3::UnitQuaternion;
use crate::uncertainty::{calibration_report, so3_nll};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HemisphereConfig {
    #[serde(default = "HemisphereConfig::default_grid_dim")]
    pub grid_dim: usize,
    #[serde(default = "HemisphereConfig::default_grid_spacing")]
    pub grid_spacing: f64,
    #[serde(default = "HemisphereConfig::default_radius")]
    pub radius: f64,
    #[serde(default = "HemisphereConfig::default_sensor_px")]
    pub sensor_px: f64,
    #[serde(default = "HemisphereConfig::default_focal_px")]
    pub focal_px: f64,
    #[serde(default = "HemisphereConfig::default_pixel_noise_sigma")]
    pub pixel_noise_sigma: f64,
    #[serde(default = "HemisphereConfig::default_n_train")]
    pub n_train: usize,
    #[serde(default = "HemisphereConfig::default_train_polar_deg")]
    pub train_polar_deg: f64,
    #[serde(default = "HemisphereConfig::default_n_test")]
    pub n_test: usize,
    #[serde(default = "HemisphereConfig::default_test_polar_deg")]
    pub test_polar_deg: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "HemisphereConfig::default_epochs")]
    pub epochs: usize,
    #[serde(default = "HemisphereConfig::default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "HemisphereConfig::default_minibatch_size")]
    pub minibatch_size: usize,
    #[serde(default = "HemisphereConfig::default_heads")]
    pub heads: usize,
    #[serde(default = "HemisphereConfig::default_body_width")]
    pub body_width: usize,
    #[serde(default = "HemisphereConfig::default_residual_blocks")]
    pub residual_blocks: usize,
    #[serde(default = "HemisphereConfig::default_head_hidden")]
    pub head_hidden: usize,
    /// Standard-deviation floor for the learned covariance, radians.
    #[serde(default = "HemisphereConfig::default_sigma_floor")]
    pub sigma_floor: f64,
}

impl HemisphereConfig {
    fn default_grid_dim() -> usize {
        6
    }
    fn default_grid_spacing() -> f64 {
        1.0
    }
    fn default_radius() -> f64 {
        25.0
    }
    fn default_sensor_px() -> f64 {
        500.0
    }
    fn default_focal_px() -> f64 {
        500.0
    }
    fn default_pixel_noise_sigma() -> f64 {
        1.0
    }
    fn default_n_train() -> usize {
        15000
    }
    fn default_train_polar_deg() -> f64 {
        60.0
    }
    fn default_n_test() -> usize {
        500
    }
    fn default_test_polar_deg() -> f64 {
        80.0
    }
    fn default_epochs() -> usize {
        120
    }
    fn default_learning_rate() -> f64 {
        1e-3
    }
    fn default_minibatch_size() -> usize {
        50
    }
    fn default_heads() -> usize {
        25
    }
    fn default_body_width() -> usize {
        64
    }
    fn default_residual_blocks() -> usize {
        5
    }
    fn default_head_hidden() -> usize {
        64
    }
    fn default_sigma_floor() -> f64 {
        // Well below the paper's observed aleatoric band (a few degrees) but
        // high enough that well-fit poses cannot monopolize the gradient.
        0.02
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_dim == 0 || self.n_train == 0 || self.n_test == 0 {
            return Err(Error::InvalidConfig("counts must be >= 1".into()));
        }
        if !(self.radius > 0.0 && self.focal_px > 0.0 && self.sensor_px > 0.0) {
            return Err(Error::InvalidConfig("geometry must be positive".into()));
        }
        if !(0.0..=90.0).contains(&self.train_polar_deg)
            || !(0.0..=90.0).contains(&self.test_polar_deg)
        {
            return Err(Error::InvalidConfig("polar bands must lie within [0, 90] degrees".into()));
        }
        Ok(())
    }

    pub fn camera(&self) -> Camera {
        Camera {
            focal: self.focal_px,
            center_u: self.sensor_px / 2.0,
            center_v: self.sensor_px / 2.0,
        }
    }

    /// Landmark positions in fixed row-major grid order, centred on the
    /// origin in the z = 0 plane.
    pub fn landmarks(&self) -> Vec<Vector3<f64>> {
        let d = self.grid_dim;
        let half = (d as f64 - 1.0) / 2.0;
        let mut points = Vec::with_capacity(d * d);
        for i in 0..d {
            for j in 0..d {
                points.push(Vector3::new(
                    (i as f64 - half) * self.grid_spacing,
                    (j as f64 - half) * self.grid_spacing,
                    0.0,
                ));
            }
        }
        points
    }
}

impl Default for HemisphereConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Pinhole intrinsics: square pixels, principal point at the sensor centre.
#[derive(Debug, Clone, Copy)]
pub struct Camera {
    pub focal: f64,
    pub center_u: f64,
    pub center_v: f64,
}

impl Camera {
    /// Projects a world-frame landmark through a camera-from-world pose.
    ///
    /// Fails with `BehindCamera` when the landmark's optical-axis depth is
    /// not positive. Noise is the generator's business, not the camera's.
    pub fn project(&self, pose_cw: &PoseSE3, landmark: &Vector3<f64>) -> Result<Vector2<f64>> {
        let p = pose_cw.transform_point(landmark);
        if p[2] <= 0.0 {
            return Err(Error::BehindCamera { depth: p[2] });
        }
        Ok(Vector2::new(
            self.focal * p[0] / p[2] + self.center_u,
            self.focal * p[1] / p[2] + self.center_v,
        ))
    }
}

/// Camera-from-world pose on the hemisphere at the given angles.
///
/// The optical axis points at the grid centre; the image "up" direction is
/// world z projected onto the image plane, replaced by world x at the
/// degenerate apex.
pub fn hemisphere_pose(radius: f64, azimuth_rad: f64, polar_rad: f64) -> PoseSE3 {
    let position = radius
        * Vector3::new(
            polar_rad.sin() * azimuth_rad.cos(),
            polar_rad.sin() * azimuth_rad.sin(),
            polar_rad.cos(),
        );
    let z_c = (-position).normalize();
    let mut up = Vector3::z();
    let mut lateral = up - z_c * up.dot(&z_c);
    if lateral.norm() < 1e-9 {
        up = Vector3::x();
        lateral = up - z_c * up.dot(&z_c);
    }
    let y_c = -lateral.normalize();
    let x_c = y_c.cross(&z_c);
    let r_wc = nalgebra::Matrix3::from_columns(&[x_c, y_c, z_c]);
    let r_cw = r_wc.transpose();
    let rotation = UnitQuaternion::from_matrix(&r_cw).expect("constructed orthonormal frame");
    PoseSE3::new(rotation, -(rotation.rotate(&position)))
}

/// A generated pose-regression dataset.
///
/// Inputs are the 36 noisy pixel pairs in fixed landmark order, normalized
/// per axis as `(px − norm_offset) / norm_scale`; targets are the
/// camera-from-world orientations.
#[derive(Debug, Clone)]
pub struct HemisphereDataset {
    pub inputs: DMatrix<f64>,
    pub targets: Vec<UnitQuaternion>,
    pub polar_deg: Vec<f64>,
    pub azimuth_rad: Vec<f64>,
    pub norm_offset: f64,
    pub norm_scale: f64,
}

/// Samples `n` poses (uniform azimuth in `[0, 2π)`, uniform polar angle in
/// `[0, polar_band_deg]`) and projects all landmarks with pixel noise.
///
/// The polar angle is unsigned: a signed angle combined with full azimuth
/// would sweep camera positions across the apex, where the projected-up roll
/// convention flips by 180° and the orientation target becomes
/// discontinuous — unlearnable by any continuous regressor.
pub fn gen_hemisphere(
    config: &HemisphereConfig,
    n: usize,
    polar_band_deg: f64,
    rng: &mut ChaCha12Rng,
) -> Result<HemisphereDataset> {
    config.validate()?;
    let camera = config.camera();
    let landmarks = config.landmarks();
    let dim = landmarks.len() * 2;
    let offset = config.sensor_px / 2.0;
    let scale = config.sensor_px / 2.0;

    let mut inputs = DMatrix::zeros(n, dim);
    let mut targets = Vec::with_capacity(n);
    let mut polar_deg = Vec::with_capacity(n);
    let mut azimuth_rad = Vec::with_capacity(n);
    for row in 0..n {
        let azimuth = rng.random::<f64>() * std::f64::consts::TAU;
        let polar = rng.random::<f64>() * polar_band_deg.to_radians();
        let pose = hemisphere_pose(config.radius, azimuth, polar);
        for (k, landmark) in landmarks.iter().enumerate() {
            let px = camera.project(&pose, landmark)?;
            let u = px[0] + config.pixel_noise_sigma * rng.sample::<f64, _>(StandardNormal);
            let v = px[1] + config.pixel_noise_sigma * rng.sample::<f64, _>(StandardNormal);
            if !(0.0..=config.sensor_px).contains(&u) || !(0.0..=config.sensor_px).contains(&v) {
                return Err(Error::ProjectionOutOfBounds { u, v });
            }
            inputs[(row, 2 * k)] = (u - offset) / scale;
            inputs[(row, 2 * k + 1)] = (v - offset) / scale;
        }
        targets.push(pose.rotation);
        polar_deg.push(polar.to_degrees());
        azimuth_rad.push(azimuth);
    }
    Ok(HemisphereDataset {
        inputs,
        targets,
        polar_deg,
        azimuth_rad,
        norm_offset: offset,
        norm_scale: scale,
    })
}

/// One evaluated test pose, reported in ascending polar-angle order.
#[derive(Debug, Clone)]
pub struct HemisphereRow {
    pub id: usize,
    pub polar_deg: f64,
    pub azimuth_rad: f64,
    pub mean: UnitQuaternion,
    pub sigma_e_diag: Vector3<f64>,
    pub sigma_a_diag: Vector3<f64>,
    pub sigma_t_diag: Vector3<f64>,
    /// Full total covariance (the CSV carries only the diagonals).
    pub total: crate::uncertainty::CovSO3,
    pub error: Vector3<f64>,
    pub nll: f64,
}

#[derive(Debug, Clone)]
pub struct HemisphereReport {
    pub rows: Vec<HemisphereRow>,
    pub mean_angular_error_deg: f64,
    pub mean_nll: f64,
    pub within_3_sigma: [f64; 3],
    pub mean_trace_epistemic_in_dist: f64,
    pub mean_trace_epistemic_ood: f64,
    pub runtime_seconds: f64,
}

impl HemisphereReport {
    pub fn ood_trace_ratio(&self) -> f64 {
        self.mean_trace_epistemic_ood / self.mean_trace_epistemic_in_dist
    }

    /// Writes `report.csv` (one row per test pose, sorted by polar angle)
    /// and `metrics.csv` into `dir`.
    pub fn write_csvs(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut f = std::fs::File::create(dir.join("report.csv"))?;
        writeln!(
            f,
            "id,polar_deg,azimuth_rad,qw,qx,qy,qz,sigma_e_xx,sigma_e_yy,sigma_e_zz,\
             sigma_a_xx,sigma_a_yy,sigma_a_zz,sigma_t_xx,sigma_t_yy,sigma_t_zz,\
             phi_x,phi_y,phi_z,nll"
        )?;
        for r in &self.rows {
            writeln!(
                f,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                r.id,
                r.polar_deg,
                r.azimuth_rad,
                r.mean.w(),
                r.mean.x(),
                r.mean.y(),
                r.mean.z(),
                r.sigma_e_diag[0],
                r.sigma_e_diag[1],
                r.sigma_e_diag[2],
                r.sigma_a_diag[0],
                r.sigma_a_diag[1],
                r.sigma_a_diag[2],
                r.sigma_t_diag[0],
                r.sigma_t_diag[1],
                r.sigma_t_diag[2],
                r.error[0],
                r.error[1],
                r.error[2],
                r.nll
            )?;
        }

        let mut f = std::fs::File::create(dir.join("metrics.csv"))?;
        writeln!(
            f,
            "mean_angular_error_deg,mean_nll,within_3sigma_x,within_3sigma_y,within_3sigma_z,\
             mean_trace_sigma_e_in_dist,mean_trace_sigma_e_ood,runtime_seconds"
        )?;
        writeln!(
            f,
            "{},{},{},{},{},{},{},{}",
            self.mean_angular_error_deg,
            self.mean_nll,
            self.within_3_sigma[0],
            self.within_3_sigma[1],
            self.within_3_sigma[2],
            self.mean_trace_epistemic_in_dist,
            self.mean_trace_epistemic_ood,
            self.runtime_seconds
        )?;
        Ok(())
    }
}

fn train_config(config: &HemisphereConfig, seed: u64) -> TrainConfig {
    TrainConfig {
        learning_rate: config.learning_rate,
        momentum: 0.0,
        optimizer: OptimizerKind::Adam,
        epochs: config.epochs,
        minibatch_size: config.minibatch_size,
        dropout_p: 0.0,
        loss: LossKind::So3Nll,
        seed,
        target_noise: 0.0,
        head_reduction: HeadReduction::MeanBody,
    }
}

/// Generates the datasets, trains the residual-body regressor, and scores
/// the belief on every test pose.
pub fn run_hemisphere(config: &HemisphereConfig) -> Result<(HemisphereReport, HydraNetSO3)> {
    use rand::SeedableRng;
    config.validate()?;
    let started = Instant::now();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let train = gen_hemisphere(config, config.n_train, config.train_polar_deg, &mut rng)?;
    let test = gen_hemisphere(config, config.n_test, config.test_polar_deg, &mut rng)?;

    let arch = So3Arch {
        body_width: config.body_width,
        residual_blocks: config.residual_blocks,
        head_hidden: config.head_hidden,
        quat_heads: config.heads,
        head_dropout_p: 0.0,
        sigma_floor: config.sigma_floor,
    };
    let cfg = train_config(config, config.seed);
    let mut train_rng = ChaCha12Rng::seed_from_u64(config.seed.wrapping_add(1));
    let net = train_so3(&train.inputs, &train.targets, &cfg, &arch, &mut train_rng)?;

    let beliefs = predict_so3_batch(&net, &test.inputs)?;
    let mut order: Vec<usize> = (0..beliefs.len()).collect();
    order.sort_by(|&a, &b| test.polar_deg[a].partial_cmp(&test.polar_deg[b]).unwrap());

    let mut rows = Vec::with_capacity(beliefs.len());
    let mut errors = Vec::with_capacity(beliefs.len());
    let mut covs = Vec::with_capacity(beliefs.len());
    let mut angular_sum = 0.0;
    let mut in_dist = (0.0, 0usize);
    let mut ood = (0.0, 0usize);
    for &i in &order {
        let belief = &beliefs[i];
        let target = test.targets[i];
        let phi = belief.mean.mul(&target.inverse()).log();
        let nll = so3_nll(&belief.mean, &target, &belief.total)?;
        angular_sum += belief.mean.angular_distance(&target);
        errors.push(phi);
        covs.push(belief.total);
        if test.polar_deg[i].abs() > config.train_polar_deg {
            ood.0 += belief.epistemic.trace();
            ood.1 += 1;
        } else {
            in_dist.0 += belief.epistemic.trace();
            in_dist.1 += 1;
        }
        rows.push(HemisphereRow {
            id: i,
            polar_deg: test.polar_deg[i],
            azimuth_rad: test.azimuth_rad[i],
            mean: belief.mean,
            sigma_e_diag: belief.epistemic.diagonal(),
            sigma_a_diag: belief.aleatoric.diagonal(),
            sigma_t_diag: belief.total.diagonal(),
            total: belief.total,
            error: phi,
            nll,
        });
    }

    let calibration = calibration_report(&errors, &covs)?;
    let n = rows.len() as f64;
    let report = HemisphereReport {
        rows,
        mean_angular_error_deg: (angular_sum / n).to_degrees(),
        mean_nll: calibration.mean_nll,
        within_3_sigma: calibration.within_3_sigma,
        mean_trace_epistemic_in_dist: in_dist.0 / in_dist.1.max(1) as f64,
        mean_trace_epistemic_ood: ood.0 / ood.1.max(1) as f64,
        runtime_seconds: started.elapsed().as_secs_f64(),
    };
    Ok((report, net))
}

/// Reprojection residual of a stored (de-normalized) input row under a pose,
/// useful for self-consistency checks.
pub fn reprojection_residual(
    config: &HemisphereConfig,
    dataset: &HemisphereDataset,
    row: usize,
    pose_cw: &PoseSE3,
) -> Result<f64> {
    let camera = config.camera();
    let mut sum = 0.0;
    for (k, landmark) in config.landmarks().iter().enumerate() {
        let px = camera.project(pose_cw, landmark)?;
        let u = dataset.inputs[(row, 2 * k)] * dataset.norm_scale + dataset.norm_offset;
        let v = dataset.inputs[(row, 2 * k + 1)] * dataset.norm_scale + dataset.norm_offset;
        sum += (px - Vector2::new(u, v)).norm_squared();
    }
    Ok(sum.sqrt())
}

/// De-normalized pixel vector of one dataset row (u, v pairs in landmark
/// order), for format consumers.
pub fn denormalized_row(dataset: &HemisphereDataset, row: usize) -> DVector<f64> {
    DVector::from_fn(dataset.inputs.ncols(), |j, _| {
        dataset.inputs[(row, j)] * dataset.norm_scale + dataset.norm_offset
    })
}
