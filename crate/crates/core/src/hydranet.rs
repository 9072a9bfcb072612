//! Multi-headed uncertainty estimators: the five 1D regression variants and
//! the body-plus-heads SO(3) regressor.
//!
//! The SO(3) network dedicates head 0 to the covariance logits and heads
//! `1..=H` to raw quaternion outputs. Training evaluates the rotation NLL of
//! every quaternion head against the same target under the shared learned
//! covariance and sums the losses; prediction averages the heads with the
//! closed-form quaternionic mean and reports the head scatter as epistemic
//! covariance.

use nalgebra::{DMatrix, DVector, Vector3, Vector4};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;

use crate::averaging::quat_mean_of;
use crate::error::{Error, Result};
use crate::nnet::{loss, HeadReduction, LayerSpec, MlpModel, Mode, Optimizer, TrainConfig};
use crate::so3::UnitQuaternion;
use crate::uncertainty::{cov_from_logits_floored, sample_covariance, RotationBelief, SIGMA_MIN};

/// The five 1D uncertainty estimation methods.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method1D {
    /// One network regressing mean and log standard deviation with a
    /// Gaussian NLL loss.
    DirectSigma,
    /// MSE-trained network with dropout kept active at test time; `passes`
    /// stochastic forward evaluations per prediction.
    McDropout { passes: usize },
    /// `models` independent MSE-trained networks, each on a bootstrap
    /// resample of the training set.
    Bagging { models: usize },
    /// Shared body with `heads` mean heads, MSE per head, no aleatoric term.
    HydranetHeadsOnly { heads: usize },
    /// Shared body with `heads` mean heads plus one log-sigma head, summed
    /// per-head Gaussian NLL.
    HydranetFull { heads: usize },
}

impl Method1D {
    pub fn name(&self) -> &'static str {
        match self {
            Method1D::DirectSigma => "direct_sigma",
            Method1D::McDropout { .. } => "mc_dropout",
            Method1D::Bagging { .. } => "bagging",
            Method1D::HydranetHeadsOnly { .. } => "hydranet_heads_only",
            Method1D::HydranetFull { .. } => "hydranet_full",
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Method1D::McDropout { passes } if passes < 2 => {
                Err(Error::InvalidConfig(format!("mc_dropout needs >= 2 passes, got {passes}")))
            }
            Method1D::Bagging { models } if models < 2 => {
                Err(Error::InvalidConfig(format!("bagging needs >= 2 models, got {models}")))
            }
            Method1D::HydranetHeadsOnly { heads } | Method1D::HydranetFull { heads }
                if heads < 2 =>
            {
                Err(Error::InvalidConfig(format!("hydranet needs >= 2 heads, got {heads}")))
            }
            _ => Ok(()),
        }
    }
}

/// A trained 1D estimator.
#[derive(Debug, Clone)]
pub struct Estimator1D {
    pub method: Method1D,
    pub models: Vec<MlpModel>,
    pub config: TrainConfig,
}

/// Point prediction with split variances, `σ² = σ²_e + σ²_a`.
#[derive(Debug, Clone, Copy)]
pub struct Prediction1D {
    pub mean: f64,
    pub var_epistemic: f64,
    pub var_aleatoric: f64,
    pub var_total: f64,
}

const HIDDEN_1D: usize = 20;

/// Weight of the radial gauge-fixing penalty on raw quaternion outputs.
const QUAT_NORM_GAUGE: f64 = 1.0;

fn fc(input_dim: usize, output_dim: usize) -> LayerSpec {
    LayerSpec::Fc { input_dim, output_dim }
}

/// Four fully-connected layers of 20 units with SELU activations; dropout
/// after each hidden activation when `p > 0`.
fn plain_body_1d(dropout_p: f64) -> Vec<LayerSpec> {
    let mut body = Vec::new();
    for i in 0..3 {
        body.push(fc(if i == 0 { 1 } else { HIDDEN_1D }, HIDDEN_1D));
        body.push(LayerSpec::Selu { dim: HIDDEN_1D });
        if dropout_p > 0.0 {
            body.push(LayerSpec::Dropout { dim: HIDDEN_1D, p: dropout_p });
        }
    }
    body
}

/// Two body layers, with the final two layers branched per head.
fn hydranet_head_1d(output_dim: usize) -> Vec<LayerSpec> {
    vec![fc(HIDDEN_1D, HIDDEN_1D), LayerSpec::Selu { dim: HIDDEN_1D }, fc(HIDDEN_1D, output_dim)]
}

fn hydranet_body_1d() -> Vec<LayerSpec> {
    vec![
        fc(1, HIDDEN_1D),
        LayerSpec::Selu { dim: HIDDEN_1D },
        fc(HIDDEN_1D, HIDDEN_1D),
        LayerSpec::Selu { dim: HIDDEN_1D },
    ]
}

/// Generic minibatch training driver.
///
/// `batch_loss` maps (batch sample indices, head outputs) to the batch loss
/// and per-head output gradients, already scaled for the batch.
fn run_training<F>(
    model: &mut MlpModel,
    inputs: &DMatrix<f64>,
    config: &TrainConfig,
    rng: &mut ChaCha12Rng,
    mut batch_loss: F,
) -> Result<()>
where
    F: FnMut(&[usize], &[DMatrix<f64>]) -> Result<(f64, Vec<DMatrix<f64>>)>,
{
    config.validate()?;
    let n = inputs.nrows();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut optimizer =
        Optimizer::new(config.optimizer, config.learning_rate, config.momentum, model.param_count())?;
    let body_scale = match config.head_reduction {
        HeadReduction::Sum => 1.0,
        HeadReduction::MeanBody => 1.0 / model.head_count() as f64,
    };
    let mut indices: Vec<usize> = (0..n).collect();
    let batch = config.minibatch_size.max(1);
    for _ in 0..config.epochs {
        for i in (1..n).rev() {
            let j = (rng.random::<u64>() as usize) % (i + 1);
            indices.swap(i, j);
        }
        for chunk in indices.chunks(batch) {
            let x = inputs.select_rows(chunk.iter());
            let (outputs, trace) = model.forward(&x, Mode::Train, rng)?;
            let (_, head_grads) = batch_loss(chunk, &outputs)?;
            let grads = model.backward_scaled(&trace, &head_grads, body_scale)?;
            optimizer.step(model.params_mut(), &grads);
        }
    }
    Ok(())
}

fn column_matrix(values: &[f64]) -> DMatrix<f64> {
    DMatrix::from_fn(values.len(), 1, |i, _| values[i])
}

/// Trains one of the five estimators on `(x, y)` pairs.
///
/// MSE methods regress the mean only; `direct_sigma` and `hydranet_full`
/// minimize the Gaussian NLL. Bagging members each see a bootstrap resample;
/// hydranet heads all see every sample (diversity comes from initialization
/// and any head dropout, not from bootstrapping).
pub fn train_1d(
    method: Method1D,
    xs: &[f64],
    ys: &[f64],
    config: &TrainConfig,
    rng: &mut ChaCha12Rng,
) -> Result<Estimator1D> {
    method.validate()?;
    config.validate()?;
    if xs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if xs.len() != ys.len() {
        return Err(Error::LengthMismatch { left: xs.len(), right: ys.len() });
    }

    // Fixed per-head (or per-model) noisy targets: each head is pulled
    // toward its own perturbed copy of the labels, which promotes output
    // diversity without bootstrapping.
    let draw_targets = |rng: &mut ChaCha12Rng| -> Vec<f64> {
        if config.target_noise > 0.0 {
            ys.iter()
                .map(|y| y + config.target_noise * rng.sample::<f64, _>(StandardNormal))
                .collect()
        } else {
            ys.to_vec()
        }
    };

    let models = match method {
        Method1D::DirectSigma => {
            let mut model = MlpModel::new(
                1,
                plain_body_1d(config.dropout_p),
                vec![vec![fc(HIDDEN_1D, 2)]],
                rng.random::<u64>(),
            )?;
            let targets = draw_targets(rng);
            let inputs = column_matrix(xs);
            run_training(&mut model, &inputs, config, rng, |chunk, outputs| {
                let o = &outputs[0];
                let scale = 1.0 / chunk.len() as f64;
                let mut value = 0.0;
                let mut grad = DMatrix::zeros(o.nrows(), 2);
                for (row, &idx) in chunk.iter().enumerate() {
                    let (v, dp, du) = loss::gaussian_nll_1d(o[(row, 0)], o[(row, 1)], targets[idx]);
                    value += v * scale;
                    grad[(row, 0)] = dp * scale;
                    grad[(row, 1)] = du * scale;
                }
                Ok((value, vec![grad]))
            })?;
            vec![model]
        }
        Method1D::McDropout { .. } => {
            if config.dropout_p <= 0.0 {
                return Err(Error::InvalidConfig("mc_dropout requires dropout_p > 0".into()));
            }
            let mut model = MlpModel::new(
                1,
                plain_body_1d(config.dropout_p),
                vec![vec![fc(HIDDEN_1D, 1)]],
                rng.random::<u64>(),
            )?;
            let targets = draw_targets(rng);
            let inputs = column_matrix(xs);
            run_training(&mut model, &inputs, config, rng, |chunk, outputs| {
                let o = &outputs[0];
                let scale = 1.0 / chunk.len() as f64;
                let mut value = 0.0;
                let mut grad = DMatrix::zeros(o.nrows(), 1);
                for (row, &idx) in chunk.iter().enumerate() {
                    let (v, d) = loss::mse(o[(row, 0)], targets[idx]);
                    value += v * scale;
                    grad[(row, 0)] = d * scale;
                }
                Ok((value, vec![grad]))
            })?;
            vec![model]
        }
        Method1D::Bagging { models } => {
            let mut trained = Vec::with_capacity(models);
            for _ in 0..models {
                // Bootstrap resample with replacement.
                let targets = draw_targets(rng);
                let resampled: Vec<usize> =
                    (0..xs.len()).map(|_| (rng.random::<u64>() as usize) % xs.len()).collect();
                let bx: Vec<f64> = resampled.iter().map(|&i| xs[i]).collect();
                let by: Vec<f64> = resampled.iter().map(|&i| targets[i]).collect();
                let mut model = MlpModel::new(
                    1,
                    plain_body_1d(0.0),
                    vec![vec![fc(HIDDEN_1D, 1)]],
                    rng.random::<u64>(),
                )?;
                let inputs = column_matrix(&bx);
                run_training(&mut model, &inputs, config, rng, |chunk, outputs| {
                    let o = &outputs[0];
                    let scale = 1.0 / chunk.len() as f64;
                    let mut value = 0.0;
                    let mut grad = DMatrix::zeros(o.nrows(), 1);
                    for (row, &idx) in chunk.iter().enumerate() {
                        let (v, d) = loss::mse(o[(row, 0)], by[idx]);
                        value += v * scale;
                        grad[(row, 0)] = d * scale;
                    }
                    Ok((value, vec![grad]))
                })?;
                trained.push(model);
            }
            trained
        }
        Method1D::HydranetHeadsOnly { heads } => {
            let head_specs = (0..heads).map(|_| hydranet_head_1d(1)).collect();
            let mut model =
                MlpModel::new(1, hydranet_body_1d(), head_specs, rng.random::<u64>())?;
            let per_head: Vec<Vec<f64>> = (0..heads).map(|_| draw_targets(rng)).collect();
            let inputs = column_matrix(xs);
            run_training(&mut model, &inputs, config, rng, |chunk, outputs| {
                let scale = 1.0 / chunk.len() as f64;
                let mut value = 0.0;
                let mut grads = Vec::with_capacity(outputs.len());
                for (h, o) in outputs.iter().enumerate() {
                    let mut grad = DMatrix::zeros(o.nrows(), 1);
                    for (row, &idx) in chunk.iter().enumerate() {
                        let (v, d) = loss::mse(o[(row, 0)], per_head[h][idx]);
                        value += v * scale;
                        grad[(row, 0)] = d * scale;
                    }
                    grads.push(grad);
                }
                Ok((value, grads))
            })?;
            vec![model]
        }
        Method1D::HydranetFull { heads } => {
            let mut head_specs = vec![hydranet_head_1d(1)];
            head_specs.extend((0..heads).map(|_| hydranet_head_1d(1)));
            let mut model =
                MlpModel::new(1, hydranet_body_1d(), head_specs, rng.random::<u64>())?;
            // Start the variance head at sigma = 1 so early mean residuals
            // cannot meet a tiny random sigma and blow up the NLL gradient.
            model.zero_head_output_layer(0);
            let per_head: Vec<Vec<f64>> = (0..heads).map(|_| draw_targets(rng)).collect();
            // The sigma head is shared by every per-head loss, so its
            // gradient is reduced the same way the body's is.
            let shared_scale = match config.head_reduction {
                HeadReduction::Sum => 1.0,
                HeadReduction::MeanBody => 1.0 / heads as f64,
            };
            let inputs = column_matrix(xs);
            run_training(&mut model, &inputs, config, rng, |chunk, outputs| {
                let scale = 1.0 / chunk.len() as f64;
                let mut value = 0.0;
                let mut grads: Vec<DMatrix<f64>> =
                    outputs.iter().map(|o| DMatrix::zeros(o.nrows(), o.ncols())).collect();
                for (row, &idx) in chunk.iter().enumerate() {
                    let u = outputs[0][(row, 0)];
                    for h in 1..outputs.len() {
                        let (v, dp, du) =
                            loss::gaussian_nll_1d(outputs[h][(row, 0)], u, per_head[h - 1][idx]);
                        value += v * scale;
                        grads[h][(row, 0)] = dp * scale;
                        grads[0][(row, 0)] += du * scale * shared_scale;
                    }
                }
                Ok((value, grads))
            })?;
            vec![model]
        }
    };

    Ok(Estimator1D { method, models, config: config.clone() })
}

fn mean_and_unbiased_var(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Batched prediction over a list of inputs.
///
/// `rng` drives the stochastic forward passes of `mc_dropout`; the other
/// methods are deterministic in eval mode.
pub fn predict_1d_batch(
    estimator: &Estimator1D,
    xs: &[f64],
    rng: &mut ChaCha12Rng,
) -> Result<Vec<Prediction1D>> {
    let inputs = column_matrix(xs);
    let n = xs.len();
    match estimator.method {
        Method1D::DirectSigma => {
            let (out, _) = estimator.models[0].forward(&inputs, Mode::Eval, rng)?;
            Ok((0..n)
                .map(|i| {
                    let sigma = out[0][(i, 1)].exp().max(SIGMA_MIN);
                    Prediction1D {
                        mean: out[0][(i, 0)],
                        var_epistemic: 0.0,
                        var_aleatoric: sigma * sigma,
                        var_total: sigma * sigma,
                    }
                })
                .collect())
        }
        Method1D::McDropout { passes } => {
            let mut per_pass = vec![Vec::with_capacity(passes); n];
            for _ in 0..passes {
                let (out, _) = estimator.models[0].forward(&inputs, Mode::Train, rng)?;
                for i in 0..n {
                    per_pass[i].push(out[0][(i, 0)]);
                }
            }
            Ok(per_pass
                .iter()
                .map(|vals| {
                    let (mean, var) = mean_and_unbiased_var(vals);
                    Prediction1D {
                        mean,
                        var_epistemic: var,
                        var_aleatoric: 0.0,
                        var_total: var,
                    }
                })
                .collect())
        }
        Method1D::Bagging { .. } => {
            let mut per_model = vec![Vec::with_capacity(estimator.models.len()); n];
            for model in &estimator.models {
                let (out, _) = model.forward(&inputs, Mode::Eval, rng)?;
                for i in 0..n {
                    per_model[i].push(out[0][(i, 0)]);
                }
            }
            Ok(per_model
                .iter()
                .map(|vals| {
                    let (mean, var) = mean_and_unbiased_var(vals);
                    Prediction1D {
                        mean,
                        var_epistemic: var,
                        var_aleatoric: 0.0,
                        var_total: var,
                    }
                })
                .collect())
        }
        Method1D::HydranetHeadsOnly { .. } => {
            let (out, _) = estimator.models[0].forward(&inputs, Mode::Eval, rng)?;
            Ok((0..n)
                .map(|i| {
                    let vals: Vec<f64> = out.iter().map(|o| o[(i, 0)]).collect();
                    let (mean, var) = mean_and_unbiased_var(&vals);
                    Prediction1D {
                        mean,
                        var_epistemic: var,
                        var_aleatoric: 0.0,
                        var_total: var,
                    }
                })
                .collect())
        }
        Method1D::HydranetFull { .. } => {
            let (out, _) = estimator.models[0].forward(&inputs, Mode::Eval, rng)?;
            Ok((0..n)
                .map(|i| {
                    let vals: Vec<f64> = out[1..].iter().map(|o| o[(i, 0)]).collect();
                    let (mean, var_e) = mean_and_unbiased_var(&vals);
                    let sigma = out[0][(i, 0)].exp().max(SIGMA_MIN);
                    Prediction1D {
                        mean,
                        var_epistemic: var_e,
                        var_aleatoric: sigma * sigma,
                        var_total: var_e + sigma * sigma,
                    }
                })
                .collect())
        }
    }
}

/// Single-input prediction; see [`predict_1d_batch`].
pub fn predict_1d(estimator: &Estimator1D, x: f64, rng: &mut ChaCha12Rng) -> Result<Prediction1D> {
    Ok(predict_1d_batch(estimator, &[x], rng)?[0])
}

/// Architecture of the SO(3) regressor.
#[derive(Debug, Clone, Copy)]
pub struct So3Arch {
    pub body_width: usize,
    pub residual_blocks: usize,
    pub head_hidden: usize,
    pub quat_heads: usize,
    pub head_dropout_p: f64,
    /// Standard-deviation floor of the learned covariance, radians. Besides
    /// bounding the log-determinant, it caps the per-sample NLL weight at
    /// `1/floor²`, which keeps well-fit samples from starving the rest of
    /// the dataset of gradient.
    pub sigma_floor: f64,
}

impl Default for So3Arch {
    fn default() -> Self {
        So3Arch {
            body_width: 64,
            residual_blocks: 5,
            head_hidden: 64,
            quat_heads: 25,
            head_dropout_p: 0.0,
            sigma_floor: SIGMA_MIN,
        }
    }
}

/// A trained SO(3) HydraNet: head 0 regresses the covariance logits, heads
/// `1..=quat_heads` regress raw quaternions.
#[derive(Debug, Clone)]
pub struct HydraNetSO3 {
    pub model: MlpModel,
    pub quat_heads: usize,
    /// Sigma floor used during training, applied identically at prediction.
    pub sigma_floor: f64,
}

fn so3_head(arch: &So3Arch, output_dim: usize) -> Vec<LayerSpec> {
    let mut head = vec![
        fc(arch.body_width, arch.head_hidden),
        LayerSpec::Relu { dim: arch.head_hidden },
    ];
    if arch.head_dropout_p > 0.0 {
        head.push(LayerSpec::Dropout { dim: arch.head_hidden, p: arch.head_dropout_p });
    }
    head.push(fc(arch.head_hidden, output_dim));
    head
}

fn so3_model(input_dim: usize, arch: &So3Arch, seed: u64) -> Result<MlpModel> {
    let mut body = vec![fc(input_dim, arch.body_width)];
    for _ in 0..arch.residual_blocks {
        body.push(LayerSpec::ResidualFcBlock { width: arch.body_width });
    }
    let mut heads = vec![so3_head(arch, 3)];
    heads.extend((0..arch.quat_heads).map(|_| so3_head(arch, 4)));
    MlpModel::new(input_dim, body, heads, seed)
}

/// Supervised training of the SO(3) regressor.
///
/// Per minibatch: the covariance head outputs the shared log-sigma logits,
/// every quaternion head is normalized and scored with the rotation NLL
/// against the target, the per-head losses are summed, and one
/// backpropagation step updates body and heads together.
pub fn train_so3(
    inputs: &DMatrix<f64>,
    targets: &[UnitQuaternion],
    config: &TrainConfig,
    arch: &So3Arch,
    rng: &mut ChaCha12Rng,
) -> Result<HydraNetSO3> {
    if arch.quat_heads < 2 {
        return Err(Error::InvalidConfig(format!(
            "hydranet needs >= 2 quaternion heads, got {}",
            arch.quat_heads
        )));
    }
    if inputs.nrows() == 0 {
        return Err(Error::EmptyDataset);
    }
    if inputs.nrows() != targets.len() {
        return Err(Error::LengthMismatch { left: inputs.nrows(), right: targets.len() });
    }
    for q in targets {
        let norm = q.as_vector().norm();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::NonUnitTarget { norm });
        }
    }

    let mut model = so3_model(inputs.ncols(), arch, rng.random::<u64>())?;
    // Flat-start covariance head: sigma = 1 rad everywhere at initialization.
    model.zero_head_output_layer(0);

    // Optional fixed per-head target perturbations on the Log residuals.
    let per_head_targets: Vec<Vec<UnitQuaternion>> = (0..arch.quat_heads)
        .map(|_| {
            targets
                .iter()
                .map(|q| {
                    if config.target_noise > 0.0 {
                        let eps = Vector3::new(
                            rng.sample::<f64, _>(StandardNormal),
                            rng.sample::<f64, _>(StandardNormal),
                            rng.sample::<f64, _>(StandardNormal),
                        ) * config.target_noise;
                        UnitQuaternion::exp(&eps).mul(q)
                    } else {
                        *q
                    }
                })
                .collect()
        })
        .collect();

    // The covariance head is shared by every per-head loss; reduce its
    // gradient the same way the body's is.
    let shared_scale = match config.head_reduction {
        HeadReduction::Sum => 1.0,
        HeadReduction::MeanBody => 1.0 / arch.quat_heads as f64,
    };
    run_training(&mut model, inputs, config, rng, |chunk, outputs| {
        let scale = 1.0 / chunk.len() as f64;
        let mut value = 0.0;
        let mut grads: Vec<DMatrix<f64>> =
            outputs.iter().map(|o| DMatrix::zeros(o.nrows(), o.ncols())).collect();
        for (row, &idx) in chunk.iter().enumerate() {
            let logits =
                Vector3::new(outputs[0][(row, 0)], outputs[0][(row, 1)], outputs[0][(row, 2)]);
            for h in 1..outputs.len() {
                let raw = Vector4::new(
                    outputs[h][(row, 0)],
                    outputs[h][(row, 1)],
                    outputs[h][(row, 2)],
                    outputs[h][(row, 3)],
                );
                let (v, d_raw, d_logits) = loss::so3_nll_loss_floored(
                    &raw,
                    &logits,
                    &per_head_targets[h - 1][idx],
                    arch.sigma_floor,
                )?;
                value += v * scale;
                for k in 0..4 {
                    grads[h][(row, k)] = d_raw[k] * scale;
                }
                for k in 0..3 {
                    grads[0][(row, k)] += d_logits[k] * scale * shared_scale;
                }

                // Gauge fixing: the NLL is invariant to the raw norm (only
                // the normalized quaternion matters), so the radial
                // direction is unconstrained and drifts outward under
                // adaptive optimizers, shrinking the tangential gradients
                // like 1/norm until learning stalls. A radial penalty pins
                // the gauge without touching the modeled distribution.
                let norm = raw.norm();
                value += QUAT_NORM_GAUGE * (norm - 1.0) * (norm - 1.0) * scale;
                let radial = 2.0 * QUAT_NORM_GAUGE * (norm - 1.0) / norm;
                for k in 0..4 {
                    grads[h][(row, k)] += radial * raw[k] * scale;
                }
            }
        }
        Ok((value, grads))
    })?;

    Ok(HydraNetSO3 { model, quat_heads: arch.quat_heads, sigma_floor: arch.sigma_floor })
}

/// Head outputs for one input: quaternions from heads `1..`, covariance
/// logits from head 0.
fn so3_heads_for_row(
    outputs: &[DMatrix<f64>],
    row: usize,
) -> Result<(Vec<UnitQuaternion>, Vector3<f64>)> {
    let logits = Vector3::new(outputs[0][(row, 0)], outputs[0][(row, 1)], outputs[0][(row, 2)]);
    let mut quats = Vec::with_capacity(outputs.len() - 1);
    for o in &outputs[1..] {
        quats.push(UnitQuaternion::normalize(Vector4::new(
            o[(row, 0)],
            o[(row, 1)],
            o[(row, 2)],
            o[(row, 3)],
        ))?);
    }
    Ok((quats, logits))
}

/// Combines the head outputs of a trained net into a [`RotationBelief`].
pub fn predict_so3(net: &HydraNetSO3, input: &DVector<f64>) -> Result<RotationBelief> {
    let batch = DMatrix::from_fn(1, input.len(), |_, j| input[j]);
    Ok(predict_so3_batch(net, &batch)?.remove(0))
}

/// Batched [`predict_so3`].
pub fn predict_so3_batch(net: &HydraNetSO3, inputs: &DMatrix<f64>) -> Result<Vec<RotationBelief>> {
    use rand::SeedableRng;
    let mut rng = ChaCha12Rng::seed_from_u64(0);
    let (outputs, _) = net.model.forward(inputs, Mode::Eval, &mut rng)?;
    let mut beliefs = Vec::with_capacity(inputs.nrows());
    for row in 0..inputs.nrows() {
        let (quats, logits) = so3_heads_for_row(&outputs, row)?;
        let mean = quat_mean_of(&quats)?;
        let epistemic = sample_covariance(&mean.mean, &quats)?;
        let aleatoric = cov_from_logits_floored(&logits, net.sigma_floor);
        beliefs.push(RotationBelief::new(
            mean.mean,
            epistemic,
            aleatoric,
            mean.dispersion_warning,
        ));
    }
    Ok(beliefs)
}
