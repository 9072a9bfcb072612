//! Minimal feed-forward networks with exact backpropagation.
//!
//! A model is a shared body followed by any number of heads; parameters live
//! in one flat vector so optimizers and checkpoints can treat the model as a
//! point in R^n. Forward passes run batched (rows are samples) on dynamically
//! sized matrices, and the activation trace recorded during the forward pass
//! is sufficient for an exact backward pass.

pub mod loss;
pub mod optim;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rand::Rng;
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};

use crate::error::{Error, Result};

pub use loss::LossKind;
pub use optim::{Optimizer, OptimizerKind};

/// How the per-head losses reach the shared body during backpropagation.
///
/// Every head always receives its own full-scale loss gradient, so each head
/// trains like a single-headed network. With `Sum` the body accumulates the
/// raw sum of the heads' pulls (gradient grows with the head count); with
/// `MeanBody` the accumulated pull is divided by the head count, keeping the
/// body gradient at the single-head scale that learning rates tuned on
/// single-headed networks assume.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadReduction {
    Sum,
    MeanBody,
}

impl Default for HeadReduction {
    fn default() -> Self {
        HeadReduction::Sum
    }
}

/// Hyperparameters of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub optimizer: OptimizerKind,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub dropout_p: f64,
    pub loss: LossKind,
    pub seed: u64,
    /// Standard deviation of fixed per-head target noise (0 disables it).
    #[serde(default)]
    pub target_noise: f64,
    #[serde(default)]
    pub head_reduction: HeadReduction,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "learning rate {} must be positive",
                self.learning_rate
            )));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.minibatch_size == 0 {
            return Err(Error::InvalidConfig("minibatch size must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidConfig(format!(
                "dropout probability {} outside [0, 1)",
                self.dropout_p
            )));
        }
        if self.momentum < 0.0 || self.momentum >= 1.0 {
            return Err(Error::InvalidConfig(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        if self.target_noise < 0.0 {
            return Err(Error::InvalidConfig("target noise must be non-negative".into()));
        }
        Ok(())
    }
}

/// SELU scale constant.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
/// SELU alpha constant.
pub const SELU_ALPHA: f64 = 1.6732632423543772;

/// Forward-pass mode. Dropout samples masks only in `Train`; `Eval` is
/// mask-free and deterministic (inverted dropout).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// One layer of a network segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Affine map `y = W x + b`.
    Fc { input_dim: usize, output_dim: usize },
    /// Scaled exponential linear unit, elementwise.
    Selu { dim: usize },
    /// Rectified linear unit, elementwise.
    Relu { dim: usize },
    /// Inverted dropout with drop probability `p`.
    Dropout { dim: usize, p: f64 },
    /// `y = x + relu(W x + b)` with a square inner layer.
    ResidualFcBlock { width: usize },
}

impl LayerSpec {
    pub fn input_dim(&self) -> usize {
        match *self {
            LayerSpec::Fc { input_dim, .. } => input_dim,
            LayerSpec::Selu { dim } | LayerSpec::Relu { dim } | LayerSpec::Dropout { dim, .. } => {
                dim
            }
            LayerSpec::ResidualFcBlock { width } => width,
        }
    }

    pub fn output_dim(&self) -> usize {
        match *self {
            LayerSpec::Fc { output_dim, .. } => output_dim,
            _ => self.input_dim(),
        }
    }

    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Fc { input_dim, output_dim } => output_dim * input_dim + output_dim,
            LayerSpec::ResidualFcBlock { width } => width * width + width,
            _ => 0,
        }
    }

    fn validate(&self) -> Result<()> {
        if let LayerSpec::Dropout { p, .. } = *self {
            if !(0.0..1.0).contains(&p) {
                return Err(Error::InvalidConfig(format!("dropout p {p} outside [0, 1)")));
            }
        }
        if self.input_dim() == 0 || self.output_dim() == 0 {
            return Err(Error::InvalidConfig(format!("zero-dimensional layer {self:?}")));
        }
        Ok(())
    }
}

fn validate_chain(segment: &[LayerSpec], input_dim: usize) -> Result<usize> {
    let mut dim = input_dim;
    for layer in segment {
        layer.validate()?;
        if layer.input_dim() != dim {
            return Err(Error::DimMismatch { expected: dim, got: layer.input_dim() });
        }
        dim = layer.output_dim();
    }
    Ok(dim)
}

/// Per-layer record of everything the backward pass needs.
enum LayerTrace {
    Fc { input: DMatrix<f64> },
    Selu { input: DMatrix<f64> },
    Relu { input: DMatrix<f64> },
    Dropout { mask: Option<DMatrix<f64>> },
    Residual { input: DMatrix<f64>, pre: DMatrix<f64> },
}

/// Activation trace of one forward pass.
pub struct Trace {
    body: Vec<LayerTrace>,
    body_output_dim: usize,
    heads: Vec<Vec<LayerTrace>>,
    batch: usize,
}

/// A body-plus-heads feed-forward model with a flat parameter vector.
#[derive(Debug, Clone)]
pub struct MlpModel {
    body: Vec<LayerSpec>,
    heads: Vec<Vec<LayerSpec>>,
    input_dim: usize,
    body_output_dim: usize,
    params: Vec<f64>,
    body_offsets: Vec<usize>,
    head_offsets: Vec<Vec<usize>>,
    seed: u64,
}

impl MlpModel {
    /// Builds and randomly initializes a model.
    ///
    /// Fully-connected weights get LeCun-normal initialization when followed
    /// by a SELU (or nothing) and He-normal when followed by a ReLU; residual
    /// blocks use He-normal for their inner ReLU layer. Biases start at zero.
    pub fn new(
        input_dim: usize,
        body: Vec<LayerSpec>,
        heads: Vec<Vec<LayerSpec>>,
        seed: u64,
    ) -> Result<Self> {
        let body_output_dim = validate_chain(&body, input_dim)?;
        if heads.is_empty() {
            return Err(Error::InvalidConfig("model needs at least one head".into()));
        }
        for head in &heads {
            validate_chain(head, body_output_dim)?;
        }

        let mut offset = 0usize;
        let body_offsets: Vec<usize> = body
            .iter()
            .map(|l| {
                let here = offset;
                offset += l.param_count();
                here
            })
            .collect();
        let head_offsets: Vec<Vec<usize>> = heads
            .iter()
            .map(|head| {
                head.iter()
                    .map(|l| {
                        let here = offset;
                        offset += l.param_count();
                        here
                    })
                    .collect()
            })
            .collect();

        let mut model = MlpModel {
            body,
            heads,
            input_dim,
            body_output_dim,
            params: vec![0.0; offset],
            body_offsets,
            head_offsets,
            seed,
        };
        model.initialize(seed);
        Ok(model)
    }

    fn initialize(&mut self, seed: u64) {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let body = self.body.clone();
        let heads = self.heads.clone();
        let body_offsets = self.body_offsets.clone();
        let head_offsets = self.head_offsets.clone();
        Self::init_segment(&body, &body_offsets, &mut self.params, &mut rng);
        for (head, offsets) in heads.iter().zip(&head_offsets) {
            Self::init_segment(head, offsets, &mut self.params, &mut rng);
        }
    }

    fn init_segment(
        segment: &[LayerSpec],
        offsets: &[usize],
        params: &mut [f64],
        rng: &mut ChaCha12Rng,
    ) {
        for (i, layer) in segment.iter().enumerate() {
            match *layer {
                LayerSpec::Fc { input_dim, output_dim } => {
                    // He gain for a following ReLU, LeCun otherwise.
                    let mut gain = 1.0;
                    for next in segment.iter().skip(i + 1) {
                        match next {
                            LayerSpec::Dropout { .. } => continue,
                            LayerSpec::Relu { .. } => gain = 2.0,
                            _ => {}
                        }
                        break;
                    }
                    let std = (gain / input_dim as f64).sqrt();
                    let off = offsets[i];
                    for w in params[off..off + output_dim * input_dim].iter_mut() {
                        *w = rng.sample::<f64, _>(StandardNormal) * std;
                    }
                }
                LayerSpec::ResidualFcBlock { width } => {
                    let std = (2.0 / width as f64).sqrt();
                    let off = offsets[i];
                    for w in params[off..off + width * width].iter_mut() {
                        *w = rng.sample::<f64, _>(StandardNormal) * std;
                    }
                }
                _ => {}
            }
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn body_output_dim(&self) -> usize {
        self.body_output_dim
    }

    pub fn head_count(&self) -> usize {
        self.heads.len()
    }

    pub fn head_output_dim(&self, head: usize) -> usize {
        self.heads[head]
            .last()
            .map(|l| l.output_dim())
            .unwrap_or(self.body_output_dim)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Zeroes the parameters of the last fully-connected layer of a head.
    ///
    /// Used for variance heads so the predicted scale starts flat (logits at
    /// zero) instead of at a random function of the input; gradients still
    /// flow to the earlier head layers.
    pub fn zero_head_output_layer(&mut self, head: usize) {
        let specs = &self.heads[head];
        let offsets = &self.head_offsets[head];
        for (layer, &off) in specs.iter().zip(offsets).rev() {
            if let LayerSpec::Fc { .. } = layer {
                self.params[off..off + layer.param_count()].fill(0.0);
                return;
            }
        }
    }

    fn weight_view(&self, off: usize, rows: usize, cols: usize) -> DMatrixView<'_, f64> {
        DMatrixView::from_slice(&self.params[off..off + rows * cols], rows, cols)
    }

    fn run_segment(
        &self,
        segment: &[LayerSpec],
        offsets: &[usize],
        input: DMatrix<f64>,
        mode: Mode,
        rng: &mut ChaCha12Rng,
        traces: &mut Vec<LayerTrace>,
    ) -> DMatrix<f64> {
        let mut x = input;
        for (layer, &off) in segment.iter().zip(offsets) {
            x = match *layer {
                LayerSpec::Fc { input_dim, output_dim } => {
                    let w = self.weight_view(off, output_dim, input_dim);
                    let b = &self.params[off + output_dim * input_dim..off + layer.param_count()];
                    let mut y = &x * w.transpose();
                    for (j, bj) in b.iter().enumerate() {
                        y.column_mut(j).add_scalar_mut(*bj);
                    }
                    traces.push(LayerTrace::Fc { input: x });
                    y
                }
                LayerSpec::Selu { .. } => {
                    let y = x.map(|v| {
                        if v > 0.0 {
                            SELU_LAMBDA * v
                        } else {
                            SELU_LAMBDA * SELU_ALPHA * (v.exp() - 1.0)
                        }
                    });
                    traces.push(LayerTrace::Selu { input: x });
                    y
                }
                LayerSpec::Relu { .. } => {
                    let y = x.map(|v| v.max(0.0));
                    traces.push(LayerTrace::Relu { input: x });
                    y
                }
                LayerSpec::Dropout { p, .. } => {
                    if mode == Mode::Train && p > 0.0 {
                        let keep = 1.0 - p;
                        let mask = DMatrix::from_fn(x.nrows(), x.ncols(), |_, _| {
                            if rng.random::<f64>() < keep {
                                1.0 / keep
                            } else {
                                0.0
                            }
                        });
                        let y = x.component_mul(&mask);
                        traces.push(LayerTrace::Dropout { mask: Some(mask) });
                        y
                    } else {
                        traces.push(LayerTrace::Dropout { mask: None });
                        x
                    }
                }
                LayerSpec::ResidualFcBlock { width } => {
                    let w = self.weight_view(off, width, width);
                    let b = &self.params[off + width * width..off + layer.param_count()];
                    let mut pre = &x * w.transpose();
                    for (j, bj) in b.iter().enumerate() {
                        pre.column_mut(j).add_scalar_mut(*bj);
                    }
                    let y = &x + pre.map(|v| v.max(0.0));
                    traces.push(LayerTrace::Residual { input: x, pre });
                    y
                }
            };
        }
        x
    }

    /// Runs the body and every head on a batch (rows are samples).
    ///
    /// Returns per-head outputs and the activation trace needed by
    /// [`MlpModel::backward`]. Dropout masks are sampled from `rng` in train
    /// mode only.
    pub fn forward(
        &self,
        input: &DMatrix<f64>,
        mode: Mode,
        rng: &mut ChaCha12Rng,
    ) -> Result<(Vec<DMatrix<f64>>, Trace)> {
        if input.ncols() != self.input_dim {
            return Err(Error::DimMismatch { expected: self.input_dim, got: input.ncols() });
        }
        let mut body_traces = Vec::with_capacity(self.body.len());
        let body_out =
            self.run_segment(&self.body, &self.body_offsets, input.clone(), mode, rng, &mut body_traces);

        let mut outputs = Vec::with_capacity(self.heads.len());
        let mut head_traces = Vec::with_capacity(self.heads.len());
        for (head, offsets) in self.heads.iter().zip(&self.head_offsets) {
            let mut traces = Vec::with_capacity(head.len());
            let out = self.run_segment(head, offsets, body_out.clone(), mode, rng, &mut traces);
            outputs.push(out);
            head_traces.push(traces);
        }

        Ok((
            outputs,
            Trace {
                body: body_traces,
                body_output_dim: self.body_output_dim,
                heads: head_traces,
                batch: input.nrows(),
            },
        ))
    }

    /// Convenience single-sample eval-mode forward.
    pub fn forward_eval_single(&self, input: &DVector<f64>) -> Result<Vec<DVector<f64>>> {
        use rand::SeedableRng;
        let mut rng = ChaCha12Rng::seed_from_u64(0);
        let batch = DMatrix::from_fn(1, input.len(), |_, j| input[j]);
        let (outputs, _) = self.forward(&batch, Mode::Eval, &mut rng)?;
        Ok(outputs.into_iter().map(|m| m.row(0).transpose().into_owned()).collect())
    }

    fn backward_segment(
        &self,
        segment: &[LayerSpec],
        offsets: &[usize],
        traces: &[LayerTrace],
        mut d_out: DMatrix<f64>,
        grads: &mut [f64],
    ) -> DMatrix<f64> {
        for ((layer, &off), trace) in segment.iter().zip(offsets).zip(traces).rev() {
            d_out = match (layer, trace) {
                (&LayerSpec::Fc { input_dim, output_dim }, LayerTrace::Fc { input }) => {
                    let w = self.weight_view(off, output_dim, input_dim);
                    let d_w = d_out.transpose() * input;
                    let d_in = &d_out * w;
                    let g = &mut grads[off..off + layer.param_count()];
                    g[..output_dim * input_dim].copy_from_slice(d_w.as_slice());
                    for j in 0..output_dim {
                        g[output_dim * input_dim + j] = d_out.column(j).sum();
                    }
                    d_in
                }
                (LayerSpec::Selu { .. }, LayerTrace::Selu { input }) => d_out.zip_map(input, |g, v| {
                    if v > 0.0 {
                        g * SELU_LAMBDA
                    } else {
                        g * SELU_LAMBDA * SELU_ALPHA * v.exp()
                    }
                }),
                (LayerSpec::Relu { .. }, LayerTrace::Relu { input }) => {
                    d_out.zip_map(input, |g, v| if v > 0.0 { g } else { 0.0 })
                }
                (LayerSpec::Dropout { .. }, LayerTrace::Dropout { mask }) => match mask {
                    Some(m) => d_out.component_mul(m),
                    None => d_out,
                },
                (&LayerSpec::ResidualFcBlock { width }, LayerTrace::Residual { input, pre }) => {
                    let w = self.weight_view(off, width, width);
                    let d_act = d_out.zip_map(pre, |g, z| if z > 0.0 { g } else { 0.0 });
                    let d_w = d_act.transpose() * input;
                    let d_in = &d_out + &d_act * w;
                    let g = &mut grads[off..off + layer.param_count()];
                    g[..width * width].copy_from_slice(d_w.as_slice());
                    for j in 0..width {
                        g[width * width + j] = d_act.column(j).sum();
                    }
                    d_in
                }
                _ => unreachable!("trace out of sync with layer specs"),
            };
        }
        d_out
    }

    /// Exact chain rule through the trace of a matching forward pass.
    ///
    /// `head_grads` holds the loss gradient with respect to each head output;
    /// gradients from every head accumulate into the shared body. Returns the
    /// gradient over the flat parameter vector.
    pub fn backward(&self, trace: &Trace, head_grads: &[DMatrix<f64>]) -> Result<Vec<f64>> {
        self.backward_scaled(trace, head_grads, 1.0)
    }

    /// [`MlpModel::backward`] with the accumulated body gradient scaled by
    /// `body_scale` (see [`HeadReduction`]). Head parameters always receive
    /// their full-scale gradients.
    pub fn backward_scaled(
        &self,
        trace: &Trace,
        head_grads: &[DMatrix<f64>],
        body_scale: f64,
    ) -> Result<Vec<f64>> {
        if head_grads.len() != self.heads.len() {
            return Err(Error::LengthMismatch { left: head_grads.len(), right: self.heads.len() });
        }
        let mut grads = vec![0.0; self.params.len()];
        let mut d_body_out = DMatrix::zeros(trace.batch, trace.body_output_dim);
        for (i, ((head, offsets), traces)) in self
            .heads
            .iter()
            .zip(&self.head_offsets)
            .zip(&trace.heads)
            .enumerate()
        {
            let d_head_in =
                self.backward_segment(head, offsets, traces, head_grads[i].clone(), &mut grads);
            d_body_out += d_head_in;
        }
        if body_scale != 1.0 {
            d_body_out *= body_scale;
        }
        self.backward_segment(&self.body, &self.body_offsets, &trace.body, d_body_out, &mut grads);
        Ok(grads)
    }

    /// Serializes the model as a versioned JSON checkpoint.
    pub fn save_checkpoint<W: Write>(&self, writer: W) -> Result<()> {
        let file = CheckpointFile {
            version: CHECKPOINT_VERSION,
            input_dim: self.input_dim,
            seed: self.seed,
            body: self.body.clone(),
            heads: self.heads.clone(),
            params: self.params.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    /// Restores a model from a checkpoint, bit-exactly.
    pub fn load_checkpoint<R: Read>(reader: R) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_reader(reader)?;
        if file.version != CHECKPOINT_VERSION {
            return Err(Error::InvalidConfig(format!(
                "unsupported checkpoint version {}",
                file.version
            )));
        }
        let mut model = MlpModel::new(file.input_dim, file.body, file.heads, file.seed)?;
        if file.params.len() != model.params.len() {
            return Err(Error::DimMismatch {
                expected: model.params.len(),
                got: file.params.len(),
            });
        }
        model.params = file.params;
        Ok(model)
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    version: u32,
    input_dim: usize,
    seed: u64,
    body: Vec<LayerSpec>,
    heads: Vec<Vec<LayerSpec>>,
    params: Vec<f64>,
}

/// Result of a finite-difference gradient check.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    pub checked: usize,
}

/// Central-difference gradient check over a random parameter subset.
///
/// `loss` maps head outputs to a scalar plus its gradients with respect to
/// each head output. Dropout must be disabled (the check runs in eval mode).
pub fn grad_check<L>(
    model: &MlpModel,
    input: &DMatrix<f64>,
    loss: &L,
    fraction: f64,
    step: f64,
    rng: &mut ChaCha12Rng,
) -> Result<GradCheckReport>
where
    L: Fn(&[DMatrix<f64>]) -> (f64, Vec<DMatrix<f64>>),
{
    let (outputs, trace) = model.forward(input, Mode::Eval, rng)?;
    let (_, head_grads) = loss(&outputs);
    let analytic = model.backward(&trace, &head_grads)?;

    let n = model.param_count();
    let checked = ((n as f64 * fraction).ceil() as usize).clamp(1, n);
    let mut indices: Vec<usize> = (0..n).collect();
    for i in 0..checked {
        let j = i + (rng.random::<u64>() as usize) % (n - i);
        indices.swap(i, j);
    }

    let mut scratch = model.clone();
    let mut max_rel = 0.0f64;
    for &idx in &indices[..checked] {
        let original = scratch.params[idx];
        scratch.params[idx] = original + step;
        let (out_plus, _) = scratch.forward(input, Mode::Eval, rng)?;
        let plus = loss(&out_plus).0;
        scratch.params[idx] = original - step;
        let (out_minus, _) = scratch.forward(input, Mode::Eval, rng)?;
        let minus = loss(&out_minus).0;
        scratch.params[idx] = original;

        let numeric = (plus - minus) / (2.0 * step);
        let a = analytic[idx];
        if a.abs() < 1e-7 && numeric.abs() < 1e-7 {
            continue;
        }
        let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
        max_rel = max_rel.max(rel);
    }
    Ok(GradCheckReport { max_relative_error: max_rel, checked })
}

/// Named finite-difference checks covering every layer kind and both NLL
/// losses (the 1D Gaussian and the rotation loss through normalization and
/// the logarithmic map).
pub fn standard_grad_checks(seed: u64) -> Result<Vec<(String, GradCheckReport)>> {
    use crate::so3::random_rotation;
    use nalgebra::{Vector3, Vector4};
    use rand::SeedableRng;

    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::new();

    let fc = |i: usize, o: usize| LayerSpec::Fc { input_dim: i, output_dim: o };
    let input = DMatrix::from_fn(2, 3, |i, j| 0.3 * (i as f64 + 1.0) - 0.2 * j as f64);
    let targets = [0.7, -0.4];

    let mse_loss = |outs: &[DMatrix<f64>]| {
        let o = &outs[0];
        let mut value = 0.0;
        let mut grad = DMatrix::zeros(o.nrows(), o.ncols());
        for r in 0..o.nrows() {
            let (v, d) = loss::mse(o[(r, 0)], targets[r]);
            value += v;
            grad[(r, 0)] = d;
        }
        (value, vec![grad])
    };

    let checks: Vec<(&str, MlpModel)> = vec![
        (
            "fc_selu_mse",
            MlpModel::new(
                3,
                vec![fc(3, 8), LayerSpec::Selu { dim: 8 }, fc(8, 8), LayerSpec::Selu { dim: 8 }],
                vec![vec![fc(8, 1)]],
                rng.random(),
            )?,
        ),
        (
            "fc_relu_mse",
            MlpModel::new(
                3,
                vec![fc(3, 8), LayerSpec::Relu { dim: 8 }],
                vec![vec![fc(8, 1)]],
                rng.random(),
            )?,
        ),
        (
            "dropout_mse",
            MlpModel::new(
                3,
                vec![fc(3, 8), LayerSpec::Selu { dim: 8 }, LayerSpec::Dropout { dim: 8, p: 0.5 }],
                vec![vec![fc(8, 1)]],
                rng.random(),
            )?,
        ),
        (
            "residual_block_mse",
            MlpModel::new(
                3,
                vec![fc(3, 6), LayerSpec::ResidualFcBlock { width: 6 }, LayerSpec::ResidualFcBlock { width: 6 }],
                vec![vec![fc(6, 1)]],
                rng.random(),
            )?,
        ),
    ];
    for (name, model) in checks {
        let report = grad_check(&model, &input, &mse_loss, 1.0, 1e-5, &mut rng)?;
        out.push((name.to_string(), report));
    }

    // Four SELU layers with a mean-plus-log-sigma head under the 1D NLL.
    let model = MlpModel::new(
        3,
        vec![
            fc(3, 8),
            LayerSpec::Selu { dim: 8 },
            fc(8, 8),
            LayerSpec::Selu { dim: 8 },
            fc(8, 8),
            LayerSpec::Selu { dim: 8 },
        ],
        vec![vec![fc(8, 8), LayerSpec::Selu { dim: 8 }, fc(8, 2)]],
        rng.random(),
    )?;
    let nll_loss = |outs: &[DMatrix<f64>]| {
        let o = &outs[0];
        let mut value = 0.0;
        let mut grad = DMatrix::zeros(o.nrows(), o.ncols());
        for r in 0..o.nrows() {
            let (v, dp, du) = loss::gaussian_nll_1d(o[(r, 0)], o[(r, 1)], targets[r]);
            value += v;
            grad[(r, 0)] = dp;
            grad[(r, 1)] = du;
        }
        (value, vec![grad])
    };
    let report = grad_check(&model, &input, &nll_loss, 1.0, 1e-5, &mut rng)?;
    out.push(("selu_gaussian_nll_1d".to_string(), report));

    // Rotation NLL through quaternion normalization and the log map, with a
    // shared covariance head.
    let model = MlpModel::new(
        6,
        vec![fc(6, 12), LayerSpec::Relu { dim: 12 }],
        vec![
            vec![fc(12, 3)],
            vec![fc(12, 8), LayerSpec::Relu { dim: 8 }, fc(8, 4)],
            vec![fc(12, 8), LayerSpec::Relu { dim: 8 }, fc(8, 4)],
        ],
        rng.random(),
    )?;
    let so3_input = DMatrix::from_fn(2, 6, |i, j| 0.25 * (i as f64 - 0.5) + 0.1 * j as f64);
    let target = random_rotation(&mut rng);
    let so3_loss = move |outs: &[DMatrix<f64>]| {
        let mut value = 0.0;
        let mut grads: Vec<DMatrix<f64>> =
            outs.iter().map(|o| DMatrix::zeros(o.nrows(), o.ncols())).collect();
        for r in 0..outs[0].nrows() {
            let logits = Vector3::new(outs[0][(r, 0)], outs[0][(r, 1)], outs[0][(r, 2)]);
            for h in 1..outs.len() {
                let raw = Vector4::new(
                    outs[h][(r, 0)],
                    outs[h][(r, 1)],
                    outs[h][(r, 2)],
                    outs[h][(r, 3)],
                );
                let (v, d_raw, d_logits) =
                    loss::so3_nll_loss(&raw, &logits, &target).expect("non-degenerate raw output");
                value += v;
                for k in 0..4 {
                    grads[h][(r, k)] += d_raw[k];
                }
                for k in 0..3 {
                    grads[0][(r, k)] += d_logits[k];
                }
            }
        }
        (value, grads)
    };
    let report = grad_check(&model, &so3_input, &so3_loss, 1.0, 1e-5, &mut rng)?;
    out.push(("so3_nll_quat_heads".to_string(), report));

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    fn rng(seed: u64) -> ChaCha12Rng {
        ChaCha12Rng::seed_from_u64(seed)
    }

    fn small_model(seed: u64) -> MlpModel {
        MlpModel::new(
            2,
            vec![LayerSpec::Fc { input_dim: 2, output_dim: 8 }, LayerSpec::Selu { dim: 8 }],
            vec![
                vec![LayerSpec::Fc { input_dim: 8, output_dim: 1 }],
                vec![LayerSpec::Fc { input_dim: 8, output_dim: 1 }],
            ],
            seed,
        )
        .unwrap()
    }

    #[test]
    fn param_count_matches_layout() {
        let m = small_model(0);
        assert_eq!(m.param_count(), (2 * 8 + 8) + 2 * (8 + 1));
    }

    #[test]
    fn dim_mismatch_detected() {
        let err = MlpModel::new(
            3,
            vec![LayerSpec::Fc { input_dim: 2, output_dim: 4 }],
            vec![vec![]],
            0,
        )
        .unwrap_err();
        assert!(matches!(err, Error::DimMismatch { expected: 3, got: 2 }));
    }

    #[test]
    fn zero_weights_give_bias_only_outputs() {
        let mut m = small_model(1);
        for p in m.params_mut() {
            *p = 0.0;
        }
        let input = DMatrix::from_row_slice(2, 2, &[0.5, -1.0, 2.0, 3.0]);
        let (out, _) = m.forward(&input, Mode::Eval, &mut rng(0)).unwrap();
        assert!(out.iter().all(|o| o.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn dropout_p_zero_train_equals_eval() {
        let m = MlpModel::new(
            2,
            vec![
                LayerSpec::Fc { input_dim: 2, output_dim: 6 },
                LayerSpec::Selu { dim: 6 },
                LayerSpec::Dropout { dim: 6, p: 0.0 },
            ],
            vec![vec![LayerSpec::Fc { input_dim: 6, output_dim: 1 }]],
            7,
        )
        .unwrap();
        let input = DMatrix::from_row_slice(3, 2, &[0.1, 0.2, -0.4, 0.9, 1.5, -2.0]);
        let (train_out, _) = m.forward(&input, Mode::Train, &mut rng(5)).unwrap();
        let (eval_out, _) = m.forward(&input, Mode::Eval, &mut rng(6)).unwrap();
        assert_eq!(train_out[0], eval_out[0]);
    }

    #[test]
    fn forward_is_deterministic_under_seed() {
        let m = MlpModel::new(
            1,
            vec![
                LayerSpec::Fc { input_dim: 1, output_dim: 4 },
                LayerSpec::Relu { dim: 4 },
                LayerSpec::Dropout { dim: 4, p: 0.5 },
            ],
            vec![vec![LayerSpec::Fc { input_dim: 4, output_dim: 1 }]],
            3,
        )
        .unwrap();
        let input = DMatrix::from_row_slice(4, 1, &[0.1, 0.7, -0.3, 2.0]);
        let (a, _) = m.forward(&input, Mode::Train, &mut rng(11)).unwrap();
        let (b, _) = m.forward(&input, Mode::Train, &mut rng(11)).unwrap();
        assert_eq!(a[0], b[0]);
    }

    #[test]
    fn zero_output_grads_give_zero_param_grads() {
        let m = small_model(2);
        let input = DMatrix::from_row_slice(2, 2, &[0.3, 0.4, -0.1, 0.8]);
        let (out, trace) = m.forward(&input, Mode::Eval, &mut rng(0)).unwrap();
        let zeros: Vec<DMatrix<f64>> =
            out.iter().map(|o| DMatrix::zeros(o.nrows(), o.ncols())).collect();
        let grads = m.backward(&trace, &zeros).unwrap();
        assert!(grads.iter().all(|g| *g == 0.0));
    }

    #[test]
    fn two_identical_heads_double_the_body_gradient() {
        let mut m = small_model(4);
        // Make the two heads bit-identical so their losses coincide.
        let body_params = 2 * 8 + 8;
        let head_params = 8 + 1;
        let head0: Vec<f64> =
            m.params()[body_params..body_params + head_params].to_vec();
        m.params_mut()[body_params + head_params..body_params + 2 * head_params]
            .copy_from_slice(&head0);

        let input = DMatrix::from_row_slice(1, 2, &[0.6, -0.2]);
        let (out, trace) = m.forward(&input, Mode::Eval, &mut rng(0)).unwrap();
        let ones: Vec<DMatrix<f64>> =
            out.iter().map(|o| DMatrix::from_element(o.nrows(), o.ncols(), 1.0)).collect();
        let both = m.backward(&trace, &ones).unwrap();
        let single = m.backward(&trace, &[ones[0].clone(), DMatrix::zeros(1, 1)]).unwrap();
        for k in 0..body_params {
            assert!((both[k] - 2.0 * single[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn residual_block_with_zero_weights_is_identity() {
        let mut m = MlpModel::new(
            3,
            vec![LayerSpec::ResidualFcBlock { width: 3 }],
            vec![vec![]],
            9,
        )
        .unwrap();
        for p in m.params_mut() {
            *p = 0.0;
        }
        let input = DMatrix::from_row_slice(2, 3, &[0.1, -0.5, 2.0, -1.0, 0.0, 0.3]);
        let (out, _) = m.forward(&input, Mode::Eval, &mut rng(0)).unwrap();
        assert_eq!(out[0], input);
    }

    #[test]
    fn inverted_dropout_preserves_expectation() {
        // Average train-mode outputs of a dropout layer over many masks and
        // compare with the mask-free eval output (linear probe). Positive
        // weights keep the per-term contributions from canceling, so the
        // Monte-Carlo noise stays well below the asserted 2%.
        let mut m = MlpModel::new(
            1,
            vec![LayerSpec::Fc { input_dim: 1, output_dim: 16 }, LayerSpec::Dropout { dim: 16, p: 0.4 }],
            vec![vec![LayerSpec::Fc { input_dim: 16, output_dim: 1 }]],
            13,
        )
        .unwrap();
        for p in m.params_mut() {
            *p = 0.3;
        }
        let input = DMatrix::from_row_slice(1, 1, &[1.3]);
        let (eval_out, _) = m.forward(&input, Mode::Eval, &mut rng(0)).unwrap();
        let mut r = rng(77);
        let n = 10_000;
        let mut acc = 0.0;
        for _ in 0..n {
            let (out, _) = m.forward(&input, Mode::Train, &mut r).unwrap();
            acc += out[0][(0, 0)];
        }
        let mean = acc / n as f64;
        let reference = eval_out[0][(0, 0)];
        assert!(
            (mean - reference).abs() <= 0.02 * reference.abs().max(0.1),
            "mean {mean} vs eval {reference}"
        );
    }

    #[test]
    fn checkpoint_roundtrip_is_bit_exact() {
        let m = MlpModel::new(
            2,
            vec![
                LayerSpec::Fc { input_dim: 2, output_dim: 5 },
                LayerSpec::Selu { dim: 5 },
                LayerSpec::ResidualFcBlock { width: 5 },
                LayerSpec::Dropout { dim: 5, p: 0.1 },
            ],
            vec![vec![LayerSpec::Fc { input_dim: 5, output_dim: 4 }]],
            21,
        )
        .unwrap();
        let mut buf = Vec::new();
        m.save_checkpoint(&mut buf).unwrap();
        let restored = MlpModel::load_checkpoint(buf.as_slice()).unwrap();
        assert_eq!(m.params(), restored.params());
        assert_eq!(m.seed(), restored.seed());

        let mut buf2 = Vec::new();
        restored.save_checkpoint(&mut buf2).unwrap();
        assert_eq!(buf, buf2);
    }

    #[test]
    fn small_rate_training_loss_is_monotone() {
        // Full-batch gradient descent at eta = 1e-3 on a tiny fixed dataset
        // never increases the loss.
        let m = MlpModel::new(
            1,
            vec![LayerSpec::Fc { input_dim: 1, output_dim: 6 }, LayerSpec::Selu { dim: 6 }],
            vec![vec![LayerSpec::Fc { input_dim: 6, output_dim: 1 }]],
            55,
        )
        .unwrap();
        let mut model = m;
        let input = DMatrix::from_row_slice(4, 1, &[0.0, 0.3, 0.6, 1.0]);
        let targets = [0.1, -0.2, 0.4, 0.9];
        let loss_and_grad = |outs: &[DMatrix<f64>]| {
            let o = &outs[0];
            let mut value = 0.0;
            let mut grad = DMatrix::zeros(4, 1);
            for r in 0..4 {
                let d = o[(r, 0)] - targets[r];
                value += d * d / 4.0;
                grad[(r, 0)] = 2.0 * d / 4.0;
            }
            (value, vec![grad])
        };
        let mut optimizer = Optimizer::new(OptimizerKind::SgdMomentum, 1e-3, 0.0, model.param_count()).unwrap();
        let mut previous = f64::INFINITY;
        let mut r = rng(0);
        for _ in 0..200 {
            let (outs, trace) = model.forward(&input, Mode::Eval, &mut r).unwrap();
            let (value, grads_out) = loss_and_grad(&outs);
            assert!(value <= previous + 1e-12, "loss rose from {previous} to {value}");
            previous = value;
            let grads = model.backward(&trace, &grads_out).unwrap();
            optimizer.step(model.params_mut(), &grads);
        }
    }

    #[test]
    fn standard_grad_check_battery_passes() {
        let checks = standard_grad_checks(17).unwrap();
        assert_eq!(checks.len(), 6);
        for (name, report) in checks {
            assert!(
                report.max_relative_error < 1e-4,
                "{name}: max relative error {}",
                report.max_relative_error
            );
        }
    }

    #[test]
    fn linear_model_mse_gradcheck_is_exact() {
        let m = MlpModel::new(
            3,
            vec![LayerSpec::Fc { input_dim: 3, output_dim: 2 }],
            vec![vec![LayerSpec::Fc { input_dim: 2, output_dim: 1 }]],
            33,
        )
        .unwrap();
        let input = DMatrix::from_row_slice(2, 3, &[0.2, -0.4, 1.0, 0.9, 0.1, -0.6]);
        let target = [0.7, -0.3];
        let loss = |outs: &[DMatrix<f64>]| {
            let o = &outs[0];
            let mut value = 0.0;
            let mut grad = DMatrix::zeros(o.nrows(), o.ncols());
            for r in 0..o.nrows() {
                let d = o[(r, 0)] - target[r];
                value += d * d;
                grad[(r, 0)] = 2.0 * d;
            }
            (value, vec![grad])
        };
        let report = grad_check(&m, &input, &loss, 1.0, 1e-5, &mut rng(1)).unwrap();
        assert!(report.max_relative_error < 1e-8, "{}", report.max_relative_error);
    }
}
