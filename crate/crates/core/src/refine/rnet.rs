//! Toy 3D-convolutional refiner with a logit-space residual connection.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::probability_maps;
use crate::error::{invalid, Error, Result};
use crate::nn::{
    adam_step, bce_with_logits, conv3d_forward, conv3d_input_grad, conv3d_param_grads, load_params, logit, relu,
    relu_backward, save_params, sigmoid_scalar, AdamConfig, AdamState, Conv3Grads, Conv3Params, Field4, ParamManifest,
    TensorEntry,
};
use crate::rng;
use crate::voxelgrid::{iou, HullGrid, VoxelGrid, IOU_THRESHOLD};

/// Number of input channels: `V`, `H`, `V⊙(1−H)` and `H⊙(1−V)`.
pub const INPUT_CHANNELS: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefinerConfig {
    /// Channel counts from input to output, e.g. `[4, 8, 8, 8, 1]`.
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Clamp applied to `V` before taking its logit for the residual path.
    pub residual_eps: f64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        Self {
            channels: vec![4, 8, 8, 8, 1],
            kernel: 3,
            lr: 1e-4,
            epochs: 10,
            batch_size: 4,
            seed: 0,
            residual_eps: 1e-3,
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.len() < 2 {
            return Err(invalid("refiner needs at least one layer"));
        }
        if self.channels[0] != INPUT_CHANNELS || *self.channels.last().unwrap() != 1 {
            return Err(invalid(format!(
                "refiner channels must start at {INPUT_CHANNELS} and end at 1, got {:?}",
                self.channels
            )));
        }
        if self.channels.contains(&0) {
            return Err(invalid("refiner layers need at least one channel"));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch size must be at least 1"));
        }
        if !(self.residual_eps > 0.0 && self.residual_eps < 0.5) {
            return Err(invalid(format!("residual_eps must lie in (0, 0.5), got {}", self.residual_eps)));
        }
        Conv3Params::zeros(1, 1, self.kernel).map(|_| ())
    }
}

/// Refiner weights together with the architecture they belong to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinerParams {
    pub channels: Vec<usize>,
    pub kernel: usize,
    pub residual_eps: f64,
    pub layers: Vec<Conv3Params>,
}

#[derive(Serialize, Deserialize)]
struct Architecture {
    channels: Vec<usize>,
    kernel: usize,
    residual_eps: f64,
}

impl RefinerParams {
    /// He-initialized hidden layers and an all-zero output layer, so the
    /// untrained refiner returns its input unchanged.
    pub fn init(cfg: &RefinerConfig) -> Result<Self> {
        cfg.validate()?;
        let mut r = rng::stream(cfg.seed, &[0x696e6974]);
        let n = cfg.channels.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (cin, cout) = (cfg.channels[l], cfg.channels[l + 1]);
                if l + 1 == n {
                    Conv3Params::zeros(cin, cout, cfg.kernel)
                } else {
                    Conv3Params::he_init(cin, cout, cfg.kernel, &mut r)
                }
            })
            .collect::<Result<_>>()?;
        Ok(Self { channels: cfg.channels.clone(), kernel: cfg.kernel, residual_eps: cfg.residual_eps, layers })
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Conv3Params::num_params).sum()
    }

    pub fn flatten(&self) -> (Vec<f64>, ParamManifest) {
        let mut values = Vec::with_capacity(self.num_params());
        let mut tensors = Vec::new();
        let k = self.kernel;
        for (l, layer) in self.layers.iter().enumerate() {
            tensors.push(TensorEntry {
                name: format!("conv{l}.weight"),
                shape: vec![layer.cout, layer.cin, k, k, k],
                offset: values.len(),
                len: layer.weights.len(),
            });
            values.extend_from_slice(&layer.weights);
            tensors.push(TensorEntry {
                name: format!("conv{l}.bias"),
                shape: vec![layer.cout],
                offset: values.len(),
                len: layer.bias.len(),
            });
            values.extend_from_slice(&layer.bias);
        }
        let meta = serde_json::to_value(Architecture {
            channels: self.channels.clone(),
            kernel: self.kernel,
            residual_eps: self.residual_eps,
        })
        .expect("architecture serializes");
        let total = values.len();
        (values, ParamManifest { total, tensors, meta })
    }

    pub fn unflatten(values: &[f64], manifest: &ParamManifest) -> Result<Self> {
        manifest.validate()?;
        let arch: Architecture = serde_json::from_value(manifest.meta.clone())?;
        let cfg = RefinerConfig {
            channels: arch.channels.clone(),
            kernel: arch.kernel,
            residual_eps: arch.residual_eps,
            ..Default::default()
        };
        cfg.validate()?;
        let mut params = Self::init(&cfg)?;
        if manifest.total != params.num_params() || values.len() != manifest.total {
            return Err(Error::Format(format!(
                "architecture {:?} needs {} parameters, file has {}",
                arch.channels,
                params.num_params(),
                values.len()
            )));
        }
        let mut off = 0;
        for layer in params.layers.iter_mut() {
            let nw = layer.weights.len();
            layer.weights.copy_from_slice(&values[off..off + nw]);
            off += nw;
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&values[off..off + nb]);
            off += nb;
        }
        for layer in &params.layers {
            layer.validate()?;
        }
        Ok(params)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let (values, manifest) = self.flatten();
        save_params(path, &values, &manifest)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let (values, manifest) = load_params(path)?;
        Self::unflatten(&values, &manifest)
    }
}

/// Intermediate values of one forward pass, kept for the backward pass.
#[derive(Debug, Clone)]
pub struct RnetTape {
    /// Input to every layer; `inputs[0]` is the 4-channel feature field.
    pub inputs: Vec<Field4>,
    /// Pre-activation outputs of every layer.
    pub pre: Vec<Field4>,
    /// `logit(clamp(V))`.
    pub base_logit: Vec<f64>,
    /// Whether `V` was clamped (the residual path has zero slope there).
    pub clamped: Vec<bool>,
    /// Final logits `z + logit(V)`.
    pub logits: Vec<f64>,
}

impl RnetTape {
    pub fn output(&self, dim: usize) -> VoxelGrid {
        let values = self.logits.iter().map(|&z| sigmoid_scalar(z)).collect();
        VoxelGrid::from_values_unchecked(dim, values)
    }
}

fn check_inputs(params: &RefinerParams, v: &VoxelGrid, h: &HullGrid) -> Result<()> {
    v.check_same_dim(h)?;
    if params.layers.first().map(|l| l.cin) != Some(INPUT_CHANNELS) {
        return Err(Error::ShapeMismatch("refiner's first layer must take 4 channels".into()));
    }
    Ok(())
}

pub fn rnet_forward_tape(params: &RefinerParams, v: &VoxelGrid, h: &HullGrid) -> Result<RnetTape> {
    check_inputs(params, v, h)?;
    let (a, b) = probability_maps(v, h)?;
    let input = Field4::stack(&[v.values(), h.values(), a.values(), b.values()], v.dim())?;
    let mut inputs = vec![input];
    let mut pre = Vec::with_capacity(params.layers.len());
    for (l, layer) in params.layers.iter().enumerate() {
        let z = conv3d_forward(&inputs[l], layer)?;
        if l + 1 < params.layers.len() {
            inputs.push(relu(&z));
        }
        pre.push(z);
    }
    let eps = params.residual_eps;
    let clamped: Vec<bool> = v.values().iter().map(|&x| x < eps || x > 1.0 - eps).collect();
    let base_logit: Vec<f64> = v.values().iter().map(|&x| logit(x.clamp(eps, 1.0 - eps))).collect();
    let z = pre.last().unwrap();
    let logits = z.values.iter().zip(&base_logit).map(|(a, b)| a + b).collect();
    Ok(RnetTape { inputs, pre, base_logit, clamped, logits })
}

/// Refined occupancy `sigmoid(z + logit(clamp(V)))`.
pub fn rnet_forward(params: &RefinerParams, v: &VoxelGrid, h: &HullGrid) -> Result<VoxelGrid> {
    Ok(rnet_forward_tape(params, v, h)?.output(v.dim()))
}

/// Gradients of one backward pass.
#[derive(Debug, Clone)]
pub struct RnetGrads {
    pub layers: Vec<Conv3Grads>,
    /// `dL/dV` and `dL/dH`, present when requested.
    pub inputs: Option<(Vec<f64>, Vec<f64>)>,
}

/// Backpropagates `dL/dlogits` through the refiner.
pub fn rnet_backward(
    params: &RefinerParams,
    tape: &RnetTape,
    v: &VoxelGrid,
    h: &HullGrid,
    dlogits: &[f64],
    want_inputs: bool,
) -> Result<RnetGrads> {
    let n_layers = params.layers.len();
    let dim = v.dim();
    let mut dz = Field4::new(1, dim, dlogits.to_vec())?;
    let mut layers = Vec::with_capacity(n_layers);
    let mut d_input = None;
    for l in (0..n_layers).rev() {
        layers.push(conv3d_param_grads(&tape.inputs[l], &params.layers[l], &dz)?);
        if l > 0 {
            let da = conv3d_input_grad(&tape.inputs[l], &params.layers[l], &dz)?;
            dz = relu_backward(&tape.pre[l - 1], &da);
        } else if want_inputs {
            d_input = Some(conv3d_input_grad(&tape.inputs[0], &params.layers[0], &dz)?);
        }
    }
    layers.reverse();
    let inputs = d_input.map(|g| {
        let (vv, hh) = (v.values(), h.values());
        let (g0, g1, g2, g3) = (g.channel(0), g.channel(1), g.channel(2), g.channel(3));
        let dv = (0..vv.len())
            .map(|i| {
                let resid = if tape.clamped[i] { 0.0 } else { dlogits[i] / (vv[i] * (1.0 - vv[i])) };
                g0[i] + g2[i] * (1.0 - hh[i]) - g3[i] * hh[i] + resid
            })
            .collect();
        let dh = (0..vv.len()).map(|i| g1[i] - g2[i] * vv[i] + g3[i] * (1.0 - vv[i])).collect();
        (dv, dh)
    });
    Ok(RnetGrads { layers, inputs })
}

/// Mean BCE of the refined grid against `target` and its gradient with
/// respect to the final logits.
pub fn rnet_loss(tape: &RnetTape, target: &VoxelGrid) -> Result<(f64, Vec<f64>)> {
    bce_with_logits(&tape.logits, target.values())
}

/// One training triple.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineSample {
    pub coarse: VoxelGrid,
    pub hull: HullGrid,
    pub target: VoxelGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub holdout_iou_coarse: f64,
    pub holdout_iou_refined: f64,
}

pub const TRAIN_LOG_HEADER: &str = "epoch,loss,holdout_iou_coarse,holdout_iou_refined";

pub fn write_train_log<W: Write>(mut w: W, log: &[EpochLog]) -> Result<()> {
    writeln!(w, "{TRAIN_LOG_HEADER}")?;
    for e in log {
        writeln!(w, "{},{:.8},{:.6},{:.6}", e.epoch, e.loss, e.holdout_iou_coarse, e.holdout_iou_refined)?;
    }
    Ok(())
}

/// Mean IoU at the evaluation threshold of coarse and refined grids.
pub fn holdout_iou(params: &RefinerParams, samples: &[RefineSample]) -> Result<(f64, f64)> {
    if samples.is_empty() {
        return Ok((f64::NAN, f64::NAN));
    }
    let (mut c, mut r) = (0.0, 0.0);
    for s in samples {
        c += iou(&s.coarse, &s.target, IOU_THRESHOLD)?;
        r += iou(&rnet_forward(params, &s.coarse, &s.hull)?, &s.target, IOU_THRESHOLD)?;
    }
    let n = samples.len() as f64;
    Ok((c / n, r / n))
}

/// Trains the refiner by Adam on mean BCE against the targets. Starts from
/// `init` when given (fine-tuning), otherwise from [`RefinerParams::init`].
/// Sample order per epoch is a seeded shuffle, so runs are reproducible.
pub fn rnet_train(
    train: &[RefineSample],
    holdout: &[RefineSample],
    cfg: &RefinerConfig,
    init: Option<RefinerParams>,
) -> Result<(RefinerParams, Vec<EpochLog>)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut params = match init {
        Some(p) => p,
        None => RefinerParams::init(cfg)?,
    };
    let adam = AdamConfig { lr: cfg.lr, ..Default::default() };
    let mut states: Vec<(AdamState, AdamState)> =
        params.layers.iter().map(|l| (AdamState::new(l.weights.len()), AdamState::new(l.bias.len()))).collect();
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng::stream(cfg.seed, &[0x7368, epoch as u64]));
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Vec<Conv3Grads>> = None;
            for &i in batch {
                let s = &train[i];
                let tape = rnet_forward_tape(&params, &s.coarse, &s.hull)?;
                let (loss, dlogits) = rnet_loss(&tape, &s.target)?;
                total += loss;
                let g = rnet_backward(&params, &tape, &s.coarse, &s.hull, &dlogits, false)?;
                match acc.as_mut() {
                    None => acc = Some(g.layers),
                    Some(a) => {
                        for (dst, src) in a.iter_mut().zip(&g.layers) {
                            dst.weights.iter_mut().zip(&src.weights).for_each(|(x, y)| *x += y);
                            dst.bias.iter_mut().zip(&src.bias).for_each(|(x, y)| *x += y);
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            for ((layer, g), (sw, sb)) in params.layers.iter_mut().zip(acc.unwrap()).zip(states.iter_mut()) {
                let gw: Vec<f64> = g.weights.iter().map(|x| x * scale).collect();
                let gb: Vec<f64> = g.bias.iter().map(|x| x * scale).collect();
                adam_step(&mut layer.weights, &gw, sw, &adam)?;
                adam_step(&mut layer.bias, &gb, sb, &adam)?;
            }
        }
        let (c, r) = holdout_iou(&params, holdout)?;
        log.push(EpochLog {
            epoch: epoch + 1,
            loss: total / train.len() as f64,
            holdout_iou_coarse: c,
            holdout_iou_refined: r,
        });
    }
    Ok((params, log))
}
