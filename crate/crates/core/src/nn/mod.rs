//! Small differentiable kernels: 3D convolution, activations, losses and Adam.

mod container;
mod conv;

pub use container::{load_params, read_params, save_params, write_params, ParamManifest, TensorEntry, PARAMS_VERSION};
pub use conv::{conv3d_backward, conv3d_forward, conv3d_input_grad, conv3d_param_grads, Conv3Grads, Conv3Params};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::geometry::Pose;

/// Multi-channel voxel field, channel-major then x-fastest spatial order.
#[derive(Debug, Clone, PartialEq)]
pub struct Field4 {
    pub channels: usize,
    pub dim: usize,
    pub values: Vec<f64>,
}

impl Field4 {
    pub fn zeros(channels: usize, dim: usize) -> Self {
        Self { channels, dim, values: vec![0.0; channels * dim * dim * dim] }
    }

    pub fn new(channels: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(invalid("field needs at least one channel"));
        }
        if values.len() != channels * dim * dim * dim {
            return Err(Error::ShapeMismatch(format!(
                "{channels}×{dim}³ field needs {} values, got {}",
                channels * dim * dim * dim,
                values.len()
            )));
        }
        Ok(Self { channels, dim, values })
    }

    /// Stacks equally sized single-channel volumes.
    pub fn stack(channels: &[&[f64]], dim: usize) -> Result<Self> {
        let mut values = Vec::with_capacity(channels.len() * dim * dim * dim);
        for c in channels {
            values.extend_from_slice(c);
        }
        Self::new(channels.len(), dim, values)
    }

    #[inline]
    pub fn spatial_len(&self) -> usize {
        self.dim * self.dim * self.dim
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let n = self.spatial_len();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.spatial_len();
        &mut self.values[c * n..(c + 1) * n]
    }

    #[inline]
    pub fn get(&self, c: usize, x: usize, y: usize, z: usize) -> f64 {
        let d = self.dim;
        self.values[c * self.spatial_len() + (z * d + y) * d + x]
    }

    pub fn set(&mut self, c: usize, x: usize, y: usize, z: usize, v: f64) {
        let d = self.dim;
        let n = self.spatial_len();
        self.values[c * n + (z * d + y) * d + x] = v;
    }

    pub fn dot(&self, other: &Self) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum()
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self { channels: self.channels, dim: self.dim, values: self.values.iter().map(|&v| f(v)).collect() }
    }
}

#[inline]
pub fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

pub fn sigmoid(x: &Field4) -> Field4 {
    x.map(sigmoid_scalar)
}

/// Backward of [`sigmoid`] given its output `y`.
pub fn sigmoid_backward(y: &Field4, dy: &Field4) -> Field4 {
    let values = y.values.iter().zip(&dy.values).map(|(&s, &g)| g * s * (1.0 - s)).collect();
    Field4 { channels: y.channels, dim: y.dim, values }
}

pub fn relu(x: &Field4) -> Field4 {
    x.map(|v| v.max(0.0))
}

/// Backward of [`relu`] given its input `x`; the subgradient at 0 is 0.
pub fn relu_backward(x: &Field4, dy: &Field4) -> Field4 {
    let values = x.values.iter().zip(&dy.values).map(|(&v, &g)| if v > 0.0 { g } else { 0.0 }).collect();
    Field4 { channels: x.channels, dim: x.dim, values }
}

pub const BCE_EPS: f64 = 1e-7;

fn check_len(a: usize, b: usize, what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("{what}: {a} vs {b} elements")));
    }
    if a == 0 {
        return Err(invalid(format!("{what}: empty input")));
    }
    Ok(())
}

/// Mean binary cross-entropy and its gradient with respect to `pred`.
/// Predictions are clamped to `[ε, 1−ε]`.
pub fn bce_loss(pred: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(pred.len(), target.len(), "bce")?;
    let n = pred.len() as f64;
    let mut loss = 0.0;
    let grad = pred
        .iter()
        .zip(target)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_EPS, 1.0 - BCE_EPS);
            loss -= t * p.ln() + (1.0 - t) * (1.0 - p).ln();
            -(t / p - (1.0 - t) / (1.0 - p)) / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Mean binary cross-entropy of `sigmoid(z)` computed from logits, with its
/// gradient `(sigmoid(z) − t)/N` with respect to `z`. Stable for any `z`.
pub fn bce_with_logits(z: &[f64], target: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(z.len(), target.len(), "bce")?;
    let n = z.len() as f64;
    let mut loss = 0.0;
    let grad = z
        .iter()
        .zip(target)
        .map(|(&z, &t)| {
            loss += z.max(0.0) - z * t + (-z.abs()).exp().ln_1p();
            (sigmoid_scalar(z) - t) / n
        })
        .collect();
    Ok((loss / n, grad))
}

/// Weights of the pose regression loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseLossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl Default for PoseLossWeights {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 0.01, gamma: 1.0 }
    }
}

/// Angle mapped to `[0, 1)` turns.
pub fn normalized_angle(theta: f64) -> f64 {
    crate::geometry::wrap_angle(theta) / std::f64::consts::TAU
}

/// Difference of two normalized angles wrapped into `[−0.5, 0.5)`.
fn wrapped_turns(a: f64, b: f64) -> f64 {
    let d = normalized_angle(a) - normalized_angle(b);
    d - (d + 0.5).floor()
}

/// Weighted L1 pose loss and its gradient with respect to `est`. Angles are
/// compared as wrapped fractions of a turn; the gradient is taken in radians.
pub fn l1_pose_loss(est: &Pose, gt: &Pose, w: &PoseLossWeights) -> Result<(f64, [f64; 6])> {
    if !(w.alpha > 0.0 && w.beta > 0.0 && w.gamma > 0.0) {
        return Err(invalid("pose loss weights must be positive"));
    }
    let sign = |d: f64| {
        if d > 0.0 {
            1.0
        } else if d < 0.0 {
            -1.0
        } else {
            0.0
        }
    };
    let mut loss = 0.0;
    let mut grad = [0.0; 6];
    for (i, g) in grad.iter_mut().take(3).enumerate() {
        let d = wrapped_turns(est.theta[i], gt.theta[i]);
        loss += w.alpha * d.abs();
        *g = w.alpha * sign(d) / std::f64::consts::TAU;
    }
    for (i, (a, b)) in [(est.tu, gt.tu), (est.tv, gt.tv)].into_iter().enumerate() {
        loss += w.beta * (a - b).abs();
        grad[3 + i] = w.beta * sign(a - b);
    }
    loss += w.gamma * (est.tz - gt.tz).abs();
    grad[5] = w.gamma * sign(est.tz - gt.tz);
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter vector.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self { step: 0, m: vec![0.0; len], v: vec![0.0; len] }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() || state.v.len() != params.len() {
        return Err(Error::ShapeMismatch(format!(
            "adam: {} params, {} grads, state for {}",
            params.len(),
            grads.len(),
            state.m.len()
        )));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
        state.v[i] = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
        let mh = state.m[i] / c1;
        let vh = state.v[i] / c2;
        params[i] -= cfg.lr * mh / (vh.sqrt() + cfg.eps);
    }
    Ok(())
}
