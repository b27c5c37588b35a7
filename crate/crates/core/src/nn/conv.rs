use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::Field4;
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

/// Weights `Cout×Cin×k³` (kernel index x fastest) and biases `Cout` of a 3D
/// convolution with stride 1 and zero "same" padding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conv3Params {
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Conv3Params {
    pub fn zeros(cin: usize, cout: usize, k: usize) -> Result<Self> {
        if ![1, 3, 5].contains(&k) {
            return Err(invalid(format!("kernel size must be 1, 3 or 5, got {k}")));
        }
        if cin == 0 || cout == 0 {
            return Err(invalid("convolution needs at least one input and output channel"));
        }
        Ok(Self { cin, cout, k, weights: vec![0.0; cout * cin * k * k * k], bias: vec![0.0; cout] })
    }

    /// He-normal weights, zero biases.
    pub fn he_init(cin: usize, cout: usize, k: usize, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(cin, cout, k)?;
        let std = (2.0 / (cin * k * k * k) as f64).sqrt();
        let normal = Normal::new(0.0, std).map_err(|e| invalid(e.to_string()))?;
        for w in p.weights.iter_mut() {
            *w = normal.sample(rng);
        }
        Ok(p)
    }

    /// Small uniform weights in `[−scale, scale]`.
    pub fn uniform_init(cin: usize, cout: usize, k: usize, scale: f64, rng: &mut Rng) -> Result<Self> {
        let mut p = Self::zeros(cin, cout, k)?;
        for w in p.weights.iter_mut() {
            *w = rng.random_range(-scale..=scale);
        }
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        let k3 = self.k * self.k * self.k;
        if self.weights.len() != self.cout * self.cin * k3 || self.bias.len() != self.cout {
            return Err(Error::ShapeMismatch(format!(
                "conv {}→{} k={} has {} weights and {} biases",
                self.cin,
                self.cout,
                self.k,
                self.weights.len(),
                self.bias.len()
            )));
        }
        if self.weights.iter().chain(&self.bias).any(|v| !v.is_finite()) {
            return Err(invalid("non-finite convolution parameter"));
        }
        Ok(())
    }

    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    #[cfg(test)]
    fn w(&self, co: usize, ci: usize, dz: usize, dy: usize, dx: usize) -> f64 {
        let k = self.k;
        self.weights[(((co * self.cin + ci) * k + dz) * k + dy) * k + dx]
    }
}

/// Gradients of a convolution's parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3Grads {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

/// Volumes are processed in a zero-padded layout of side `p = d + 2·pad`.
/// In that layout every kernel tap is a constant offset in the flattened
/// array, so a convolution becomes a sum of shifted, scaled copies. Outputs
/// are computed over the flat range spanning the interior; values that land
/// in the padding are discarded.
struct Layout {
    d: usize,
    pad: usize,
    p: usize,
    lo: usize,
    hi: usize,
    offsets: Vec<isize>,
}

impl Layout {
    fn new(d: usize, k: usize) -> Self {
        let pad = k / 2;
        let p = d + 2 * pad;
        let flat = |z: usize, y: usize, x: usize| (z * p + y) * p + x;
        let mut offsets = Vec::with_capacity(k * k * k);
        for kz in 0..k {
            for ky in 0..k {
                for kx in 0..k {
                    let r = |c: usize| c as isize - pad as isize;
                    offsets.push((r(kz) * p as isize + r(ky)) * p as isize + r(kx));
                }
            }
        }
        let last = pad + d - 1;
        Self { d, pad, p, lo: flat(pad, pad, pad), hi: flat(last, last, last) + 1, offsets }
    }

    fn padded_len(&self) -> usize {
        self.p * self.p * self.p
    }

    fn pad(&self, src: &[f64]) -> Vec<f64> {
        let (d, p, pad) = (self.d, self.p, self.pad);
        let mut out = vec![0.0; self.padded_len()];
        for z in 0..d {
            for y in 0..d {
                let o = ((z + pad) * p + y + pad) * p + pad;
                out[o..o + d].copy_from_slice(&src[(z * d + y) * d..(z * d + y + 1) * d]);
            }
        }
        out
    }

    fn unpad(&self, src: &[f64], dst: &mut [f64]) {
        let (d, p, pad) = (self.d, self.p, self.pad);
        for z in 0..d {
            for y in 0..d {
                let s = ((z + pad) * p + y + pad) * p + pad;
                dst[(z * d + y) * d..(z * d + y + 1) * d].copy_from_slice(&src[s..s + d]);
            }
        }
    }

    /// `dst[i] += Σ_taps w[t] · src[i + sign·offset[t]]` for `i ∈ [lo, hi)`.
    fn accumulate_taps(&self, dst: &mut [f64], src: &[f64], w: &[f64], sign: isize) {
        const BLOCK: usize = 512;
        let mut start = self.lo;
        while start < self.hi {
            let len = BLOCK.min(self.hi - start);
            let acc = &mut dst[start..start + len];
            for (t, &wt) in w.iter().enumerate() {
                if wt == 0.0 {
                    continue;
                }
                let s = (start as isize + sign * self.offsets[t]) as usize;
                for (a, b) in acc.iter_mut().zip(&src[s..s + len]) {
                    *a += wt * b;
                }
            }
            start += len;
        }
    }
}

/// Dot product with eight independent partial sums, which lets the compiler
/// vectorize the reduction while keeping a fixed summation order.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut lanes = [0.0; 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            lanes[l] += x[l] * y[l];
        }
    }
    lanes.iter().sum::<f64>() + tail
}

fn check_input(x: &Field4, w: &Conv3Params) -> Result<()> {
    w.validate()?;
    if x.channels != w.cin {
        return Err(Error::ShapeMismatch(format!("convolution expects {} input channels, got {}", w.cin, x.channels)));
    }
    Ok(())
}

/// Cross-correlation `y[co] = b[co] + Σ_ci w[co, ci] ⋆ x[ci]`.
pub fn conv3d_forward(x: &Field4, w: &Conv3Params) -> Result<Field4> {
    check_input(x, w)?;
    let lay = Layout::new(x.dim, w.k);
    let k3 = w.k * w.k * w.k;
    let padded: Vec<Vec<f64>> = (0..w.cin).map(|c| lay.pad(x.channel(c))).collect();
    let mut out = Field4::zeros(w.cout, x.dim);
    let n = out.spatial_len();
    out.values.par_chunks_mut(n).enumerate().for_each(|(co, dst)| {
        let mut acc = vec![w.bias[co]; lay.padded_len()];
        for (ci, src) in padded.iter().enumerate() {
            let taps = &w.weights[(co * w.cin + ci) * k3..(co * w.cin + ci + 1) * k3];
            lay.accumulate_taps(&mut acc, src, taps, 1);
        }
        lay.unpad(&acc, dst);
    });
    Ok(out)
}

fn check_upstream(x: &Field4, w: &Conv3Params, dy: &Field4) -> Result<()> {
    check_input(x, w)?;
    if dy.channels != w.cout || dy.dim != x.dim {
        return Err(Error::ShapeMismatch(format!(
            "upstream gradient is {}×{}³, expected {}×{}³",
            dy.channels, dy.dim, w.cout, x.dim
        )));
    }
    Ok(())
}

/// Weight and bias gradients given `dL/dy`.
pub fn conv3d_param_grads(x: &Field4, w: &Conv3Params, dy: &Field4) -> Result<Conv3Grads> {
    check_upstream(x, w, dy)?;
    let lay = Layout::new(x.dim, w.k);
    let k3 = w.k * w.k * w.k;
    let xp: Vec<Vec<f64>> = (0..w.cin).map(|c| lay.pad(x.channel(c))).collect();
    let gp: Vec<Vec<f64>> = (0..w.cout).map(|c| lay.pad(dy.channel(c))).collect();
    let bias: Vec<f64> = (0..w.cout).map(|co| dy.channel(co).iter().sum()).collect();
    // dW[co, ci, t] = Σ_i dy[co][i] · x[ci][i + offset[t]]; the padding of
    // `gp` is zero, so the sum may run over the whole interior span.
    let mut dw = vec![0.0; w.weights.len()];
    dw.par_chunks_mut(k3).enumerate().for_each(|(idx, dst)| {
        let (co, ci) = (idx / w.cin, idx % w.cin);
        let g = &gp[co][lay.lo..lay.hi];
        for (t, out) in dst.iter_mut().enumerate() {
            let s = (lay.lo as isize + lay.offsets[t]) as usize;
            *out = dot(g, &xp[ci][s..s + g.len()]);
        }
    });
    Ok(Conv3Grads { weights: dw, bias })
}

/// Input gradient given `dL/dy`.
pub fn conv3d_input_grad(x: &Field4, w: &Conv3Params, dy: &Field4) -> Result<Field4> {
    check_upstream(x, w, dy)?;
    let lay = Layout::new(x.dim, w.k);
    let k3 = w.k * w.k * w.k;
    let gp: Vec<Vec<f64>> = (0..w.cout).map(|c| lay.pad(dy.channel(c))).collect();
    // dx[ci][i] = Σ_co Σ_t w[co, ci, t] · dy[co][i − offset[t]]
    let mut dx = Field4::zeros(w.cin, x.dim);
    let n = dx.spatial_len();
    dx.values.par_chunks_mut(n).enumerate().for_each(|(ci, dst)| {
        let mut acc = vec![0.0; lay.padded_len()];
        for (co, g) in gp.iter().enumerate() {
            let taps = &w.weights[(co * w.cin + ci) * k3..(co * w.cin + ci + 1) * k3];
            lay.accumulate_taps(&mut acc, g, taps, -1);
        }
        lay.unpad(&acc, dst);
    });
    Ok(dx)
}

/// Gradients with respect to the input, weights and bias given `dL/dy`.
pub fn conv3d_backward(x: &Field4, w: &Conv3Params, dy: &Field4) -> Result<(Field4, Conv3Grads)> {
    Ok((conv3d_input_grad(x, w, dy)?, conv3d_param_grads(x, w, dy)?))
}
