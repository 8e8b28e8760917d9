use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Momentum SGD with coupled weight decay and global-norm gradient clipping.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SgdState {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Clip gradients to this global L2 norm; `None` disables clipping.
    pub clip_norm: Option<f64>,
    velocity: Vec<Tensor>,
}

/// Adam with coupled (L2) weight decay and bias correction.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub betas: (f64, f64),
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
}

fn check_aligned(op: &'static str, params: &[Tensor], grads: &[Tensor]) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Shape {
            op,
            left: vec![params.len()],
            right: vec![grads.len()],
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if !p.same_shape(g) {
            return Err(Error::Shape {
                op,
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}

fn ensure_buffers(op: &'static str, buffers: &mut Vec<Tensor>, params: &[Tensor]) -> Result<()> {
    if buffers.is_empty() {
        *buffers = params.iter().map(|p| Tensor::zeros(p.shape())).collect();
        return Ok(());
    }
    check_aligned(op, params, buffers)
}

/// Global L2 norm over a set of gradient tensors.
pub fn global_norm(grads: &[Tensor]) -> f64 {
    grads.iter().map(Tensor::norm_sq).sum::<f64>().sqrt()
}

impl SgdState {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, clip_norm: Option<f64>) -> Self {
        SgdState {
            lr,
            momentum,
            weight_decay,
            clip_norm,
            velocity: Vec::new(),
        }
    }

    pub fn velocity(&self) -> &[Tensor] {
        &self.velocity
    }

    pub fn reset(&mut self) {
        self.velocity.clear();
    }
}

impl AdamState {
    pub fn new(lr: f64, betas: (f64, f64), weight_decay: f64) -> Self {
        AdamState {
            lr,
            betas,
            eps: 1e-8,
            weight_decay,
            step: 0,
            first: Vec::new(),
            second: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn reset(&mut self) {
        self.step = 0;
        self.first.clear();
        self.second.clear();
    }
}

/// One momentum-SGD update. Gradients are clipped by global norm first, then
/// weight decay is added, then `v ← μ·v + g` and `p ← p − lr·v`.
pub fn sgd_step(params: &mut [Tensor], grads: &[Tensor], state: &mut SgdState) -> Result<()> {
    check_aligned("sgd_step", params, grads)?;
    ensure_buffers("sgd_step", &mut state.velocity, params)?;
    let clip_scale = match state.clip_norm {
        Some(max) => {
            let norm = global_norm(grads);
            if norm > max {
                max / norm
            } else {
                1.0
            }
        }
        None => 1.0,
    };
    for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut state.velocity) {
        for ((pi, &gi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
            let d = gi * clip_scale + state.weight_decay * *pi;
            *vi = state.momentum * *vi + d;
            *pi -= state.lr * *vi;
        }
    }
    Ok(())
}

/// One Adam update.
pub fn adam_step(params: &mut [Tensor], grads: &[Tensor], state: &mut AdamState) -> Result<()> {
    check_aligned("adam_step", params, grads)?;
    ensure_buffers("adam_step", &mut state.first, params)?;
    ensure_buffers("adam_step", &mut state.second, params)?;
    state.step += 1;
    let (b1, b2) = state.betas;
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.first)
        .zip(&mut state.second)
    {
        let it = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut());
        for (((pi, &gi), mi), vi) in it {
            let d = gi + state.weight_decay * *pi;
            *mi = b1 * *mi + (1.0 - b1) * d;
            *vi = b2 * *vi + (1.0 - b2) * d * d;
            let mhat = *mi / c1;
            let vhat = *vi / c2;
            *pi -= state.lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Cosine annealing from `lr_max` at `epoch = 0` to `lr_min` at `epoch = horizon`.
pub fn cosine_lr(lr_max: f64, lr_min: f64, epoch: usize, horizon: usize) -> f64 {
    if horizon == 0 {
        return lr_max;
    }
    let t = (epoch.min(horizon) as f64) / horizon as f64;
    lr_min + 0.5 * (lr_max - lr_min) * (1.0 + (std::f64::consts::PI * t).cos())
}
