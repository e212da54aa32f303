//! SGD with Nesterov momentum, weight decay and a step learning-rate schedule.

use serde::{Deserialize, Serialize};

use super::layer::{zero_grads, DenseLayer, LayerGrad};
use crate::{Error, Result};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

/// Step schedule: `base` until ⌊max/2⌋, `base/10` until ⌊3·max/4⌋, then
/// `base/100`. Epoch 0 always runs at `base`.
pub fn lr_schedule(base_lr: f64, epoch: usize, max_epochs: usize) -> f64 {
    if epoch == 0 || epoch < max_epochs / 2 {
        base_lr
    } else if epoch < 3 * max_epochs / 4 {
        base_lr / 10.0
    } else {
        base_lr / 100.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SgdState {
    velocity: Vec<LayerGrad>,
    pub momentum: f64,
    pub weight_decay: f64,
    pub base_lr: f64,
    pub current_lr: f64,
}

impl SgdState {
    pub fn new(params: &[DenseLayer], base_lr: f64, momentum: f64, weight_decay: f64) -> Self {
        Self {
            velocity: zero_grads(params),
            momentum,
            weight_decay,
            base_lr,
            current_lr: base_lr,
        }
    }

    pub fn velocity(&self) -> &[LayerGrad] {
        &self.velocity
    }

    pub fn set_epoch(&mut self, epoch: usize, max_epochs: usize) {
        self.current_lr = lr_schedule(self.base_lr, epoch, max_epochs);
    }

    /// One Nesterov step:
    /// `g ← grad + wd·p; v ← μv − lr·g; p ← p + μv − lr·g`.
    /// Weight decay applies to biases as well.
    pub fn nesterov_step(&mut self, params: &mut [DenseLayer], grads: &[LayerGrad]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.velocity.len() {
            return Err(Error::invalid(format!(
                "{} parameter tensors, {} gradients, {} velocity buffers",
                params.len(),
                grads.len(),
                self.velocity.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if !g.same_shape(p) || !self.velocity[i].same_shape(p) {
                return Err(Error::invalid(format!("shape mismatch at layer {i}")));
            }
        }

        let (mu, lr, wd) = (self.momentum, self.current_lr, self.weight_decay);
        let update = |p: &mut f64, v: &mut f64, g: f64| {
            let g = g + wd * *p;
            *v = mu * *v - lr * g;
            *p += mu * *v - lr * g;
        };
        for ((p, g), v) in params.iter_mut().zip(grads).zip(&mut self.velocity) {
            for ((pw, vw), &gw) in p
                .weight
                .as_mut_slice()
                .iter_mut()
                .zip(v.weight.as_mut_slice())
                .zip(g.weight.as_slice())
            {
                update(pw, vw, gw);
            }
            for ((pb, vb), &gb) in p.bias.iter_mut().zip(&mut v.bias).zip(&g.bias) {
                update(pb, vb, gb);
            }
        }
        Ok(())
    }
}
