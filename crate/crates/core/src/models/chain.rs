//! Forward/backward trace shared by the sequential architectures.
//!
//! Each executed layer records its input and pre-activation. Layers that are
//! skipped are simply absent from the trace, so their gradients stay zero.

use crate::nn::{Activation, DenseLayer, LayerGrad, Matrix};

/// How the units of one executed layer turn pre-activations into outputs.
#[derive(Debug, Clone)]
pub(crate) enum UnitActivation {
    Identity,
    Uniform(Activation),
    /// `true` selects ReLU, `false` selects tanh, per unit.
    PerUnit(Vec<bool>),
}

impl UnitActivation {
    #[inline]
    fn apply(&self, unit: usize, z: f64) -> f64 {
        match self {
            UnitActivation::Identity => z,
            UnitActivation::Uniform(a) => a.apply(z),
            UnitActivation::PerUnit(bits) => {
                if bits[unit] {
                    Activation::Relu.apply(z)
                } else {
                    Activation::Tanh.apply(z)
                }
            }
        }
    }

    #[inline]
    fn derivative(&self, unit: usize, z: f64) -> f64 {
        match self {
            UnitActivation::Identity => 1.0,
            UnitActivation::Uniform(a) => a.derivative(z),
            UnitActivation::PerUnit(bits) => {
                if bits[unit] {
                    Activation::Relu.derivative(z)
                } else {
                    Activation::Tanh.derivative(z)
                }
            }
        }
    }
}

#[derive(Debug, Clone)]
struct Step {
    layer: usize,
    input: Matrix,
    pre: Matrix,
    act: UnitActivation,
    keep: Option<Vec<bool>>,
}

/// Recorded forward pass through a chain of dense layers.
#[derive(Debug, Clone)]
pub struct ChainCache {
    steps: Vec<Step>,
    num_layers: usize,
}

impl ChainCache {
    pub(crate) fn new(num_layers: usize) -> Self {
        Self {
            steps: Vec::new(),
            num_layers,
        }
    }

    /// Indices of the layers that were executed, in order.
    pub fn executed_layers(&self) -> Vec<usize> {
        self.steps.iter().map(|s| s.layer).collect()
    }

    /// Runs `layers[layer]` on `x`, applies the unit activation and the
    /// optional keep-mask, records the step and returns the output.
    pub(crate) fn push(
        &mut self,
        layers: &[DenseLayer],
        layer: usize,
        x: Matrix,
        act: UnitActivation,
        keep: Option<Vec<bool>>,
    ) -> Matrix {
        let pre = layers[layer].forward_unchecked(&x);
        let mut out = pre.clone();
        let cols = out.cols();
        for r in 0..out.rows() {
            for (c, v) in out.row_mut(r).iter_mut().enumerate() {
                let kept = keep.as_ref().is_none_or(|k| k[c]);
                *v = if kept { act.apply(c, *v) } else { 0.0 };
            }
        }
        debug_assert_eq!(cols, layers[layer].outputs());
        self.steps.push(Step {
            layer,
            input: x,
            pre,
            act,
            keep,
        });
        out
    }

    pub(crate) fn backward(&self, layers: &[DenseLayer], dlogits: &Matrix) -> Vec<LayerGrad> {
        let mut grads: Vec<LayerGrad> = layers.iter().map(LayerGrad::zeros_like).collect();
        debug_assert_eq!(layers.len(), self.num_layers);
        let mut dout = dlogits.clone();
        for (i, step) in self.steps.iter().enumerate().rev() {
            let mut dz = dout;
            for r in 0..dz.rows() {
                let zrow = step.pre.row(r);
                for (c, g) in dz.row_mut(r).iter_mut().enumerate() {
                    let kept = step.keep.as_ref().is_none_or(|k| k[c]);
                    *g = if kept { *g * step.act.derivative(c, zrow[c]) } else { 0.0 };
                }
            }
            let layer = &layers[step.layer];
            grads[step.layer] = layer.param_grad(&step.input, &dz);
            if i == 0 {
                break;
            }
            dout = layer.input_grad(&dz);
        }
        grads
    }
}
