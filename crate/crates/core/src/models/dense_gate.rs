//! Densely connected MLP blocks with gated connections.
//!
//! Inside a block, `Y_0` is the block input and `Y_1..Y_L` are the outputs of
//! the `L` block layers. Consumer `l` (for `l = 1..=L+1`) reads the
//! concatenation `(m_p·Y_0, …, m_{p+l−1}·Y_{l−1})` with `p = l(l−1)/2`;
//! consumer `L+1` is the block output, a transition layer for every block but
//! the last, where it is the classifier. A block therefore owns
//! `(L+1)(L+2)/2` bits. Masked inputs are zeroed, never removed, so every
//! potential connection keeps its weights.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_input, GatedModel};
use crate::dist::{FactorSpec, StructureSample};
use crate::nn::{Activation, DenseLayer, LayerGrad, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseGateMlp {
    layers: Vec<DenseLayer>,
    blocks: usize,
    block_layers: usize,
    growth: usize,
    block_input: usize,
}

#[derive(Debug, Clone)]
struct ConsumerTrace {
    input: Matrix,
    pre: Matrix,
}

#[derive(Debug, Clone)]
pub struct DenseGateCache {
    x: Matrix,
    stem_pre: Matrix,
    consumers: Vec<ConsumerTrace>,
    mask: StructureSample,
}

/// First bit of consumer `l` within its block.
#[inline]
pub fn consumer_offset(l: usize) -> usize {
    l * (l - 1) / 2
}

impl DenseGateMlp {
    /// `block_input` is the width of every block input (stem and transition
    /// outputs); `growth` is the width of every block layer.
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        blocks: usize,
        block_layers: usize,
        growth: usize,
        block_input: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if blocks == 0 || block_layers == 0 || growth == 0 || block_input == 0 || inputs == 0 || classes == 0 {
            return Err(Error::invalid("dense-gate net sizes must be positive"));
        }
        let mut layers = vec![DenseLayer::he(inputs, block_input, rng)];
        for b in 0..blocks {
            for l in 1..=block_layers + 1 {
                let fan_in = block_input + (l - 1) * growth;
                let out = if l <= block_layers {
                    growth
                } else if b + 1 < blocks {
                    block_input
                } else {
                    classes
                };
                layers.push(DenseLayer::he(fan_in, out, rng));
            }
        }
        Ok(Self {
            layers,
            blocks,
            block_layers,
            growth,
            block_input,
        })
    }

    pub fn validate(&self) -> Result<()> {
        let expected = 1 + self.blocks * (self.block_layers + 1);
        if self.layers.len() != expected {
            return Err(Error::invalid(format!(
                "dense-gate net has {} layers, topology needs {expected}",
                self.layers.len()
            )));
        }
        if self.layers[0].outputs() != self.block_input {
            return Err(Error::invalid("stem width differs from block input width"));
        }
        for b in 0..self.blocks {
            for l in 1..=self.block_layers + 1 {
                let layer = &self.layers[self.layer_index(b, l)];
                if layer.inputs() != self.block_input + (l - 1) * self.growth {
                    return Err(Error::invalid(format!("block {b} consumer {l} has wrong fan-in")));
                }
                let out_ok = if l <= self.block_layers {
                    layer.outputs() == self.growth
                } else if b + 1 < self.blocks {
                    layer.outputs() == self.block_input
                } else {
                    true
                };
                if !out_ok {
                    return Err(Error::invalid(format!("block {b} consumer {l} has wrong width")));
                }
            }
        }
        Ok(())
    }

    pub fn blocks(&self) -> usize {
        self.blocks
    }

    pub fn block_layers(&self) -> usize {
        self.block_layers
    }

    /// Bits owned by one block: `Σ_{j=1}^{L+1} j`.
    pub fn bits_per_block(&self) -> usize {
        (self.block_layers + 1) * (self.block_layers + 2) / 2
    }

    /// Global bit range read by consumer `l` of block `b`.
    pub fn consumer_bits(&self, block: usize, l: usize) -> Range<usize> {
        let start = block * self.bits_per_block() + consumer_offset(l);
        start..start + l
    }

    fn layer_index(&self, block: usize, l: usize) -> usize {
        1 + block * (self.block_layers + 1) + (l - 1)
    }

    fn producer_width(&self, j: usize) -> usize {
        if j == 0 {
            self.block_input
        } else {
            self.growth
        }
    }

    fn is_classifier(&self, block: usize, l: usize) -> bool {
        block + 1 == self.blocks && l == self.block_layers + 1
    }

    /// Weight entries that receive only zero inputs under `m`.
    pub fn count_disabled_weights(&self, m: &StructureSample) -> Result<usize> {
        if m.len() != self.bit_len() {
            return Err(Error::invalid(format!(
                "dense-gate net consumes {} bits, sample has {}",
                self.bit_len(),
                m.len()
            )));
        }
        let mut disabled = 0;
        for b in 0..self.blocks {
            for l in 1..=self.block_layers + 1 {
                let out = self.layers[self.layer_index(b, l)].outputs();
                for (j, bit) in self.consumer_bits(b, l).enumerate() {
                    if !m.get(bit) {
                        disabled += out * self.producer_width(j);
                    }
                }
            }
        }
        Ok(disabled)
    }

    fn activate(&self, block: usize, l: usize, pre: &Matrix) -> Matrix {
        if self.is_classifier(block, l) {
            pre.clone()
        } else {
            Activation::Relu.forward(pre)
        }
    }
}

impl GatedModel for DenseGateMlp {
    type Cache = DenseGateCache;

    fn bit_len(&self) -> usize {
        self.blocks * self.bits_per_block()
    }

    fn factor_layout(&self) -> Vec<FactorSpec> {
        vec![FactorSpec::independent(); self.bit_len()]
    }

    fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    fn forward(&self, x: &Matrix, m: &StructureSample) -> Result<(Matrix, DenseGateCache)> {
        check_input(x, self.input_dim(), m, self.bit_len())?;
        let rows = x.rows();
        let stem_pre = self.layers[0].forward_unchecked(x);
        let mut block_in = Activation::Relu.forward(&stem_pre);
        let mut consumers = Vec::with_capacity(self.blocks * (self.block_layers + 1));

        for b in 0..self.blocks {
            let mut outputs = vec![block_in];
            for l in 1..=self.block_layers + 1 {
                let layer = &self.layers[self.layer_index(b, l)];
                let mut input = Matrix::zeros(rows, layer.inputs());
                let mut col = 0;
                for (j, bit) in self.consumer_bits(b, l).enumerate() {
                    if m.get(bit) {
                        input.write_cols(col, &outputs[j]);
                    }
                    col += self.producer_width(j);
                }
                let pre = layer.forward_unchecked(&input);
                outputs.push(self.activate(b, l, &pre));
                consumers.push(ConsumerTrace { input, pre });
            }
            block_in = outputs.pop().expect("block output");
        }

        let cache = DenseGateCache {
            x: x.clone(),
            stem_pre,
            consumers,
            mask: m.clone(),
        };
        Ok((block_in, cache))
    }

    fn backward(&self, cache: &DenseGateCache, dlogits: &Matrix) -> Vec<LayerGrad> {
        let rows = dlogits.rows();
        let mut grads: Vec<LayerGrad> = self.layers.iter().map(LayerGrad::zeros_like).collect();
        let mut d_out = dlogits.clone();

        for b in (0..self.blocks).rev() {
            let mut d_y: Vec<Matrix> = (0..=self.block_layers)
                .map(|j| Matrix::zeros(rows, self.producer_width(j)))
                .collect();
            d_y.push(d_out);

            for l in (1..=self.block_layers + 1).rev() {
                let idx = self.layer_index(b, l);
                let trace = &cache.consumers[idx - 1];
                let mut dz = std::mem::replace(&mut d_y[l], Matrix::zeros(0, 0));
                if !self.is_classifier(b, l) {
                    for (g, &z) in dz.as_mut_slice().iter_mut().zip(trace.pre.as_slice()) {
                        *g *= Activation::Relu.derivative(z);
                    }
                }
                let layer = &self.layers[idx];
                grads[idx] = layer.param_grad(&trace.input, &dz);
                let d_in = layer.input_grad(&dz);
                let mut col = 0;
                for (j, bit) in self.consumer_bits(b, l).enumerate() {
                    if cache.mask.get(bit) {
                        d_in.add_cols_into(col, &mut d_y[j]);
                    }
                    col += self.producer_width(j);
                }
            }
            d_out = d_y.swap_remove(0);
        }

        let mut dz = d_out;
        for (g, &z) in dz.as_mut_slice().iter_mut().zip(cache.stem_pre.as_slice()) {
            *g *= Activation::Relu.derivative(z);
        }
        grads[0] = self.layers[0].param_grad(&cache.x, &dz);
        grads
    }
}
