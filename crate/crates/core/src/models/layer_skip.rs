//! Layer selection: hidden layers 2..L are bypassed by identity when their bit is 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::chain::{ChainCache, UnitActivation};
use super::mlp::validate_chain;
use super::{check_input, GatedModel};
use crate::dist::{FactorSpec, StructureSample};
use crate::nn::{Activation, DenseLayer, LayerGrad, Matrix};
use crate::{Error, Result};

/// `L` hidden ReLU layers of equal width; the first is always executed and
/// the remaining `L − 1` are gated by one bit each.
///
/// Layer order: `[input→U, U→U × (L−1), U→classes]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerSkipNet {
    layers: Vec<DenseLayer>,
}

impl LayerSkipNet {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        hidden_layers: usize,
        units: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden_layers < 1 || units == 0 || inputs == 0 || classes == 0 {
            return Err(Error::invalid("layer-skip net needs >= 1 hidden layer and positive sizes"));
        }
        let mut layers = Vec::with_capacity(hidden_layers + 1);
        layers.push(DenseLayer::he(inputs, units, rng));
        for _ in 1..hidden_layers {
            layers.push(DenseLayer::he(units, units, rng));
        }
        layers.push(DenseLayer::he(units, classes, rng));
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        let net = Self { layers };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        validate_chain(&self.layers)?;
        if self.layers.len() < 2 {
            return Err(Error::invalid("layer-skip net needs a hidden and an output layer"));
        }
        let units = self.layers[0].outputs();
        let skippable = &self.layers[1..self.layers.len() - 1];
        if skippable.iter().any(|l| l.inputs() != units || l.outputs() != units) {
            return Err(Error::invalid("skippable layers must all be square with the hidden width"));
        }
        Ok(())
    }

    /// Total hidden layers `L`, including the always-on first one.
    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    /// Number of hidden layers actually executed under `m`.
    pub fn realized_depth(m: &StructureSample) -> usize {
        m.count_ones() + 1
    }
}

impl GatedModel for LayerSkipNet {
    type Cache = ChainCache;

    fn bit_len(&self) -> usize {
        self.hidden_layers() - 1
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

    fn forward(&self, x: &Matrix, m: &StructureSample) -> Result<(Matrix, ChainCache)> {
        check_input(x, self.input_dim(), m, self.bit_len())?;
        let relu = UnitActivation::Uniform(Activation::Relu);
        let out = self.layers.len() - 1;
        let mut cache = ChainCache::new(self.layers.len());
        let mut h = cache.push(&self.layers, 0, x.clone(), relu.clone(), None);
        for l in 1..out {
            if m.get(l - 1) {
                h = cache.push(&self.layers, l, h, relu.clone(), None);
            }
        }
        let logits = cache.push(&self.layers, out, h, UnitActivation::Identity, None);
        Ok((logits, cache))
    }

    fn backward(&self, cache: &ChainCache, dlogits: &Matrix) -> Vec<LayerGrad> {
        cache.backward(&self.layers, dlogits)
    }
}
