//! Activation selection: each hidden unit is ReLU when its bit is 1 and tanh when 0.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::chain::{ChainCache, UnitActivation};
use super::mlp::validate_chain;
use super::{check_input, GatedModel};
use crate::dist::{FactorSpec, StructureSample};
use crate::nn::{DenseLayer, LayerGrad, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixedActivationNet {
    layers: Vec<DenseLayer>,
}

impl MixedActivationNet {
    pub fn new<R: Rng + ?Sized>(inputs: usize, widths: &[usize], classes: usize, rng: &mut R) -> Result<Self> {
        if widths.is_empty() || widths.contains(&0) || inputs == 0 || classes == 0 {
            return Err(Error::invalid("mixed-activation net needs positive hidden widths"));
        }
        let mut layers = Vec::with_capacity(widths.len() + 1);
        let mut prev = inputs;
        for &w in widths {
            layers.push(DenseLayer::he(prev, w, rng));
            prev = w;
        }
        layers.push(DenseLayer::he(prev, classes, rng));
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
            return Err(Error::invalid("mixed-activation net needs a hidden layer"));
        }
        Ok(())
    }

    fn hidden(&self) -> &[DenseLayer] {
        &self.layers[..self.layers.len() - 1]
    }
}

impl GatedModel for MixedActivationNet {
    type Cache = ChainCache;

    /// One bit per hidden unit, layer-major.
    fn bit_len(&self) -> usize {
        self.hidden().iter().map(DenseLayer::outputs).sum()
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
        let out = self.layers.len() - 1;
        let mut cache = ChainCache::new(self.layers.len());
        let mut h = x.clone();
        let mut offset = 0;
        for l in 0..out {
            let width = self.layers[l].outputs();
            let select = m.bits()[offset..offset + width].to_vec();
            offset += width;
            h = cache.push(&self.layers, l, h, UnitActivation::PerUnit(select), None);
        }
        let logits = cache.push(&self.layers, out, h, UnitActivation::Identity, None);
        Ok((logits, cache))
    }

    fn backward(&self, cache: &ChainCache, dlogits: &Matrix) -> Vec<LayerGrad> {
        cache.backward(&self.layers, dlogits)
    }
}
