//! Joint layer skipping and per-layer shared-rate unit dropout.
//!
//! Bit layout: `L − 1` layer gates (for hidden layers 2..L) followed by
//! `L · U` unit keep-bits in layer-major order. The θ layout mirrors it:
//! `L − 1` independent factors, then `L` shared-rate groups of size `U`.
//! Surviving units are not rescaled.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::chain::{ChainCache, UnitActivation};
use super::mlp::validate_chain;
use super::{check_input, GatedModel};
use crate::dist::{FactorSpec, StructureSample};
use crate::nn::{Activation, DenseLayer, LayerGrad, Matrix};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SkipDropNet {
    layers: Vec<DenseLayer>,
}

impl SkipDropNet {
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        hidden_layers: usize,
        units: usize,
        classes: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if hidden_layers < 1 || units == 0 || inputs == 0 || classes == 0 {
            return Err(Error::invalid("skip-drop net needs >= 1 hidden layer and positive sizes"));
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
            return Err(Error::invalid("skip-drop net needs a hidden and an output layer"));
        }
        let units = self.units();
        if self.layers[1..self.layers.len() - 1]
            .iter()
            .any(|l| l.inputs() != units || l.outputs() != units)
        {
            return Err(Error::invalid("hidden layers must share one width"));
        }
        Ok(())
    }

    pub fn hidden_layers(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn units(&self) -> usize {
        self.layers[0].outputs()
    }

    fn unit_bits(&self, m: &StructureSample, layer: usize) -> Vec<bool> {
        let start = self.hidden_layers() - 1 + layer * self.units();
        m.bits()[start..start + self.units()].to_vec()
    }
}

impl GatedModel for SkipDropNet {
    type Cache = ChainCache;

    fn bit_len(&self) -> usize {
        let l = self.hidden_layers();
        (l - 1) + l * self.units()
    }

    fn factor_layout(&self) -> Vec<FactorSpec> {
        let l = self.hidden_layers();
        let group = FactorSpec::shared(self.units()).expect("units > 0");
        let mut factors = vec![FactorSpec::independent(); l - 1];
        factors.extend(std::iter::repeat_n(group, l));
        factors
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
        let mut h = cache.push(&self.layers, 0, x.clone(), relu.clone(), Some(self.unit_bits(m, 0)));
        for l in 1..out {
            if m.get(l - 1) {
                h = cache.push(&self.layers, l, h, relu.clone(), Some(self.unit_bits(m, l)));
            }
        }
        let logits = cache.push(&self.layers, out, h, UnitActivation::Identity, None);
        Ok((logits, cache))
    }

    fn backward(&self, cache: &ChainCache, dlogits: &Matrix) -> Vec<LayerGrad> {
        cache.backward(&self.layers, dlogits)
    }
}
