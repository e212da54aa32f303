use rand::Rng;
use serde::{Deserialize, Serialize};

use super::chain::{ChainCache, UnitActivation};
use super::{check_input, GatedModel};
use crate::dist::{FactorSpec, StructureSample};
use crate::nn::{Activation, DenseLayer, LayerGrad, Matrix};
use crate::{Error, Result};

/// Ungated multilayer perceptron with one activation for every hidden unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<DenseLayer>,
    activation: Activation,
}

impl Mlp {
    /// `widths` lists the hidden layer widths.
    pub fn new<R: Rng + ?Sized>(
        inputs: usize,
        widths: &[usize],
        classes: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if inputs == 0 || classes == 0 || widths.contains(&0) {
            return Err(Error::invalid("layer sizes must be positive"));
        }
        let mut layers = Vec::with_capacity(widths.len() + 1);
        let mut prev = inputs;
        for &w in widths {
            layers.push(DenseLayer::he(prev, w, rng));
            prev = w;
        }
        layers.push(DenseLayer::he(prev, classes, rng));
        Ok(Self { layers, activation })
    }

    pub fn from_layers(layers: Vec<DenseLayer>, activation: Activation) -> Result<Self> {
        let net = Self { layers, activation };
        net.validate()?;
        Ok(net)
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn validate(&self) -> Result<()> {
        validate_chain(&self.layers)
    }
}

/// Consecutive layers must connect.
pub(crate) fn validate_chain(layers: &[DenseLayer]) -> Result<()> {
    if layers.is_empty() {
        return Err(Error::invalid("network has no layers"));
    }
    for (i, pair) in layers.windows(2).enumerate() {
        if pair[0].outputs() != pair[1].inputs() {
            return Err(Error::invalid(format!(
                "layer {i} produces {} values but layer {} expects {}",
                pair[0].outputs(),
                i + 1,
                pair[1].inputs()
            )));
        }
    }
    Ok(())
}

impl GatedModel for Mlp {
    type Cache = ChainCache;

    fn bit_len(&self) -> usize {
        0
    }

    fn factor_layout(&self) -> Vec<FactorSpec> {
        Vec::new()
    }

    fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    fn layers_mut(&mut self) -> &mut [DenseLayer] {
        &mut self.layers
    }

    fn forward(&self, x: &Matrix, m: &StructureSample) -> Result<(Matrix, ChainCache)> {
        check_input(x, self.input_dim(), m, 0)?;
        let last = self.layers.len() - 1;
        let mut cache = ChainCache::new(self.layers.len());
        let mut h = x.clone();
        for i in 0..last {
            h = cache.push(&self.layers, i, h, UnitActivation::Uniform(self.activation), None);
        }
        let logits = cache.push(&self.layers, last, h, UnitActivation::Identity, None);
        Ok((logits, cache))
    }

    fn backward(&self, cache: &ChainCache, dlogits: &Matrix) -> Vec<LayerGrad> {
        cache.backward(&self.layers, dlogits)
    }
}
