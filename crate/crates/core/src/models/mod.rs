//! Network architectures whose computation is gated by a structure vector.

mod chain;
mod dense_gate;
mod layer_skip;
mod mixed_activation;
mod mlp;
mod skip_drop;

use serde::{Deserialize, Serialize};

pub use chain::ChainCache;
pub use dense_gate::{consumer_offset, DenseGateCache, DenseGateMlp};
pub use layer_skip::LayerSkipNet;
pub use mixed_activation::MixedActivationNet;
pub use mlp::Mlp;
pub use skip_drop::SkipDropNet;

use crate::dist::{FactorSpec, StructureSample};
use crate::nn::{softmax_cross_entropy, DenseLayer, LayerGrad, Matrix};
use crate::{Error, Result};

/// A network whose forward pass is modulated by a [`StructureSample`].
pub trait GatedModel {
    type Cache;

    /// Number of structure bits consumed by one forward pass.
    fn bit_len(&self) -> usize;

    /// Natural factorization of the structure bits into θ parameters.
    fn factor_layout(&self) -> Vec<FactorSpec>;

    fn layers(&self) -> &[DenseLayer];

    fn layers_mut(&mut self) -> &mut [DenseLayer];

    fn input_dim(&self) -> usize {
        self.layers()[0].inputs()
    }

    fn num_classes(&self) -> usize {
        self.layers().last().expect("at least one layer").outputs()
    }

    /// Logits plus the trace needed by [`GatedModel::backward`].
    fn forward(&self, x: &Matrix, m: &StructureSample) -> Result<(Matrix, Self::Cache)>;

    /// Weight gradients given the gradient of the loss with respect to the logits.
    fn backward(&self, cache: &Self::Cache, dlogits: &Matrix) -> Vec<LayerGrad>;

    fn logits(&self, x: &Matrix, m: &StructureSample) -> Result<Matrix> {
        self.forward(x, m).map(|(logits, _)| logits)
    }

    /// Mean cross-entropy over the batch and its weight gradients.
    fn loss_and_grad(&self, x: &Matrix, labels: &[usize], m: &StructureSample) -> Result<(f64, Vec<LayerGrad>)> {
        let (logits, cache) = self.forward(x, m)?;
        let (loss, dlogits) = softmax_cross_entropy(&logits, labels)?;
        Ok((loss, self.backward(&cache, &dlogits)))
    }

    fn num_params(&self) -> usize {
        self.layers().iter().map(DenseLayer::num_params).sum()
    }
}

pub(crate) fn check_input(x: &Matrix, inputs: usize, m: &StructureSample, bits: usize) -> Result<()> {
    if x.cols() != inputs {
        return Err(Error::invalid(format!(
            "network expects {inputs} input features, batch has {}",
            x.cols()
        )));
    }
    if m.len() != bits {
        return Err(Error::invalid(format!(
            "network consumes {bits} structure bits, sample has {}",
            m.len()
        )));
    }
    Ok(())
}

/// Any of the supported architectures.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Network {
    Plain(Mlp),
    LayerSkip(LayerSkipNet),
    MixedActivation(MixedActivationNet),
    SkipDrop(SkipDropNet),
    DenseGate(DenseGateMlp),
}

#[derive(Debug, Clone)]
pub enum NetworkCache {
    Chain(ChainCache),
    DenseGate(DenseGateCache),
}

macro_rules! dispatch {
    ($self:expr, $net:ident => $body:expr) => {
        match $self {
            Network::Plain($net) => $body,
            Network::LayerSkip($net) => $body,
            Network::MixedActivation($net) => $body,
            Network::SkipDrop($net) => $body,
            Network::DenseGate($net) => $body,
        }
    };
}

impl GatedModel for Network {
    type Cache = NetworkCache;

    fn bit_len(&self) -> usize {
        dispatch!(self, n => n.bit_len())
    }

    fn factor_layout(&self) -> Vec<FactorSpec> {
        dispatch!(self, n => n.factor_layout())
    }

    fn layers(&self) -> &[DenseLayer] {
        dispatch!(self, n => n.layers())
    }

    fn layers_mut(&mut self) -> &mut [DenseLayer] {
        dispatch!(self, n => n.layers_mut())
    }

    fn forward(&self, x: &Matrix, m: &StructureSample) -> Result<(Matrix, NetworkCache)> {
        match self {
            Network::Plain(n) => n.forward(x, m).map(|(l, c)| (l, NetworkCache::Chain(c))),
            Network::LayerSkip(n) => n.forward(x, m).map(|(l, c)| (l, NetworkCache::Chain(c))),
            Network::MixedActivation(n) => n.forward(x, m).map(|(l, c)| (l, NetworkCache::Chain(c))),
            Network::SkipDrop(n) => n.forward(x, m).map(|(l, c)| (l, NetworkCache::Chain(c))),
            Network::DenseGate(n) => n.forward(x, m).map(|(l, c)| (l, NetworkCache::DenseGate(c))),
        }
    }

    fn backward(&self, cache: &NetworkCache, dlogits: &Matrix) -> Vec<LayerGrad> {
        match (self, cache) {
            (Network::Plain(n), NetworkCache::Chain(c)) => n.backward(c, dlogits),
            (Network::LayerSkip(n), NetworkCache::Chain(c)) => n.backward(c, dlogits),
            (Network::MixedActivation(n), NetworkCache::Chain(c)) => n.backward(c, dlogits),
            (Network::SkipDrop(n), NetworkCache::Chain(c)) => n.backward(c, dlogits),
            (Network::DenseGate(n), NetworkCache::DenseGate(c)) => n.backward(c, dlogits),
            _ => panic!("forward cache does not belong to this network"),
        }
    }
}

impl Network {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Network::Plain(_) => "plain",
            Network::LayerSkip(_) => "layer-skip",
            Network::MixedActivation(_) => "mixed-activation",
            Network::SkipDrop(_) => "skip-drop",
            Network::DenseGate(_) => "dense-gate",
        }
    }

    /// Checks that the layer shapes agree with the architecture description.
    pub fn validate(&self) -> Result<()> {
        dispatch!(self, n => n.validate())
    }

    /// Number of hidden layers (or units, or connections) switched on in expectation;
    /// architecture-specific.
    pub fn expected_active(&self, theta: &[f64]) -> f64 {
        match self {
            Network::LayerSkip(_) => theta.iter().sum::<f64>() + 1.0,
            Network::SkipDrop(n) => theta[..n.hidden_layers() - 1].iter().sum::<f64>() + 1.0,
            _ => theta.iter().sum(),
        }
    }
}
