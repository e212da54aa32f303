//! Experiment configuration files (TOML) and `key=value` overrides.

use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{self, Dataset, SyntheticKind, SyntheticSpec};
use crate::models::{DenseGateMlp, GatedModel, LayerSkipNet, MixedActivationNet, Mlp, Network, SkipDropNet};
use crate::nn::Activation;
use crate::predictor::PredictionConfig;
use crate::trainer::TrainConfig;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    LayerSelect,
    ActivationSelect,
    SkipDrop,
    DenseGate,
    /// A gated architecture trained with θ held at `theta_init`.
    FixedThetaBaseline,
    PlainBaseline,
}

/// Gated architecture underlying a fixed-θ baseline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GatedKind {
    LayerSelect,
    ActivationSelect,
    SkipDrop,
    DenseGate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchitectureConfig {
    /// Hidden layers (layer-select, activation-select, skip-drop, plain).
    #[serde(default = "default_layers")]
    pub layers: usize,
    /// Units per hidden layer.
    #[serde(default = "default_units")]
    pub units: usize,
    /// Hidden activation of the plain baseline.
    #[serde(default = "default_activation")]
    pub activation: Activation,
    /// Dense-gate blocks.
    #[serde(default = "default_blocks")]
    pub blocks: usize,
    /// Layers per dense-gate block.
    #[serde(default = "default_block_layers")]
    pub block_layers: usize,
    /// Width of every layer inside a dense-gate block.
    #[serde(default = "default_growth")]
    pub growth: usize,
    /// Width of the stem and transition outputs of the dense-gate net.
    #[serde(default = "default_block_input")]
    pub block_input: usize,
    /// Architecture of `fixed-theta-baseline` runs.
    #[serde(default = "default_baseline_of")]
    pub baseline_of: GatedKind,
    /// Multiplier on the He-initialized weights (`1/√2` gives std `1/√fan_in`).
    #[serde(default = "default_init_gain")]
    pub init_gain: f64,
}

fn default_layers() -> usize {
    16
}
fn default_units() -> usize {
    64
}
fn default_activation() -> Activation {
    Activation::Relu
}
fn default_blocks() -> usize {
    3
}
fn default_block_layers() -> usize {
    12
}
fn default_growth() -> usize {
    12
}
fn default_block_input() -> usize {
    24
}
fn default_baseline_of() -> GatedKind {
    GatedKind::LayerSelect
}
fn default_init_gain() -> f64 {
    1.0
}

impl Default for ArchitectureConfig {
    fn default() -> Self {
        Self {
            layers: default_layers(),
            units: default_units(),
            activation: default_activation(),
            blocks: default_blocks(),
            block_layers: default_block_layers(),
            growth: default_growth(),
            block_input: default_block_input(),
            baseline_of: default_baseline_of(),
            init_gain: default_init_gain(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DataConfig {
    /// IDX files `train-images-idx3-ubyte` etc. in `dir`.
    Mnist {
        dir: PathBuf,
        /// Use only the first `train_limit` training examples.
        #[serde(default)]
        train_limit: Option<usize>,
        #[serde(default)]
        test_limit: Option<usize>,
    },
    Synthetic {
        kind: SyntheticKind,
        n_train: usize,
        n_test: usize,
        #[serde(default)]
        seed: u64,
        #[serde(default = "default_noise")]
        noise: f64,
        #[serde(default = "default_classes")]
        classes: usize,
        #[serde(default = "default_dim")]
        dim: usize,
    },
}

fn default_noise() -> f64 {
    0.5
}
fn default_classes() -> usize {
    3
}
fn default_dim() -> usize {
    2
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Record elapsed seconds in metrics; off keeps metrics byte-reproducible.
    #[serde(default)]
    pub wall_clock: bool,
    #[serde(default)]
    pub architecture: ArchitectureConfig,
    pub train: TrainConfig,
    #[serde(default)]
    pub prediction: PredictionConfig,
    pub data: DataConfig,
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("runs/default")
}

fn positive(field: &str, v: usize) -> Result<()> {
    if v == 0 {
        return Err(Error::config(field, "must be >= 1"));
    }
    Ok(())
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let value: toml::Table = toml::from_str(text).map_err(|e| Error::config("<document>", e.to_string()))?;
        Self::from_table(value)
    }

    pub fn from_table(table: toml::Table) -> Result<Self> {
        let cfg: Self = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| Error::config("<document>", e.message().to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path` and applies `key=value` overrides before validation.
    pub fn load(path: &Path, overrides: &[String]) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut table: toml::Table = toml::from_str(&text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            what: "config",
            message: e.to_string(),
        })?;
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        Self::from_table(table)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serialization(e.to_string()))
    }

    /// Field-level checks across all sections.
    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.prediction.validate()?;
        let a = &self.architecture;
        if !(a.init_gain.is_finite() && a.init_gain > 0.0) {
            return Err(Error::config("architecture.init_gain", "must be finite and > 0"));
        }
        match self.gated_kind() {
            Some(GatedKind::DenseGate) => {
                positive("architecture.blocks", a.blocks)?;
                positive("architecture.block_layers", a.block_layers)?;
                positive("architecture.growth", a.growth)?;
                positive("architecture.block_input", a.block_input)?;
            }
            Some(GatedKind::LayerSelect | GatedKind::SkipDrop) => {
                positive("architecture.units", a.units)?;
                if a.layers < 2 {
                    return Err(Error::config(
                        "architecture.layers",
                        "needs at least 2 hidden layers so that one can be switched off",
                    ));
                }
            }
            Some(GatedKind::ActivationSelect) | None => {
                positive("architecture.layers", a.layers)?;
                positive("architecture.units", a.units)?;
            }
        }
        match &self.data {
            DataConfig::Mnist {
                train_limit, test_limit, ..
            } => {
                if *train_limit == Some(0) {
                    return Err(Error::config("data.train_limit", "must be >= 1"));
                }
                if *test_limit == Some(0) {
                    return Err(Error::config("data.test_limit", "must be >= 1"));
                }
            }
            DataConfig::Synthetic {
                n_train, n_test, noise, ..
            } => {
                positive("data.n_train", *n_train)?;
                positive("data.n_test", *n_test)?;
                if !(noise.is_finite() && *noise >= 0.0) {
                    return Err(Error::config("data.noise", "must be finite and >= 0"));
                }
            }
        }
        Ok(())
    }

    /// Gated architecture in use, or `None` for the plain baseline.
    pub fn gated_kind(&self) -> Option<GatedKind> {
        match self.experiment {
            Experiment::LayerSelect => Some(GatedKind::LayerSelect),
            Experiment::ActivationSelect => Some(GatedKind::ActivationSelect),
            Experiment::SkipDrop => Some(GatedKind::SkipDrop),
            Experiment::DenseGate => Some(GatedKind::DenseGate),
            Experiment::FixedThetaBaseline => Some(self.architecture.baseline_of),
            Experiment::PlainBaseline => None,
        }
    }

    /// Training settings with θ adaptation switched off for baselines.
    pub fn effective_train(&self) -> TrainConfig {
        let mut t = self.train.clone();
        t.adapt_theta = self.experiment != Experiment::FixedThetaBaseline;
        t
    }

    pub fn build_network(&self, inputs: usize, classes: usize, rng: &mut ChaCha8Rng) -> Result<Network> {
        let a = &self.architecture;
        let widths = vec![a.units; a.layers];
        let mut net = match self.gated_kind() {
            Some(GatedKind::LayerSelect) => Network::LayerSkip(LayerSkipNet::new(inputs, a.layers, a.units, classes, rng)?),
            Some(GatedKind::ActivationSelect) => {
                Network::MixedActivation(MixedActivationNet::new(inputs, &widths, classes, rng)?)
            }
            Some(GatedKind::SkipDrop) => Network::SkipDrop(SkipDropNet::new(inputs, a.layers, a.units, classes, rng)?),
            Some(GatedKind::DenseGate) => Network::DenseGate(DenseGateMlp::new(
                inputs,
                a.blocks,
                a.block_layers,
                a.growth,
                a.block_input,
                classes,
                rng,
            )?),
            None => Network::Plain(Mlp::new(inputs, &widths, classes, a.activation, rng)?),
        };
        if a.init_gain != 1.0 {
            for layer in net.layers_mut() {
                layer.weight.scale(a.init_gain);
            }
        }
        Ok(net)
    }

    /// Training and test sets.
    pub fn load_data(&self) -> Result<(Dataset, Dataset)> {
        match &self.data {
            DataConfig::Mnist {
                dir,
                train_limit,
                test_limit,
            } => {
                let (mut train, mut test) = data::load_mnist_dir(dir)?;
                if let Some(n) = train_limit {
                    train = train.take(*n)?;
                }
                if let Some(n) = test_limit {
                    test = test.take(*n)?;
                }
                Ok((train, test))
            }
            DataConfig::Synthetic {
                kind,
                n_train,
                n_test,
                seed,
                noise,
                classes,
                dim,
            } => {
                let spec = |n, seed| SyntheticSpec {
                    kind: *kind,
                    n,
                    seed,
                    noise: *noise,
                    classes: *classes,
                    dim: *dim,
                };
                let train = data::make_synthetic_with(&spec(*n_train, *seed))?;
                let test = data::make_synthetic_with(&spec(*n_test, seed.wrapping_add(1)))?;
                Ok((train, test))
            }
        }
    }

    /// Builds the network from `train.seed`; the returned RNG continues the
    /// same stream for training.
    pub fn init_network(&self, train: &Dataset) -> Result<(Network, ChaCha8Rng)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.train.seed);
        let net = self.build_network(train.dim(), train.num_classes(), &mut rng)?;
        Ok((net, rng))
    }

    /// SHA-256 of the configuration with run-length and output fields
    /// cleared, so a resumed run may extend `max_iterations` or move.
    pub fn resume_hash(&self) -> Result<[u8; 32]> {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.wall_clock = false;
        c.train.max_iterations = None;
        let text = c.to_toml_string()?;
        Ok(Sha256::digest(text.as_bytes()).into())
    }
}

/// Applies `a.b.c=value`; the value is parsed as a TOML literal and falls
/// back to a plain string.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() || key.split('.').any(str::is_empty) {
        return Err(Error::config(key, "empty key segment"));
    }
    let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));

    let mut parts: Vec<&str> = key.split('.').collect();
    let last = parts.pop().expect("non-empty key");
    let mut node = table;
    for p in parts {
        let entry = node
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{p}` is not a section")))?;
    }
    node.insert(last.to_string(), value);
    Ok(())
}
