//! Run configuration: flat `key = value` files plus overrides.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{HeteroGraph, SplitRatios};
use crate::error::{Error, Result};
use crate::model::{ModelConfig, TrainConfig};
use crate::textsig::{load_embeddings, SignalProvider, SignalSource, DEFAULT_HASH_DIM};

/// Layer count, fixed or derived from the graph's shortest paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layers {
    Fixed(usize),
    Auto,
}

/// Where node signals come from.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Embeddings {
    Hash,
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub dim: usize,
    pub layers: Layers,
    pub window: usize,
    pub activation: String,
    pub per_type_params: bool,
    pub injection: String,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub patience: usize,
    pub negative_ratio: f64,
    pub batch_size: usize,
    pub seed: u64,
    pub embeddings: Embeddings,
    pub hash_dim: usize,
    pub gain: f64,
    /// `train:val:test` weights.
    pub split: String,
}

impl Default for Config {
    fn default() -> Self {
        let m = ModelConfig::default();
        let t = TrainConfig::default();
        Self {
            dim: m.dim,
            layers: Layers::Fixed(m.layers),
            window: m.window,
            activation: m.activation,
            per_type_params: m.per_type_params,
            injection: m.injection,
            lr: t.lr,
            beta1: t.beta1,
            beta2: t.beta2,
            eps: t.eps,
            epochs: t.epochs,
            patience: t.patience,
            negative_ratio: t.negative_ratio,
            batch_size: t.batch_size,
            seed: 0,
            embeddings: Embeddings::Hash,
            hash_dim: DEFAULT_HASH_DIM,
            gain: 1.0,
            split: "8:1:1".into(),
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| Error::invalid(format!("bad value `{value}` for `{key}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::invalid(format!("bad value `{value}` for `{key}`"))),
    }
}

impl Config {
    /// Applies one `key`/`value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key.trim() {
            "D" | "dim" => self.dim = parse_num(key, v)?,
            "L" | "layers" => {
                self.layers = if v == "auto" { Layers::Auto } else { Layers::Fixed(parse_num(key, v)?) }
            }
            "f" | "window" => self.window = parse_num(key, v)?,
            "activation" => self.activation = v.to_string(),
            "per_type_params" => self.per_type_params = parse_bool(key, v)?,
            "injection" => self.injection = v.to_string(),
            "lr" => self.lr = parse_num(key, v)?,
            "beta1" => self.beta1 = parse_num(key, v)?,
            "beta2" => self.beta2 = parse_num(key, v)?,
            "eps" => self.eps = parse_num(key, v)?,
            "epochs" => self.epochs = parse_num(key, v)?,
            "patience" => self.patience = parse_num(key, v)?,
            "negative_ratio" => self.negative_ratio = parse_num(key, v)?,
            "batch_size" => self.batch_size = parse_num(key, v)?,
            "seed" => self.seed = parse_num(key, v)?,
            "embeddings" => {
                self.embeddings = if v == "hash" { Embeddings::Hash } else { Embeddings::File(PathBuf::from(v)) }
            }
            "hash_dim" => self.hash_dim = parse_num(key, v)?,
            "gain" => self.gain = parse_num(key, v)?,
            "split" => {
                SplitRatios::parse(v)?;
                self.split = v.to_string();
            }
            other => return Err(Error::invalid(format!("unknown configuration key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |msg: String| Error::Parse { path: origin.to_string(), line: n + 1, msg };
            let (k, v) = line.split_once('=').ok_or_else(|| err("expected `key = value`".into()))?;
            cfg.set(k, v).map_err(|e| err(e.to_string()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a file; relative embedding paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::parse(&text, &path.display().to_string())?;
        if let Embeddings::File(p) = &cfg.embeddings {
            if p.is_relative() {
                let base = path.parent().unwrap_or(Path::new("."));
                cfg.embeddings = Embeddings::File(base.join(p));
            }
        }
        Ok(cfg)
    }

    /// Applies `key=value` overrides in order.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o.split_once('=').ok_or_else(|| Error::invalid(format!("override `{o}` is not key=value")))?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if self.hash_dim == 0 {
            return Err(Error::invalid("hash_dim must be positive"));
        }
        if !(self.lr >= 0.0) || !(self.negative_ratio >= 0.0) || !(self.gain >= 0.0) {
            return Err(Error::invalid("lr, negative_ratio and gain must be non-negative"));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return Err(Error::invalid("Adam betas must lie in [0, 1) and eps must be positive"));
        }
        self.model_config(1)?;
        Ok(())
    }

    pub fn split_ratios(&self) -> Result<SplitRatios> {
        SplitRatios::parse(&self.split)
    }

    /// Model settings with the layer count resolved to `layers` when `L`
    /// is `auto`.
    pub fn model_config(&self, auto_layers: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            dim: self.dim,
            layers: match self.layers {
                Layers::Fixed(l) => l,
                Layers::Auto => auto_layers,
            },
            window: self.window,
            activation: self.activation.clone(),
            per_type_params: self.per_type_params,
            injection: self.injection.clone(),
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            epochs: self.epochs,
            patience: self.patience,
            negative_ratio: self.negative_ratio,
            batch_size: self.batch_size,
            seed: self.seed,
        }
    }

    pub fn signal_provider(&self) -> Result<SignalProvider> {
        let source = match &self.embeddings {
            Embeddings::Hash => SignalSource::Hash { dim: self.hash_dim, seed: self.seed },
            Embeddings::File(p) => SignalSource::Table(load_embeddings(p)?),
        };
        SignalProvider::new(source, self.dim, self.seed, self.gain)
    }

    pub fn signals(&self, g: &HeteroGraph) -> Result<Vec<Vec<f64>>> {
        self.signal_provider()?.signals_for(g)
    }
}
