//! Run configuration as flat `key = value` text.
//!
//! Blank lines and `#` comments are ignored. Every key is optional; unknown
//! keys and repeated keys are errors. [`RunConfig::to_text`] writes every
//! key, so its output reproduces the run exactly.

use std::fmt;
use std::str::FromStr;

use crate::augment::{AugmentKind, AugmentationPolicy};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pipeline {
    GroupCl,
    GroupIg,
    GraphClBaseline,
}

impl Pipeline {
    pub fn name(self) -> &'static str {
        match self {
            Pipeline::GroupCl => "groupcl",
            Pipeline::GroupIg => "groupig",
            Pipeline::GraphClBaseline => "graphcl-baseline",
        }
    }
}

impl fmt::Display for Pipeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Pipeline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "groupcl" => Ok(Pipeline::GroupCl),
            "groupig" => Ok(Pipeline::GroupIg),
            "graphcl-baseline" => Ok(Pipeline::GraphClBaseline),
            _ => Err(Error::Config(format!("unknown pipeline `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Estimator {
    NonParam,
    Param,
}

impl Estimator {
    pub fn name(self) -> &'static str {
        match self {
            Estimator::NonParam => "nonparam",
            Estimator::Param => "param",
        }
    }
}

impl FromStr for Estimator {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nonparam" => Ok(Estimator::NonParam),
            "param" => Ok(Estimator::Param),
            _ => Err(Error::Config(format!("unknown estimator `{s}`"))),
        }
    }
}

/// Every hyperparameter and the seed of one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub pipeline: Pipeline,
    pub groups: usize,
    pub embed_dim: usize,
    pub key_dim: usize,
    pub gin_layers: usize,
    pub gin_hidden: usize,
    pub node_dim: usize,
    pub learn_eps: bool,
    pub gin_eps: f64,
    pub lambda: f64,
    pub estimator: Estimator,
    pub varnet_steps: usize,
    pub augmentation: AugmentationPolicy,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub tie_views: bool,
    pub scale_scores: bool,
    pub node_map: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            pipeline: Pipeline::GroupCl,
            groups: 4,
            embed_dim: 160,
            key_dim: 100,
            gin_layers: 3,
            gin_hidden: 32,
            node_dim: 32,
            learn_eps: false,
            gin_eps: 0.0,
            lambda: 0.5,
            estimator: Estimator::NonParam,
            varnet_steps: 1,
            augmentation: AugmentationPolicy::default(),
            lr: 1e-3,
            epochs: 20,
            batch_size: 128,
            seed: 0,
            tie_views: true,
            scale_scores: false,
            node_map: true,
        }
    }
}

pub const KEYS: &[&str] = &[
    "pipeline",
    "groups",
    "embed_dim",
    "key_dim",
    "gin_layers",
    "gin_hidden",
    "node_dim",
    "learn_eps",
    "gin_eps",
    "lambda",
    "estimator",
    "varnet_steps",
    "aug_kinds",
    "aug_ratio",
    "lr",
    "epochs",
    "batch_size",
    "seed",
    "tie_views",
    "scale_scores",
    "node_map",
];

fn parse_value<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value `{value}` for `{key}`")))
}

impl RunConfig {
    pub fn value_dim(&self) -> usize {
        self.embed_dim / self.groups.max(1)
    }

    /// Parse config text on top of the defaults.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        let mut seen = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected `key = value`, got `{line}`", i + 1))
            })?;
            let key = key.trim();
            if seen.contains(&key) {
                return Err(Error::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
            seen.push(key);
            cfg.set(key, value.trim())
                .map_err(|e| Error::Config(format!("line {}: {}", i + 1, strip(e))))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Apply one `key=value` override.
    pub fn apply_override(&mut self, kv: &str) -> Result<()> {
        let (key, value) = kv
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{kv}` is not key=value")))?;
        self.set(key.trim(), value.trim())?;
        self.validate()
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "pipeline" => self.pipeline = value.parse()?,
            "groups" => self.groups = parse_value(key, value)?,
            "embed_dim" => self.embed_dim = parse_value(key, value)?,
            "key_dim" => self.key_dim = parse_value(key, value)?,
            "gin_layers" => self.gin_layers = parse_value(key, value)?,
            "gin_hidden" => self.gin_hidden = parse_value(key, value)?,
            "node_dim" => self.node_dim = parse_value(key, value)?,
            "learn_eps" => self.learn_eps = parse_value(key, value)?,
            "gin_eps" => self.gin_eps = parse_value(key, value)?,
            "lambda" => self.lambda = parse_value(key, value)?,
            "estimator" => self.estimator = value.parse()?,
            "varnet_steps" => self.varnet_steps = parse_value(key, value)?,
            "aug_kinds" => {
                let kinds = value
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<Vec<AugmentKind>>>()?;
                self.augmentation = AugmentationPolicy::new(kinds, self.augmentation.ratio())?;
            }
            "aug_ratio" => {
                let ratio = parse_value(key, value)?;
                self.augmentation =
                    AugmentationPolicy::new(self.augmentation.kinds().to_vec(), ratio)?;
            }
            "lr" => self.lr = parse_value(key, value)?,
            "epochs" => self.epochs = parse_value(key, value)?,
            "batch_size" => self.batch_size = parse_value(key, value)?,
            "seed" => self.seed = parse_value(key, value)?,
            "tie_views" => self.tie_views = parse_value(key, value)?,
            "scale_scores" => self.scale_scores = parse_value(key, value)?,
            "node_map" => self.node_map = parse_value(key, value)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.groups == 0 {
            return fail("groups must be at least 1".into());
        }
        if self.embed_dim == 0 || self.embed_dim % self.groups != 0 {
            return fail(format!(
                "embed_dim {} must be a positive multiple of groups {}",
                self.embed_dim, self.groups
            ));
        }
        if self.key_dim == 0 || self.gin_hidden == 0 || self.node_dim == 0 {
            return fail("key_dim, gin_hidden and node_dim must be positive".into());
        }
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return fail(format!("lambda must be non-negative, got {}", self.lambda));
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return fail(format!("lr must be positive, got {}", self.lr));
        }
        if self.batch_size < 2 {
            return fail(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !self.gin_eps.is_finite() {
            return fail("gin_eps must be finite".into());
        }
        if self.estimator == Estimator::Param && self.groups < 2 {
            return fail("the param estimator needs at least 2 groups".into());
        }
        if self.pipeline == Pipeline::GroupIg && !self.node_map && self.node_dim != self.value_dim() {
            return fail(format!(
                "node_map=false needs node_dim {} equal to embed_dim/groups {}",
                self.node_dim,
                self.value_dim()
            ));
        }
        Ok(())
    }

    /// Every key in canonical order, one `key = value` per line.
    pub fn to_text(&self) -> String {
        let kinds: Vec<&str> = self.augmentation.kinds().iter().map(|k| k.name()).collect();
        let lines = [
            ("pipeline", self.pipeline.name().to_string()),
            ("groups", self.groups.to_string()),
            ("embed_dim", self.embed_dim.to_string()),
            ("key_dim", self.key_dim.to_string()),
            ("gin_layers", self.gin_layers.to_string()),
            ("gin_hidden", self.gin_hidden.to_string()),
            ("node_dim", self.node_dim.to_string()),
            ("learn_eps", self.learn_eps.to_string()),
            ("gin_eps", self.gin_eps.to_string()),
            ("lambda", self.lambda.to_string()),
            ("estimator", self.estimator.name().to_string()),
            ("varnet_steps", self.varnet_steps.to_string()),
            ("aug_kinds", kinds.join(",")),
            ("aug_ratio", self.augmentation.ratio().to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("seed", self.seed.to_string()),
            ("tie_views", self.tie_views.to_string()),
            ("scale_scores", self.scale_scores.to_string()),
            ("node_map", self.node_map.to_string()),
        ];
        debug_assert_eq!(lines.len(), KEYS.len());
        lines
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }
}

fn strip(e: Error) -> String {
    match e {
        Error::Config(m) => m,
        other => other.to_string(),
    }
}
