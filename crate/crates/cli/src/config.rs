//! Experiment configuration files (TOML, or JSON by extension).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use fedsift::datasets::{NoiseKind, PartitionScheme};
use fedsift::federation::{AtParams, FederationConfig, SelectionMode, SelectionSpace, SvddParams};
use fedsift::mtae::{LossWeights, MtaeSpec};
use fedsift::nn::SgdConfig;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

impl ConfigError {
    fn invalid(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self::Invalid {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Dotted key path the error refers to, if any.
    pub fn key_path(&self) -> Option<&str> {
        match self {
            Self::Invalid { path, .. } => Some(path),
            Self::Read { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub noise: NoiseConfig,
    #[serde(default)]
    pub partition: PartitionConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub federation: FederationBlock,
    #[serde(default)]
    pub selection: SelectionConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetConfig {
    Synth(SynthConfig),
    Idx(IdxConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub class_count: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    pub image_side: usize,
    pub pixel_noise: f64,
    pub blob_width: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            class_count: 4,
            train_per_class: 300,
            test_per_class: 100,
            image_side: 8,
            pixel_noise: 0.1,
            blob_width: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IdxConfig {
    pub train_images: PathBuf,
    pub train_labels: PathBuf,
    pub test_images: PathBuf,
    pub test_labels: PathBuf,
    /// Image source for open-set noise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_set_images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub open_set_labels: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseKindConfig {
    None,
    ClosedSet,
    OpenSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseConfig {
    pub kind: NoiseKindConfig,
    pub rate: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            kind: NoiseKindConfig::None,
            rate: 0.4,
        }
    }
}

impl NoiseConfig {
    pub fn kind(&self) -> Option<NoiseKind> {
        match self.kind {
            NoiseKindConfig::None => None,
            NoiseKindConfig::ClosedSet => Some(NoiseKind::ClosedSet),
            NoiseKindConfig::OpenSet => Some(NoiseKind::OpenSet),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeConfig {
    Dirichlet,
    Shard,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PartitionConfig {
    pub scheme: SchemeConfig,
    pub alpha: f64,
    pub shards_per_client: usize,
}

impl Default for PartitionConfig {
    fn default() -> Self {
        Self {
            scheme: SchemeConfig::Dirichlet,
            alpha: 0.5,
            shards_per_client: 2,
        }
    }
}

impl PartitionConfig {
    pub fn scheme(&self) -> PartitionScheme {
        match self.scheme {
            SchemeConfig::Dirichlet => PartitionScheme::Dirichlet { alpha: self.alpha },
            SchemeConfig::Shard => PartitionScheme::Shard {
                per_client: self.shards_per_client,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub embed_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub classifier_hidden: Vec<usize>,
    pub lambda_rec: f64,
    pub lambda_cls: f64,
    pub lambda_reg: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub local_epochs: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let spec = MtaeSpec::desk_scale(1, 2);
        let weights = LossWeights::default();
        let sgd = SgdConfig::default();
        Self {
            embed_dim: spec.embed_dim,
            encoder_hidden: spec.encoder_hidden,
            decoder_hidden: spec.decoder_hidden,
            classifier_hidden: spec.classifier_hidden,
            lambda_rec: weights.rec,
            lambda_cls: weights.cls,
            lambda_reg: weights.reg,
            learning_rate: sgd.learning_rate,
            weight_decay: sgd.weight_decay,
            batch_size: sgd.batch_size,
            local_epochs: sgd.local_epochs,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, class_count: usize) -> MtaeSpec {
        MtaeSpec {
            input_dim,
            embed_dim: self.embed_dim,
            encoder_hidden: self.encoder_hidden.clone(),
            decoder_hidden: self.decoder_hidden.clone(),
            classifier_hidden: self.classifier_hidden.clone(),
            class_count,
        }
    }

    pub fn loss_weights(&self) -> LossWeights {
        LossWeights {
            rec: self.lambda_rec,
            cls: self.lambda_cls,
            reg: self.lambda_reg,
        }
    }

    pub fn sgd(&self) -> SgdConfig {
        SgdConfig {
            learning_rate: self.learning_rate,
            weight_decay: self.weight_decay,
            batch_size: self.batch_size,
            local_epochs: self.local_epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FederationBlock {
    pub rounds: usize,
    pub clients: usize,
    /// Defaults to `ceil(clients / 10)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub clients_per_round: Option<usize>,
    pub eval_interval: usize,
}

impl Default for FederationBlock {
    fn default() -> Self {
        Self {
            rounds: 1000,
            clients: 100,
            clients_per_round: None,
            eval_interval: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeConfig {
    None,
    AdaptiveThreshold,
    Ocsvm,
    Iforest,
}

impl From<ModeConfig> for SelectionMode {
    fn from(m: ModeConfig) -> Self {
        match m {
            ModeConfig::None => Self::None,
            ModeConfig::AdaptiveThreshold => Self::AdaptiveThreshold,
            ModeConfig::Ocsvm => Self::Ocsvm,
            ModeConfig::Iforest => Self::Iforest,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpaceConfig {
    Loss2d,
    Feature,
}

impl From<SpaceConfig> for SelectionSpace {
    fn from(s: SpaceConfig) -> Self {
        match s {
            SpaceConfig::Loss2d => Self::Loss2d,
            SpaceConfig::Feature => Self::Feature,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SelectionConfig {
    pub mode: ModeConfig,
    pub space: SpaceConfig,
    /// Defaults to 400 in loss space and 600 in feature space.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warmup_round: Option<usize>,
    pub refit_interval: usize,
    pub contamination: f64,
    pub at: AtConfig,
    pub svdd: SvddConfig,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            mode: ModeConfig::None,
            space: SpaceConfig::Loss2d,
            warmup_round: None,
            refit_interval: 5,
            contamination: 0.4,
            at: AtConfig::default(),
            svdd: SvddConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AtConfig {
    pub loss_step: f64,
    pub window: usize,
    pub retain_prob: f64,
}

impl Default for AtConfig {
    fn default() -> Self {
        let p = AtParams::default();
        Self {
            loss_step: p.loss_step,
            window: p.window,
            retain_prob: p.retain_prob,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvddConfig {
    pub enabled: bool,
    pub nu: f64,
    pub activation_round: usize,
    pub recenter: bool,
}

impl Default for SvddConfig {
    fn default() -> Self {
        let p = SvddParams::default();
        Self {
            enabled: p.enabled,
            nu: p.nu,
            activation_round: p.activation_round,
            recenter: p.recenter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    pub directory: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
        }
    }
}

fn decode<'de, D: serde::Deserializer<'de>>(de: D) -> Result<ExperimentConfig, ConfigError>
where
    D::Error: std::fmt::Display,
{
    serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        ConfigError::invalid(
            if path == "." { String::new() } else { path },
            e.into_inner().to_string(),
        )
    })
}

impl ExperimentConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| ConfigError::invalid("", e.to_string().trim_end()))?;
        decode(de)?.resolved()
    }

    pub fn from_json_str(text: &str) -> Result<Self, ConfigError> {
        let mut de = serde_json::Deserializer::from_str(text);
        decode(&mut de)?.resolved()
    }

    /// Reads, fills derived defaults and validates. Files ending in `.json`
    /// are JSON; anything else is TOML.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            Self::from_json_str(&text)
        } else {
            Self::from_toml_str(&text)
        }
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config is plain data")
    }

    fn resolved(mut self) -> Result<Self, ConfigError> {
        let fed = &mut self.federation;
        fed.clients_per_round
            .get_or_insert(fed.clients.div_ceil(10).max(1));
        let default_warmup = match self.selection.space {
            SpaceConfig::Loss2d => 400,
            SpaceConfig::Feature => 600,
        };
        self.selection.warmup_round.get_or_insert(default_warmup);
        self.validate()?;
        Ok(self)
    }

    pub fn class_count(&self) -> Option<usize> {
        match &self.dataset {
            DatasetConfig::Synth(s) => Some(s.class_count),
            DatasetConfig::Idx(_) => None,
        }
    }

    pub fn federation_config(&self, workers: usize) -> FederationConfig {
        let sel = &self.selection;
        let fed = &self.federation;
        let mut cfg = FederationConfig::new(fed.rounds, fed.clients);
        cfg.clients_per_round = fed.clients_per_round.unwrap_or(cfg.clients_per_round);
        cfg.eval_interval = fed.eval_interval;
        cfg.warmup_round = sel.warmup_round.unwrap_or(cfg.warmup_round);
        cfg.refit_interval = sel.refit_interval;
        cfg.mode = sel.mode.into();
        cfg.space = sel.space.into();
        cfg.contamination = sel.contamination;
        cfg.at = AtParams {
            loss_step: sel.at.loss_step,
            window: sel.at.window,
            retain_prob: sel.at.retain_prob,
        };
        cfg.svdd = SvddParams {
            enabled: sel.svdd.enabled,
            nu: sel.svdd.nu,
            activation_round: sel.svdd.activation_round,
            recenter: sel.svdd.recenter,
        };
        cfg.seed = self.seed;
        cfg.workers = workers.max(1);
        cfg
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        fn err(path: &str, message: impl Into<String>) -> ConfigError {
            ConfigError::invalid(path, message)
        }
        let unit = |v: f64| (0.0..=1.0).contains(&v);

        match &self.dataset {
            DatasetConfig::Synth(s) => {
                if s.class_count < 2 {
                    return Err(err("dataset.class_count", "need at least 2 classes"));
                }
                if s.train_per_class == 0 || s.test_per_class == 0 {
                    return Err(err(
                        "dataset.train_per_class",
                        "per-class counts must be positive",
                    ));
                }
                if s.image_side == 0 {
                    return Err(err("dataset.image_side", "must be positive"));
                }
                if !unit(s.pixel_noise) {
                    return Err(err("dataset.pixel_noise", "must lie in [0, 1]"));
                }
                if !(s.blob_width > 0.0 && s.blob_width.is_finite()) {
                    return Err(err("dataset.blob_width", "must be positive"));
                }
                if self.federation.clients > s.class_count * s.train_per_class {
                    return Err(err(
                        "federation.clients",
                        format!(
                            "{} clients exceed the {} training samples",
                            self.federation.clients,
                            s.class_count * s.train_per_class
                        ),
                    ));
                }
            }
            DatasetConfig::Idx(i) => {
                if i.open_set_images.is_some() != i.open_set_labels.is_some() {
                    return Err(err(
                        "dataset.open_set_images",
                        "open_set_images and open_set_labels go together",
                    ));
                }
                if self.noise.kind == NoiseKindConfig::OpenSet && i.open_set_images.is_none() {
                    return Err(err(
                        "dataset.open_set_images",
                        "open-set noise needs an image source",
                    ));
                }
            }
        }

        if !unit(self.noise.rate) {
            return Err(err(
                "noise.rate",
                format!("must lie in [0, 1], got {}", self.noise.rate),
            ));
        }
        let p = &self.partition;
        if p.scheme == SchemeConfig::Dirichlet && !(p.alpha > 0.0 && p.alpha.is_finite()) {
            return Err(err("partition.alpha", "must be positive"));
        }
        if p.scheme == SchemeConfig::Shard && p.shards_per_client == 0 {
            return Err(err("partition.shards_per_client", "must be positive"));
        }

        let m = &self.model;
        if m.embed_dim == 0 {
            return Err(err("model.embed_dim", "must be positive"));
        }
        for (key, layers) in [
            ("model.encoder_hidden", &m.encoder_hidden),
            ("model.decoder_hidden", &m.decoder_hidden),
            ("model.classifier_hidden", &m.classifier_hidden),
        ] {
            if layers.contains(&0) {
                return Err(err(key, "hidden widths must be positive"));
            }
        }
        for (key, v) in [
            ("model.lambda_rec", m.lambda_rec),
            ("model.lambda_cls", m.lambda_cls),
            ("model.lambda_reg", m.lambda_reg),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(err(key, "must be a finite non-negative number"));
            }
        }
        if !(m.learning_rate > 0.0 && m.learning_rate.is_finite()) {
            return Err(err("model.learning_rate", "must be positive"));
        }
        if !(m.weight_decay >= 0.0 && m.weight_decay.is_finite()) {
            return Err(err("model.weight_decay", "must be non-negative"));
        }
        if m.batch_size == 0 {
            return Err(err("model.batch_size", "must be positive"));
        }

        let f = &self.federation;
        if f.clients == 0 {
            return Err(err("federation.clients", "must be positive"));
        }
        let per_round = f.clients_per_round.unwrap_or(1);
        if per_round == 0 || per_round > f.clients {
            return Err(err(
                "federation.clients_per_round",
                format!("must lie in [1, {}], got {per_round}", f.clients),
            ));
        }
        if f.eval_interval == 0 {
            return Err(err("federation.eval_interval", "must be positive"));
        }

        let s = &self.selection;
        let warmup = s.warmup_round.unwrap_or(0);
        if f.rounds > 0 && warmup >= f.rounds {
            return Err(err(
                "selection.warmup_round",
                format!(
                    "selection.warmup_round ({warmup}) must be smaller than federation.rounds ({})",
                    f.rounds
                ),
            ));
        }
        if s.refit_interval == 0 {
            return Err(err("selection.refit_interval", "must be positive"));
        }
        let c = s.contamination;
        let ok = match s.mode {
            ModeConfig::Ocsvm => c > 0.0 && c <= 1.0,
            _ => unit(c),
        };
        if !ok {
            return Err(err("selection.contamination", format!("out of range: {c}")));
        }
        if !unit(s.at.loss_step) {
            return Err(err("selection.at.loss_step", "must lie in [0, 1]"));
        }
        if s.at.window == 0 {
            return Err(err("selection.at.window", "must be positive"));
        }
        if !unit(s.at.retain_prob) {
            return Err(err("selection.at.retain_prob", "must lie in [0, 1]"));
        }
        if !(s.svdd.nu > 0.0 && s.svdd.nu < 1.0) {
            return Err(err("selection.svdd.nu", "must lie in (0, 1)"));
        }
        Ok(())
    }
}
