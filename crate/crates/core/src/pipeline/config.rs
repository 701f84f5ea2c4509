//! Flat key=value configuration with `#` comments and `[section]` headers.
//!
//! The `[run]` section drives training, `[gen]` drives dataset synthesis.
//! Keys before any header belong to `[run]`. Every key has a default, so
//! an empty file is a valid configuration. Serialization uses shortest
//! round-trip float formatting, so an echoed config parses back to an
//! equal value.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use thiserror::Error;

use crate::clustering::DecayMode;
use crate::synthgen::SynthSpec;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config line {line}: expected key=value, got {text:?}")]
    MalformedLine { line: usize, text: String },
    #[error("unknown config key {0:?} in section [{1}]")]
    UnknownKey(String, String),
    #[error("config key {key}: cannot parse {value:?} as {kind}")]
    BadValue {
        key: String,
        value: String,
        kind: &'static str,
    },
    #[error("config key {key}: value {value} outside {range}")]
    OutOfRange {
        key: String,
        value: String,
        range: &'static str,
    },
}

type Sections = BTreeMap<String, BTreeMap<String, String>>;

/// Parse the sectioned key=value format.
pub fn parse_config_text(text: &str) -> Result<Sections, ConfigError> {
    let mut sections: Sections = BTreeMap::new();
    let mut current = "run".to_string();
    for (idx, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(pos) => &raw[..pos],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            current = line[1..line.len() - 1].trim().to_string();
            sections.entry(current.clone()).or_default();
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::MalformedLine {
                line: idx + 1,
                text: raw.to_string(),
            });
        };
        sections
            .entry(current.clone())
            .or_default()
            .insert(key.trim().to_string(), value.trim().to_string());
    }
    Ok(sections)
}

fn parse_f64(key: &str, value: &str) -> Result<f64, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        kind: "float",
    })
}

fn parse_usize(key: &str, value: &str) -> Result<usize, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        kind: "integer",
    })
}

fn parse_u64(key: &str, value: &str) -> Result<u64, ConfigError> {
    value.parse().map_err(|_| ConfigError::BadValue {
        key: key.to_string(),
        value: value.to_string(),
        kind: "integer",
    })
}

fn parse_bool(key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "1" | "on" => Ok(true),
        "false" | "0" | "off" => Ok(false),
        _ => Err(ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
            kind: "bool",
        }),
    }
}

fn range_check(ok: bool, key: &str, value: impl ToString, range: &'static str) -> Result<(), ConfigError> {
    if ok {
        Ok(())
    } else {
        Err(ConfigError::OutOfRange {
            key: key.to_string(),
            value: value.to_string(),
            range,
        })
    }
}

/// Component switches for the refinement stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Toggles {
    /// Decaying clustering radius (off = radius fixed at eps0).
    pub dynamic_eps: bool,
    /// Density-weighted centroid initialization.
    pub weighted_centroids: bool,
    /// Confidence-based label softening.
    pub confidence_refine: bool,
    /// Teacher branch with latent-cluster label redistribution.
    pub teacher_labels: bool,
    /// Clothing augmentation on the teacher input.
    pub teacher_augment: bool,
}

impl Toggles {
    pub fn all_on() -> Self {
        Self {
            dynamic_eps: true,
            weighted_centroids: true,
            confidence_refine: true,
            teacher_labels: true,
            teacher_augment: true,
        }
    }

    pub fn all_off() -> Self {
        Self {
            dynamic_eps: false,
            weighted_centroids: false,
            confidence_refine: false,
            teacher_labels: false,
            teacher_augment: false,
        }
    }
}

/// Every hyperparameter of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub epochs: usize,
    pub iterations: usize,
    /// Pseudo-identities per batch.
    pub batch_p: usize,
    /// Samples per pseudo-identity.
    pub batch_k: usize,
    pub eps0: f64,
    pub eta: f64,
    pub decay_mode: DecayMode,
    pub min_samples: usize,
    pub alpha: f64,
    pub beta: f64,
    /// Memory-bank momentum.
    pub mu: f64,
    /// Teacher EMA momentum.
    pub gamma: f64,
    pub tau: f64,
    /// Latent cluster set size.
    pub k: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    /// Optimizer steps at which the learning rate decays by 0.1.
    pub milestones: Vec<usize>,
    pub hidden_dim: usize,
    pub embed_dim: usize,
    pub pretrain_epochs: usize,
    pub pretrain_iterations: usize,
    /// Label-noise fraction injected into the measurement-only centroid
    /// accuracy probe logged per epoch (never into training).
    pub mse_probe_noise: f64,
    pub seed: u64,
    pub toggles: Toggles,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            epochs: 25,
            iterations: 200,
            batch_p: 16,
            batch_k: 8,
            eps0: 0.8,
            eta: 0.97,
            decay_mode: DecayMode::Exponential,
            min_samples: 4,
            alpha: 0.4,
            beta: 0.4,
            mu: 0.2,
            gamma: 0.99,
            tau: 0.05,
            k: 2,
            learning_rate: 1e-4,
            weight_decay: 5e-4,
            milestones: vec![2000, 4000],
            hidden_dim: 256,
            embed_dim: 128,
            pretrain_epochs: 5,
            pretrain_iterations: 50,
            mse_probe_noise: 0.0,
            seed: 0,
            toggles: Toggles::all_on(),
        }
    }
}

impl RunConfig {
    /// Read the `[run]` section, applying defaults for absent keys.
    pub fn from_sections(sections: &Sections) -> Result<Self, ConfigError> {
        let empty = BTreeMap::new();
        let section = sections.get("run").unwrap_or(&empty);
        let mut cfg = Self::default();
        for (key, value) in section {
            cfg.apply(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_sections(&parse_config_text(text)?)
    }

    /// Apply one key=value override.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        match key {
            "epochs" => self.epochs = parse_usize(key, value)?,
            "iterations" => self.iterations = parse_usize(key, value)?,
            "batch_p" => self.batch_p = parse_usize(key, value)?,
            "batch_k" => self.batch_k = parse_usize(key, value)?,
            "eps0" => self.eps0 = parse_f64(key, value)?,
            "eta" => self.eta = parse_f64(key, value)?,
            "decay_mode" => {
                self.decay_mode = DecayMode::parse(value).ok_or(ConfigError::BadValue {
                    key: key.to_string(),
                    value: value.to_string(),
                    kind: "exponential|linear|square",
                })?
            }
            "min_samples" => self.min_samples = parse_usize(key, value)?,
            "alpha" => self.alpha = parse_f64(key, value)?,
            "beta" => self.beta = parse_f64(key, value)?,
            "mu" => self.mu = parse_f64(key, value)?,
            "gamma" => self.gamma = parse_f64(key, value)?,
            "tau" => self.tau = parse_f64(key, value)?,
            "k" => self.k = parse_usize(key, value)?,
            "learning_rate" => self.learning_rate = parse_f64(key, value)?,
            "weight_decay" => self.weight_decay = parse_f64(key, value)?,
            "milestones" => {
                self.milestones = if value.is_empty() {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| parse_usize(key, v.trim()))
                        .collect::<Result<_, _>>()?
                }
            }
            "hidden_dim" => self.hidden_dim = parse_usize(key, value)?,
            "embed_dim" => self.embed_dim = parse_usize(key, value)?,
            "pretrain_epochs" => self.pretrain_epochs = parse_usize(key, value)?,
            "pretrain_iterations" => self.pretrain_iterations = parse_usize(key, value)?,
            "mse_probe_noise" => self.mse_probe_noise = parse_f64(key, value)?,
            "seed" => self.seed = parse_u64(key, value)?,
            "dynamic_eps" => self.toggles.dynamic_eps = parse_bool(key, value)?,
            "weighted_centroids" => self.toggles.weighted_centroids = parse_bool(key, value)?,
            "confidence_refine" => self.toggles.confidence_refine = parse_bool(key, value)?,
            "teacher_labels" => self.toggles.teacher_labels = parse_bool(key, value)?,
            "teacher_augment" => self.toggles.teacher_augment = parse_bool(key, value)?,
            _ => return Err(ConfigError::UnknownKey(key.to_string(), "run".into())),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        range_check(self.epochs >= 1, "epochs", self.epochs, ">= 1")?;
        range_check(self.batch_p >= 1, "batch_p", self.batch_p, ">= 1")?;
        range_check(self.batch_k >= 1, "batch_k", self.batch_k, ">= 1")?;
        range_check(
            self.eps0 > 0.0 && self.eps0 <= 2.0,
            "eps0",
            self.eps0,
            "(0, 2]",
        )?;
        range_check(self.eta > 0.0 && self.eta <= 1.0, "eta", self.eta, "(0, 1]")?;
        range_check(
            self.min_samples >= 1,
            "min_samples",
            self.min_samples,
            ">= 1",
        )?;
        range_check(
            (0.0..=1.0).contains(&self.alpha),
            "alpha",
            self.alpha,
            "[0, 1]",
        )?;
        range_check(
            (0.0..=1.0).contains(&self.beta),
            "beta",
            self.beta,
            "[0, 1]",
        )?;
        range_check((0.0..=1.0).contains(&self.mu), "mu", self.mu, "[0, 1]")?;
        range_check(
            (0.0..=1.0).contains(&self.gamma),
            "gamma",
            self.gamma,
            "[0, 1]",
        )?;
        range_check(self.tau > 0.0, "tau", self.tau, "> 0")?;
        range_check(self.k >= 1, "k", self.k, ">= 1")?;
        range_check(
            self.learning_rate > 0.0,
            "learning_rate",
            self.learning_rate,
            "> 0",
        )?;
        range_check(
            self.weight_decay >= 0.0,
            "weight_decay",
            self.weight_decay,
            ">= 0",
        )?;
        range_check(
            (0.0..=1.0).contains(&self.mse_probe_noise),
            "mse_probe_noise",
            self.mse_probe_noise,
            "[0, 1]",
        )?;
        range_check(
            self.hidden_dim >= 1 && self.embed_dim >= 2,
            "hidden_dim/embed_dim",
            self.hidden_dim,
            "hidden >= 1, embed >= 2",
        )?;
        Ok(())
    }

    /// Serialize as a `[run]` section that parses back to an equal config.
    pub fn to_config_string(&self) -> String {
        let mut out = String::from("[run]\n");
        let milestones: Vec<String> = self.milestones.iter().map(|m| m.to_string()).collect();
        let _ = write!(
            out,
            "epochs = {}\niterations = {}\nbatch_p = {}\nbatch_k = {}\n\
             eps0 = {}\neta = {}\ndecay_mode = {}\nmin_samples = {}\n\
             alpha = {}\nbeta = {}\nmu = {}\ngamma = {}\ntau = {}\nk = {}\n\
             learning_rate = {}\nweight_decay = {}\nmilestones = {}\n\
             hidden_dim = {}\nembed_dim = {}\npretrain_epochs = {}\n\
             pretrain_iterations = {}\nmse_probe_noise = {}\nseed = {}\n\
             dynamic_eps = {}\nweighted_centroids = {}\nconfidence_refine = {}\n\
             teacher_labels = {}\nteacher_augment = {}\n",
            self.epochs,
            self.iterations,
            self.batch_p,
            self.batch_k,
            self.eps0,
            self.eta,
            self.decay_mode.name(),
            self.min_samples,
            self.alpha,
            self.beta,
            self.mu,
            self.gamma,
            self.tau,
            self.k,
            self.learning_rate,
            self.weight_decay,
            milestones.join(","),
            self.hidden_dim,
            self.embed_dim,
            self.pretrain_epochs,
            self.pretrain_iterations,
            self.mse_probe_noise,
            self.seed,
            self.toggles.dynamic_eps,
            self.toggles.weighted_centroids,
            self.toggles.confidence_refine,
            self.toggles.teacher_labels,
            self.toggles.teacher_augment,
        );
        out
    }
}

/// The `[gen]` section: a [`SynthSpec`] plus the rendering kind.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub spec: SynthSpec,
    /// "silhouettes" or "embeddings".
    pub kind: String,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            spec: SynthSpec::default(),
            kind: "silhouettes".into(),
        }
    }
}

impl GenConfig {
    pub fn from_sections(sections: &Sections) -> Result<Self, ConfigError> {
        let empty = BTreeMap::new();
        let section = sections.get("gen").unwrap_or(&empty);
        let mut cfg = Self::default();
        for (key, value) in section {
            match key.as_str() {
                "num_identities" => cfg.spec.num_identities = parse_usize(key, value)?,
                "sequences_per_identity" => {
                    cfg.spec.sequences_per_identity = parse_usize(key, value)?
                }
                "clothing_conditions" => cfg.spec.clothing_conditions = parse_usize(key, value)?,
                "intra_spread" => cfg.spec.intra_spread = parse_f64(key, value)?,
                "clothing_shift" => cfg.spec.clothing_shift = parse_f64(key, value)?,
                "embed_dim" => cfg.spec.embed_dim = parse_usize(key, value)?,
                "frames_per_sequence" => cfg.spec.frames_per_sequence = parse_usize(key, value)?,
                "seed" => cfg.spec.seed = parse_u64(key, value)?,
                "kind" => {
                    if value != "silhouettes" && value != "embeddings" {
                        return Err(ConfigError::BadValue {
                            key: key.to_string(),
                            value: value.to_string(),
                            kind: "silhouettes|embeddings",
                        });
                    }
                    cfg.kind = value.to_string();
                }
                _ => return Err(ConfigError::UnknownKey(key.to_string(), "gen".into())),
            }
        }
        Ok(cfg)
    }

    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        Self::from_sections(&parse_config_text(text)?)
    }
}
