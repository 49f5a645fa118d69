//! Run configuration. Every field has a default, so `{}` is a complete config.

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::augmentation::{Direction, TaskSelection};
use crate::error::{Error, Result};
use crate::filters::FilterPolicy;
use crate::models::{Bm25Config, DecodeConfig, NgramConfig};

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum GeneratorBackend {
    Native,
    Plugin(String),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum RetrieverBackend {
    NativeBm25,
    NativeDual,
    Plugin(String),
}

fn plugin_command(s: &str) -> Option<Result<String>> {
    let cmd = s.strip_prefix("plugin:")?.trim();
    Some(if cmd.is_empty() {
        Err(Error::InvalidArgument(
            "plugin backend needs a command after \"plugin:\"".into(),
        ))
    } else {
        Ok(cmd.to_string())
    })
}

impl FromStr for GeneratorBackend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = plugin_command(s) {
            return cmd.map(GeneratorBackend::Plugin);
        }
        match s {
            "native" => Ok(GeneratorBackend::Native),
            _ => Err(Error::InvalidArgument(format!(
                "unknown generator backend {s:?}; expected native or plugin:<command>"
            ))),
        }
    }
}

impl FromStr for RetrieverBackend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        if let Some(cmd) = plugin_command(s) {
            return cmd.map(RetrieverBackend::Plugin);
        }
        match s {
            "native-bm25" => Ok(RetrieverBackend::NativeBm25),
            "native-dual" => Ok(RetrieverBackend::NativeDual),
            _ => Err(Error::InvalidArgument(format!(
                "unknown retriever backend {s:?}; expected native-bm25, native-dual or plugin:<command>"
            ))),
        }
    }
}

impl fmt::Display for GeneratorBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeneratorBackend::Native => f.write_str("native"),
            GeneratorBackend::Plugin(c) => write!(f, "plugin:{c}"),
        }
    }
}

impl fmt::Display for RetrieverBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            RetrieverBackend::NativeBm25 => f.write_str("native-bm25"),
            RetrieverBackend::NativeDual => f.write_str("native-dual"),
            RetrieverBackend::Plugin(c) => write!(f, "plugin:{c}"),
        }
    }
}

macro_rules! string_serde {
    ($t:ty) => {
        impl Serialize for $t {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.collect_str(self)
            }
        }
        impl<'de> Deserialize<'de> for $t {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                String::deserialize(d)?
                    .parse()
                    .map_err(serde::de::Error::custom)
            }
        }
    };
}
string_serde!(GeneratorBackend);
string_serde!(RetrieverBackend);

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelBackends {
    pub generator: GeneratorBackend,
    pub retriever: RetrieverBackend,
}

impl Default for ModelBackends {
    fn default() -> Self {
        ModelBackends {
            generator: GeneratorBackend::Native,
            retriever: RetrieverBackend::NativeDual,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch: usize,
    /// Nominal learning rate, sized for large pretrained encoders. Plugins
    /// receive it unchanged.
    pub lr: f64,
    /// Multiplier applied to `lr` for the native dual encoder, whose small
    /// randomly initialized tables need far larger steps.
    pub lr_scale: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 5,
            batch: 32,
            lr: 1e-5,
            lr_scale: 1000.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    /// Manifest of the corpus to load.
    pub corpus: Option<PathBuf>,
    pub mode: Direction,
    pub task: TaskSelection,
    pub decode: DecodeConfig,
    pub filter: FilterPolicy,
    pub negatives_k: usize,
    pub max_iters: usize,
    pub adapt_both: bool,
    pub encoder_dim: usize,
    pub train: TrainConfig,
    pub models: ModelBackends,
    pub ngram: NgramConfig,
    pub bm25: Bm25Config,
    /// Retrieval depth of the IR dev metric.
    pub dev_k: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            corpus: None,
            mode: Direction::Back,
            task: TaskSelection::Both,
            decode: DecodeConfig::default(),
            filter: FilterPolicy::default(),
            negatives_k: 7,
            max_iters: 2,
            adapt_both: true,
            encoder_dim: 64,
            train: TrainConfig::default(),
            models: ModelBackends::default(),
            ngram: NgramConfig::default(),
            bm25: Bm25Config::default(),
            dev_k: 40,
        }
    }
}

impl RunConfig {
    /// Parses JSON; errors name the offending field path.
    pub fn from_json(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            Error::Validation(format!("config field `{}`: {}", e.path(), e.inner()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("negatives_k", self.negatives_k),
            ("max_iters", self.max_iters),
            ("encoder_dim", self.encoder_dim),
            ("train.epochs", self.train.epochs),
            ("train.batch", self.train.batch),
            ("decode.top_k", self.decode.top_k),
            ("decode.max_length", self.decode.max_length),
            ("dev_k", self.dev_k),
        ];
        for (field, v) in counts {
            if v < 1 {
                return Err(Error::Validation(format!(
                    "config field `{field}` must be at least 1"
                )));
            }
        }
        if !(self.train.lr > 0.0 && self.train.lr_scale > 0.0) {
            return Err(Error::Validation(
                "config fields `train.lr` and `train.lr_scale` must be positive".into(),
            ));
        }
        self.filter
            .validate()
            .map_err(|e| Error::Validation(format!("config field `filter`: {e}")))
    }

    /// Learning rate handed to the native dual encoder.
    pub fn native_learning_rate(&self) -> f64 {
        self.train.lr * self.train.lr_scale
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_is_complete() {
        let cfg = RunConfig::from_json("{}").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.filter.accept_fraction, 0.75);
        assert_eq!(
            (cfg.train.epochs, cfg.train.batch, cfg.train.lr),
            (5, 32, 1e-5)
        );
    }

    #[test]
    fn round_trips_through_json() {
        let mut cfg = RunConfig::default();
        cfg.models.retriever = RetrieverBackend::Plugin("python3 enc.py --fast".into());
        let json = serde_json::to_string(&cfg).unwrap();
        assert!(json.contains("\"plugin:python3 enc.py --fast\""));
        assert_eq!(RunConfig::from_json(&json).unwrap(), cfg);
    }

    #[test]
    fn errors_name_the_field() {
        let e = RunConfig::from_json(r#"{"train":{"epochs":"five"}}"#).unwrap_err();
        assert!(e.to_string().contains("train.epochs"), "{e}");
        let e = RunConfig::from_json(r#"{"max_iters":0}"#).unwrap_err();
        assert!(e.to_string().contains("max_iters"), "{e}");
        let e = RunConfig::from_json(r#"{"models":{"retriever":"tfidf"}}"#).unwrap_err();
        assert!(e.to_string().contains("models.retriever"), "{e}");
    }
}
