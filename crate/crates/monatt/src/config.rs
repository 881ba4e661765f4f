//! Run configuration: one structured-text file covering task, model,
//! training and decoding, with `key.path=value` command-line overrides.
//! Unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::attention::{Monotonicity, Variant, VariantKind};
use crate::data::TaskConfig;
use crate::error::{Error, Result};
use crate::nnet::{EncoderConfig, ModelConfig};
use crate::search::DecodeConfig;
use crate::training::TrainConfig;

/// Environment variable holding a default config path.
pub const CONFIG_ENV: &str = "MONATT_CONFIG";

/// Flat, file-friendly view of the model hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub vocab_size: usize,
    pub feat_dim: usize,
    pub enc_layers: usize,
    pub enc_hidden: usize,
    pub pool_factors: Vec<usize>,
    pub dec_hidden: usize,
    pub embed_dim: usize,
    pub att_dim: usize,
    /// "global-soft" | "hard" | "local" | "segmental"
    pub variant: String,
    /// "strict" | "weak" | "" (variant default: strict for hard/segmental,
    /// weak for local)
    pub monotonicity: String,
    /// 0 = unlimited
    pub max_step: usize,
    pub window_left: usize,
    pub window_right: usize,
    pub dropout: f64,
    pub segmental_feedback: bool,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            vocab_size: 10,
            feat_dim: 8,
            enc_layers: 2,
            enc_hidden: 64,
            pool_factors: vec![2],
            dec_hidden: 128,
            embed_dim: 32,
            att_dim: 64,
            variant: "hard".into(),
            monotonicity: String::new(),
            max_step: 0,
            window_left: 2,
            window_right: 2,
            dropout: 0.0,
            segmental_feedback: false,
        }
    }
}

impl ModelSection {
    pub fn variant(&self) -> Result<Variant> {
        let mut v = match self.variant.as_str() {
            "global-soft" => Variant::global_soft(),
            "hard" => Variant::hard(),
            "local" => Variant::local(self.window_left, self.window_right),
            "segmental" => Variant::segmental(),
            other => {
                return Err(Error::Config(format!(
                    "unknown variant '{other}' (expected global-soft|hard|local|segmental)"
                )))
            }
        };
        match self.monotonicity.as_str() {
            "" => {}
            "strict" => v = v.with_monotonicity(Monotonicity::Strict),
            "weak" => v = v.with_monotonicity(Monotonicity::Weak),
            other => {
                return Err(Error::Config(format!(
                    "unknown monotonicity '{other}' (expected strict|weak)"
                )))
            }
        }
        if self.max_step > 0 {
            v = v.with_max_step(Some(self.max_step));
        }
        v.validate()?;
        Ok(v)
    }

    pub fn model_config(&self) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            vocab_size: self.vocab_size,
            feat_dim: self.feat_dim,
            encoder: EncoderConfig {
                num_layers: self.enc_layers,
                hidden_per_direction: self.enc_hidden,
                pool_factors: self.pool_factors.clone(),
            },
            dec_hidden: self.dec_hidden,
            embed_dim: self.embed_dim,
            att_dim: self.att_dim,
            variant: self.variant()?,
            dropout: self.dropout,
            segmental_feedback: self.segmental_feedback,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Flat view of an existing model config (for echoing).
    pub fn from_model_config(cfg: &ModelConfig) -> ModelSection {
        let (variant, window_left, window_right) = match cfg.variant.kind {
            VariantKind::GlobalSoft => ("global-soft", 2, 2),
            VariantKind::Hard => ("hard", 2, 2),
            VariantKind::LocalWindow { d_left, d_right } => ("local", d_left, d_right),
            VariantKind::Segmental => ("segmental", 2, 2),
        };
        ModelSection {
            vocab_size: cfg.vocab_size,
            feat_dim: cfg.feat_dim,
            enc_layers: cfg.encoder.num_layers,
            enc_hidden: cfg.encoder.hidden_per_direction,
            pool_factors: cfg.encoder.pool_factors.clone(),
            dec_hidden: cfg.dec_hidden,
            embed_dim: cfg.embed_dim,
            att_dim: cfg.att_dim,
            variant: variant.into(),
            monotonicity: match cfg.variant.monotonicity {
                Monotonicity::Strict => "strict".into(),
                Monotonicity::Weak => "weak".into(),
            },
            max_step: cfg.variant.max_step.unwrap_or(0),
            window_left,
            window_right,
            dropout: cfg.dropout,
            segmental_feedback: cfg.segmental_feedback,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub task: TaskConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
}

impl RunConfig {
    /// Load from `path` (or `$MONATT_CONFIG`, or built-in defaults) and apply
    /// `section.key=value` overrides.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig> {
        let env_path = std::env::var(CONFIG_ENV).ok();
        let chosen: Option<std::path::PathBuf> = match path {
            Some(p) => Some(p.to_path_buf()),
            None => env_path.map(std::path::PathBuf::from),
        };
        let mut value: toml::Value = match &chosen {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| Error::io(p.display().to_string(), e))?;
                let table = text.parse::<toml::Table>().map_err(|e| Error::Parse {
                    path: p.display().to_string(),
                    line: 0,
                    detail: e.to_string(),
                })?;
                toml::Value::Table(table)
            }
            None => toml::Value::Table(toml::map::Map::new()),
        };
        for raw in overrides {
            apply_override(&mut value, raw)?;
        }
        let merged: RunConfig = value
            .try_into()
            .map_err(|e| Error::Config(format!("bad configuration: {e}")))?;
        merged.validate()?;
        Ok(merged)
    }

    pub fn validate(&self) -> Result<()> {
        self.task.validate()?;
        self.model.model_config()?;
        self.train.validate()?;
        self.decode.validate()?;
        Ok(())
    }

    /// Canonical TOML rendering (for the reference config and log echo).
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Single-line `section.key=value` pairs for the metrics log.
    pub fn echo_lines(&self) -> Vec<String> {
        let value = toml::Value::try_from(self).expect("config serializes");
        let mut lines = Vec::new();
        flatten("", &value, &mut lines);
        lines
    }
}

fn flatten(prefix: &str, value: &toml::Value, out: &mut Vec<String>) {
    match value {
        toml::Value::Table(t) => {
            for (k, v) in t {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        other => out.push(format!("{prefix}={other}")),
    }
}

/// Apply one `a.b.c=value` override onto the raw TOML tree. The value is
/// parsed as TOML when possible and treated as a string otherwise.
fn apply_override(root: &mut toml::Value, raw: &str) -> Result<()> {
    let (path, value_text) = raw
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("override '{raw}' is not key=value")))?;
    let path = path.trim();
    if path.is_empty() {
        return Err(Error::Config(format!("override '{raw}' has an empty key")));
    }
    let parsed: toml::Value = match format!("v = {}", value_text.trim()).parse::<toml::Table>() {
        Ok(table) => table["v"].clone(),
        Err(_) => toml::Value::String(value_text.trim().to_string()),
    };
    let mut node = root;
    let parts: Vec<&str> = path.split('.').collect();
    for part in &parts[..parts.len() - 1] {
        let table = node
            .as_table_mut()
            .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
        node = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::map::Map::new()));
    }
    let table = node
        .as_table_mut()
        .ok_or_else(|| Error::Config(format!("override path '{path}' crosses a non-table")))?;
    table.insert(parts[parts.len() - 1].to_string(), parsed);
    Ok(())
}
