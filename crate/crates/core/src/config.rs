//! Flat `key=value` run configuration covering extraction, model shape and
//! training, with a canonical text form embedded into checkpoints so a saved
//! model can be rebuilt without the original config file.

use std::path::Path;

use thiserror::Error;

use crate::fusion::{AttentionConfig, MfbConfig};
use crate::model::ModelConfig;
use crate::pipeline::PipelineConfig;
use crate::train::TrainConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {0}: expected `key=value`")]
    BadLine(usize),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("bad value `{value}` for `{key}`")]
    BadValue { key: String, value: String },
    #[error("at least one view must be active")]
    NoActiveViews,
    #[error("image {width}x{height} is not divisible by the encoder downscale factor {divisor}")]
    ImageNotDivisible {
        width: usize,
        height: usize,
        divisor: usize,
    },
    #[error("cannot read config: {0}")]
    UnreadableFile(#[from] std::io::Error),
}

pub const VIEW_NAMES: [&str; 3] = ["sensitivity", "context", "environment"];

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub seed: u64,
    pub window_length: usize,
    pub gram_row_cap: usize,
    pub image_width: usize,
    pub image_height: usize,
    pub elf_sections: Vec<String>,
    pub embed_dim: usize,
    pub gcn_hidden: usize,
    pub gcn_layers: usize,
    pub seq_kernel_heights: Vec<usize>,
    pub seq_filters: usize,
    pub img_stage_channels: Vec<usize>,
    pub mfb_k: usize,
    pub mfb_o: usize,
    pub mfb_dropout: f64,
    pub attention_heads: usize,
    pub attention_u: usize,
    pub attention_p: usize,
    pub attention_out: usize,
    pub classifier_hidden: Vec<usize>,
    pub classifier_dropout: f64,
    pub active_views: [bool; 3],
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub freeze_encoders: bool,
    pub target_val_accuracy: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let model = ModelConfig::default();
        let train = TrainConfig::default();
        RunConfig {
            seed: 42,
            window_length: model.window_length,
            gram_row_cap: crate::gram::DEFAULT_ROW_CAP,
            image_width: crate::image::DEFAULT_TARGET.1,
            image_height: crate::image::DEFAULT_TARGET.0,
            elf_sections: crate::image::DEFAULT_ELF_SECTIONS
                .iter()
                .map(|s| s.to_string())
                .collect(),
            embed_dim: model.embed_dim,
            gcn_hidden: model.gcn_hidden,
            gcn_layers: model.gcn_layers,
            seq_kernel_heights: model.seq_kernel_heights,
            seq_filters: model.seq_filters,
            img_stage_channels: model.img_stage_channels,
            mfb_k: model.mfb.k,
            mfb_o: model.mfb.o,
            mfb_dropout: model.mfb.dropout_p,
            attention_heads: model.attention.heads,
            attention_u: model.attention.u,
            attention_p: model.attention.p,
            attention_out: model.attention.p_o,
            classifier_hidden: model.classifier_hidden,
            classifier_dropout: model.classifier_dropout,
            active_views: model.active_views,
            learning_rate: train.learning_rate,
            batch_size: train.batch_size,
            max_epochs: train.max_epochs,
            patience: train.patience,
            validation_fraction: train.validation_fraction,
            freeze_encoders: train.freeze_encoders,
            target_val_accuracy: train.target_val_accuracy,
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Option<Vec<T>> {
    value
        .split(',')
        .map(|part| part.trim().parse().ok())
        .collect()
}

fn parse_views(value: &str) -> Option<[bool; 3]> {
    let mut active = [false; 3];
    for part in value.split(',') {
        let idx = VIEW_NAMES.iter().position(|&n| n == part.trim())?;
        active[idx] = true;
    }
    Some(active)
}

fn views_text(active: &[bool; 3]) -> String {
    let names: Vec<&str> = (0..3).filter(|&i| active[i]).map(|i| VIEW_NAMES[i]).collect();
    names.join(",")
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(T::to_string)
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    /// Apply one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = || ConfigError::BadValue {
            key: key.to_string(),
            value: value.to_string(),
        };
        match key {
            "seed" => self.seed = value.parse().map_err(|_| bad())?,
            "window_length" => self.window_length = value.parse().map_err(|_| bad())?,
            "gram_row_cap" => self.gram_row_cap = value.parse().map_err(|_| bad())?,
            "image_width" => self.image_width = value.parse().map_err(|_| bad())?,
            "image_height" => self.image_height = value.parse().map_err(|_| bad())?,
            "elf_sections" => {
                self.elf_sections = value.split(',').map(|s| s.trim().to_string()).collect()
            }
            "embed_dim" => self.embed_dim = value.parse().map_err(|_| bad())?,
            "gcn_hidden" => self.gcn_hidden = value.parse().map_err(|_| bad())?,
            "gcn_layers" => self.gcn_layers = value.parse().map_err(|_| bad())?,
            "seq_kernel_heights" => {
                self.seq_kernel_heights = parse_list(value).ok_or_else(bad)?
            }
            "seq_filters" => self.seq_filters = value.parse().map_err(|_| bad())?,
            "img_stage_channels" => {
                self.img_stage_channels = parse_list(value).ok_or_else(bad)?
            }
            "mfb_k" => self.mfb_k = value.parse().map_err(|_| bad())?,
            "mfb_o" => self.mfb_o = value.parse().map_err(|_| bad())?,
            "mfb_dropout" => self.mfb_dropout = value.parse().map_err(|_| bad())?,
            "attention_heads" => self.attention_heads = value.parse().map_err(|_| bad())?,
            "attention_u" => self.attention_u = value.parse().map_err(|_| bad())?,
            "attention_p" => self.attention_p = value.parse().map_err(|_| bad())?,
            "attention_out" => self.attention_out = value.parse().map_err(|_| bad())?,
            "classifier_hidden" => {
                self.classifier_hidden = parse_list(value).ok_or_else(bad)?
            }
            "classifier_dropout" => self.classifier_dropout = value.parse().map_err(|_| bad())?,
            "active_views" => self.active_views = parse_views(value).ok_or_else(bad)?,
            "learning_rate" => self.learning_rate = value.parse().map_err(|_| bad())?,
            "batch_size" => self.batch_size = value.parse().map_err(|_| bad())?,
            "max_epochs" => self.max_epochs = value.parse().map_err(|_| bad())?,
            "patience" => self.patience = value.parse().map_err(|_| bad())?,
            "validation_fraction" => {
                self.validation_fraction = value.parse().map_err(|_| bad())?
            }
            "freeze_encoders" => self.freeze_encoders = value.parse().map_err(|_| bad())?,
            "target_val_accuracy" => {
                self.target_val_accuracy = if value == "none" {
                    None
                } else {
                    Some(value.parse().map_err(|_| bad())?)
                }
            }
            _ => return Err(ConfigError::UnknownKey(key.to_string())),
        }
        Ok(())
    }

    /// Defaults overridden by `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or(ConfigError::BadLine(i + 1))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<RunConfig, ConfigError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// Canonical text form; `parse` inverts it.
    pub fn to_text(&self) -> String {
        let target = match self.target_val_accuracy {
            Some(v) => v.to_string(),
            None => "none".to_string(),
        };
        format!(
            "seed={}\n\
             window_length={}\n\
             gram_row_cap={}\n\
             image_width={}\n\
             image_height={}\n\
             elf_sections={}\n\
             embed_dim={}\n\
             gcn_hidden={}\n\
             gcn_layers={}\n\
             seq_kernel_heights={}\n\
             seq_filters={}\n\
             img_stage_channels={}\n\
             mfb_k={}\n\
             mfb_o={}\n\
             mfb_dropout={}\n\
             attention_heads={}\n\
             attention_u={}\n\
             attention_p={}\n\
             attention_out={}\n\
             classifier_hidden={}\n\
             classifier_dropout={}\n\
             active_views={}\n\
             learning_rate={}\n\
             batch_size={}\n\
             max_epochs={}\n\
             patience={}\n\
             validation_fraction={}\n\
             freeze_encoders={}\n\
             target_val_accuracy={}\n",
            self.seed,
            self.window_length,
            self.gram_row_cap,
            self.image_width,
            self.image_height,
            self.elf_sections.join(","),
            self.embed_dim,
            self.gcn_hidden,
            self.gcn_layers,
            join(&self.seq_kernel_heights),
            self.seq_filters,
            join(&self.img_stage_channels),
            self.mfb_k,
            self.mfb_o,
            self.mfb_dropout,
            self.attention_heads,
            self.attention_u,
            self.attention_p,
            self.attention_out,
            join(&self.classifier_hidden),
            self.classifier_dropout,
            views_text(&self.active_views),
            self.learning_rate,
            self.batch_size,
            self.max_epochs,
            self.patience,
            self.validation_fraction,
            self.freeze_encoders,
            target,
        )
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !self.active_views.iter().any(|&a| a) {
            return Err(ConfigError::NoActiveViews);
        }
        if self.window_length == 0 {
            return Err(ConfigError::BadValue {
                key: "window_length".into(),
                value: "0".into(),
            });
        }
        let divisor = 1 << self.img_stage_channels.len();
        if self.image_width % divisor != 0 || self.image_height % divisor != 0 {
            return Err(ConfigError::ImageNotDivisible {
                width: self.image_width,
                height: self.image_height,
                divisor,
            });
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            embed_dim: self.embed_dim,
            gcn_hidden: self.gcn_hidden,
            gcn_layers: self.gcn_layers,
            window_length: self.window_length,
            seq_kernel_heights: self.seq_kernel_heights.clone(),
            seq_filters: self.seq_filters,
            img_stage_channels: self.img_stage_channels.clone(),
            mfb: MfbConfig {
                k: self.mfb_k,
                o: self.mfb_o,
                dropout_p: self.mfb_dropout,
            },
            attention: AttentionConfig {
                heads: self.attention_heads,
                u: self.attention_u,
                p: self.attention_p,
                p_o: self.attention_out,
            },
            classifier_hidden: self.classifier_hidden.clone(),
            classifier_dropout: self.classifier_dropout,
            active_views: self.active_views,
        }
    }

    pub fn pipeline_config(&self) -> PipelineConfig {
        PipelineConfig {
            window_length: self.window_length,
            gram_row_cap: self.gram_row_cap,
            image_target: (self.image_height, self.image_width),
            elf_sections: self.elf_sections.clone(),
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            max_epochs: self.max_epochs,
            patience: self.patience,
            validation_fraction: self.validation_fraction,
            freeze_encoders: self.freeze_encoders,
            target_val_accuracy: self.target_val_accuracy,
        }
    }
}
