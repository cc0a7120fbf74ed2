use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::embeddings::{CombineMode, SubwordHashEmbedder};
use crate::encoder::AttentionMode;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub dropout: f64,
    pub recurrent_dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// GRU units per direction.
    pub hidden: usize,
    /// Width of the trainable word lookup table; 0 disables it.
    pub word_dim: usize,
    pub min_count: usize,
    /// Width of the hashed subword embeddings; 0 disables them.
    pub subword_dim: usize,
    pub subword_buckets: usize,
    pub subword_min_n: usize,
    pub subword_max_n: usize,
    pub char_encoder: bool,
    /// How contextual streams are fused; `None` ignores any streams.
    pub combine: Option<CombineMode>,
    /// Projection width for dme/cdme.
    pub projected_dim: usize,
    /// Indices of the streams to use; empty means all.
    pub streams: Vec<usize>,
    pub attention: AttentionMode,
    /// Query/key/value width for weighted attention; 0 means `2 * hidden`.
    pub attention_width: usize,
    pub patience: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            dropout: 0.3,
            recurrent_dropout: 0.0,
            epochs: 30,
            batch_size: 8,
            seed: 0,
            hidden: 128,
            word_dim: 100,
            min_count: 1,
            subword_dim: 100,
            subword_buckets: SubwordHashEmbedder::DEFAULT_BUCKETS,
            subword_min_n: 3,
            subword_max_n: 6,
            char_encoder: true,
            combine: None,
            projected_dim: 256,
            streams: Vec::new(),
            attention: AttentionMode::None,
            attention_width: 0,
            patience: 5,
            clip_norm: 5.0,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, TrainError> {
    value
        .parse()
        .map_err(|_| TrainError::Config(format!("bad value {value:?} for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, TrainError> {
    match value {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(TrainError::Config(format!("bad value {value:?} for {key}"))),
    }
}

impl TrainConfig {
    pub const KEYS: [&'static str; 22] = [
        "learning_rate",
        "dropout",
        "recurrent_dropout",
        "epochs",
        "batch_size",
        "seed",
        "hidden",
        "word_dim",
        "min_count",
        "subword_dim",
        "subword_buckets",
        "subword_min_n",
        "subword_max_n",
        "char_encoder",
        "combine",
        "projected_dim",
        "streams",
        "attention",
        "attention_width",
        "patience",
        "clip_norm",
        "jobs",
    ];

    /// Sets one field from its textual form. `jobs` is accepted and ignored
    /// here because it affects only how work is scheduled.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), TrainError> {
        let value = value.trim();
        match key {
            "learning_rate" => self.learning_rate = parse(key, value)?,
            "dropout" => self.dropout = parse(key, value)?,
            "recurrent_dropout" => self.recurrent_dropout = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "batch_size" => self.batch_size = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "hidden" => self.hidden = parse(key, value)?,
            "word_dim" => self.word_dim = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "subword_dim" => self.subword_dim = parse(key, value)?,
            "subword_buckets" => self.subword_buckets = parse(key, value)?,
            "subword_min_n" => self.subword_min_n = parse(key, value)?,
            "subword_max_n" => self.subword_max_n = parse(key, value)?,
            "char_encoder" => self.char_encoder = parse_bool(key, value)?,
            "combine" => {
                self.combine = match value {
                    "none" => None,
                    other => Some(other.parse().map_err(TrainError::Config)?),
                }
            }
            "projected_dim" => self.projected_dim = parse(key, value)?,
            "streams" => {
                self.streams = if value.is_empty() || value == "all" {
                    Vec::new()
                } else {
                    value
                        .split(',')
                        .map(|v| parse(key, v.trim()))
                        .collect::<Result<_, _>>()?
                }
            }
            "attention" => self.attention = value.parse().map_err(TrainError::Config)?,
            "attention_width" => self.attention_width = parse(key, value)?,
            "patience" => self.patience = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "jobs" => {
                parse::<usize>(key, value)?;
            }
            _ => return Err(TrainError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<(), TrainError> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = TrainConfig::default();
        cfg.apply_text(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let combine = self.combine.map_or("none".to_string(), |c| c.to_string());
        let streams: Vec<String> = self.streams.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "learning_rate = {}", self.learning_rate);
        let _ = writeln!(out, "dropout = {}", self.dropout);
        let _ = writeln!(out, "recurrent_dropout = {}", self.recurrent_dropout);
        let _ = writeln!(out, "epochs = {}", self.epochs);
        let _ = writeln!(out, "batch_size = {}", self.batch_size);
        let _ = writeln!(out, "seed = {}", self.seed);
        let _ = writeln!(out, "hidden = {}", self.hidden);
        let _ = writeln!(out, "word_dim = {}", self.word_dim);
        let _ = writeln!(out, "min_count = {}", self.min_count);
        let _ = writeln!(out, "subword_dim = {}", self.subword_dim);
        let _ = writeln!(out, "subword_buckets = {}", self.subword_buckets);
        let _ = writeln!(out, "subword_min_n = {}", self.subword_min_n);
        let _ = writeln!(out, "subword_max_n = {}", self.subword_max_n);
        let _ = writeln!(out, "char_encoder = {}", self.char_encoder);
        let _ = writeln!(out, "combine = {combine}");
        let _ = writeln!(out, "projected_dim = {}", self.projected_dim);
        let _ = writeln!(
            out,
            "streams = {}",
            if streams.is_empty() {
                "all".into()
            } else {
                streams.join(",")
            }
        );
        let _ = writeln!(out, "attention = {}", self.attention);
        let _ = writeln!(out, "attention_width = {}", self.attention_width);
        let _ = writeln!(out, "patience = {}", self.patience);
        let _ = writeln!(out, "clip_norm = {}", self.clip_norm);
        out
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::Config(m.to_string()));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be a non-negative number");
        }
        for (name, rate) in [
            ("dropout", self.dropout),
            ("recurrent_dropout", self.recurrent_dropout),
        ] {
            if !(0.0..1.0).contains(&rate) {
                return bad(&format!("{name} must lie in [0, 1)"));
            }
        }
        if self.batch_size == 0 || self.hidden == 0 {
            return bad("batch_size and hidden must be positive");
        }
        if self.subword_dim > 0
            && (self.subword_buckets == 0
                || self.subword_min_n == 0
                || self.subword_min_n > self.subword_max_n)
        {
            return bad("subword settings need buckets >= 1 and 1 <= min_n <= max_n");
        }
        if matches!(self.combine, Some(CombineMode::Dme | CombineMode::Cdme))
            && self.projected_dim == 0
        {
            return bad("projected_dim must be positive");
        }
        if self.word_dim == 0
            && self.subword_dim == 0
            && !self.char_encoder
            && self.combine.is_none()
        {
            return bad("at least one embedding provider must be enabled");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn attention_width(&self) -> usize {
        if self.attention_width == 0 {
            2 * self.hidden
        } else {
            self.attention_width
        }
    }
}
