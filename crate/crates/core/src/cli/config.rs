use std::path::PathBuf;

use crate::trainer::{TrainConfig, TrainError};

/// A training configuration plus the paths of external inputs.
///
/// Same `key = value` format as [`TrainConfig`], with three extra keys:
/// `pretrained_words` (a word-vector text file), `stream_file` (a contextual
/// stream file) and `baseline_lambda` (L2 weight of the sentence baselines).
#[derive(Debug, Clone, PartialEq)]
pub struct CliConfig {
    pub train: TrainConfig,
    pub pretrained_words: Option<PathBuf>,
    pub stream_file: Option<PathBuf>,
    pub baseline_lambda: f64,
}

impl Default for CliConfig {
    fn default() -> Self {
        CliConfig {
            train: TrainConfig::default(),
            pretrained_words: None,
            stream_file: None,
            baseline_lambda: 1e-3,
        }
    }
}

impl CliConfig {
    pub fn from_text(text: &str) -> Result<Self, TrainError> {
        let mut cfg = CliConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| TrainError::Config(format!("line {}: expected key=value", n + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            match key {
                "pretrained_words" => cfg.pretrained_words = Some(value.into()),
                "stream_file" => cfg.stream_file = Some(value.into()),
                "baseline_lambda" => {
                    cfg.baseline_lambda = value
                        .parse()
                        .ok()
                        .filter(|v: &f64| *v >= 0.0 && v.is_finite())
                        .ok_or_else(|| {
                            TrainError::Config(format!("bad value {value:?} for {key}"))
                        })?
                }
                _ => cfg
                    .train
                    .set(key, value)
                    .map_err(|e| TrainError::Config(format!("line {}: {e}", n + 1)))?,
            }
        }
        cfg.train.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn extra_keys_and_train_keys() {
        let cfg = CliConfig::from_text(
            "hidden = 16\n# note\nstream_file = s.bin\nbaseline_lambda = 0.5\njobs = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.train.hidden, 16);
        assert_eq!(cfg.stream_file, Some(PathBuf::from("s.bin")));
        assert_eq!(cfg.baseline_lambda, 0.5);
        assert!(cfg.pretrained_words.is_none());
    }

    #[test]
    fn rejects_unknown_and_bad_values() {
        assert!(CliConfig::from_text("colour = red").is_err());
        assert!(CliConfig::from_text("baseline_lambda = -1").is_err());
        assert!(CliConfig::from_text("hidden").is_err());
        assert!(CliConfig::from_text("dropout = 1.5").is_err());
    }
}
