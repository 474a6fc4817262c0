use std::path::{Path, PathBuf};

use docwin::decoding::{BeamConfig, Strategy};
use docwin::model::{ModelConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Training objective: sentence `n` with `k` preceding sentences, or whole
/// documents.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Objective {
    Local {
        k: usize,
    },
    #[default]
    Full,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub strategy: Strategy,
    /// FSD segment size or SD context size; unset means the whole
    /// document (FSD) or every preceding sentence (SD).
    pub k: Option<usize>,
    pub beam: usize,
    pub alpha: f64,
    pub max_len: Option<usize>,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        let b = BeamConfig::default();
        Self {
            strategy: Strategy::Fsd,
            k: None,
            beam: b.beam,
            alpha: b.alpha,
            max_len: b.max_len,
        }
    }
}

impl DecodeConfig {
    pub fn beam_config(&self) -> BeamConfig {
        BeamConfig {
            beam: self.beam,
            alpha: self.alpha,
            max_len: self.max_len,
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        if self.beam == 0 {
            return Err(CliError::Usage("beam size must be at least 1".into()));
        }
        if self.strategy == Strategy::Fsd && self.k == Some(0) {
            return Err(CliError::Usage("FSD segments need k >= 1".into()));
        }
        if !self.alpha.is_finite() || self.alpha < 0.0 {
            return Err(CliError::Usage(format!("length penalty {} must be >= 0", self.alpha)));
        }
        Ok(())
    }
}

fn default_seed() -> u64 {
    1
}

fn default_out() -> PathBuf {
    PathBuf::from("runs")
}

fn default_max_doc_tokens() -> usize {
    1000
}

/// Everything one training run needs. Paths are relative to the working
/// directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: String,
    pub train: PathBuf,
    pub valid: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub training: TrainConfig,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub decode: DecodeConfig,
    /// Training documents longer than this many target tokens are split.
    #[serde(default = "default_max_doc_tokens")]
    pub max_doc_tokens: usize,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_out")]
    pub out: PathBuf,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad config {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.model.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        self.decode.validate()?;
        if self.max_doc_tokens == 0 {
            return Err(CliError::Usage("max_doc_tokens must be positive".into()));
        }
        for p in [Some(&self.train), Some(&self.valid), self.test.as_ref()]
            .into_iter()
            .flatten()
        {
            require_file(p)?;
        }
        Ok(())
    }
}

pub fn require_file(path: &Path) -> Result<(), CliError> {
    if path.is_file() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("no such file: {}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use docwin::alignment::AlignMode;
    use docwin::attention::AttentionVariant;

    use super::*;

    #[test]
    fn minimal_config_fills_defaults() {
        let c: ExperimentConfig =
            serde_json::from_str(r#"{"task": "copy", "train": "a.jsonl", "valid": "b.jsonl"}"#).unwrap();
        assert_eq!(c.model, ModelConfig::default());
        assert_eq!(c.objective, Objective::Full);
        assert_eq!(c.decode.beam, 12);
        assert_eq!(c.decode.alpha, 1.0);
        assert_eq!(c.max_doc_tokens, 1000);
    }

    #[test]
    fn round_trip_is_exact() {
        let c = ExperimentConfig {
            task: "formality".into(),
            train: "t.jsonl".into(),
            valid: "v.jsonl".into(),
            test: Some("x.jsonl".into()),
            model: ModelConfig {
                align: AlignMode::Ratio { ratio: 1.0 / 3.0 },
                dropout: 0.1 + 0.2,
                ..ModelConfig::default().with_variant(AttentionVariant::Lst)
            },
            training: TrainConfig {
                learning_rate: 7e-4 / 3.0,
                ..TrainConfig::default()
            },
            objective: Objective::Local { k: 2 },
            decode: DecodeConfig {
                strategy: Strategy::Sd,
                k: Some(3),
                ..DecodeConfig::default()
            },
            max_doc_tokens: 500,
            seed: 9,
            out: "o".into(),
        };
        let back: ExperimentConfig = serde_json::from_str(&c.to_json()).unwrap();
        assert_eq!(back, c);
        assert!(c.to_json().contains(r#""local""#));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let r: Result<ExperimentConfig, _> =
            serde_json::from_str(r#"{"task": "copy", "train": "a", "valid": "b", "lr": 1}"#);
        assert!(r.is_err());
    }
}
