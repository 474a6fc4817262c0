use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelParams, Transformer};
use crate::document::Vocab;
use crate::error::{Error, Result};

const FORMAT: &str = "docwin-checkpoint";
const VERSION: u32 = 1;

/// JSON container for a trained model: config, vocabulary and named
/// parameter arrays. Floats are written with round-trip precision.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub vocab: Vec<String>,
    pub params: ModelParams,
}

impl Checkpoint {
    pub fn new(model: &Transformer, vocab: &Vocab) -> Result<Self> {
        if vocab.len() != model.vocab_size() {
            return Err(Error::InvalidArgument(format!(
                "vocabulary of {} for a model over {}",
                vocab.len(),
                model.vocab_size()
            )));
        }
        Ok(Self {
            format: FORMAT.into(),
            version: VERSION,
            config: model.config().clone(),
            vocab: vocab.tokens().to_vec(),
            params: model.params().clone(),
        })
    }

    pub fn into_model(self) -> Result<(Transformer, Vocab)> {
        let vocab = Vocab::from_tokens(self.vocab)?;
        let model = Transformer::from_params(self.config, self.params)?;
        if vocab.len() != model.vocab_size() {
            return Err(Error::InvalidArgument(
                "checkpoint vocabulary does not match its embedding".into(),
            ));
        }
        Ok((model, vocab))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Self = serde_json::from_str(text)?;
        if c.format != FORMAT || c.version != VERSION {
            return Err(Error::Unsupported(format!("checkpoint {} v{}", c.format, c.version)));
        }
        Ok(c)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attention::AttentionVariant;
    use crate::model::{AnchorMode, PosEnc};

    #[test]
    fn round_trip_is_exact() {
        let vocab = Vocab::new(["a", "b", "c"]);
        let c = ModelConfig {
            d_model: 8,
            n_heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ffn_dim: 8,
            window: 2,
            pos_enc: PosEnc::Relative,
            ..ModelConfig::default().with_variant(AttentionVariant::Lst)
        };
        let m = Transformer::new(c, vocab.len(), 11).unwrap();
        let ck = Checkpoint::new(&m, &vocab).unwrap();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(back, ck);
        let (m2, v2) = back.into_model().unwrap();
        assert_eq!(v2, vocab);
        let src = [5, 6, 3];
        let tgt = [3, 7];
        assert_eq!(
            m.log_probs(&src, &tgt, AnchorMode::Linear).unwrap(),
            m2.log_probs(&src, &tgt, AnchorMode::Linear).unwrap()
        );
    }

    #[test]
    fn foreign_format_is_rejected() {
        let text = r#"{"format":"other","version":1,"config":{},"vocab":[],"params":[]}"#;
        assert!(Checkpoint::from_json(text).is_err());
    }
}
