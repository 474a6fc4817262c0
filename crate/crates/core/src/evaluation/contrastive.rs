use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::document::{build_context_input, tokenize, Document, TokenId, Vocab, EOS_ID};
use crate::error::{Error, Result};
use crate::model::{shift_right, AnchorMode, Transformer};

/// One contrastive test item: a source sentence with optional preceding
/// context, its correct translation and wrong alternatives.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContrastiveCase {
    pub src: String,
    #[serde(default)]
    pub ctx_src: Vec<String>,
    #[serde(rename = "ref")]
    pub reference: String,
    pub contrastive: Vec<String>,
    #[serde(default)]
    pub ctx_tgt: Vec<String>,
}

pub fn read_contrastive(path: impl AsRef<Path>) -> Result<Vec<ContrastiveCase>> {
    let file = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut cases = Vec::new();
    for line in file.lines() {
        let line = line?;
        if !line.trim().is_empty() {
            cases.push(serde_json::from_str(&line)?);
        }
    }
    Ok(cases)
}

/// Log-probability of a candidate translation for a case.
pub trait Scorer {
    fn score(&self, case: &ContrastiveCase, target: &str) -> Result<f64>;
}

impl<F: Fn(&ContrastiveCase, &str) -> Result<f64>> Scorer for F {
    fn score(&self, case: &ContrastiveCase, target: &str) -> Result<f64> {
        self(case, target)
    }
}

/// Fraction of cases where the reference strictly outscores every
/// contrastive alternative.
pub fn contrastive_accuracy(scorer: &dyn Scorer, cases: &[ContrastiveCase]) -> Result<f64> {
    if cases.is_empty() {
        return Err(Error::Empty("no contrastive cases".into()));
    }
    let mut points = 0;
    for (i, case) in cases.iter().enumerate() {
        if case.contrastive.is_empty() {
            return Err(Error::InvalidArgument(format!("case {i} has no contrastive reference")));
        }
        let truth = scorer.score(case, &case.reference)?;
        let mut best_other = f64::NEG_INFINITY;
        for c in &case.contrastive {
            best_other = best_other.max(scorer.score(case, c)?);
        }
        if truth > best_other {
            points += 1;
        }
    }
    Ok(points as f64 / cases.len() as f64)
}

/// Scores the sentence after its context, teacher-forced, leaving the
/// forced target-context prefix out of the sum.
pub struct ModelScorer<'a> {
    pub model: &'a Transformer,
    pub vocab: &'a Vocab,
}

impl ModelScorer<'_> {
    fn inputs(&self, case: &ContrastiveCase, target: &str) -> Result<(Vec<TokenId>, Vec<TokenId>, usize)> {
        if !case.ctx_tgt.is_empty() && case.ctx_tgt.len() != case.ctx_src.len() {
            return Err(Error::InvalidArgument(format!(
                "{} source context sentences but {} target ones",
                case.ctx_src.len(),
                case.ctx_tgt.len()
            )));
        }
        // without target context the source context is still visible
        let with_prefix = !case.ctx_tgt.is_empty();
        let mut src: Vec<Vec<String>> = case.ctx_src.iter().map(|s| tokenize(s)).collect();
        src.push(tokenize(&case.src));
        let mut tgt: Vec<Vec<String>> = if with_prefix {
            case.ctx_tgt.iter().map(|s| tokenize(s)).collect()
        } else {
            // placeholder context; it is never encoded
            src[..src.len() - 1].to_vec()
        };
        tgt.push(tokenize(target));
        let n = src.len();
        let doc = Document::new("case", src, Some(tgt))?;
        let ci = build_context_input(&doc, n, n - 1)?;
        let prefix = if with_prefix {
            self.vocab.encode(&ci.prefix)
        } else {
            Vec::new()
        };
        let mut full = prefix.clone();
        full.extend(self.vocab.encode(&doc.target()?[n - 1]));
        full.push(EOS_ID);
        Ok((self.vocab.encode(&ci.source), full, prefix.len()))
    }
}

impl Scorer for ModelScorer<'_> {
    fn score(&self, case: &ContrastiveCase, target: &str) -> Result<f64> {
        let (source, full, skip) = self.inputs(case, target)?;
        let lp = self.model.log_probs(&source, &shift_right(&full), AnchorMode::Linear)?;
        Ok(full.iter().enumerate().skip(skip).map(|(i, &t)| lp.get(i, t)).sum())
    }
}
