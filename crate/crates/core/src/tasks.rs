//! Synthetic parallel document tasks that need no external data.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::document::Document;
use crate::error::{Error, Result};

pub const FORMAL_TAG: &str = "formal";
pub const CASUAL_TAG: &str = "casual";
pub const FORMAL_TAG_OUT: &str = "formell";
pub const CASUAL_TAG_OUT: &str = "locker";
/// Source cue for second-person address.
pub const ADDRESS: &str = "you";
pub const FORMAL_MARKER: &str = "Sie";
pub const CASUAL_MARKER: &str = "du";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    /// Target equals source.
    Copy,
    /// Every sentence reversed.
    Reversal,
    /// A style tag in sentence 1 decides how "you" is rendered in every
    /// later sentence; content words map one to one.
    Formality,
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "copy" => Ok(Self::Copy),
            "reversal" => Ok(Self::Reversal),
            "formality" => Ok(Self::Formality),
            _ => Err(Error::InvalidArgument(format!("unknown task {s:?}"))),
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Copy => "copy",
            Self::Reversal => "reversal",
            Self::Formality => "formality",
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaskConfig {
    pub kind: TaskKind,
    pub docs: usize,
    pub min_sentences: usize,
    pub max_sentences: usize,
    /// Content words per sentence, inclusive bounds.
    pub min_len: usize,
    pub max_len: usize,
    /// Size of the content vocabulary.
    pub words: usize,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self {
            kind: TaskKind::Copy,
            docs: 200,
            min_sentences: 2,
            max_sentences: 4,
            min_len: 2,
            max_len: 5,
            words: 12,
            seed: 1,
        }
    }
}

fn source_word(i: usize) -> String {
    format!("w{i}")
}

fn target_word(i: usize) -> String {
    format!("x{i}")
}

/// Generates `docs` parallel documents, deterministic in the seed.
pub fn generate(cfg: &TaskConfig) -> Result<Vec<Document>> {
    if cfg.min_sentences == 0 || cfg.min_sentences > cfg.max_sentences {
        return Err(Error::InvalidArgument(
            "need 1 <= min_sentences <= max_sentences".into(),
        ));
    }
    if cfg.min_len == 0 || cfg.min_len > cfg.max_len || cfg.words == 0 {
        return Err(Error::InvalidArgument(
            "need 1 <= min_len <= max_len and a content vocabulary".into(),
        ));
    }
    if cfg.kind == TaskKind::Formality && cfg.min_sentences < 2 {
        return Err(Error::InvalidArgument(
            "formality documents need at least two sentences".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    (0..cfg.docs)
        .map(|d| {
            let n = rng.gen_range(cfg.min_sentences..=cfg.max_sentences);
            let formal = rng.gen_bool(0.5);
            let mut src = Vec::with_capacity(n);
            let mut tgt = Vec::with_capacity(n);
            for s in 0..n {
                let len = rng.gen_range(cfg.min_len..=cfg.max_len);
                let ids: Vec<usize> = (0..len).map(|_| rng.gen_range(0..cfg.words)).collect();
                let mut f: Vec<String> = ids.iter().map(|&i| source_word(i)).collect();
                let (e, f) = match cfg.kind {
                    TaskKind::Copy => (f.clone(), f),
                    TaskKind::Reversal => {
                        let mut e = f.clone();
                        e.reverse();
                        (e, f)
                    }
                    TaskKind::Formality => {
                        let mut e: Vec<String> = ids.iter().map(|&i| target_word(i)).collect();
                        if s == 0 {
                            f.insert(0, if formal { FORMAL_TAG } else { CASUAL_TAG }.into());
                            e.insert(0, if formal { FORMAL_TAG_OUT } else { CASUAL_TAG_OUT }.into());
                        } else {
                            // never sentence-initial, so capitalisation marks formality
                            let at = rng.gen_range(1..=len);
                            f.insert(at, ADDRESS.into());
                            e.insert(at, if formal { FORMAL_MARKER } else { CASUAL_MARKER }.into());
                        }
                        (e, f)
                    }
                };
                src.push(f);
                tgt.push(e);
            }
            Document::new(format!("{}-{d}", cfg.kind), src, Some(tgt))
        })
        .collect()
}

/// Later-sentence marker accuracy for the formality task: a sentence
/// counts as correct when it carries the document's marker and not the
/// other one. Returns `(correct, total)`.
pub fn marker_accuracy(docs: &[Document], hypotheses: &[Vec<Vec<String>>]) -> Result<(usize, usize)> {
    if docs.len() != hypotheses.len() {
        return Err(Error::InvalidArgument(format!(
            "{} documents but {} hypotheses",
            docs.len(),
            hypotheses.len()
        )));
    }
    let mut correct = 0;
    let mut total = 0;
    for (d, h) in docs.iter().zip(hypotheses) {
        let formal = match d.src.first().and_then(|s| s.first()).map(String::as_str) {
            Some(FORMAL_TAG) => true,
            Some(CASUAL_TAG) => false,
            _ => {
                return Err(Error::InvalidArgument(format!(
                    "document {} has no style tag",
                    d.doc_id
                )))
            }
        };
        let (want, other) = if formal {
            (FORMAL_MARKER, CASUAL_MARKER)
        } else {
            (CASUAL_MARKER, FORMAL_MARKER)
        };
        for n in 1..d.len() {
            total += 1;
            let empty = Vec::new();
            let s = h.get(n).unwrap_or(&empty);
            if s.iter().any(|t| t == want) && !s.iter().any(|t| t == other) {
                correct += 1;
            }
        }
    }
    Ok((correct, total))
}

/// Deterministic train/valid/test split after a seeded shuffle.
pub fn split(mut docs: Vec<Document>, valid: usize, test: usize, seed: u64) -> Result<[Vec<Document>; 3]> {
    if valid + test >= docs.len() {
        return Err(Error::InvalidArgument(format!(
            "cannot hold out {} of {} documents",
            valid + test,
            docs.len()
        )));
    }
    docs.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test_set = docs.split_off(docs.len() - test);
    let valid_set = docs.split_off(docs.len() - valid);
    Ok([docs, valid_set, test_set])
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(kind: TaskKind) -> TaskConfig {
        TaskConfig {
            kind,
            docs: 30,
            ..TaskConfig::default()
        }
    }

    #[test]
    fn copy_and_reversal_targets() {
        for d in generate(&cfg(TaskKind::Copy)).unwrap() {
            assert_eq!(d.tgt.as_ref().unwrap(), &d.src);
        }
        for d in generate(&cfg(TaskKind::Reversal)).unwrap() {
            for (f, e) in d.src.iter().zip(d.target().unwrap()) {
                let mut r = f.clone();
                r.reverse();
                assert_eq!(&r, e);
            }
        }
    }

    #[test]
    fn formality_documents_are_consistent() {
        let docs = generate(&cfg(TaskKind::Formality)).unwrap();
        let refs: Vec<Vec<Vec<String>>> = docs.iter().map(|d| d.target().unwrap().to_vec()).collect();
        let (c, t) = marker_accuracy(&docs, &refs).unwrap();
        assert_eq!(c, t);
        assert!(t >= docs.len());
        for d in &docs {
            for (f, e) in d.src.iter().zip(d.target().unwrap()) {
                assert_eq!(f.len(), e.len());
            }
            assert_ne!(d.src[1][0], ADDRESS);
        }
        let styles: std::collections::BTreeSet<&str> = docs.iter().map(|d| d.src[0][0].as_str()).collect();
        assert_eq!(styles.len(), 2);
    }

    #[test]
    fn flipped_markers_score_zero() {
        let docs = generate(&cfg(TaskKind::Formality)).unwrap();
        let flipped: Vec<Vec<Vec<String>>> = docs
            .iter()
            .map(|d| {
                d.target()
                    .unwrap()
                    .iter()
                    .map(|s| {
                        s.iter()
                            .map(|t| match t.as_str() {
                                FORMAL_MARKER => CASUAL_MARKER.to_string(),
                                CASUAL_MARKER => FORMAL_MARKER.to_string(),
                                _ => t.clone(),
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        assert_eq!(marker_accuracy(&docs, &flipped).unwrap().0, 0);
    }

    #[test]
    fn generation_is_seeded() {
        let a = generate(&cfg(TaskKind::Formality)).unwrap();
        assert_eq!(a, generate(&cfg(TaskKind::Formality)).unwrap());
        let b = generate(&TaskConfig {
            seed: 2,
            ..cfg(TaskKind::Formality)
        })
        .unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn split_sizes() {
        let docs = generate(&cfg(TaskKind::Copy)).unwrap();
        let [tr, va, te] = split(docs, 5, 7, 3).unwrap();
        assert_eq!((tr.len(), va.len(), te.len()), (18, 5, 7));
        assert!(split(tr, 10, 8, 1).is_err());
    }

    #[test]
    fn bad_configs_are_rejected() {
        let bad = TaskConfig {
            min_sentences: 1,
            ..cfg(TaskKind::Formality)
        };
        assert!(generate(&bad).is_err());
        assert!("sorting".parse::<TaskKind>().is_err());
    }
}
