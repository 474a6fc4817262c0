use std::path::Path;

use regex::Regex;
use serde::Deserialize;

use crate::error::{Error, Result};

/// Label for tokens outside every lexicon category.
pub const OTHER: &str = "OTHER";

pub const EN_NEUTER: &str = "en_neuter";
pub const EN_FEMALE: &str = "en_female";
pub const EN_PLURAL3: &str = "en_plural3";
pub const EN_SECOND: &str = "en_second";
pub const DE_MALE: &str = "de_male";
pub const DE_FEMALE: &str = "de_female";
pub const DE_NEUTER: &str = "de_neuter";
pub const DE_FORMAL: &str = "de_formal";
pub const DE_INFORMAL: &str = "de_informal";

const DEFAULT_LEXICON: &str = include_str!("../../data/lexicon.json");

/// Assigns one label per token; unmatched tokens get [`OTHER`].
pub trait Tagger {
    fn tag(&self, tokens: &[String]) -> Vec<String>;
}

#[derive(Deserialize)]
struct RuleSpec {
    #[serde(default)]
    words: Vec<String>,
    #[serde(default)]
    patterns: Vec<String>,
    #[serde(default)]
    case_sensitive: bool,
    /// Whether the rule may fire on the first token of a sentence.
    #[serde(default = "yes")]
    sentence_initial: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug)]
struct Rule {
    label: String,
    words: Vec<String>,
    patterns: Vec<Regex>,
    case_sensitive: bool,
    sentence_initial: bool,
}

impl Rule {
    fn matches(&self, token: &str, position: usize) -> bool {
        if position == 0 && !self.sentence_initial {
            return false;
        }
        let hit = if self.case_sensitive {
            self.words.iter().any(|w| w == token)
        } else {
            let lower = token.to_lowercase();
            self.words.iter().any(|w| w.to_lowercase() == lower)
        };
        hit || self.patterns.iter().any(|p| p.is_match(token))
    }
}

/// Closed-class word lists plus anchored regular expressions. Categories
/// are tried in file order and the first match wins, so more specific
/// rules (capitalised formal address) go first.
#[derive(Clone, Debug)]
pub struct LexiconTagger {
    rules: Vec<Rule>,
}

impl LexiconTagger {
    pub fn from_json(text: &str) -> Result<Self> {
        let raw: serde_json::Map<String, serde_json::Value> = serde_json::from_str(text)?;
        let mut rules = Vec::with_capacity(raw.len());
        for (label, value) in raw {
            if label == OTHER {
                return Err(Error::InvalidArgument(format!("{OTHER} is reserved")));
            }
            let spec: RuleSpec = serde_json::from_value(value)?;
            let flags = if spec.case_sensitive { "" } else { "(?i)" };
            let patterns = spec
                .patterns
                .iter()
                .map(|p| Regex::new(&format!("{flags}^(?:{p})$")))
                .collect::<std::result::Result<_, _>>()?;
            rules.push(Rule {
                label,
                words: spec.words,
                patterns,
                case_sensitive: spec.case_sensitive,
                sentence_initial: spec.sentence_initial,
            });
        }
        Ok(Self { rules })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.rules.iter().map(|r| r.label.as_str())
    }
}

impl Default for LexiconTagger {
    /// The bundled English/German pronoun lexicon.
    fn default() -> Self {
        Self::from_json(DEFAULT_LEXICON).expect("bundled lexicon is valid")
    }
}

impl Tagger for LexiconTagger {
    fn tag(&self, tokens: &[String]) -> Vec<String> {
        tokens
            .iter()
            .enumerate()
            .map(|(i, t)| {
                self.rules
                    .iter()
                    .find(|r| r.matches(t, i))
                    .map_or(OTHER, |r| r.label.as_str())
                    .to_string()
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::document::tokenize;

    fn tags(text: &str) -> Vec<String> {
        LexiconTagger::default().tag(&tokenize(text))
    }

    #[test]
    fn capitalised_sie_is_formal_only_mid_sentence() {
        assert_eq!(tags("Sie kommt")[0], DE_FEMALE);
        assert_eq!(tags("kommen Sie")[1], DE_FORMAL);
        assert_eq!(tags("kommt sie")[1], DE_FEMALE);
        assert_eq!(tags("wo ist Ihre Katze")[2], DE_FORMAL);
        assert_eq!(tags("Ihre Katze")[0], OTHER);
    }

    #[test]
    fn english_matching_ignores_case() {
        let t = tags("It said They saw you");
        assert_eq!(t, vec![EN_NEUTER, OTHER, EN_PLURAL3, OTHER, EN_SECOND]);
    }

    #[test]
    fn informal_possessives_come_from_patterns() {
        let t = tags("deine deinem deinx Du");
        assert_eq!(t, vec![DE_INFORMAL, DE_INFORMAL, OTHER, DE_INFORMAL]);
    }

    #[test]
    fn every_token_gets_a_label() {
        let toks = tokenize("a b c er es");
        assert_eq!(LexiconTagger::default().tag(&toks).len(), toks.len());
    }

    #[test]
    fn file_order_sets_priority() {
        let t = LexiconTagger::from_json(r#"{"b": {"words": ["x"]}, "a": {"words": ["x"]}}"#).unwrap();
        assert_eq!(t.tag(&["x".to_string()]), vec!["b"]);
        assert_eq!(t.labels().collect::<Vec<_>>(), vec!["b", "a"]);
    }

    #[test]
    fn bad_lexicons_are_rejected() {
        assert!(LexiconTagger::from_json(r#"{"a": {"patterns": ["("]}}"#).is_err());
        assert!(LexiconTagger::from_json(r#"{"OTHER": {}}"#).is_err());
    }
}
