//! Discourse-targeted metrics: pronoun and formality translation F1,
//! contrastive scoring accuracy and the attention-focus diagnostic.

mod contrastive;
mod focus;
mod tagger;

use serde::{Deserialize, Serialize};

pub use contrastive::{contrastive_accuracy, read_contrastive, ContrastiveCase, ModelScorer, Scorer};
pub use focus::{
    attention_focus, corpus_attention_focus, focus_breakdown, focus_mass, AttentionProbe, FocusContext, SentenceFocus,
};
pub use tagger::{
    LexiconTagger, Tagger, DE_FEMALE, DE_FORMAL, DE_INFORMAL, DE_MALE, DE_NEUTER, EN_FEMALE, EN_NEUTER, EN_PLURAL3,
    EN_SECOND, OTHER,
};

/// Target-side class counted by one of the F1 metrics.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    Male,
    Female,
    Neuter,
    Formal,
    Informal,
}

impl Category {
    pub const PRONOUNS: [Category; 3] = [Category::Male, Category::Female, Category::Neuter];
    pub const STYLES: [Category; 2] = [Category::Formal, Category::Informal];

    fn target_label(self) -> &'static str {
        match self {
            Self::Male => DE_MALE,
            Self::Female => DE_FEMALE,
            Self::Neuter => DE_NEUTER,
            Self::Formal => DE_FORMAL,
            Self::Informal => DE_INFORMAL,
        }
    }
}

fn has(labels: &[String], label: &str) -> bool {
    labels.iter().any(|l| l == label)
}

fn occurrences(labels: &[String], label: &str) -> usize {
    labels.iter().filter(|l| *l == label).count()
}

/// Gendered third-person pronouns of class `x` in `target`, provided the
/// source contains an English neuter pronoun. Female forms are ignored
/// when the source also has a plural or second-person pronoun, since
/// "sie" could then translate either.
pub fn count_pronouns(source: &[String], target: &[String], x: Category, tagger: &dyn Tagger) -> usize {
    pronoun_count(&tagger.tag(source), &tagger.tag(target), x)
}

fn pronoun_count(src: &[String], tgt: &[String], x: Category) -> usize {
    if !Category::PRONOUNS.contains(&x) || !has(src, EN_NEUTER) {
        return 0;
    }
    if x == Category::Female && (has(src, EN_PLURAL3) || has(src, EN_SECOND)) {
        return 0;
    }
    occurrences(tgt, x.target_label())
}

/// Formal or informal second-person forms in `target`, provided the
/// source addresses someone with "you". Formal forms are ignored when the
/// source also has a female, neuter or plural third-person pronoun.
pub fn count_formality(source: &[String], target: &[String], x: Category, tagger: &dyn Tagger) -> usize {
    formality_count(&tagger.tag(source), &tagger.tag(target), x)
}

fn formality_count(src: &[String], tgt: &[String], x: Category) -> usize {
    if !Category::STYLES.contains(&x) || !has(src, EN_SECOND) {
        return 0;
    }
    if x == Category::Formal && (has(src, EN_FEMALE) || has(src, EN_NEUTER) || has(src, EN_PLURAL3)) {
        return 0;
    }
    occurrences(tgt, x.target_label())
}

/// One aligned sentence: source, system output and reference, tokenised.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triple {
    pub source: Vec<String>,
    pub hypothesis: Vec<String>,
    pub reference: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryCounts {
    pub category: Category,
    /// `Σ min(hyp, ref)` over sentences.
    pub matched: usize,
    pub hypothesis: usize,
    pub reference: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct F1Report {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub matched: usize,
    pub hypothesis_total: usize,
    pub reference_total: usize,
    pub categories: Vec<CategoryCounts>,
}

impl F1Report {
    fn from_counts(categories: Vec<CategoryCounts>) -> Self {
        let matched = categories.iter().map(|c| c.matched).sum();
        let hypothesis_total = categories.iter().map(|c| c.hypothesis).sum();
        let reference_total = categories.iter().map(|c| c.reference).sum();
        let ratio = |n: usize, d: usize| if d == 0 { 0.0 } else { n as f64 / d as f64 };
        let precision = ratio(matched, hypothesis_total);
        let recall = ratio(matched, reference_total);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
            matched,
            hypothesis_total,
            reference_total,
            categories,
        }
    }
}

fn f1_over(
    corpus: &[Triple],
    tagger: &dyn Tagger,
    categories: &[Category],
    count: fn(&[String], &[String], Category) -> usize,
) -> F1Report {
    let mut totals: Vec<CategoryCounts> = categories
        .iter()
        .map(|&category| CategoryCounts {
            category,
            matched: 0,
            hypothesis: 0,
            reference: 0,
        })
        .collect();
    for t in corpus {
        let src = tagger.tag(&t.source);
        let hyp = tagger.tag(&t.hypothesis);
        let refr = tagger.tag(&t.reference);
        for c in totals.iter_mut() {
            let h = count(&src, &hyp, c.category);
            let r = count(&src, &refr, c.category);
            c.matched += h.min(r);
            c.hypothesis += h;
            c.reference += r;
        }
    }
    F1Report::from_counts(totals)
}

/// Clipped pronoun matches; precision is taken over hypothesis counts,
/// recall over reference counts.
pub fn pronoun_f1(corpus: &[Triple], tagger: &dyn Tagger) -> F1Report {
    f1_over(corpus, tagger, &Category::PRONOUNS, pronoun_count)
}

pub fn formality_f1(corpus: &[Triple], tagger: &dyn Tagger) -> F1Report {
    f1_over(corpus, tagger, &Category::STYLES, formality_count)
}

/// Everything `docwin eval` reports; absent parts were not requested.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pronoun: Option<F1Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub formality: Option<F1Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub contrastive_accuracy: Option<f64>,
    /// Percentage of cross-attention mass on the aligned source sentence.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub attention_focus: Option<f64>,
}
