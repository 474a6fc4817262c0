use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::document::{build_context_input, sentence_map, Document, TokenId, Vocab, BOD_ID, EOS_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::model::{shift_right, AnchorMode, Transformer};
use crate::numerics::Array;

/// Models that can report cross-attention probabilities, `[layer][head]`
/// of `target × source`, for a teacher-forced pass.
pub trait AttentionProbe {
    fn cross_attention_weights(&self, _source: &[TokenId], _tgt_in: &[TokenId]) -> Result<Vec<Vec<Array>>> {
        Err(Error::Unsupported(
            "model does not expose cross-attention weights".into(),
        ))
    }
}

impl AttentionProbe for Transformer {
    /// Uses the decode-time anchors, so window models attend where they
    /// would while translating.
    fn cross_attention_weights(&self, source: &[TokenId], tgt_in: &[TokenId]) -> Result<Vec<Vec<Array>>> {
        Ok(self.cross_attention(source, tgt_in, AnchorMode::Decode)?.layers)
    }
}

/// Mean over `rows`, heads and layers of the attention mass on `cols`.
pub fn focus_mass(weights: &[Vec<Array>], rows: Range<usize>, cols: Range<usize>) -> Result<f64> {
    if rows.is_empty() || weights.is_empty() || weights.iter().any(Vec::is_empty) {
        return Err(Error::Empty("no attention rows to average".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for head in weights.iter().flatten() {
        if rows.end > head.rows() || cols.end > head.cols() {
            return Err(Error::Shape(format!(
                "rows {rows:?} cols {cols:?} outside a {}x{} attention matrix",
                head.rows(),
                head.cols()
            )));
        }
        for i in rows.clone() {
            total += head.row(i)[cols.clone()].iter().sum::<f64>();
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// What the model sees while producing sentence `n`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FocusContext {
    /// `n` plus its `k` predecessors.
    Local(usize),
    /// The whole document in one pass.
    Full,
}

/// Attention accounting for one target sentence: summed over its rows,
/// averaged over heads and layers.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SentenceFocus {
    pub sentence: usize,
    /// Target positions of the sentence, including its closing token.
    pub rows: usize,
    pub in_sentence: f64,
    pub out_of_sentence: f64,
}

impl SentenceFocus {
    /// Share of the attention mass on the current sentence. Rows sum to
    /// one, so the denominator equals `rows` up to rounding; dividing by
    /// the mass itself makes the sentence-only case exactly 100.
    pub fn percentage(&self) -> f64 {
        100.0 * self.in_sentence / (self.in_sentence + self.out_of_sentence)
    }
}

/// Contiguous positions carrying sentence index `s` in a sentence map.
fn span(map: &[usize], s: usize) -> Result<Range<usize>> {
    let start = map
        .iter()
        .position(|&x| x == s)
        .ok_or_else(|| Error::InvalidArgument(format!("no sentence {s} in sequence")))?;
    let end = map.iter().rposition(|&x| x == s).unwrap_or(start) + 1;
    Ok(start..end)
}

fn sentence_focus(
    weights: &[Vec<Array>],
    sentence: usize,
    rows: Range<usize>,
    cols: Range<usize>,
    source_len: usize,
) -> Result<SentenceFocus> {
    let n_rows = rows.len() as f64;
    let inside = focus_mass(weights, rows.clone(), cols.clone())? * n_rows;
    let before = if cols.start > 0 {
        focus_mass(weights, rows.clone(), 0..cols.start)?
    } else {
        0.0
    };
    let after = if cols.end < source_len {
        focus_mass(weights, rows.clone(), cols.end..source_len)?
    } else {
        0.0
    };
    Ok(SentenceFocus {
        sentence,
        rows: rows.len(),
        in_sentence: inside,
        out_of_sentence: (before + after) * n_rows,
    })
}

fn with_sentences(doc: &Document, vocab: &Vocab) -> Result<(Vec<TokenId>, Vec<TokenId>)> {
    let tgt = doc.target()?;
    let mut source = vec![BOD_ID, SEP_ID];
    let mut target = vec![BOD_ID, SEP_ID];
    for (n, (f, e)) in doc.src.iter().zip(tgt).enumerate() {
        let close = if n + 1 == doc.len() { EOS_ID } else { SEP_ID };
        source.extend(vocab.encode(f));
        source.push(close);
        target.extend(vocab.encode(e));
        target.push(close);
    }
    Ok((source, target))
}

/// Per-sentence attention accounting for a parallel document.
pub fn focus_breakdown(
    model: &dyn AttentionProbe,
    vocab: &Vocab,
    doc: &Document,
    context: FocusContext,
) -> Result<Vec<SentenceFocus>> {
    match context {
        FocusContext::Full => {
            let (source, target) = with_sentences(doc, vocab)?;
            let w = model.cross_attention_weights(&source, &shift_right(&target))?;
            let smap = sentence_map(&source, &SEP_ID);
            let tmap = sentence_map(&target, &SEP_ID);
            // `<bod> <sep>` is sentence 1 of both sides
            (1..=doc.len())
                .map(|n| {
                    let rows = span(tmap.as_slice(), n + 1)?;
                    let cols = span(smap.as_slice(), n + 1)?;
                    sentence_focus(&w, n, rows, cols, source.len())
                })
                .collect()
        }
        FocusContext::Local(k) => (1..=doc.len())
            .map(|n| {
                let ci = build_context_input(doc, n, k)?;
                let source = vocab.encode(&ci.source);
                let mut target = vocab.encode(&ci.prefix);
                let rows = target.len()..target.len() + doc.target()?[n - 1].len() + 1;
                target.extend(vocab.encode(&doc.target()?[n - 1]));
                target.push(EOS_ID);
                let w = model.cross_attention_weights(&source, &shift_right(&target))?;
                let last = ci.source_sentence_lengths.last().copied().unwrap_or(0);
                let cols = source.len() - last - 1..source.len();
                sentence_focus(&w, n, rows, cols, source.len())
            })
            .collect(),
    }
}

/// Percentage of attention on source sentence `n` (1-based) while the
/// model produces target sentence `n`.
pub fn attention_focus(
    model: &dyn AttentionProbe,
    vocab: &Vocab,
    doc: &Document,
    n: usize,
    context: FocusContext,
) -> Result<f64> {
    if n == 0 || n > doc.len() {
        return Err(Error::InvalidArgument(format!(
            "sentence {n} outside a document of {}",
            doc.len()
        )));
    }
    Ok(focus_breakdown(model, vocab, doc, context)?[n - 1].percentage())
}

/// Token-weighted focus percentage over every sentence of every document.
pub fn corpus_attention_focus(
    model: &dyn AttentionProbe,
    vocab: &Vocab,
    docs: &[Document],
    context: FocusContext,
) -> Result<f64> {
    let mut inside = 0.0;
    let mut total = 0.0;
    for d in docs {
        for s in focus_breakdown(model, vocab, d, context)? {
            inside += s.in_sentence;
            total += s.in_sentence + s.out_of_sentence;
        }
    }
    if total == 0.0 {
        return Err(Error::Empty("no target tokens".into()));
    }
    Ok(100.0 * inside / total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::alignment::{AlignMode, SentAligner};
    use crate::attention::AttentionVariant;
    use crate::document::tokenize;
    use crate::model::ModelConfig;

    struct Uniform;

    impl AttentionProbe for Uniform {
        fn cross_attention_weights(&self, source: &[TokenId], tgt_in: &[TokenId]) -> Result<Vec<Vec<Array>>> {
            let j = source.len();
            let a = Array::filled(&[tgt_in.len(), j], 1.0 / j as f64);
            Ok(vec![vec![a.clone(), a.clone()], vec![a.clone(), a]])
        }
    }

    struct Opaque;

    impl AttentionProbe for Opaque {}

    fn doc() -> (Document, Vocab) {
        let src = ["a b c", "d e", "f g h i"];
        let tgt = ["A B", "C D E", "F"];
        let d = Document::new(
            "d",
            src.iter().map(|s| tokenize(s)).collect(),
            Some(tgt.iter().map(|s| tokenize(s)).collect()),
        )
        .unwrap();
        let v = Vocab::build(std::slice::from_ref(&d));
        (d, v)
    }

    #[test]
    fn uniform_attention_gives_the_token_share() {
        let w = vec![vec![Array::filled(&[3, 10], 0.1)]];
        assert!((focus_mass(&w, 0..3, 2..6).unwrap() * 100.0 - 40.0).abs() < 1e-12);
    }

    #[test]
    fn sentence_level_input_is_fully_focused() {
        let (d, v) = doc();
        for n in 1..=3 {
            let f = attention_focus(&Uniform, &v, &d, n, FocusContext::Local(0)).unwrap();
            assert_eq!(f, 100.0);
        }
        // "d e <eos>" after "a b c <sep>": 3 of 7 tokens
        let f = attention_focus(&Uniform, &v, &d, 2, FocusContext::Local(1)).unwrap();
        assert!((f - 300.0 / 7.0).abs() < 1e-12);
    }

    #[test]
    fn probe_without_weights_is_an_error() {
        let (d, v) = doc();
        assert!(matches!(
            attention_focus(&Opaque, &v, &d, 1, FocusContext::Full),
            Err(Error::Unsupported(_))
        ));
    }

    fn small(variant: AttentionVariant, window: usize) -> Transformer {
        let c = ModelConfig {
            d_model: 8,
            n_heads: 2,
            enc_layers: 1,
            dec_layers: 2,
            ffn_dim: 8,
            window,
            align: AlignMode::SentAlign,
            ..ModelConfig::default().with_variant(variant)
        };
        Transformer::new(c, 20, 9).unwrap()
    }

    #[test]
    fn attention_mass_is_conserved() {
        let (d, v) = doc();
        for variant in [AttentionVariant::Full, AttentionVariant::Window, AttentionVariant::Lst] {
            let m = small(variant, 2);
            for ctx in [FocusContext::Full, FocusContext::Local(1), FocusContext::Local(5)] {
                for s in focus_breakdown(&m, &v, &d, ctx).unwrap() {
                    assert!(
                        (s.in_sentence + s.out_of_sentence - s.rows as f64).abs() < 1e-9,
                        "{variant} {ctx:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn window_mass_stays_inside_the_reachable_band() {
        let (d, v) = doc();
        let w = 1;
        let m = small(AttentionVariant::Window, w);
        let (source, target) = with_sentences(&d, &v).unwrap();
        let tgt_in = shift_right(&target);
        let weights = m.cross_attention_weights(&source, &tgt_in).unwrap();
        // sent-align anchors replayed over the target input
        let lengths: Vec<usize> = std::iter::once(1).chain(d.src.iter().map(Vec::len)).collect();
        let mut aligner = SentAligner::new(&lengths).unwrap();
        let anchors: Vec<usize> = tgt_in
            .iter()
            .enumerate()
            .map(|(i, &t)| aligner.step_saturating(i > 0 && t == SEP_ID))
            .collect();
        // dense reference: zero every weight outside [b-w, b+w]
        let masked: Vec<Vec<Array>> = weights
            .iter()
            .map(|heads| {
                heads
                    .iter()
                    .map(|a| {
                        let mut a = a.clone();
                        for (i, &b) in anchors.iter().enumerate() {
                            for j in 0..source.len() {
                                if (j + 1).abs_diff(b) > w {
                                    assert_eq!(a.get(i, j), 0.0, "row {i} col {j}");
                                    a.set(i, j, 0.0);
                                }
                            }
                        }
                        a
                    })
                    .collect()
            })
            .collect();
        let smap = sentence_map(&source, &SEP_ID);
        let tmap = sentence_map(&target, &SEP_ID);
        for n in 2..=4 {
            let rows = span(tmap.as_slice(), n).unwrap();
            let cols = span(smap.as_slice(), n).unwrap();
            let a = focus_mass(&weights, rows.clone(), cols.clone()).unwrap();
            let b = focus_mass(&masked, rows, cols).unwrap();
            assert!((a - b).abs() < 1e-12);
        }
    }
}
