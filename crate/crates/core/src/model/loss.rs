use serde::{Deserialize, Serialize};

use super::transformer::shift_right;
use super::{AnchorMode, Transformer};
use crate::document::{build_context_input, Document, TokenId, Vocab, EOS_ID};
use crate::error::{Error, Result};
use crate::numerics::{Array, Tape};

/// One training pair: encoder input and the target it should produce,
/// ending in `<eos>`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub src: Vec<TokenId>,
    pub tgt: Vec<TokenId>,
}

impl Example {
    pub fn tgt_in(&self) -> Vec<TokenId> {
        shift_right(&self.tgt)
    }
}

fn encode_pair(vocab: &Vocab, source: &[String], target: &[String]) -> Example {
    let mut tgt = vocab.encode(target);
    tgt.push(EOS_ID);
    Example {
        src: vocab.encode(source),
        tgt,
    }
}

/// One example per (document, sentence): `k` preceding sentences joined
/// with the current one on both sides.
pub fn local_context_examples(corpus: &[Document], vocab: &Vocab, k: usize) -> Result<Vec<Example>> {
    let mut out = Vec::new();
    for doc in corpus {
        let tgt = doc.target()?;
        for n in 1..=doc.len() {
            let ci = build_context_input(doc, n, k)?;
            let mut target = ci.prefix;
            target.extend(tgt[n - 1].iter().cloned());
            out.push(encode_pair(vocab, &ci.source, &target));
        }
    }
    Ok(out)
}

/// One example per document, covering every sentence. Like any context
/// window that starts before the first sentence, it opens with `<bod>`.
pub fn full_document_examples(corpus: &[Document], vocab: &Vocab) -> Result<Vec<Example>> {
    corpus
        .iter()
        .map(|doc| {
            let n = doc.len();
            let ci = build_context_input(doc, n, n)?;
            let mut target = ci.prefix;
            target.extend(doc.target()?[n - 1].iter().cloned());
            Ok(encode_pair(vocab, &ci.source, &target))
        })
        .collect()
}

/// Summed label-smoothed NLL and target token count.
pub(crate) fn nll(model: &Transformer, examples: &[Example], smoothing: f64) -> Result<(f64, usize)> {
    let mut total = 0.0;
    let mut tokens = 0;
    for ex in examples {
        let mut tape = Tape::new();
        let g = model.build(&mut tape, &ex.src, &ex.tgt_in(), AnchorMode::Linear, None)?;
        let l = tape.smoothed_nll(g.logp, &ex.tgt, smoothing)?;
        total += tape.value(l).data()[0];
        tokens += ex.tgt.len();
    }
    Ok((total, tokens))
}

/// Label-smoothed NLL of one example and its gradient with respect to
/// every parameter array, in [`ModelParams`](super::ModelParams) order.
pub fn example_gradients(model: &Transformer, example: &Example) -> Result<(f64, Vec<Array>)> {
    let mut tape = Tape::new();
    let g = model.build(&mut tape, &example.src, &example.tgt_in(), AnchorMode::Linear, None)?;
    let l = tape.smoothed_nll(g.logp, &example.tgt, model.config().label_smoothing)?;
    let grads = tape.backward(l)?;
    Ok((
        tape.value(l).data()[0],
        g.params.iter().map(|&p| grads.get(p)).collect(),
    ))
}

/// Per-token mean loss over `examples` with the model's label smoothing.
pub fn corpus_loss(model: &Transformer, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("loss over an empty corpus".into()));
    }
    let (total, tokens) = nll(model, examples, model.config().label_smoothing)?;
    Ok(total / tokens as f64)
}

/// Per-token mean NLL of the local-context objective.
pub fn local_context_loss(model: &Transformer, vocab: &Vocab, corpus: &[Document], k: usize) -> Result<f64> {
    corpus_loss(model, &local_context_examples(corpus, vocab, k)?)
}

/// Per-token mean NLL of the full-document objective.
pub fn full_document_loss(model: &Transformer, vocab: &Vocab, corpus: &[Document]) -> Result<f64> {
    corpus_loss(model, &full_document_examples(corpus, vocab)?)
}

/// `exp` of the unsmoothed per-token NLL.
pub fn perplexity(model: &Transformer, examples: &[Example]) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::Empty("perplexity over an empty corpus".into()));
    }
    let (total, tokens) = nll(model, examples, 0.0)?;
    Ok((total / tokens as f64).exp())
}

/// Teacher-forced next-token accuracy.
pub fn token_accuracy(model: &Transformer, examples: &[Example]) -> Result<f64> {
    let mut hits = 0;
    let mut total = 0;
    for ex in examples {
        let lp = model.log_probs(&ex.src, &ex.tgt_in(), AnchorMode::Linear)?;
        for (i, &t) in ex.tgt.iter().enumerate() {
            let row = lp.row(i);
            let best = (0..row.len())
                .max_by(|&a, &b| row[a].total_cmp(&row[b]).then(b.cmp(&a)))
                .unwrap_or(0);
            hits += usize::from(best == t);
            total += 1;
        }
    }
    if total == 0 {
        return Err(Error::Empty("accuracy over an empty corpus".into()));
    }
    Ok(hits as f64 / total as f64)
}
