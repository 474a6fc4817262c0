//! Beam search and the two document decoding strategies: full segment
//! decoding (FSD) and sequential decoding (SD).

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::document::{TokenId, BOD_ID, EOS_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::model::{Encoded, Transformer};

/// Anything that yields next-token log-probabilities for a decoder input
/// (`<eos>` start symbol, forced prefix, generated tokens).
pub trait StepModel {
    type State;

    fn start(&self, source: &[TokenId]) -> Result<Self::State>;

    fn next_log_probs(&self, state: &Self::State, tgt_in: &[TokenId]) -> Result<Vec<f64>>;
}

impl StepModel for Transformer {
    type State = Encoded;

    fn start(&self, source: &[TokenId]) -> Result<Encoded> {
        self.encode(source)
    }

    fn next_log_probs(&self, state: &Encoded, tgt_in: &[TokenId]) -> Result<Vec<f64>> {
        Transformer::next_log_probs(self, state, tgt_in)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamConfig {
    pub beam: usize,
    /// Length-normalisation exponent: score = log p / len^alpha.
    pub alpha: f64,
    /// Generated-token limit; `None` means `2·|source| + 10`.
    pub max_len: Option<usize>,
}

impl Default for BeamConfig {
    fn default() -> Self {
        Self {
            beam: 12,
            alpha: 1.0,
            max_len: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hypothesis {
    /// Generated tokens, excluding the forced prefix.
    pub tokens: Vec<TokenId>,
    pub log_prob: f64,
    pub score: f64,
    pub finished: bool,
}

fn normalized(log_prob: f64, len: usize, alpha: f64) -> f64 {
    if alpha == 0.0 {
        log_prob
    } else {
        log_prob / (len.max(1) as f64).powf(alpha)
    }
}

/// Higher score first; ties go to the lexicographically smaller sequence.
fn rank(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.score.total_cmp(&a.score).then_with(|| a.tokens.cmp(&b.tokens))
}

/// Beam search that stops at `<eos>`.
pub fn beam_search<M: StepModel>(
    model: &M,
    source: &[TokenId],
    prefix: &[TokenId],
    cfg: &BeamConfig,
) -> Result<Hypothesis> {
    beam_search_until(model, source, prefix, cfg, |t| t.last() == Some(&EOS_ID))
}

/// Beam search where `is_final(generated)` decides when a hypothesis is
/// complete.
///
/// Each step keeps the `beam` most probable extensions; those that are
/// final move to a pool of finished hypotheses. A live hypothesis is
/// dropped once even
/// its best reachable score, `log p / max_len^alpha`, cannot beat the best
/// finished one.
pub fn beam_search_until<M: StepModel>(
    model: &M,
    source: &[TokenId],
    prefix: &[TokenId],
    cfg: &BeamConfig,
    is_final: impl Fn(&[TokenId]) -> bool,
) -> Result<Hypothesis> {
    if cfg.beam == 0 {
        return Err(Error::InvalidArgument("beam size must be at least 1".into()));
    }
    let max_len = cfg.max_len.unwrap_or(2 * source.len() + 10).max(1);
    let state = model.start(source)?;
    let mut head = Vec::with_capacity(prefix.len() + max_len + 1);
    head.push(EOS_ID);
    head.extend_from_slice(prefix);

    let mut alive = vec![Hypothesis {
        tokens: Vec::new(),
        log_prob: 0.0,
        score: 0.0,
        finished: false,
    }];
    let mut done: Vec<Hypothesis> = Vec::new();
    for step in 1..=max_len {
        let mut candidates = Vec::with_capacity(alive.len() * 8);
        for h in &alive {
            let mut tgt_in = head.clone();
            tgt_in.extend_from_slice(&h.tokens);
            let lp = model.next_log_probs(&state, &tgt_in)?;
            for (t, &l) in lp.iter().enumerate() {
                if l == f64::NEG_INFINITY {
                    continue;
                }
                let mut tokens = h.tokens.clone();
                tokens.push(t);
                let log_prob = h.log_prob + l;
                candidates.push(Hypothesis {
                    finished: is_final(&tokens),
                    score: normalized(log_prob, step, cfg.alpha),
                    tokens,
                    log_prob,
                });
            }
        }
        candidates.sort_by(|a, b| b.log_prob.total_cmp(&a.log_prob).then_with(|| a.tokens.cmp(&b.tokens)));
        alive.clear();
        for c in candidates.into_iter().take(cfg.beam) {
            if c.finished {
                done.push(c);
            } else {
                alive.push(c);
            }
        }
        if let Some(best) = done.iter().min_by(|a, b| rank(a, b)) {
            let bound = |h: &Hypothesis| normalized(h.log_prob, max_len, cfg.alpha).max(h.score);
            alive.retain(|h| bound(h) >= best.score);
        }
        if alive.is_empty() {
            break;
        }
    }
    if let Some(best) = done.into_iter().min_by(rank) {
        return Ok(best);
    }
    log::warn!("no hypothesis finished within {max_len} tokens; returning the best unfinished one");
    alive
        .into_iter()
        .min_by(rank)
        .ok_or_else(|| Error::Empty("beam search produced no hypothesis".into()))
}

/// Translation of one document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub sentences: Vec<Vec<TokenId>>,
    /// Half-open sentence ranges translated together.
    pub segments: Vec<(usize, usize)>,
    /// Set when a segment produced fewer or more sentences than its source.
    pub misaligned: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    Fsd,
    Sd,
}

impl std::str::FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fsd" => Ok(Self::Fsd),
            "sd" => Ok(Self::Sd),
            _ => Err(Error::InvalidArgument(format!("unknown decoding strategy {s:?}"))),
        }
    }
}

/// `F_a <sep> … <sep> F_b <eos>`, opened by `<bod> <sep>` when the range
/// starts at the first sentence and `bod` is requested.
fn join_source(sentences: &[Vec<TokenId>], bod: bool) -> Vec<TokenId> {
    let mut out = Vec::new();
    if bod {
        out.extend([BOD_ID, SEP_ID]);
    }
    for (i, s) in sentences.iter().enumerate() {
        out.extend_from_slice(s);
        out.push(if i + 1 == sentences.len() { EOS_ID } else { SEP_ID });
    }
    out
}

/// Splits generated tokens on `<sep>` into exactly `expected` sentences:
/// missing ones become empty, surplus ones are merged into the last.
fn resplit(tokens: &[TokenId], expected: usize) -> (Vec<Vec<TokenId>>, bool) {
    let body = match tokens.last() {
        Some(&EOS_ID) => &tokens[..tokens.len() - 1],
        _ => tokens,
    };
    let mut parts: Vec<Vec<TokenId>> = body.split(|&t| t == SEP_ID).map(<[TokenId]>::to_vec).collect();
    if body.last() == Some(&SEP_ID) {
        parts.pop();
    }
    let aligned = parts.len() == expected;
    if parts.len() > expected {
        let surplus: Vec<TokenId> = parts.drain(expected..).flatten().collect();
        parts[expected - 1].extend(surplus);
    }
    parts.resize(expected, Vec::new());
    (parts, !aligned)
}

/// Full segment decoding: non-overlapping parts of `k` sentences (or the
/// whole document) translated independently.
///
/// A segment ends at `<eos>` or at the separator that would open one
/// sentence too many.
pub fn decode_fsd<M: StepModel>(
    model: &M,
    source: &[Vec<TokenId>],
    k: Option<usize>,
    cfg: &BeamConfig,
) -> Result<DecodeResult> {
    if source.is_empty() {
        return Err(Error::Empty("document without sentences".into()));
    }
    let k = match k {
        Some(0) => return Err(Error::InvalidArgument("segment size must be at least 1".into())),
        Some(k) => k,
        None => source.len(),
    };
    let mut result = DecodeResult {
        sentences: Vec::with_capacity(source.len()),
        segments: Vec::new(),
        misaligned: false,
    };
    for start in (0..source.len()).step_by(k) {
        let end = (start + k).min(source.len());
        let bod = start == 0;
        let src = join_source(&source[start..end], bod);
        let prefix: &[TokenId] = if bod { &[BOD_ID, SEP_ID] } else { &[] };
        let expected = end - start;
        let best = beam_search_until(model, &src, prefix, cfg, |t| match t.last() {
            Some(&EOS_ID) => true,
            Some(&SEP_ID) => t.iter().filter(|&&x| x == SEP_ID).count() >= expected,
            _ => false,
        })?;
        let mut tokens = best.tokens;
        if tokens.last() == Some(&SEP_ID) {
            tokens.pop();
        }
        let (sentences, misaligned) = resplit(&tokens, expected);
        result.misaligned |= misaligned;
        result.sentences.extend(sentences);
        result.segments.push((start, end));
    }
    Ok(result)
}

/// Sequential decoding: sentence `n` is generated after a forced prefix of
/// the `k` previously generated sentences, and ends at the first `<sep>`
/// or `<eos>`.
pub fn decode_sd<M: StepModel>(model: &M, source: &[Vec<TokenId>], k: usize, cfg: &BeamConfig) -> Result<DecodeResult> {
    if source.is_empty() {
        return Err(Error::Empty("document without sentences".into()));
    }
    let mut out: Vec<Vec<TokenId>> = Vec::with_capacity(source.len());
    for n in 1..=source.len() {
        let (src, prefix) = sd_context(source, &out, n, k);
        let best = beam_search_until(model, &src, &prefix, cfg, |t| {
            matches!(t.last(), Some(&SEP_ID) | Some(&EOS_ID))
        })?;
        let mut tokens = best.tokens;
        if matches!(tokens.last(), Some(&SEP_ID) | Some(&EOS_ID)) {
            tokens.pop();
        }
        out.push(tokens);
    }
    Ok(DecodeResult {
        segments: (0..out.len()).map(|i| (i, i + 1)).collect(),
        sentences: out,
        misaligned: false,
    })
}

/// Encoder input and forced prefix for sentence `n` (1-based) given the
/// sentences generated so far; `<bod>` stands in before sentence 1.
fn sd_context(source: &[Vec<TokenId>], generated: &[Vec<TokenId>], n: usize, k: usize) -> (Vec<TokenId>, Vec<TokenId>) {
    let first = n.saturating_sub(k);
    let mut src = Vec::new();
    let mut prefix = Vec::new();
    for m in first..=n {
        let f: &[TokenId] = if m == 0 { &[BOD_ID] } else { &source[m - 1] };
        src.extend_from_slice(f);
        src.push(if m == n { EOS_ID } else { SEP_ID });
        if m < n {
            let e: &[TokenId] = if m == 0 { &[BOD_ID] } else { &generated[m - 1] };
            prefix.extend_from_slice(e);
            prefix.push(SEP_ID);
        }
    }
    (src, prefix)
}
