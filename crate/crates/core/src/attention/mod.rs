//! Full, sentence-restricted (LST) and alignment-windowed attention.
//!
//! Every variant computes `softmax(Q·Kᵀ/√d + M)·V` for some mask `M`. The
//! full and LST variants materialise `M`; the window variant only gathers
//! the keys inside `[b_i - w, b_i + w]` per query and never builds an I×J
//! matrix.

mod cost;
mod window;

pub use cost::{attention_cost, effective_context, CostReport};
pub use window::{window_attention, window_attention_op, window_mask, RelativeBias, WindowSpec};

use std::rc::Rc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Array, Mask, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AttentionVariant {
    Full,
    Lst,
    Window,
}

impl AttentionVariant {
    pub fn name(self) -> &'static str {
        match self {
            Self::Full => "full",
            Self::Lst => "lst",
            Self::Window => "window",
        }
    }
}

impl std::fmt::Display for AttentionVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for AttentionVariant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "lst" => Ok(Self::Lst),
            "window" => Ok(Self::Window),
            other => Err(Error::InvalidArgument(format!("unknown attention variant {other:?}"))),
        }
    }
}

/// 1-based sentence index `s(i)` of every position in a sequence.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SentenceMap(Vec<usize>);

impl SentenceMap {
    pub fn new(indices: Vec<usize>) -> Result<Self> {
        if indices.first().is_some_and(|&s| s == 0) || indices.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::InvalidArgument(format!(
                "sentence map must be 1-based and non-decreasing: {indices:?}"
            )));
        }
        Ok(Self(indices))
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn get(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn sentences(&self) -> usize {
        self.0.last().copied().unwrap_or(0)
    }
}

/// `M[i, j] = 0` iff query `i` and key `j` lie in the same sentence.
pub fn sentence_mask(queries: &SentenceMap, keys: &SentenceMap) -> Result<Mask> {
    if queries.is_empty() || keys.is_empty() {
        return Err(Error::Empty("sentence mask over an empty sequence".into()));
    }
    Ok(Mask::from_fn(queries.len(), keys.len(), |i, j| {
        queries.get(i) == keys.get(j)
    }))
}

/// Tape version of full attention over all keys admitted by `mask`.
pub fn full_attention_op(tape: &mut Tape, q: Var, k: Var, v: Var, mask: Option<Rc<Mask>>) -> Result<Var> {
    let (i, j, d) = (tape.value(q).rows(), tape.value(k).rows(), tape.value(q).cols());
    let mask = mask.unwrap_or_else(|| Rc::new(Mask::open(i, j)));
    let scores = tape.matmul_t(q, k)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let probs = tape.masked_softmax(scaled, mask)?;
    tape.matmul(probs, v)
}

/// `softmax(Q·Kᵀ/√d + M)·V` with an optional extra mask (e.g. causal).
pub fn full_attention(q: &Array, k: &Array, v: &Array, extra_mask: Option<&Mask>) -> Result<Array> {
    check_qkv(q, k, v)?;
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let out = full_attention_op(&mut tape, qv, kv, vv, extra_mask.cloned().map(Rc::new))?;
    Ok(tape.value(out).clone())
}

/// Attention probabilities `softmax(Q·Kᵀ/√d + M)` without the value product.
pub fn attention_weights(q: &Array, k: &Array, mask: Option<&Mask>) -> Result<Array> {
    let scores = q.matmul(&k.transpose())?.scale(1.0 / (q.cols() as f64).sqrt());
    let mask = mask.cloned().unwrap_or_else(|| Mask::open(q.rows(), k.rows()));
    crate::numerics::masked_softmax(&scores, &mask)
}

/// Tape version of LST attention: sentence-restricted and full contexts
/// concatenated and projected by `combine` (2d×d).
#[allow(clippy::too_many_arguments)]
pub fn lst_attention_op(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    queries: &SentenceMap,
    keys: &SentenceMap,
    combine: Var,
    extra_mask: Option<Rc<Mask>>,
) -> Result<Var> {
    let dv = tape.value(v).cols();
    let cshape = tape.value(combine).shape().to_vec();
    if cshape != [2 * dv, dv] {
        return Err(Error::Shape(format!(
            "combination matrix must be {}x{dv}, got {cshape:?}",
            2 * dv
        )));
    }
    let restricted = sentence_mask(queries, keys)?;
    let restricted = match &extra_mask {
        Some(m) => restricted.and(m)?,
        None => restricted,
    };
    let local = full_attention_op(tape, q, k, v, Some(Rc::new(restricted)))?;
    let global = full_attention_op(tape, q, k, v, extra_mask)?;
    let both = tape.concat_cols(&[local, global])?;
    tape.matmul(both, combine)
}

pub fn lst_attention(
    q: &Array,
    k: &Array,
    v: &Array,
    queries: &SentenceMap,
    keys: &SentenceMap,
    combine: &Array,
) -> Result<Array> {
    check_qkv(q, k, v)?;
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let cv = tape.leaf(combine.clone());
    let out = lst_attention_op(&mut tape, qv, kv, vv, queries, keys, cv, None)?;
    Ok(tape.value(out).clone())
}

pub(crate) fn check_qkv(q: &Array, k: &Array, v: &Array) -> Result<()> {
    if q.cols() != k.cols() || k.rows() != v.rows() || q.rows() == 0 || k.rows() == 0 {
        return Err(Error::Shape(format!(
            "Q {:?}, K {:?}, V {:?}",
            q.shape(),
            k.shape(),
            v.shape()
        )));
    }
    Ok(())
}
