use std::rc::Rc;

use serde::{Deserialize, Serialize};

use super::{check_qkv, AttentionVariant, CostReport};
use crate::error::{Error, Result};
use crate::numerics::{Array, Mask, Tape, Var, WindowKeys};

/// Window radius `w` and one alignment anchor `b_i` per query (1-based).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    pub radius: usize,
    pub anchors: Vec<usize>,
}

impl WindowSpec {
    pub fn new(radius: usize, anchors: Vec<usize>) -> Result<Self> {
        if radius == 0 {
            return Err(Error::InvalidArgument("window radius must be at least 1".into()));
        }
        if anchors.contains(&0) {
            return Err(Error::InvalidArgument("anchors are 1-based".into()));
        }
        Ok(Self { radius, anchors })
    }

    /// Self-attention alignment `b_i = i`.
    pub fn identity(radius: usize, len: usize) -> Result<Self> {
        Self::new(radius, (1..=len).collect())
    }

    /// Resolves per-query key ranges over `num_keys` keys.
    ///
    /// Anchors are clamped into `[1, J]`; the window is intersected with
    /// `[1, J]` and, when given, with `[1, causal_limit[i]]`.
    pub fn keys(&self, num_keys: usize, causal_limit: Option<&[usize]>) -> Result<WindowKeys> {
        if num_keys == 0 {
            return Err(Error::Empty("window over zero keys".into()));
        }
        if let Some(limit) = causal_limit {
            if limit.len() != self.anchors.len() {
                return Err(Error::Shape(format!(
                    "{} causal limits for {} queries",
                    limit.len(),
                    self.anchors.len()
                )));
            }
        }
        let w = self.radius;
        let mut ranges = Vec::with_capacity(self.anchors.len());
        let mut anchors = Vec::with_capacity(self.anchors.len());
        for (i, &b) in self.anchors.iter().enumerate() {
            let b = b.clamp(1, num_keys);
            let lo = b.saturating_sub(w).max(1);
            let mut hi = (b + w).min(num_keys);
            if let Some(limit) = causal_limit {
                hi = hi.min(limit[i]);
            }
            if lo > hi {
                return Err(Error::EmptyAttentionRow { row: i });
            }
            ranges.push((lo - 1, hi));
            anchors.push(b - 1);
        }
        Ok(WindowKeys {
            ranges,
            anchors,
            radius: w,
            keys: num_keys,
        })
    }
}

/// Learnable per-head score offsets `r_δ` for `δ = b_i - j ∈ [-w, w]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeBias {
    pub radius: usize,
    /// `[heads, 2w+1]`; column `δ + w` holds `r_δ`.
    pub table: Array,
}

impl RelativeBias {
    pub fn zeros(heads: usize, radius: usize) -> Self {
        Self {
            radius,
            table: Array::zeros(&[heads, 2 * radius + 1]),
        }
    }

    pub fn from_table(radius: usize, table: Array) -> Result<Self> {
        if table.shape().len() != 2 || table.cols() != 2 * radius + 1 {
            return Err(Error::Shape(format!(
                "bias table {:?} for radius {radius}",
                table.shape()
            )));
        }
        Ok(Self { radius, table })
    }

    pub fn heads(&self) -> usize {
        self.table.rows()
    }

    /// `r_δ` for head `h`.
    pub fn offset(&self, head: usize, delta: isize) -> f64 {
        self.table.get(head, (delta + self.radius as isize) as usize)
    }
}

/// Tape version of windowed attention over pre-resolved key ranges.
pub fn window_attention_op(
    tape: &mut Tape,
    q: Var,
    k: Var,
    v: Var,
    keys: Rc<WindowKeys>,
    bias: Option<(Var, usize)>,
) -> Result<Var> {
    let d = tape.value(q).cols();
    tape.window_attention(q, k, v, keys, bias, 1.0 / (d as f64).sqrt())
}

/// Attention restricted to `[b_i - w, b_i + w] ∩ [1, J]` per query, with
/// `r_{b_i - j}` added to the scores when `bias` is given.
pub fn window_attention(
    q: &Array,
    k: &Array,
    v: &Array,
    spec: &WindowSpec,
    bias: Option<(&RelativeBias, usize)>,
    causal_limit: Option<&[usize]>,
) -> Result<(Array, CostReport)> {
    check_qkv(q, k, v)?;
    if spec.anchors.len() != q.rows() {
        return Err(Error::Shape(format!(
            "{} anchors for {} queries",
            spec.anchors.len(),
            q.rows()
        )));
    }
    if let Some((b, _)) = bias {
        if b.radius != spec.radius {
            return Err(Error::Shape(format!(
                "bias radius {} for window radius {}",
                b.radius, spec.radius
            )));
        }
    }
    let keys = Rc::new(spec.keys(k.rows(), causal_limit)?);
    let mut tape = Tape::new();
    let (qv, kv, vv) = (tape.leaf(q.clone()), tape.leaf(k.clone()), tape.leaf(v.clone()));
    let bv = bias.map(|(b, h)| (tape.leaf(b.table.clone()), h));
    let out = window_attention_op(&mut tape, qv, kv, vv, keys.clone(), bv)?;
    let pairs = keys.pairs();
    let report = CostReport {
        variant: AttentionVariant::Window,
        queries: q.rows(),
        keys: k.rows(),
        pairs,
        activation_elements: pairs,
    };
    Ok((tape.value(out).clone(), report))
}

/// Dense mask equivalent of a window: the reference path for tests and
/// diagnostics.
pub fn window_mask(spec: &WindowSpec, num_keys: usize, causal_limit: Option<&[usize]>) -> Result<Mask> {
    let keys = spec.keys(num_keys, causal_limit)?;
    Ok(Mask::from_fn(spec.anchors.len(), num_keys, |i, j| {
        let (lo, hi) = keys.ranges[i];
        (lo..hi).contains(&j)
    }))
}
