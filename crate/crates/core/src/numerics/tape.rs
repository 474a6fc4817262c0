use std::rc::Rc;

use super::{dot, matmul_into, matmul_t_into, matmul_tn_into, softmax_row_into, Array, Mask};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Key ranges gathered per query by windowed attention.
///
/// All indices are 0-based; `ranges[i]` is the half-open key interval of
/// query `i` and `anchors[i]` its alignment anchor.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WindowKeys {
    pub ranges: Vec<(usize, usize)>,
    pub anchors: Vec<usize>,
    pub radius: usize,
    pub keys: usize,
}

impl WindowKeys {
    pub fn pairs(&self) -> usize {
        self.ranges.iter().map(|(a, b)| b - a).sum()
    }

    /// Bias-table slot for query `i` and key `j`: offset `anchor - j`
    /// shifted into `0..=2w`.
    #[inline]
    pub fn bias_slot(&self, i: usize, j: usize) -> usize {
        (self.anchors[i] + self.radius) - j
    }
}

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    MulConst(Var, Array),
    AddConst(Var),
    MaskedSoftmax(Var, Rc<Mask>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Embed(Var, Vec<usize>),
    Gather(Var, Rc<Vec<usize>>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    LogSoftmax(Var),
    SmoothedNll {
        logp: Var,
        targets: Vec<usize>,
        smoothing: f64,
    },
    Sum(Var),
    DotConst(Var, Array),
    Window {
        q: Var,
        k: Var,
        v: Var,
        bias: Option<(Var, usize)>,
        keys: Rc<WindowKeys>,
        scale: f64,
        probs: Vec<Vec<f64>>,
    },
}

struct Node {
    value: Rc<Array>,
    op: Op,
}

/// Reverse-mode recording of a computation over [`Array`] values.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    grads: Vec<Option<Array>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss with respect to `v`; exactly zero when `v`
    /// did not contribute.
    pub fn get(&self, v: Var) -> Array {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Array::zeros(&self.shapes[v.0]),
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&Array> {
        self.grads[v.0].as_ref()
    }
}

fn shape_err(what: &str, a: &Array, b: &Array) -> Error {
    Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape()))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Array {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array, op: Op) -> Result<Var> {
        if !value.all_finite() {
            return Err(Error::NonFinite(format!(
                "forward value of node {} ({:?})",
                self.nodes.len(),
                value.shape()
            )));
        }
        self.nodes.push(Node {
            value: Rc::new(value),
            op,
        });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, value: Array) -> Var {
        self.leaf_shared(Rc::new(value))
    }

    /// Records a leaf without copying its storage.
    pub fn leaf_shared(&mut self, value: Rc<Array>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.value(a).matmul(self.value(b))?;
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (n, k, m) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != k {
            return Err(shape_err("matmul_t", av, bv));
        }
        let mut out = vec![0.0; n * m];
        matmul_t_into(av.data(), bv.data(), &mut out, n, k, m);
        let out = Array::matrix(n, m, out)?;
        self.push(out, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av, bv));
        }
        let out = av.add(bv)?;
        self.push(out, Op::Add(a, b))
    }

    /// Adds a row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (av, rv) = (self.value(a), self.value(row));
        if rv.len() != av.cols() {
            return Err(shape_err("add_row", av, rv));
        }
        let mut out = av.clone();
        let c = av.cols();
        for (i, x) in out.data_mut().iter_mut().enumerate() {
            *x += rv.data()[i % c];
        }
        self.push(out, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Result<Var> {
        let out = self.value(a).scale(s);
        self.push(out, Op::Scale(a, s))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let out = self.value(a).map(|v| v.max(0.0));
        self.push(out, Op::Relu(a))
    }

    /// Element-wise product with a constant (dropout masks).
    pub fn mul_const(&mut self, a: Var, c: Array) -> Result<Var> {
        let av = self.value(a);
        if av.len() != c.len() {
            return Err(shape_err("mul_const", av, &c));
        }
        let mut out = av.clone();
        for (x, m) in out.data_mut().iter_mut().zip(c.data()) {
            *x *= m;
        }
        self.push(out, Op::MulConst(a, c))
    }

    pub fn add_const(&mut self, a: Var, c: &Array) -> Result<Var> {
        let av = self.value(a);
        if av.len() != c.len() {
            return Err(shape_err("add_const", av, c));
        }
        let out = av.add(c)?;
        self.push(out, Op::AddConst(a))
    }

    pub fn masked_softmax(&mut self, a: Var, mask: Rc<Mask>) -> Result<Var> {
        let out = super::masked_softmax(self.value(a), &mask)?;
        self.push(out, Op::MaskedSoftmax(a, mask))
    }

    /// Row-wise layer normalisation with affine parameters.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        const EPS: f64 = 1e-6;
        let xv = self.value(x);
        let (r, c) = (xv.rows(), xv.cols());
        let (g, b) = (self.value(gamma), self.value(beta));
        if g.len() != c || b.len() != c {
            return Err(shape_err("layer_norm", xv, g));
        }
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        for i in 0..r {
            let row = xv.row(i);
            let mean = row.iter().sum::<f64>() / c as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c as f64;
            let is = 1.0 / (var + EPS).sqrt();
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * g.data()[j] + b.data()[j];
            }
        }
        let out = Array::matrix(r, c, out)?;
        self.push(
            out,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Gathers rows of `table`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        let t = self.value(table);
        let c = t.cols();
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            if id >= t.rows() {
                return Err(Error::InvalidArgument(format!(
                    "id {id} outside table of {} rows",
                    t.rows()
                )));
            }
            out.extend_from_slice(t.row(id));
        }
        let out = Array::matrix(ids.len(), c, out)?;
        self.push(out, Op::Embed(table, ids.to_vec()))
    }

    /// `rows×cols` matrix whose entry `k` is element `idx[k]` of the
    /// flattened `table`.
    pub fn gather(&mut self, table: Var, idx: Rc<Vec<usize>>, rows: usize, cols: usize) -> Result<Var> {
        let t = self.value(table);
        if idx.len() != rows * cols {
            return Err(Error::Shape(format!("{} indices for {rows}x{cols}", idx.len())));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= t.len()) {
            return Err(Error::InvalidArgument(format!(
                "index {bad} outside table of {} elements",
                t.len()
            )));
        }
        let out = Array::matrix(rows, cols, idx.iter().map(|&i| t.data()[i]).collect())?;
        self.push(out, Op::Gather(table, idx))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let av = self.value(a);
        if start + len > av.cols() {
            return Err(Error::Shape(format!(
                "slice {start}..{} of {} columns",
                start + len,
                av.cols()
            )));
        }
        let out = av.slice_cols(start, len);
        self.push(out, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let vals: Vec<&Array> = parts.iter().map(|&p| self.value(p)).collect();
        let out = Array::concat_cols(&vals)?;
        self.push(out, Op::ConcatCols(parts.to_vec()))
    }

    pub fn log_softmax(&mut self, a: Var) -> Result<Var> {
        let av = self.value(a);
        let mut out = av.clone();
        for i in 0..av.rows() {
            let row = out.row_mut(i);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(a))
    }

    /// Summed label-smoothed negative log-likelihood of `targets` under
    /// row-wise log-probabilities.
    pub fn smoothed_nll(&mut self, logp: Var, targets: &[usize], smoothing: f64) -> Result<Var> {
        let lv = self.value(logp);
        if lv.rows() != targets.len() {
            return Err(Error::Shape(format!(
                "{} rows of log-probabilities for {} targets",
                lv.rows(),
                targets.len()
            )));
        }
        let v = lv.cols() as f64;
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row(i);
            if t >= row.len() {
                return Err(Error::InvalidArgument(format!("target id {t} out of range")));
            }
            total -= (1.0 - smoothing) * row[t];
            if smoothing > 0.0 {
                total -= smoothing / v * row.iter().sum::<f64>();
            }
        }
        self.push(
            Array::scalar(total),
            Op::SmoothedNll {
                logp,
                targets: targets.to_vec(),
                smoothing,
            },
        )
    }

    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let s = self.value(a).sum();
        self.push(Array::scalar(s), Op::Sum(a))
    }

    /// `Σ a ∘ c` for a constant `c`.
    pub fn dot_const(&mut self, a: Var, c: Array) -> Result<Var> {
        let av = self.value(a);
        if av.len() != c.len() {
            return Err(shape_err("dot_const", av, &c));
        }
        let s = dot(av.data(), c.data());
        self.push(Array::scalar(s), Op::DotConst(a, c))
    }

    /// Attention restricted to per-query key ranges, optionally with an
    /// additive bias read from row `head` of a `[heads, 2w+1]` table.
    ///
    /// Keys outside a query's range are never touched.
    pub fn window_attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        keys: Rc<WindowKeys>,
        bias: Option<(Var, usize)>,
        scale: f64,
    ) -> Result<Var> {
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let (n, d) = (qv.rows(), qv.cols());
        if kv.cols() != d || kv.rows() != vv.rows() || keys.ranges.len() != n || kv.rows() != keys.keys {
            return Err(Error::Shape(format!(
                "window attention q {:?} k {:?} v {:?} for {} queries over {} keys",
                qv.shape(),
                kv.shape(),
                vv.shape(),
                keys.ranges.len(),
                keys.keys
            )));
        }
        let table = match bias {
            Some((b, h)) => {
                let bv = self.value(b);
                if bv.cols() != 2 * keys.radius + 1 || h >= bv.rows() {
                    return Err(Error::Shape(format!(
                        "bias table {:?} for radius {} head {h}",
                        bv.shape(),
                        keys.radius
                    )));
                }
                Some(bv.row(h))
            }
            None => None,
        };
        let dv = vv.cols();
        let mut out = vec![0.0; n * dv];
        let mut probs = Vec::with_capacity(n);
        for i in 0..n {
            let (lo, hi) = keys.ranges[i];
            if lo >= hi {
                return Err(Error::EmptyAttentionRow { row: i });
            }
            let qi = qv.row(i);
            let mut s: Vec<f64> = (lo..hi)
                .map(|j| {
                    let mut x = dot(qi, kv.row(j)) * scale;
                    if let Some(t) = table {
                        x += t[keys.bias_slot(i, j)];
                    }
                    x
                })
                .collect();
            let scores = s.clone();
            softmax_row_into(&scores, None, &mut s).ok_or(Error::EmptyAttentionRow { row: i })?;
            let orow = &mut out[i * dv..(i + 1) * dv];
            for (p, j) in s.iter().zip(lo..hi) {
                for (o, &x) in orow.iter_mut().zip(vv.row(j)) {
                    *o += p * x;
                }
            }
            probs.push(s);
        }
        let out = Array::matrix(n, dv, out)?;
        self.push(
            out,
            Op::Window {
                q,
                k,
                v,
                bias,
                keys,
                scale,
                probs,
            },
        )
    }

    /// Attention probabilities saved by a windowed-attention node, as
    /// `(key_start, probs)` per query.
    pub fn window_probs(&self, v: Var) -> Option<Vec<(usize, &[f64])>> {
        match &self.nodes[v.0].op {
            Op::Window { keys, probs, .. } => Some(
                keys.ranges
                    .iter()
                    .zip(probs)
                    .map(|(r, p)| (r.0, p.as_slice()))
                    .collect(),
            ),
            _ => None,
        }
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        if self.value(loss).len() != 1 {
            return Err(Error::Shape(format!(
                "backward needs a scalar, got {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array::scalar(1.0));
        for idx in (0..=loss.0).rev() {
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop(idx, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn backprop(&self, idx: usize, g: &Array, grads: &mut [Option<Array>]) {
        let node = &self.nodes[idx];
        let val = |v: Var| -> &Array { &self.nodes[v.0].value };
        match &node.op {
            Op::Leaf => {}
            Op::AddConst(a) => accumulate(grads, *a, val(*a).shape(), |d| add_into(d, g.data())),
            Op::MatMul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.cols());
                accumulate(grads, *a, av.shape(), |d| {
                    matmul_t_into(g.data(), bv.data(), d, n, m, k)
                });
                accumulate(grads, *b, bv.shape(), |d| {
                    matmul_tn_into(av.data(), g.data(), d, n, k, m)
                });
            }
            Op::MatMulT(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                let (n, k, m) = (av.rows(), av.cols(), bv.rows());
                accumulate(grads, *a, av.shape(), |d| matmul_into(g.data(), bv.data(), d, n, m, k));
                accumulate(grads, *b, bv.shape(), |d| {
                    matmul_tn_into(g.data(), av.data(), d, n, m, k)
                });
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, val(*a).shape(), |d| add_into(d, g.data()));
                accumulate(grads, *b, val(*b).shape(), |d| add_into(d, g.data()));
            }
            Op::AddRow(a, row) => {
                accumulate(grads, *a, val(*a).shape(), |d| add_into(d, g.data()));
                let c = g.cols();
                accumulate(grads, *row, val(*row).shape(), |d| {
                    for (i, x) in g.data().iter().enumerate() {
                        d[i % c] += x;
                    }
                });
            }
            Op::Scale(a, s) => accumulate(grads, *a, val(*a).shape(), |d| {
                for (x, y) in d.iter_mut().zip(g.data()) {
                    *x += s * y;
                }
            }),
            Op::Relu(a) => {
                let out: &Array = &node.value;
                accumulate(grads, *a, val(*a).shape(), |d| {
                    for ((x, y), o) in d.iter_mut().zip(g.data()).zip(out.data()) {
                        if *o > 0.0 {
                            *x += y;
                        }
                    }
                })
            }
            Op::MulConst(a, c) => accumulate(grads, *a, val(*a).shape(), |d| {
                for ((x, y), m) in d.iter_mut().zip(g.data()).zip(c.data()) {
                    *x += y * m;
                }
            }),
            Op::MaskedSoftmax(a, mask) => {
                let p: &Array = &node.value;
                accumulate(grads, *a, val(*a).shape(), |d| {
                    let c = p.cols();
                    for i in 0..p.rows() {
                        let pr = p.row(i);
                        let gr = &g.data()[i * c..(i + 1) * c];
                        let inner = dot(pr, gr);
                        for j in 0..c {
                            if mask.allows(i, j) {
                                d[i * c + j] += pr[j] * (gr[j] - inner);
                            }
                        }
                    }
                })
            }
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let gv = val(*gamma);
                let (r, c) = (g.rows(), g.cols());
                accumulate(grads, *gamma, gv.shape(), |d| {
                    for i in 0..r * c {
                        d[i % c] += g.data()[i] * xhat[i];
                    }
                });
                accumulate(grads, *beta, val(*beta).shape(), |d| {
                    for i in 0..r * c {
                        d[i % c] += g.data()[i];
                    }
                });
                accumulate(grads, *x, val(*x).shape(), |d| {
                    for i in 0..r {
                        let gh: Vec<f64> = (0..c).map(|j| g.data()[i * c + j] * gv.data()[j]).collect();
                        let xh = &xhat[i * c..(i + 1) * c];
                        let mean_g = gh.iter().sum::<f64>() / c as f64;
                        let mean_gx = dot(&gh, xh) / c as f64;
                        for j in 0..c {
                            d[i * c + j] += inv_std[i] * (gh[j] - mean_g - xh[j] * mean_gx);
                        }
                    }
                });
            }
            Op::Gather(table, idx) => accumulate(grads, *table, val(*table).shape(), |d| {
                for (&i, x) in idx.iter().zip(g.data()) {
                    d[i] += x;
                }
            }),
            Op::Embed(table, ids) => {
                let c = g.cols();
                accumulate(grads, *table, val(*table).shape(), |d| {
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut d[id * c..(id + 1) * c], g.row(r));
                    }
                })
            }
            Op::SliceCols(a, start) => {
                let av = val(*a);
                let (c, len) = (av.cols(), g.cols());
                accumulate(grads, *a, av.shape(), |d| {
                    for i in 0..g.rows() {
                        add_into(&mut d[i * c + start..i * c + start + len], g.row(i));
                    }
                })
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let pv = val(p);
                    let len = pv.cols();
                    accumulate(grads, p, pv.shape(), |d| {
                        for i in 0..g.rows() {
                            add_into(&mut d[i * len..(i + 1) * len], &g.row(i)[offset..offset + len]);
                        }
                    });
                    offset += len;
                }
            }
            Op::LogSoftmax(a) => {
                let out: &Array = &node.value;
                accumulate(grads, *a, val(*a).shape(), |d| {
                    let c = out.cols();
                    for i in 0..out.rows() {
                        let gr = g.row(i);
                        let gs: f64 = gr.iter().sum();
                        for (j, lp) in out.row(i).iter().enumerate() {
                            d[i * c + j] += gr[j] - lp.exp() * gs;
                        }
                    }
                })
            }
            Op::SmoothedNll {
                logp,
                targets,
                smoothing,
            } => {
                let gs = g.data()[0];
                let lv = val(*logp);
                let c = lv.cols();
                accumulate(grads, *logp, lv.shape(), |d| {
                    for (i, &t) in targets.iter().enumerate() {
                        d[i * c + t] -= gs * (1.0 - smoothing);
                        if *smoothing > 0.0 {
                            for x in &mut d[i * c..(i + 1) * c] {
                                *x -= gs * smoothing / c as f64;
                            }
                        }
                    }
                })
            }
            Op::Sum(a) => {
                let gs = g.data()[0];
                accumulate(grads, *a, val(*a).shape(), |d| {
                    for x in d.iter_mut() {
                        *x += gs;
                    }
                })
            }
            Op::DotConst(a, c) => {
                let gs = g.data()[0];
                accumulate(grads, *a, val(*a).shape(), |d| {
                    for (x, y) in d.iter_mut().zip(c.data()) {
                        *x += gs * y;
                    }
                })
            }
            Op::Window {
                q,
                k,
                v,
                bias,
                keys,
                scale,
                probs,
            } => {
                let (qv, kv, vv) = (val(*q), val(*k), val(*v));
                let (d, dv) = (qv.cols(), vv.cols());
                let mut dq = vec![0.0; qv.len()];
                let mut dk = vec![0.0; kv.len()];
                let mut dvv = vec![0.0; vv.len()];
                let mut db = bias.map(|(b, _)| vec![0.0; val(b).len()]);
                let bias_cols = 2 * keys.radius + 1;
                for (i, p) in probs.iter().enumerate() {
                    let (lo, _) = keys.ranges[i];
                    let go = g.row(i);
                    let dp: Vec<f64> = (0..p.len()).map(|t| dot(go, vv.row(lo + t))).collect();
                    let inner = dot(p, &dp);
                    for (t, (&pt, &dpt)) in p.iter().zip(&dp).enumerate() {
                        let j = lo + t;
                        add_scaled(&mut dvv[j * dv..(j + 1) * dv], go, pt);
                        let ds = pt * (dpt - inner);
                        add_scaled(&mut dq[i * d..(i + 1) * d], kv.row(j), ds * scale);
                        add_scaled(&mut dk[j * d..(j + 1) * d], qv.row(i), ds * scale);
                        if let (Some(db), Some((_, h))) = (db.as_mut(), bias) {
                            db[h * bias_cols + keys.bias_slot(i, j)] += ds;
                        }
                    }
                }
                accumulate(grads, *q, qv.shape(), |x| add_into(x, &dq));
                accumulate(grads, *k, kv.shape(), |x| add_into(x, &dk));
                accumulate(grads, *v, vv.shape(), |x| add_into(x, &dvv));
                if let (Some(db), Some((b, _))) = (db, bias) {
                    accumulate(grads, *b, val(*b).shape(), |x| add_into(x, &db));
                }
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Array>], v: Var, shape: &[usize], f: impl FnOnce(&mut [f64])) {
    let slot = &mut grads[v.0];
    if slot.is_none() {
        *slot = Some(Array::zeros(shape));
    }
    f(slot.as_mut().unwrap().data_mut());
}

#[inline]
fn add_into(d: &mut [f64], s: &[f64]) {
    for (x, y) in d.iter_mut().zip(s) {
        *x += y;
    }
}

#[inline]
fn add_scaled(d: &mut [f64], s: &[f64], a: f64) {
    for (x, y) in d.iter_mut().zip(s) {
        *x += a * y;
    }
}
