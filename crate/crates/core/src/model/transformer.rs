use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::params::{init_params, layout_for, AttnIdx, FfnIdx, Layout, NormIdx};
use super::{ModelConfig, ModelParams, PosEnc};
use crate::alignment::{linear_align, ratio_align, AlignMode, SentAligner};
use crate::attention::{sentence_mask, AttentionVariant, SentenceMap, WindowSpec};
use crate::document::{sentence_map, TokenId, EOS_ID, SEP_ID};
use crate::error::{Error, Result};
use crate::numerics::{Array, Mask, Tape, Var, WindowKeys};

/// How cross-attention anchors are chosen for a teacher-forced pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AnchorMode {
    /// `round(J/I · i)` over the known target length, as in training.
    Linear,
    /// The configured decode-time alignment, replayed over the target.
    Decode,
}

/// Encoder output for one source sequence, reusable across decoder calls.
#[derive(Clone, Debug)]
pub struct Encoded {
    source: Vec<TokenId>,
    states: Rc<Array>,
}

impl Encoded {
    pub fn source(&self) -> &[TokenId] {
        &self.source
    }
}

/// Dense cross-attention probabilities, `[layer][head]` of `I×J`.
#[derive(Clone, Debug, PartialEq)]
pub struct CrossAttention {
    pub layers: Vec<Vec<Array>>,
}

#[derive(Clone, Debug)]
pub struct Transformer {
    config: ModelConfig,
    params: ModelParams,
    layout: Layout,
}

/// Attention probabilities recorded for one head.
#[derive(Clone, Copy)]
enum HeadProbs {
    Dense(Var),
    Window(Var),
    /// Restricted and full branch.
    Lst(Var, Var),
}

/// Key structure of one attention site, shared by all its layers.
struct Site {
    variant: AttentionVariant,
    queries: usize,
    keys: usize,
    window: Option<Rc<WindowKeys>>,
    mask: Option<Rc<Mask>>,
    restricted: Option<Rc<Mask>>,
    /// Per-head flat indices into the relative table for dense sites.
    rel_index: Vec<Rc<Vec<usize>>>,
}

pub(crate) struct Graph {
    pub params: Vec<Var>,
    pub logp: Var,
    cross: Vec<Vec<HeadProbs>>,
}

impl Transformer {
    pub fn new(config: ModelConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if vocab_size == 0 {
            return Err(Error::InvalidArgument("empty vocabulary".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (layout, params) = init_params(&config, vocab_size, &mut rng);
        Ok(Self { config, params, layout })
    }

    pub fn from_params(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        let layout = layout_for(&config, &params)?;
        params.ensure_finite()?;
        Ok(Self { config, params, layout })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn vocab_size(&self) -> usize {
        self.params.array(self.layout.embed).rows()
    }

    /// Index of the output projection, for tests that zero it.
    pub fn output_projection(&self) -> (usize, usize) {
        (self.layout.out_w, self.layout.out_b)
    }

    fn check_ids(&self, ids: &[TokenId], what: &str) -> Result<()> {
        if ids.is_empty() {
            return Err(Error::Empty(format!("{what} sequence")));
        }
        let v = self.vocab_size();
        if let Some(&bad) = ids.iter().find(|&&t| t >= v) {
            return Err(Error::InvalidArgument(format!(
                "{what} id {bad} outside vocabulary of {v}"
            )));
        }
        Ok(())
    }

    /// Per-position log-probabilities `[I, V]` for decoder input `tgt_in`
    /// (the target shifted right behind the start symbol).
    pub fn log_probs(&self, source: &[TokenId], tgt_in: &[TokenId], anchors: AnchorMode) -> Result<Array> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, source, tgt_in, anchors, None)?;
        Ok(tape.value(g.logp).clone())
    }

    /// Log-probability of `target` (which should end in `<eos>`) given the
    /// source, teacher-forced.
    pub fn score(&self, source: &[TokenId], target: &[TokenId]) -> Result<f64> {
        let tgt_in = shift_right(target);
        let lp = self.log_probs(source, &tgt_in, AnchorMode::Linear)?;
        Ok(target.iter().enumerate().map(|(i, &t)| lp.get(i, t)).sum())
    }

    pub fn cross_attention(
        &self,
        source: &[TokenId],
        tgt_in: &[TokenId],
        anchors: AnchorMode,
    ) -> Result<CrossAttention> {
        let mut tape = Tape::new();
        let g = self.build(&mut tape, source, tgt_in, anchors, None)?;
        let j = source.len();
        let layers = g
            .cross
            .iter()
            .map(|heads| heads.iter().map(|h| dense_probs(&tape, *h, j)).collect())
            .collect::<Result<_>>()?;
        Ok(CrossAttention { layers })
    }

    pub fn encode(&self, source: &[TokenId]) -> Result<Encoded> {
        self.check_ids(source, "source")?;
        let mut tape = Tape::new();
        let mut f = Forward::new(self, &mut tape, None);
        let states = f.encoder(source)?;
        Ok(Encoded {
            source: source.to_vec(),
            states: Rc::new(tape.value(states).clone()),
        })
    }

    /// Next-token log-probabilities after `tgt_in`, with decode-time
    /// cross-attention anchors.
    pub fn next_log_probs(&self, enc: &Encoded, tgt_in: &[TokenId]) -> Result<Vec<f64>> {
        self.check_ids(tgt_in, "target")?;
        let mut tape = Tape::new();
        let mut f = Forward::new(self, &mut tape, None);
        let states = f.tape.leaf_shared(enc.states.clone());
        let (logp, _) = f.decoder(&enc.source, states, tgt_in, AnchorMode::Decode)?;
        let lp = tape.value(logp);
        Ok(lp.row(lp.rows() - 1).to_vec())
    }

    /// Records the full forward pass on `tape`.
    pub(crate) fn build(
        &self,
        tape: &mut Tape,
        source: &[TokenId],
        tgt_in: &[TokenId],
        anchors: AnchorMode,
        dropout: Option<&mut ChaCha8Rng>,
    ) -> Result<Graph> {
        self.check_ids(source, "source")?;
        self.check_ids(tgt_in, "target")?;
        let mut f = Forward::new(self, tape, dropout);
        let states = f.encoder(source)?;
        let (logp, cross) = f.decoder(source, states, tgt_in, anchors)?;
        Ok(Graph {
            params: f.pv,
            logp,
            cross,
        })
    }
}

/// `<eos> t_1 … t_{I-1}`: the decoder input for target `t`.
pub fn shift_right(target: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(target.len());
    v.push(EOS_ID);
    v.extend_from_slice(&target[..target.len().saturating_sub(1)]);
    v
}

fn dense_probs(tape: &Tape, h: HeadProbs, keys: usize) -> Result<Array> {
    Ok(match h {
        HeadProbs::Dense(p) => tape.value(p).clone(),
        HeadProbs::Lst(a, b) => tape.value(a).add(tape.value(b))?.scale(0.5),
        HeadProbs::Window(o) => {
            let rows = tape
                .window_probs(o)
                .ok_or_else(|| Error::Unsupported("node holds no window probabilities".into()))?;
            let mut m = Array::zeros(&[rows.len(), keys]);
            for (i, (start, p)) in rows.into_iter().enumerate() {
                m.row_mut(i)[start..start + p.len()].copy_from_slice(p);
            }
            m
        }
    })
}

/// Lengths of the `<sep>`-delimited sentences of a source, excluding the
/// separators and the final `<eos>`.
pub(crate) fn source_sentence_lengths(source: &[TokenId]) -> Vec<usize> {
    let body = match source.last() {
        Some(&EOS_ID) => &source[..source.len() - 1],
        _ => source,
    };
    let mut lens = vec![0];
    for &t in body {
        if t == SEP_ID {
            lens.push(0);
        } else {
            *lens.last_mut().unwrap() += 1;
        }
    }
    if body.last() == Some(&SEP_ID) {
        lens.pop();
    }
    lens
}

/// Sentence of the token each decoder position predicts.
fn output_sentences(tgt_in: &[TokenId]) -> Vec<usize> {
    let mut s = 1;
    tgt_in
        .iter()
        .enumerate()
        .map(|(p, &t)| {
            if p > 0 && t == SEP_ID {
                s += 1;
            }
            s
        })
        .collect()
}

pub(crate) fn sinusoid(len: usize, d: usize) -> Array {
    let mut m = Array::zeros(&[len, d]);
    for pos in 0..len {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = pos as f64 / rate;
            m.set(pos, i, if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    m
}

struct Forward<'a, 't> {
    model: &'a Transformer,
    tape: &'t mut Tape,
    pv: Vec<Var>,
    dropout: Option<&'t mut ChaCha8Rng>,
}

impl<'a, 't> Forward<'a, 't> {
    fn new(model: &'a Transformer, tape: &'t mut Tape, dropout: Option<&'t mut ChaCha8Rng>) -> Self {
        let pv = (0..model.params.len())
            .map(|i| tape.leaf_shared(model.params.value(i).clone()))
            .collect();
        Self {
            model,
            tape,
            pv,
            dropout,
        }
    }

    fn cfg(&self) -> &'a ModelConfig {
        &self.model.config
    }

    fn layout(&self) -> &'a Layout {
        &self.model.layout
    }

    fn drop(&mut self, x: Var) -> Result<Var> {
        let p = self.cfg().dropout;
        let Some(rng) = self.dropout.as_deref_mut() else {
            return Ok(x);
        };
        if p == 0.0 {
            return Ok(x);
        }
        let shape = self.tape.value(x).shape().to_vec();
        let n: usize = shape.iter().product();
        let keep = 1.0 / (1.0 - p);
        let m = (0..n).map(|_| if rng.gen::<f64>() < p { 0.0 } else { keep }).collect();
        self.tape.mul_const(x, Array::new(shape, m)?)
    }

    fn norm(&mut self, x: Var, n: NormIdx) -> Result<Var> {
        self.tape.layer_norm(x, self.pv[n.g], self.pv[n.b])
    }

    fn ffn(&mut self, x: Var, f: FfnIdx) -> Result<Var> {
        let h = self.tape.matmul(x, self.pv[f.w1])?;
        let h = self.tape.add_row(h, self.pv[f.b1])?;
        let h = self.tape.relu(h)?;
        let o = self.tape.matmul(h, self.pv[f.w2])?;
        self.tape.add_row(o, self.pv[f.b2])
    }

    fn embed(&mut self, ids: &[TokenId]) -> Result<Var> {
        let d = self.cfg().d_model;
        let e = self.tape.embed(self.pv[self.layout().embed], ids)?;
        let mut x = self.tape.scale(e, (d as f64).sqrt())?;
        if self.cfg().pos_enc == PosEnc::Absolute {
            x = self.tape.add_const(x, &sinusoid(ids.len(), d))?;
        }
        self.drop(x)
    }

    /// Relative-offset indices `h·(2w+1) + clip(b_i - j) + w` per head.
    fn rel_index(&self, anchors: &[usize], keys: usize) -> Vec<Rc<Vec<usize>>> {
        let cfg = self.cfg();
        if cfg.pos_enc != PosEnc::Relative {
            return Vec::new();
        }
        let w = cfg.window as isize;
        let width = 2 * cfg.window + 1;
        let base: Vec<usize> = anchors
            .iter()
            .flat_map(|&b| (1..=keys).map(move |j| ((b as isize - j as isize).clamp(-w, w) + w) as usize))
            .collect();
        (0..cfg.n_heads)
            .map(|h| Rc::new(base.iter().map(|x| h * width + x).collect()))
            .collect()
    }

    /// Builds a site; `restrict` gives query/key sentence maps for LST.
    fn site(
        &self,
        variant: AttentionVariant,
        anchors: Vec<usize>,
        keys: usize,
        causal: bool,
        restrict: impl FnOnce() -> Result<Mask>,
    ) -> Result<Site> {
        let queries = anchors.len();
        let causal_mask = causal.then(|| Mask::causal(queries));
        let mut site = Site {
            variant,
            queries,
            keys,
            window: None,
            mask: None,
            restricted: None,
            rel_index: Vec::new(),
        };
        match variant {
            AttentionVariant::Window => {
                let limit: Vec<usize> = (1..=queries).collect();
                let spec = WindowSpec::new(self.cfg().window, anchors)?;
                site.window = Some(Rc::new(spec.keys(keys, causal.then_some(limit.as_slice()))?));
                return Ok(site);
            }
            AttentionVariant::Full => {}
            AttentionVariant::Lst => {
                let r = restrict()?;
                site.restricted = Some(Rc::new(match &causal_mask {
                    Some(c) => r.and(c)?,
                    None => r,
                }));
            }
        }
        site.rel_index = self.rel_index(&anchors, keys);
        site.mask = Some(Rc::new(causal_mask.unwrap_or_else(|| Mask::open(queries, keys))));
        Ok(site)
    }

    fn attention(&mut self, xq: Var, xkv: Var, a: AttnIdx, site: &Site) -> Result<(Var, Vec<HeadProbs>)> {
        let cfg = self.cfg();
        let (heads, dh) = (cfg.n_heads, cfg.head_dim());
        let q = self.tape.matmul(xq, self.pv[a.wq])?;
        let k = self.tape.matmul(xkv, self.pv[a.wk])?;
        let v = self.tape.matmul(xkv, self.pv[a.wv])?;
        let rel = a.rel.map(|i| self.pv[i]);
        let scale = 1.0 / (dh as f64).sqrt();
        let mut outs = Vec::with_capacity(heads);
        let mut locals = Vec::new();
        let mut probs = Vec::with_capacity(heads);
        for h in 0..heads {
            let qh = self.tape.slice_cols(q, h * dh, dh)?;
            let kh = self.tape.slice_cols(k, h * dh, dh)?;
            let vh = self.tape.slice_cols(v, h * dh, dh)?;
            if let Some(keys) = &site.window {
                let o = self
                    .tape
                    .window_attention(qh, kh, vh, keys.clone(), rel.map(|t| (t, h)), scale)?;
                outs.push(o);
                probs.push(HeadProbs::Window(o));
                continue;
            }
            let s = self.tape.matmul_t(qh, kh)?;
            let mut s = self.tape.scale(s, scale)?;
            if let Some(t) = rel {
                let b = self
                    .tape
                    .gather(t, site.rel_index[h].clone(), site.queries, site.keys)?;
                s = self.tape.add(s, b)?;
            }
            let mask = site.mask.clone().expect("dense site has a mask");
            let p = self.tape.masked_softmax(s, mask)?;
            outs.push(self.tape.matmul(p, vh)?);
            match &site.restricted {
                Some(r) => {
                    let pl = self.tape.masked_softmax(s, r.clone())?;
                    locals.push(self.tape.matmul(pl, vh)?);
                    probs.push(HeadProbs::Lst(pl, p));
                }
                None => probs.push(HeadProbs::Dense(p)),
            }
        }
        let mut ctx = self.tape.concat_cols(&outs)?;
        if site.variant == AttentionVariant::Lst {
            let local = self.tape.concat_cols(&locals)?;
            let both = self.tape.concat_cols(&[local, ctx])?;
            let combine = a.combine.expect("lst site has a combination matrix");
            ctx = self.tape.matmul(both, self.pv[combine])?;
        }
        Ok((self.tape.matmul(ctx, self.pv[a.wo])?, probs))
    }

    fn encoder(&mut self, source: &[TokenId]) -> Result<Var> {
        let j = source.len();
        let layout = self.layout();
        let smap = sentence_map(source, &SEP_ID);
        let site = self.site(self.cfg().enc_self, (1..=j).collect(), j, false, || {
            sentence_mask(&smap, &smap)
        })?;
        let mut x = self.embed(source)?;
        for layer in &layout.enc {
            let h = self.norm(x, layer.norm1)?;
            let (a, _) = self.attention(h, h, layer.attn, &site)?;
            let a = self.drop(a)?;
            x = self.tape.add(x, a)?;
            let h = self.norm(x, layer.norm2)?;
            let f = self.ffn(h, layer.ffn)?;
            let f = self.drop(f)?;
            x = self.tape.add(x, f)?;
        }
        self.norm(x, layout.enc_norm)
    }

    fn cross_anchors(&self, source: &[TokenId], tgt_in: &[TokenId], mode: AnchorMode) -> Result<Vec<usize>> {
        let (i_len, j_len) = (tgt_in.len(), source.len());
        let positions = 1..=i_len;
        Ok(match (mode, self.cfg().align) {
            (AnchorMode::Linear, _) => positions.map(|i| linear_align(i, i_len, j_len)).collect(),
            (AnchorMode::Decode, AlignMode::Identity) => positions.collect(),
            (AnchorMode::Decode, AlignMode::Ratio { ratio }) => positions.map(|i| ratio_align(i, ratio)).collect(),
            (AnchorMode::Decode, AlignMode::SentAlign) => {
                let mut al = SentAligner::new(&source_sentence_lengths(source))?;
                tgt_in
                    .iter()
                    .enumerate()
                    .map(|(p, &t)| al.step_saturating(p > 0 && t == SEP_ID))
                    .collect()
            }
        })
    }

    fn decoder(
        &mut self,
        source: &[TokenId],
        states: Var,
        tgt_in: &[TokenId],
        mode: AnchorMode,
    ) -> Result<(Var, Vec<Vec<HeadProbs>>)> {
        let (i_len, j_len) = (tgt_in.len(), source.len());
        let layout = self.layout();
        let cfg = self.cfg();
        let tmap = sentence_map(tgt_in, &SEP_ID);
        let self_site = self.site(cfg.dec_self, (1..=i_len).collect(), i_len, true, || {
            sentence_mask(&tmap, &tmap)
        })?;
        let smap = sentence_map(source, &SEP_ID);
        let last = smap.sentences();
        let out_map = SentenceMap::new(output_sentences(tgt_in).into_iter().map(|s| s.min(last)).collect())?;
        let anchors = self.cross_anchors(source, tgt_in, mode)?;
        let cross_site = self.site(cfg.cross, anchors, j_len, false, || sentence_mask(&out_map, &smap))?;

        let mut y = self.embed(tgt_in)?;
        let mut cross = Vec::with_capacity(layout.dec.len());
        for layer in &layout.dec {
            let h = self.norm(y, layer.norm1)?;
            let (a, _) = self.attention(h, h, layer.self_attn, &self_site)?;
            let a = self.drop(a)?;
            y = self.tape.add(y, a)?;
            let h = self.norm(y, layer.norm2)?;
            let (c, probs) = self.attention(h, states, layer.cross, &cross_site)?;
            cross.push(probs);
            let c = self.drop(c)?;
            y = self.tape.add(y, c)?;
            let h = self.norm(y, layer.norm3)?;
            let f = self.ffn(h, layer.ffn)?;
            let f = self.drop(f)?;
            y = self.tape.add(y, f)?;
        }
        let y = self.norm(y, layout.dec_norm)?;
        let logits = self.tape.matmul(y, self.pv[layout.out_w])?;
        let logits = self.tape.add_row(logits, self.pv[layout.out_b])?;
        Ok((self.tape.log_softmax(logits)?, cross))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(variant: AttentionVariant) -> ModelConfig {
        ModelConfig {
            d_model: 8,
            n_heads: 2,
            enc_layers: 1,
            dec_layers: 1,
            ffn_dim: 16,
            window: 2,
            dropout: 0.0,
            label_smoothing: 0.0,
            ..ModelConfig::default().with_variant(variant)
        }
    }

    const SRC: [TokenId; 8] = [5, 6, 7, SEP_ID, 8, 9, 5, EOS_ID];
    const TGT_IN: [TokenId; 7] = [EOS_ID, 6, 7, 8, SEP_ID, 9, 9];

    fn logsumexp(row: &[f64]) -> f64 {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + row.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
    }

    #[test]
    fn rows_are_normalized_for_every_variant() {
        for variant in [AttentionVariant::Full, AttentionVariant::Lst, AttentionVariant::Window] {
            for pos_enc in [PosEnc::Absolute, PosEnc::Relative] {
                let c = ModelConfig {
                    pos_enc,
                    ..tiny(variant)
                };
                let m = Transformer::new(c, 12, 3).unwrap();
                let lp = m.log_probs(&SRC, &TGT_IN, AnchorMode::Linear).unwrap();
                assert_eq!(lp.shape(), &[7, 12]);
                for i in 0..lp.rows() {
                    assert!(logsumexp(lp.row(i)).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn zero_output_projection_is_uniform() {
        let mut m = Transformer::new(tiny(AttentionVariant::Window), 12, 3).unwrap();
        let (w, b) = m.output_projection();
        m.params_mut().array_mut(w).data_mut().fill(0.0);
        m.params_mut().array_mut(b).data_mut().fill(0.0);
        let lp = m.log_probs(&SRC, &TGT_IN, AnchorMode::Linear).unwrap();
        let u = -(12f64).ln();
        assert!(lp.data().iter().all(|&x| (x - u).abs() < 1e-12));
    }

    #[test]
    fn wide_decoder_window_equals_full_self_attention() {
        for pos_enc in [PosEnc::Absolute, PosEnc::Relative] {
            let mut wide = ModelConfig {
                pos_enc,
                window: 10,
                ..tiny(AttentionVariant::Full)
            };
            let full = Transformer::new(wide.clone(), 12, 9).unwrap();
            wide.dec_self = AttentionVariant::Window;
            let mut windowed = Transformer::new(wide.clone(), 12, 9).unwrap();
            // relative tables start at zero; give them structure first
            for (i, name) in full.params().names().iter().enumerate() {
                if name.ends_with(".rel") {
                    let t: Vec<f64> = (0..full.params().array(i).len())
                        .map(|x| (x as f64 * 0.37).sin())
                        .collect();
                    windowed.params_mut().array_mut(i).data_mut().copy_from_slice(&t);
                }
            }
            let full = Transformer::from_params(
                ModelConfig {
                    dec_self: AttentionVariant::Full,
                    ..wide
                },
                windowed.params().clone(),
            )
            .unwrap();
            let a = full.log_probs(&SRC, &TGT_IN, AnchorMode::Linear).unwrap();
            let b = windowed.log_probs(&SRC, &TGT_IN, AnchorMode::Linear).unwrap();
            assert!(a.max_abs_diff(&b) <= 1e-9, "{pos_enc}: {}", a.max_abs_diff(&b));
        }
    }

    #[test]
    fn decoder_is_causal() {
        for variant in [AttentionVariant::Full, AttentionVariant::Lst, AttentionVariant::Window] {
            let m = Transformer::new(tiny(variant), 12, 4).unwrap();
            let a = m.log_probs(&SRC, &TGT_IN, AnchorMode::Linear).unwrap();
            let mut changed = TGT_IN;
            changed[5] = 11;
            changed[6] = 10;
            // linear anchors depend only on lengths, which are unchanged
            let b = m.log_probs(&SRC, &changed, AnchorMode::Linear).unwrap();
            for i in 0..5 {
                assert_eq!(a.row(i), b.row(i), "{variant} row {i}");
            }
            assert_ne!(a.row(5), b.row(5));
        }
    }

    #[test]
    fn source_outside_windows_is_invisible() {
        let c = ModelConfig {
            window: 1,
            ..tiny(AttentionVariant::Window)
        };
        let m = Transformer::new(c, 12, 5).unwrap();
        let src: Vec<TokenId> = vec![5, 6, 7, 8, 9, 10, 11, 5, 6, EOS_ID];
        let tgt: Vec<TokenId> = vec![EOS_ID, 6, 7, 8, 9, 10, 11, 5, 6, 7];
        let a = m.log_probs(&src, &tgt, AnchorMode::Linear).unwrap();
        // target position 1 reads source anchor 1 ± 1 through encoder
        // states that themselves see ± 1: source positions 1..=3
        let mut far = src.clone();
        far[6] = 9;
        let b = m.log_probs(&far, &tgt, AnchorMode::Linear).unwrap();
        assert_eq!(a.row(0), b.row(0));
        assert_eq!(a.row(1), b.row(1));
        assert_ne!(a.row(7), b.row(7));
    }

    #[test]
    fn cached_encoder_matches_full_pass() {
        let m = Transformer::new(tiny(AttentionVariant::Window), 12, 6).unwrap();
        let enc = m.encode(&SRC).unwrap();
        let step = m.next_log_probs(&enc, &TGT_IN).unwrap();
        let full = m.log_probs(&SRC, &TGT_IN, AnchorMode::Decode).unwrap();
        assert_eq!(step.as_slice(), full.row(6));
    }

    #[test]
    fn cross_attention_rows_are_distributions() {
        for variant in [AttentionVariant::Full, AttentionVariant::Lst, AttentionVariant::Window] {
            let m = Transformer::new(tiny(variant), 12, 7).unwrap();
            let ca = m.cross_attention(&SRC, &TGT_IN, AnchorMode::Decode).unwrap();
            assert_eq!(ca.layers.len(), 1);
            assert_eq!(ca.layers[0].len(), 2);
            for head in &ca.layers[0] {
                assert_eq!(head.shape(), &[7, 8]);
                for i in 0..7 {
                    assert!((head.row(i).iter().sum::<f64>() - 1.0).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn sentence_lengths_from_source() {
        assert_eq!(source_sentence_lengths(&SRC), vec![3, 3]);
        assert_eq!(source_sentence_lengths(&[5, EOS_ID]), vec![1]);
        assert_eq!(output_sentences(&TGT_IN), vec![1, 1, 1, 1, 2, 2, 2]);
    }

    #[test]
    fn sent_align_anchors_follow_separators() {
        let c = ModelConfig {
            align: AlignMode::SentAlign,
            ..tiny(AttentionVariant::Window)
        };
        let m = Transformer::new(c, 12, 1).unwrap();
        let mut tape = Tape::new();
        let f = Forward::new(&m, &mut tape, None);
        let b = f.cross_anchors(&SRC, &TGT_IN, AnchorMode::Decode).unwrap();
        assert_eq!(b, vec![1, 2, 3, 4, 5, 6, 7]);
        let b = f
            .cross_anchors(&SRC, &[EOS_ID, 6, SEP_ID, 9, SEP_ID, 9], AnchorMode::Decode)
            .unwrap();
        // jump to sentence 2 at position 3, then saturate at J
        assert_eq!(b, vec![1, 2, 5, 6, 8, 8]);
    }

    #[test]
    fn sinusoid_first_rows() {
        let pe = sinusoid(2, 4);
        assert_eq!(pe.row(0), &[0.0, 1.0, 0.0, 1.0]);
        assert!((pe.get(1, 0) - 1f64.sin()).abs() < 1e-15);
        assert!((pe.get(1, 2) - (0.01f64).sin()).abs() < 1e-15);
    }

    fn loss_and_grads(m: &Transformer, src: &[TokenId], tgt: &[TokenId]) -> (f64, Vec<Array>) {
        let mut tape = Tape::new();
        let g = m
            .build(&mut tape, src, &shift_right(tgt), AnchorMode::Linear, None)
            .unwrap();
        let l = tape.smoothed_nll(g.logp, tgt, m.config().label_smoothing).unwrap();
        let grads = tape.backward(l).unwrap();
        (
            tape.value(l).data()[0],
            g.params.iter().map(|&p| grads.get(p)).collect(),
        )
    }

    #[test]
    fn model_gradient_matches_finite_differences() {
        use rand::seq::index::sample;
        let src: Vec<TokenId> = vec![5, 6, SEP_ID, 7, 8, 9, EOS_ID];
        let tgt: Vec<TokenId> = vec![6, 7, SEP_ID, 8, 9, EOS_ID];
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for variant in [AttentionVariant::Full, AttentionVariant::Lst, AttentionVariant::Window] {
            for pos_enc in [PosEnc::Absolute, PosEnc::Relative] {
                let c = ModelConfig {
                    pos_enc,
                    label_smoothing: 0.1,
                    window: 1,
                    ..tiny(variant)
                };
                let mut m = Transformer::new(c, 10, 21).unwrap();
                // give zero-initialised tables something to differentiate
                for i in 0..m.params().len() {
                    if m.params().names()[i].ends_with(".rel") || m.params().names()[i].ends_with(".b") {
                        for x in m.params_mut().array_mut(i).data_mut() {
                            *x = rng.gen_range(-0.5..0.5);
                        }
                    }
                }
                let (_, analytic) = loss_and_grads(&m, &src, &tgt);
                let coords: Vec<(usize, usize)> = (0..m.params().len())
                    .flat_map(|i| (0..m.params().array(i).len()).map(move |k| (i, k)))
                    .collect();
                let picks = sample(&mut rng, coords.len(), coords.len().div_ceil(100).max(30));
                let eps = 1e-5;
                let mut worst: f64 = 0.0;
                for pick in picks {
                    let (i, k) = coords[pick];
                    let x0 = m.params().array(i).data()[k];
                    m.params_mut().array_mut(i).data_mut()[k] = x0 + eps;
                    let (up, _) = loss_and_grads(&m, &src, &tgt);
                    m.params_mut().array_mut(i).data_mut()[k] = x0 - eps;
                    let (down, _) = loss_and_grads(&m, &src, &tgt);
                    m.params_mut().array_mut(i).data_mut()[k] = x0;
                    let numeric = (up - down) / (2.0 * eps);
                    let a = analytic[i].data()[k];
                    worst = worst.max((a - numeric).abs() / (a.abs() + 1e-8));
                }
                assert!(worst < 1e-3, "{variant}/{pos_enc}: {worst}");
            }
        }
    }
}
