use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ModelConfig, PosEnc};
use crate::attention::AttentionVariant;
use crate::error::{Error, Result};
use crate::numerics::Array;

/// Named parameter tensors in a fixed, config-derived order.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    names: Vec<String>,
    values: Vec<Rc<Array>>,
}

#[derive(Serialize, Deserialize)]
struct NamedArray {
    name: String,
    value: Array,
}

impl Serialize for ModelParams {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.names.iter().zip(&self.values).map(|(name, value)| NamedArray {
            name: name.clone(),
            value: (**value).clone(),
        }))
    }
}

impl<'de> Deserialize<'de> for ModelParams {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let items = Vec::<NamedArray>::deserialize(d)?;
        let (names, values) = items.into_iter().map(|n| (n.name, Rc::new(n.value))).unzip();
        Ok(Self { names, values })
    }
}

impl ModelParams {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, name: &str) -> Option<&Array> {
        self.names.iter().position(|n| n == name).map(|i| &*self.values[i])
    }

    pub(crate) fn value(&self, i: usize) -> &Rc<Array> {
        &self.values[i]
    }

    pub fn array(&self, i: usize) -> &Array {
        &self.values[i]
    }

    /// Mutable access; copies the storage if a tape still shares it.
    pub fn array_mut(&mut self, i: usize) -> &mut Array {
        Rc::make_mut(&mut self.values[i])
    }

    pub fn ensure_finite(&self) -> Result<()> {
        for (n, v) in self.names.iter().zip(&self.values) {
            v.ensure_finite(n)?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct NormIdx {
    pub g: usize,
    pub b: usize,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct AttnIdx {
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub wo: usize,
    pub combine: Option<usize>,
    pub rel: Option<usize>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct FfnIdx {
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

#[derive(Clone, Debug)]
pub(crate) struct EncLayer {
    pub norm1: NormIdx,
    pub attn: AttnIdx,
    pub norm2: NormIdx,
    pub ffn: FfnIdx,
}

#[derive(Clone, Debug)]
pub(crate) struct DecLayer {
    pub norm1: NormIdx,
    pub self_attn: AttnIdx,
    pub norm2: NormIdx,
    pub cross: AttnIdx,
    pub norm3: NormIdx,
    pub ffn: FfnIdx,
}

/// Where each tensor lives in [`ModelParams`].
#[derive(Clone, Debug)]
pub(crate) struct Layout {
    pub embed: usize,
    pub enc: Vec<EncLayer>,
    pub enc_norm: NormIdx,
    pub dec: Vec<DecLayer>,
    pub dec_norm: NormIdx,
    pub out_w: usize,
    pub out_b: usize,
}

#[derive(Clone, Copy)]
enum Init {
    Zeros,
    Ones,
    /// Uniform with the variance of `N(0, 1/d)`.
    Embedding,
    Xavier,
    /// `[½I; ½I]`: both LST branches weighted equally.
    HalfStack,
}

struct Builder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: &[usize], init: Init) -> usize {
        self.specs.push((name, shape.to_vec(), init));
        self.specs.len() - 1
    }

    fn norm(&mut self, prefix: &str, d: usize) -> NormIdx {
        NormIdx {
            g: self.add(format!("{prefix}.g"), &[1, d], Init::Ones),
            b: self.add(format!("{prefix}.b"), &[1, d], Init::Zeros),
        }
    }

    fn attn(&mut self, prefix: &str, c: &ModelConfig, variant: AttentionVariant) -> AttnIdx {
        let d = c.d_model;
        let mut p = |n: &str, shape: &[usize], init| self.add(format!("{prefix}.{n}"), shape, init);
        let wq = p("wq", &[d, d], Init::Xavier);
        let wk = p("wk", &[d, d], Init::Xavier);
        let wv = p("wv", &[d, d], Init::Xavier);
        let combine = (variant == AttentionVariant::Lst).then(|| p("combine", &[2 * d, d], Init::HalfStack));
        let wo = p("wo", &[d, d], Init::Xavier);
        let rel = (c.pos_enc == PosEnc::Relative).then(|| p("rel", &[c.n_heads, 2 * c.window + 1], Init::Zeros));
        AttnIdx {
            wq,
            wk,
            wv,
            wo,
            combine,
            rel,
        }
    }

    fn ffn(&mut self, prefix: &str, c: &ModelConfig) -> FfnIdx {
        let (d, f) = (c.d_model, c.ffn_dim);
        FfnIdx {
            w1: self.add(format!("{prefix}.w1"), &[d, f], Init::Xavier),
            b1: self.add(format!("{prefix}.b1"), &[1, f], Init::Zeros),
            w2: self.add(format!("{prefix}.w2"), &[f, d], Init::Xavier),
            b2: self.add(format!("{prefix}.b2"), &[1, d], Init::Zeros),
        }
    }
}

fn plan(c: &ModelConfig, vocab: usize) -> (Layout, Vec<(String, Vec<usize>, Init)>) {
    let d = c.d_model;
    let mut b = Builder { specs: Vec::new() };
    let embed = b.add("embed".into(), &[vocab, d], Init::Embedding);
    let enc = (0..c.enc_layers)
        .map(|l| EncLayer {
            norm1: b.norm(&format!("enc.{l}.norm1"), d),
            attn: b.attn(&format!("enc.{l}.self"), c, c.enc_self),
            norm2: b.norm(&format!("enc.{l}.norm2"), d),
            ffn: b.ffn(&format!("enc.{l}.ffn"), c),
        })
        .collect();
    let enc_norm = b.norm("enc.norm", d);
    let dec = (0..c.dec_layers)
        .map(|l| DecLayer {
            norm1: b.norm(&format!("dec.{l}.norm1"), d),
            self_attn: b.attn(&format!("dec.{l}.self"), c, c.dec_self),
            norm2: b.norm(&format!("dec.{l}.norm2"), d),
            cross: b.attn(&format!("dec.{l}.cross"), c, c.cross),
            norm3: b.norm(&format!("dec.{l}.norm3"), d),
            ffn: b.ffn(&format!("dec.{l}.ffn"), c),
        })
        .collect();
    let dec_norm = b.norm("dec.norm", d);
    let out_w = b.add("out.w".into(), &[d, vocab], Init::Xavier);
    let out_b = b.add("out.b".into(), &[1, vocab], Init::Zeros);
    let layout = Layout {
        embed,
        enc,
        enc_norm,
        dec,
        dec_norm,
        out_w,
        out_b,
    };
    (layout, b.specs)
}

pub(crate) fn init_params(c: &ModelConfig, vocab: usize, rng: &mut ChaCha8Rng) -> (Layout, ModelParams) {
    let (layout, specs) = plan(c, vocab);
    let mut names = Vec::with_capacity(specs.len());
    let mut values = Vec::with_capacity(specs.len());
    for (name, shape, init) in specs {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Embedding => {
                let a = (3.0 / shape[1] as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
            Init::Xavier => {
                let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                (0..n).map(|_| rng.gen_range(-a..a)).collect()
            }
            Init::HalfStack => {
                let d = shape[1];
                let mut m = vec![0.0; n];
                for i in 0..d {
                    m[i * d + i] = 0.5;
                    m[(d + i) * d + i] = 0.5;
                }
                m
            }
        };
        names.push(name);
        values.push(Rc::new(Array::new(shape, data).expect("shape matches data")));
    }
    (layout, ModelParams { names, values })
}

/// Checks loaded parameters against the layout a config implies.
pub(crate) fn layout_for(c: &ModelConfig, params: &ModelParams) -> Result<Layout> {
    let vocab = params
        .get("embed")
        .map(Array::rows)
        .ok_or_else(|| Error::InvalidArgument("parameters lack an embedding table".into()))?;
    let (layout, specs) = plan(c, vocab);
    if specs.len() != params.len() {
        return Err(Error::InvalidArgument(format!(
            "config implies {} tensors, checkpoint holds {}",
            specs.len(),
            params.len()
        )));
    }
    for ((name, shape, _), (n, v)) in specs.iter().zip(params.names.iter().zip(&params.values)) {
        if name != n || shape.as_slice() != v.shape() {
            return Err(Error::InvalidArgument(format!(
                "tensor {n} {:?} does not match expected {name} {shape:?}",
                v.shape()
            )));
        }
    }
    Ok(layout)
}
