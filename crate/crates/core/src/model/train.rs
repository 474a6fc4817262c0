use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::loss::{nll, Example};
use super::{AnchorMode, ModelConfig, Transformer};
use crate::error::{Error, Result};
use crate::numerics::{Array, Tape};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub max_epochs: usize,
    /// Target tokens per batch; documents are bucketed by length.
    pub batch_tokens: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Global gradient-norm clip, if any.
    pub clip_norm: Option<f64>,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 30,
            batch_tokens: 256,
            learning_rate: 2e-3,
            warmup_steps: 100,
            beta1: 0.9,
            beta2: 0.98,
            epsilon: 1e-9,
            clip_norm: Some(5.0),
            patience: 3,
            seed: 1,
        }
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Per-token training loss (label-smoothed, with dropout).
    pub train_loss: f64,
    /// Per-token validation NLL, unsmoothed.
    pub valid_nll: f64,
    pub valid_ppl: f64,
    pub best: bool,
}

pub struct TrainOutcome {
    /// Parameters of the epoch with the lowest validation perplexity.
    pub model: Transformer,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub stopped_early: bool,
}

impl TrainOutcome {
    pub fn write_log(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for r in &self.log {
            serde_json::to_writer(&mut f, r)?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
        Ok(())
    }
}

struct Adam {
    m: Vec<Array>,
    v: Vec<Array>,
    t: usize,
}

/// Length-bucketed batches: examples sorted by length, cut at the token
/// budget, then visited in a seeded random order.
fn batches(examples: &[Example], budget: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..examples.len()).collect();
    order.sort_by_key(|&i| (examples[i].tgt.len(), examples[i].src.len(), i));
    let mut out = Vec::new();
    let mut cur = Vec::new();
    let mut tokens = 0;
    for i in order {
        let n = examples[i].tgt.len();
        if !cur.is_empty() && tokens + n > budget {
            out.push(std::mem::take(&mut cur));
            tokens = 0;
        }
        cur.push(i);
        tokens += n;
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

fn learning_rate(tc: &TrainConfig, step: usize) -> f64 {
    let s = step.max(1) as f64;
    let w = tc.warmup_steps.max(1) as f64;
    tc.learning_rate * (s / w).min((w / s).sqrt())
}

/// Trains from scratch and keeps the checkpoint with the best validation
/// perplexity. Deterministic for a given seed.
pub fn train(
    config: ModelConfig,
    vocab_size: usize,
    train_set: &[Example],
    valid_set: &[Example],
    tc: &TrainConfig,
) -> Result<TrainOutcome> {
    if train_set.is_empty() || valid_set.is_empty() {
        return Err(Error::Empty("training needs train and validation examples".into()));
    }
    let mut model = Transformer::new(config, vocab_size, tc.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed.wrapping_add(0x9e37_79b9));
    let n = model.params().len();
    let mut adam = Adam {
        m: (0..n).map(|i| Array::zeros(model.params().array(i).shape())).collect(),
        v: (0..n).map(|i| Array::zeros(model.params().array(i).shape())).collect(),
        t: 0,
    };
    let smoothing = model.config().label_smoothing;
    let mut buckets = batches(train_set, tc.batch_tokens.max(1));
    let mut log = Vec::new();
    let mut best: Option<(f64, usize, Transformer)> = None;
    let mut stale = 0;
    let mut stopped_early = false;

    for epoch in 1..=tc.max_epochs {
        buckets.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut epoch_tokens = 0;
        for batch in &buckets {
            let tokens: usize = batch.iter().map(|&i| train_set[i].tgt.len()).sum();
            let mut grads: Vec<Array> = (0..n).map(|i| Array::zeros(model.params().array(i).shape())).collect();
            for &i in batch {
                let ex = &train_set[i];
                let mut tape = Tape::new();
                let step_err = |e: Error| diverged(epoch, adam.t + 1, e);
                let g = model
                    .build(&mut tape, &ex.src, &ex.tgt_in(), AnchorMode::Linear, Some(&mut rng))
                    .map_err(step_err)?;
                let loss = tape.smoothed_nll(g.logp, &ex.tgt, smoothing).map_err(step_err)?;
                let loss = tape.scale(loss, 1.0 / tokens as f64).map_err(step_err)?;
                epoch_loss += tape.value(loss).data()[0] * tokens as f64;
                let gr = tape.backward(loss).map_err(step_err)?;
                for (acc, &p) in grads.iter_mut().zip(&g.params) {
                    if let Some(d) = gr.get_ref(p) {
                        for (a, b) in acc.data_mut().iter_mut().zip(d.data()) {
                            *a += b;
                        }
                    }
                }
            }
            epoch_tokens += tokens;
            adam.t += 1;
            let step = adam.t;
            apply_adam(&mut model, &mut adam, &mut grads, tc).map_err(|e| diverged(epoch, step, e))?;
            model.params().ensure_finite().map_err(|e| diverged(epoch, adam.t, e))?;
        }
        let (valid_total, valid_tokens) = nll(&model, valid_set, 0.0)?;
        let valid_nll = valid_total / valid_tokens as f64;
        let valid_ppl = valid_nll.exp();
        let improved = best.as_ref().is_none_or(|(b, _, _)| valid_ppl < *b);
        if improved {
            best = Some((valid_ppl, epoch, model.clone()));
            stale = 0;
        } else {
            stale += 1;
        }
        let record = EpochRecord {
            epoch,
            steps: adam.t,
            train_loss: epoch_loss / epoch_tokens as f64,
            valid_nll,
            valid_ppl,
            best: improved,
        };
        log::info!(
            "epoch {epoch}: train {:.4} valid ppl {:.4}{}",
            record.train_loss,
            valid_ppl,
            if improved { " *" } else { "" }
        );
        log.push(record);
        if stale >= tc.patience.max(1) {
            stopped_early = true;
            break;
        }
    }
    let (_, best_epoch, model) = best.ok_or_else(|| Error::Empty("zero training epochs".into()))?;
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        stopped_early,
    })
}

fn diverged(epoch: usize, step: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(detail) => Error::Diverged { epoch, step, detail },
        other => other,
    }
}

fn apply_adam(model: &mut Transformer, adam: &mut Adam, grads: &mut [Array], tc: &TrainConfig) -> Result<()> {
    if let Some(clip) = tc.clip_norm {
        let norm = grads.iter().flat_map(|g| g.data()).map(|x| x * x).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient norm {norm}")));
        }
        if norm > clip {
            let s = clip / norm;
            for g in grads.iter_mut() {
                g.data_mut().iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    let lr = learning_rate(tc, adam.t);
    let bc1 = 1.0 - tc.beta1.powi(adam.t as i32);
    let bc2 = 1.0 - tc.beta2.powi(adam.t as i32);
    for (i, g) in grads.iter().enumerate() {
        let p = model.params_mut().array_mut(i);
        let (m, v) = (adam.m[i].data_mut(), adam.v[i].data_mut());
        for (((w, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *mi = tc.beta1 * *mi + (1.0 - tc.beta1) * gi;
            *vi = tc.beta2 * *vi + (1.0 - tc.beta2) * gi * gi;
            let mhat = *mi / bc1;
            let vhat = *vi / bc2;
            *w -= lr * mhat / (vhat.sqrt() + tc.epsilon);
        }
    }
    Ok(())
}
