use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use docwin::alignment::{train_ratio, AlignMode};
use docwin::attention::{attention_cost, AttentionVariant};
use docwin::decoding::{decode_fsd, decode_sd, Strategy};
use docwin::document::{read_corpus, split_document, write_corpus, Document, Vocab};
use docwin::evaluation::{
    contrastive_accuracy, corpus_attention_focus, focus_breakdown, formality_f1, pronoun_f1, read_contrastive,
    EvalReport, FocusContext, LexiconTagger, ModelScorer, Triple,
};
use docwin::model::{
    full_document_examples, local_context_examples, perplexity, token_accuracy, train as fit, Checkpoint, Example,
    Transformer,
};
use docwin::tasks::{generate, marker_accuracy, split, TaskConfig};
use serde::{Deserialize, Serialize};

use crate::config::{require_file, DecodeConfig, ExperimentConfig, Objective};
use crate::CliError;

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(docwin::Error::from)?;
    text.push('\n');
    std::fs::write(path, text).map_err(docwin::Error::from)?;
    Ok(())
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(docwin::Error::from)?;
    Ok(())
}

fn load_checkpoint(path: &Path) -> Result<(Transformer, Vocab), CliError> {
    require_file(path)?;
    Ok(Checkpoint::load(path)?.into_model()?)
}

/// Decode-time alignment named on the command line.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AlignChoice {
    Identity,
    /// Average source/target length ratio of the training data.
    Ratio,
    Sent,
}

impl std::str::FromStr for AlignChoice {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "identity" => Ok(Self::Identity),
            "ratio" => Ok(Self::Ratio),
            "sent" | "sent_align" => Ok(Self::Sent),
            _ => Err(format!("unknown alignment {s:?} (identity, ratio, sent)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenRequest {
    pub task: TaskConfig,
    pub valid: usize,
    pub test: usize,
    pub out: PathBuf,
}

/// Writes `train.jsonl`, `valid.jsonl` and `test.jsonl`.
pub fn gen(req: &GenRequest) -> Result<(), CliError> {
    let docs = generate(&req.task).map_err(|e| CliError::Usage(e.to_string()))?;
    let [train, valid, test] =
        split(docs, req.valid, req.test, req.task.seed).map_err(|e| CliError::Usage(e.to_string()))?;
    create_dir(&req.out)?;
    write_corpus(req.out.join("train.jsonl"), &train)?;
    write_corpus(req.out.join("valid.jsonl"), &valid)?;
    write_corpus(req.out.join("test.jsonl"), &test)?;
    write_json(&req.out.join("gen_config.json"), req)?;
    log::info!(
        "{} / {} / {} documents in {}",
        train.len(),
        valid.len(),
        test.len(),
        req.out.display()
    );
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub epochs: usize,
    pub best_epoch: usize,
    pub stopped_early: bool,
    pub best_valid_ppl: f64,
    pub train_ratio: f64,
    pub parameters: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_ppl: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_token_accuracy: Option<f64>,
}

fn examples(objective: Objective, docs: &[Document], vocab: &Vocab) -> docwin::Result<Vec<Example>> {
    match objective {
        Objective::Full => full_document_examples(docs, vocab),
        Objective::Local { k } => local_context_examples(docs, vocab, k),
    }
}

/// Trains, then writes `config.json` (resolved), `checkpoint.json`,
/// `train_log.jsonl` and `summary.json` into `cfg.out`.
pub fn train(cfg: &ExperimentConfig) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let mut cfg = cfg.clone();
    cfg.training.seed = cfg.seed;
    let mut train_docs = Vec::new();
    for d in read_corpus(&cfg.train)? {
        let (parts, warnings) = split_document(&d, cfg.max_doc_tokens)?;
        for w in warnings {
            log::warn!(
                "{}: sentence {} alone has {} target tokens",
                w.doc_id,
                w.sentence,
                w.tokens
            );
        }
        train_docs.extend(parts);
    }
    let valid_docs = read_corpus(&cfg.valid)?;
    let vocab = Vocab::build(&train_docs);
    let train_set = examples(cfg.objective, &train_docs, &vocab)?;
    let valid_set = examples(cfg.objective, &valid_docs, &vocab)?;
    let lengths: Vec<(usize, usize)> = train_set.iter().map(|e| (e.src.len(), e.tgt.len())).collect();
    let ratio = train_ratio(&lengths)?;
    if let AlignMode::Ratio { .. } = cfg.model.align {
        cfg.model.align = AlignMode::Ratio { ratio };
    }
    create_dir(&cfg.out)?;
    std::fs::write(cfg.out.join("config.json"), cfg.to_json() + "\n").map_err(docwin::Error::from)?;

    let outcome = fit(cfg.model.clone(), vocab.len(), &train_set, &valid_set, &cfg.training)?;
    outcome.write_log(cfg.out.join("train_log.jsonl"))?;
    Checkpoint::new(&outcome.model, &vocab)?.save(cfg.out.join("checkpoint.json"))?;
    let best = &outcome.log[outcome.best_epoch - 1];
    let mut summary = TrainSummary {
        epochs: outcome.log.len(),
        best_epoch: outcome.best_epoch,
        stopped_early: outcome.stopped_early,
        best_valid_ppl: best.valid_ppl,
        train_ratio: ratio,
        parameters: outcome.model.params().count(),
        test_ppl: None,
        test_token_accuracy: None,
    };
    if let Some(test) = &cfg.test {
        let test_set = examples(cfg.objective, &read_corpus(test)?, &vocab)?;
        summary.test_ppl = Some(perplexity(&outcome.model, &test_set)?);
        summary.test_token_accuracy = Some(token_accuracy(&outcome.model, &test_set)?);
    }
    write_json(&cfg.out.join("summary.json"), &summary)?;
    Ok(summary)
}

/// One translated document.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisRecord {
    pub doc_id: String,
    pub src: Vec<Vec<String>>,
    pub tgt: Vec<Vec<String>>,
    #[serde(default)]
    pub misaligned: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TranslateRequest {
    pub checkpoint: PathBuf,
    pub corpus: PathBuf,
    pub decode: DecodeConfig,
    /// Replaces the checkpoint's decode-time alignment.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub align: Option<AlignMode>,
    pub out: PathBuf,
}

pub fn translate_docs(
    model: &Transformer,
    vocab: &Vocab,
    docs: &[Document],
    decode: &DecodeConfig,
) -> docwin::Result<Vec<HypothesisRecord>> {
    let beam = decode.beam_config();
    docs.iter()
        .map(|d| {
            let src: Vec<Vec<usize>> = d.src.iter().map(|s| vocab.encode(s)).collect();
            let r = match decode.strategy {
                Strategy::Fsd => decode_fsd(model, &src, decode.k, &beam)?,
                Strategy::Sd => decode_sd(model, &src, decode.k.unwrap_or(d.len()), &beam)?,
            };
            if r.misaligned {
                log::warn!("{}: segment output did not match its sentence count", d.doc_id);
            }
            Ok(HypothesisRecord {
                doc_id: d.doc_id.clone(),
                src: d.src.clone(),
                tgt: r.sentences.iter().map(|s| vocab.decode(s)).collect(),
                misaligned: r.misaligned,
            })
        })
        .collect()
}

/// Writes `hypotheses.jsonl` and `translate_config.json`.
pub fn translate(req: &TranslateRequest) -> Result<Vec<HypothesisRecord>, CliError> {
    req.decode.validate()?;
    require_file(&req.corpus)?;
    let (mut model, vocab) = load_checkpoint(&req.checkpoint)?;
    if let Some(align) = req.align {
        let mut config = model.config().clone();
        config.align = align;
        model = Transformer::from_params(config, model.params().clone())?;
    }
    let docs = read_corpus(&req.corpus)?;
    let records = translate_docs(&model, &vocab, &docs, &req.decode)?;
    create_dir(&req.out)?;
    let mut text = String::new();
    for r in &records {
        text.push_str(&serde_json::to_string(r).map_err(docwin::Error::from)?);
        text.push('\n');
    }
    std::fs::write(req.out.join("hypotheses.jsonl"), text).map_err(docwin::Error::from)?;
    write_json(&req.out.join("translate_config.json"), req)?;
    Ok(records)
}

pub fn read_hypotheses(path: &Path) -> Result<Vec<HypothesisRecord>, CliError> {
    require_file(path)?;
    let text = std::fs::read_to_string(path).map_err(docwin::Error::from)?;
    let mut out = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        out.push(serde_json::from_str(line).map_err(docwin::Error::from)?);
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalRequest {
    pub hyp: PathBuf,
    pub reference: PathBuf,
    pub pronoun: bool,
    pub formality: bool,
    /// Marker accuracy of the synthetic formality task.
    pub markers: bool,
    pub contrastive: Option<PathBuf>,
    pub focus: Option<FocusContext>,
    pub checkpoint: Option<PathBuf>,
    pub lexicon: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FullReport {
    #[serde(flatten)]
    pub report: EvalReport,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marker_accuracy: Option<f64>,
    /// `[correct, total]` later-sentence markers.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub marker_counts: Option<[usize; 2]>,
}

pub fn eval(req: &EvalRequest) -> Result<FullReport, CliError> {
    let wants_model = req.contrastive.is_some() || req.focus.is_some();
    if !(req.pronoun || req.formality || req.markers || wants_model) {
        return Err(CliError::Usage(
            "select at least one metric (--pronoun, --formality, --markers, --contrastive, --focus)".into(),
        ));
    }
    if wants_model && req.checkpoint.is_none() {
        return Err(CliError::Usage("--contrastive and --focus need --checkpoint".into()));
    }
    require_file(&req.reference)?;
    let refs = read_corpus(&req.reference)?;
    let tagger = match &req.lexicon {
        Some(p) => {
            require_file(p)?;
            LexiconTagger::load(p)?
        }
        None => LexiconTagger::default(),
    };
    let mut report = FullReport {
        report: EvalReport::default(),
        marker_accuracy: None,
        marker_counts: None,
    };
    if req.pronoun || req.formality || req.markers {
        let hyps = read_hypotheses(&req.hyp)?;
        if hyps.len() != refs.len() {
            return Err(docwin::Error::InvalidArgument(format!(
                "{} hypothesis documents for {} references",
                hyps.len(),
                refs.len()
            ))
            .into());
        }
        let mut triples = Vec::new();
        for (h, r) in hyps.iter().zip(&refs) {
            let tgt = r.target()?;
            if h.doc_id != r.doc_id || h.tgt.len() != tgt.len() {
                return Err(docwin::Error::InvalidArgument(format!(
                    "hypothesis {} ({} sentences) does not line up with reference {} ({})",
                    h.doc_id,
                    h.tgt.len(),
                    r.doc_id,
                    tgt.len()
                ))
                .into());
            }
            for ((f, e), e_ref) in r.src.iter().zip(&h.tgt).zip(tgt) {
                triples.push(Triple {
                    source: f.clone(),
                    hypothesis: e.clone(),
                    reference: e_ref.clone(),
                });
            }
        }
        if req.pronoun {
            report.report.pronoun = Some(pronoun_f1(&triples, &tagger));
        }
        if req.formality {
            report.report.formality = Some(formality_f1(&triples, &tagger));
        }
        if req.markers {
            let outputs: Vec<Vec<Vec<String>>> = hyps.into_iter().map(|h| h.tgt).collect();
            let (correct, total) = marker_accuracy(&refs, &outputs)?;
            report.marker_counts = Some([correct, total]);
            report.marker_accuracy = Some(if total == 0 { 0.0 } else { correct as f64 / total as f64 });
        }
    }
    if let Some(ck) = &req.checkpoint {
        if wants_model {
            let (model, vocab) = load_checkpoint(ck)?;
            if let Some(cases) = &req.contrastive {
                require_file(cases)?;
                let cases = read_contrastive(cases)?;
                let scorer = ModelScorer {
                    model: &model,
                    vocab: &vocab,
                };
                report.report.contrastive_accuracy = Some(contrastive_accuracy(&scorer, &cases)?);
            }
            if let Some(ctx) = req.focus {
                report.report.attention_focus = Some(corpus_attention_focus(&model, &vocab, &refs, ctx)?);
            }
        }
    }
    if let Some(out) = &req.out {
        create_dir(out)?;
        write_json(&out.join("report.json"), &report)?;
    }
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub variant: AttentionVariant,
    pub w: Option<usize>,
    pub length: usize,
    pub pairs: usize,
    pub activation_elements: usize,
    /// Pairs relative to the first length of the same configuration.
    pub ratio: f64,
}

pub fn bench_cost(
    lengths: &[usize],
    variants: &[AttentionVariant],
    windows: &[usize],
) -> Result<Vec<CostRow>, CliError> {
    if lengths.is_empty() || variants.is_empty() {
        return Err(CliError::Usage("need at least one length and one variant".into()));
    }
    if variants.contains(&AttentionVariant::Window) && (windows.is_empty() || windows.contains(&0)) {
        return Err(CliError::Usage("window cost needs radii --w >= 1".into()));
    }
    let mut rows = Vec::new();
    for &variant in variants {
        let radii: Vec<Option<usize>> = if variant == AttentionVariant::Window {
            windows.iter().map(|&w| Some(w)).collect()
        } else {
            vec![None]
        };
        for w in radii {
            let mut first = None;
            for &length in lengths {
                let c = attention_cost(length, length, variant, w).map_err(|e| CliError::Usage(e.to_string()))?;
                let base = *first.get_or_insert(c.pairs);
                rows.push(CostRow {
                    variant,
                    w,
                    length,
                    pairs: c.pairs,
                    activation_elements: c.activation_elements,
                    ratio: c.pairs as f64 / base as f64,
                });
            }
        }
    }
    Ok(rows)
}

pub fn cost_csv(rows: &[CostRow]) -> String {
    let mut s = String::from("variant,w,length,pairs,activation_elements,ratio\n");
    for r in rows {
        let w = r.w.map_or(String::new(), |w| w.to_string());
        let _ = writeln!(
            s,
            "{},{w},{},{},{},{:.4}",
            r.variant, r.length, r.pairs, r.activation_elements, r.ratio
        );
    }
    s
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusRow {
    pub context: String,
    pub focus_percent: f64,
    pub target_tokens: usize,
}

pub fn attn_focus(checkpoint: &Path, corpus: &Path, contexts: &[FocusContext]) -> Result<Vec<FocusRow>, CliError> {
    if contexts.is_empty() {
        return Err(CliError::Usage("no context configurations given".into()));
    }
    require_file(corpus)?;
    let (model, vocab) = load_checkpoint(checkpoint)?;
    let docs = read_corpus(corpus)?;
    contexts
        .iter()
        .map(|&ctx| {
            let mut inside = 0.0;
            let mut rows = 0;
            for d in &docs {
                for s in focus_breakdown(&model, &vocab, d, ctx)? {
                    inside += s.in_sentence;
                    rows += s.rows;
                }
            }
            if rows == 0 {
                return Err(docwin::Error::Empty("corpus without target tokens".into()).into());
            }
            Ok(FocusRow {
                context: match ctx {
                    FocusContext::Local(k) => format!("k={k}"),
                    FocusContext::Full => "full".into(),
                },
                focus_percent: 100.0 * inside / rows as f64,
                target_tokens: rows,
            })
        })
        .collect()
}

pub fn focus_csv(rows: &[FocusRow]) -> String {
    let mut s = String::from("context,focus_percent,target_tokens\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.4},{}", r.context, r.focus_percent, r.target_tokens);
    }
    s
}
