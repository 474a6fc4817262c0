use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use docwin::alignment::AlignMode;
use docwin::attention::AttentionVariant;
use docwin::decoding::Strategy;
use docwin::evaluation::FocusContext;
use docwin::model::{Checkpoint, PosEnc};
use docwin::tasks::{TaskConfig, TaskKind};
use docwin_cli::commands::{self, AlignChoice, EvalRequest, GenRequest, TranslateRequest};
use docwin_cli::config::{require_file, DecodeConfig, ExperimentConfig};
use docwin_cli::CliError;

#[derive(Parser)]
#[command(
    name = "docwin",
    version,
    about = "Document-level seq2seq experiments with window attention"
)]
struct Cli {
    /// More logging (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic parallel corpus (train/valid/test JSONL).
    Gen(GenArgs),
    /// Train a model from an experiment config.
    Train(TrainArgs),
    /// Translate a corpus with FSD or SD.
    Translate(TranslateArgs),
    /// Score hypotheses against references.
    Eval(EvalArgs),
    /// Analytic attention cost for a set of lengths.
    BenchCost(BenchArgs),
    /// Percentage of cross-attention on the current source sentence.
    AttnFocus(FocusArgs),
}

#[derive(Args)]
struct GenArgs {
    /// Base task config (JSON); flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_parser = parse_task)]
    task: Option<TaskKind>,
    #[arg(long)]
    docs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 20)]
    valid: usize,
    #[arg(long, default_value_t = 20)]
    test: usize,
    #[arg(long, default_value = "data")]
    out: PathBuf,
}

#[derive(Args)]
struct ModelOverrides {
    /// Attention variant at every site.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<AttentionVariant>,
    /// Window radius.
    #[arg(long)]
    w: Option<usize>,
    #[arg(long, value_parser = parse_pos_enc)]
    pos_enc: Option<PosEnc>,
    /// Decode-time alignment: identity, ratio or sent.
    #[arg(long)]
    align: Option<AlignChoice>,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[command(flatten)]
    model: ModelOverrides,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeFlags {
    #[arg(long, value_parser = parse_strategy)]
    strategy: Option<Strategy>,
    /// Segment size (FSD) or context sentences (SD).
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    beam: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
}

#[derive(Args)]
struct TranslateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Experiment config whose decode section supplies defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    decode: DecodeFlags,
    #[arg(long)]
    align: Option<AlignChoice>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Hypotheses written by `translate`.
    #[arg(long)]
    hyp: PathBuf,
    /// Reference corpus (JSONL documents).
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long)]
    pronoun: bool,
    #[arg(long)]
    formality: bool,
    /// Marker accuracy on the synthetic formality task.
    #[arg(long)]
    markers: bool,
    /// Contrastive cases (JSONL); needs --checkpoint.
    #[arg(long)]
    contrastive: Option<PathBuf>,
    /// Attention focus with context `full` or `k`; needs --checkpoint.
    #[arg(long, value_parser = parse_focus)]
    focus: Option<FocusContext>,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Tagger lexicon replacing the bundled one.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_value = "736,1472,2208")]
    lengths: Vec<usize>,
    #[arg(long = "variant", value_delimiter = ',', value_parser = parse_variant, default_value = "full,lst,window")]
    variants: Vec<AttentionVariant>,
    #[arg(long, value_delimiter = ',', default_value = "10,20")]
    w: Vec<usize>,
    /// Also write `cost.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FocusArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    corpus: PathBuf,
    /// Local context sizes to probe.
    #[arg(long, value_delimiter = ',', default_value = "0,1,2")]
    k: Vec<usize>,
    /// Also probe whole-document input.
    #[arg(long)]
    full: bool,
    /// Also write `attn_focus.csv` here.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_task(s: &str) -> Result<TaskKind, String> {
    s.parse().map_err(|e: docwin::Error| e.to_string())
}

fn parse_variant(s: &str) -> Result<AttentionVariant, String> {
    s.parse().map_err(|e: docwin::Error| e.to_string())
}

fn parse_pos_enc(s: &str) -> Result<PosEnc, String> {
    s.parse().map_err(|e: docwin::Error| e.to_string())
}

fn parse_strategy(s: &str) -> Result<Strategy, String> {
    s.parse().map_err(|e: docwin::Error| e.to_string())
}

fn parse_focus(s: &str) -> Result<FocusContext, String> {
    if s == "full" {
        return Ok(FocusContext::Full);
    }
    s.parse()
        .map(FocusContext::Local)
        .map_err(|_| format!("expected `full` or a context size, got {s:?}"))
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<(), CliError> {
    std::fs::create_dir_all(dir).map_err(docwin::Error::from)?;
    std::fs::write(dir.join(name), text).map_err(docwin::Error::from)?;
    Ok(())
}

fn apply_decode(decode: &mut DecodeConfig, flags: &DecodeFlags) {
    if let Some(s) = flags.strategy {
        decode.strategy = s;
    }
    if flags.k.is_some() {
        decode.k = flags.k;
    }
    if let Some(b) = flags.beam {
        decode.beam = b;
    }
    if let Some(a) = flags.alpha {
        decode.alpha = a;
    }
}

fn run_gen(a: GenArgs) -> Result<(), CliError> {
    let mut task = match &a.config {
        Some(p) => {
            require_file(p)?;
            let text = std::fs::read_to_string(p).map_err(docwin::Error::from)?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("bad task config: {e}")))?
        }
        None => TaskConfig::default(),
    };
    if let Some(t) = a.task {
        task.kind = t;
    }
    if let Some(d) = a.docs {
        task.docs = d;
    }
    if let Some(s) = a.seed {
        task.seed = s;
    }
    commands::gen(&GenRequest {
        task,
        valid: a.valid,
        test: a.test,
        out: a.out,
    })
}

fn run_train(a: TrainArgs) -> Result<(), CliError> {
    let mut cfg = ExperimentConfig::load(&a.config)?;
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(e) = a.epochs {
        cfg.training.max_epochs = e;
    }
    if let Some(v) = a.model.variant {
        cfg.model = cfg.model.with_variant(v);
    }
    if let Some(w) = a.model.w {
        cfg.model.window = w;
    }
    if let Some(p) = a.model.pos_enc {
        cfg.model.pos_enc = p;
    }
    if let Some(al) = a.model.align {
        cfg.model.align = match al {
            AlignChoice::Identity => AlignMode::Identity,
            // replaced by the measured training ratio
            AlignChoice::Ratio => AlignMode::Ratio { ratio: 1.0 },
            AlignChoice::Sent => AlignMode::SentAlign,
        };
    }
    if let Some(o) = a.out {
        cfg.out = o;
    }
    let summary = commands::train(&cfg)?;
    println!(
        "{}",
        serde_json::to_string_pretty(&summary).map_err(docwin::Error::from)?
    );
    Ok(())
}

fn run_translate(a: TranslateArgs) -> Result<(), CliError> {
    let mut decode = match &a.config {
        Some(p) => ExperimentConfig::load(p)?.decode,
        None => DecodeConfig::default(),
    };
    apply_decode(&mut decode, &a.decode);
    let align = match a.align {
        None => None,
        Some(AlignChoice::Identity) => Some(AlignMode::Identity),
        Some(AlignChoice::Sent) => Some(AlignMode::SentAlign),
        Some(AlignChoice::Ratio) => {
            require_file(&a.checkpoint)?;
            match Checkpoint::load(&a.checkpoint)?.config.align {
                r @ AlignMode::Ratio { .. } => Some(r),
                _ => {
                    return Err(CliError::Usage(
                        "checkpoint has no training ratio; train it with --align ratio".into(),
                    ))
                }
            }
        }
    };
    let records = commands::translate(&TranslateRequest {
        checkpoint: a.checkpoint,
        corpus: a.corpus,
        decode,
        align,
        out: a.out.clone(),
    })?;
    let misaligned = records.iter().filter(|r| r.misaligned).count();
    eprintln!(
        "translated {} documents into {} ({misaligned} misaligned)",
        records.len(),
        a.out.join("hypotheses.jsonl").display()
    );
    Ok(())
}

fn run_eval(a: EvalArgs) -> Result<(), CliError> {
    let report = commands::eval(&EvalRequest {
        hyp: a.hyp,
        reference: a.reference,
        pronoun: a.pronoun,
        formality: a.formality,
        markers: a.markers,
        contrastive: a.contrastive,
        focus: a.focus,
        checkpoint: a.checkpoint,
        lexicon: a.lexicon,
        out: a.out,
    })?;
    println!(
        "{}",
        serde_json::to_string_pretty(&report).map_err(docwin::Error::from)?
    );
    Ok(())
}

fn run_bench(a: BenchArgs) -> Result<(), CliError> {
    let csv = commands::cost_csv(&commands::bench_cost(&a.lengths, &a.variants, &a.w)?);
    print!("{csv}");
    if let Some(dir) = a.out {
        write_text(&dir, "cost.csv", &csv)?;
    }
    Ok(())
}

fn run_focus(a: FocusArgs) -> Result<(), CliError> {
    let mut contexts: Vec<FocusContext> = a.k.iter().map(|&k| FocusContext::Local(k)).collect();
    if a.full {
        contexts.push(FocusContext::Full);
    }
    let csv = commands::focus_csv(&commands::attn_focus(&a.checkpoint, &a.corpus, &contexts)?);
    print!("{csv}");
    if let Some(dir) = a.out {
        write_text(&dir, "attn_focus.csv", &csv)?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Gen(a) => run_gen(a),
        Command::Train(a) => run_train(a),
        Command::Translate(a) => run_translate(a),
        Command::Eval(a) => run_eval(a),
        Command::BenchCost(a) => run_bench(a),
        Command::AttnFocus(a) => run_focus(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("docwin: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
