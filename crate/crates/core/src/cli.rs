//! Command-line front end over every pipeline. Usage errors exit with 2,
//! runtime failures with 1 and a one-line `error[<code>]: <message>`.

use std::ffi::OsString;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::config::RunConfig;
use crate::corpus::{
    build_corpus, read_jsonl, read_records, write_jsonl, BiasedRecord, CorpusConfig, NeutralRecord,
};
use crate::detector::{bundled_lexicons, load_lexicons, Lexicon};
use crate::evaluation::{detect_split, evaluate_baseline, evaluate_system, Baseline, EvalConfig};
use crate::model::{file_digest, Model};
use crate::pipeline::{
    assemble, build_vocab, fine_tune_model, pretrain_editor_model, train_detector_model,
};
use crate::service::{
    detect_text, neutralize_text, ApiError, ApiSession, DetectRequest, NeutralizeRequest,
};
use crate::synthetic::{generate, SyntheticConfig};
use crate::systems::{JoinMode, MergeRule, Mode};
use crate::vocab::Vocab;
use crate::{Error, Result};

pub const MODEL_ENV: &str = "NEUTRALIZE_MODEL";
pub const VOCAB_FILE: &str = "vocab.txt";
pub const TRAIN_FILE: &str = "train.jsonl";
pub const TEST_FILE: &str = "test.jsonl";

#[derive(Parser, Debug)]
#[command(
    name = "npov",
    version,
    about = "Detect and neutralize subjectively biased sentences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Build the parallel corpus from revision records, or generate a synthetic one.
    BuildCorpus(BuildCorpusArgs),
    /// Train the token-level bias detector.
    TrainDetector(TrainDetectorArgs),
    /// Denoising pretraining of the editor or of a concurrent system.
    PretrainEditor(PretrainEditorArgs),
    /// Assemble pretrained parts and fine-tune a neutralization system.
    Train(TrainArgs),
    /// Rewrite one sentence.
    Neutralize(NeutralizeArgs),
    /// Print per-token bias probabilities for one sentence.
    Detect(DetectArgs),
    /// Score a system or baseline on a test split.
    Evaluate(EvaluateArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Args, Debug)]
pub struct BuildCorpusArgs {
    /// Line-delimited revision records.
    #[arg(
        long,
        required_unless_present = "synthetic",
        conflicts_with = "synthetic"
    )]
    pub input: Option<PathBuf>,
    /// Generate the planted-marker corpus instead.
    #[arg(long)]
    pub synthetic: bool,
    #[arg(long)]
    pub out: PathBuf,
    /// Corpus filter settings as JSON.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 5000)]
    pub vocab_cap: usize,
    #[arg(long, default_value_t = 4000)]
    pub train_pairs: usize,
    #[arg(long, default_value_t = 200)]
    pub test_pairs: usize,
    #[arg(long, default_value_t = 1000)]
    pub neutral: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// Run configuration shared by the training subcommands.
#[derive(Args, Debug)]
pub struct RunArgs {
    /// RunConfig JSON; defaults are used for absent keys.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Vocabulary written by build-corpus; built from the inputs if absent.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    /// Directory of lexicon files; the bundled lexicons if absent.
    #[arg(long)]
    pub lexicons: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct TrainDetectorArgs {
    /// Biased pairs (JSONL).
    #[arg(long)]
    pub train: PathBuf,
    /// Neutral sentences for masked-token pretraining (JSONL).
    #[arg(long)]
    pub neutral: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct PretrainEditorArgs {
    #[arg(long)]
    pub neutral: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Modular)]
    pub mode: ModeArg,
    /// Biased pairs, only used to build a vocabulary when --vocab is absent.
    #[arg(long)]
    pub train: Option<PathBuf>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Biased pairs (JSONL).
    #[arg(long, alias = "train")]
    pub corpus: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModeArg::Modular)]
    pub mode: ModeArg,
    /// Trained detector (modular mode).
    #[arg(long)]
    pub detector: Option<PathBuf>,
    /// Pretrained editor (modular) or pretrained concurrent system.
    #[arg(long)]
    pub editor: PathBuf,
    #[arg(long, value_enum)]
    pub join: Option<JoinArg>,
    /// Overrides the fine-tuning step count.
    #[arg(long)]
    pub steps: Option<usize>,
    /// Overrides the loss weight on changed target words.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Overrides the decoding beam width.
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ModelArg {
    /// Checkpoint; falls back to $NEUTRALIZE_MODEL.
    #[arg(long, env = MODEL_ENV)]
    pub model: PathBuf,
}

#[derive(Args, Debug)]
pub struct NeutralizeArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub category: Option<String>,
    /// Comma-separated probability per token.
    #[arg(long, value_delimiter = ',')]
    pub control: Option<Vec<f64>>,
    #[arg(long, value_enum)]
    pub merge: Option<MergeArg>,
    /// Print the full JSON response.
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct DetectArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long)]
    pub text: String,
    #[arg(long)]
    pub category: Option<String>,
    #[arg(long)]
    pub json: bool,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub test: PathBuf,
    /// System checkpoint; omit when scoring a baseline.
    #[arg(long, required_unless_present = "baseline")]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "model")]
    pub baseline: Option<BaselineArg>,
    /// Append the JSONL report here as well as printing the table.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.95)]
    pub level: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Args, Debug)]
pub struct ServeArgs {
    #[command(flatten)]
    pub model: ModelArg,
    #[arg(long, default_value = "127.0.0.1:8080")]
    pub bind: SocketAddr,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Modular,
    Concurrent,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Modular => Mode::Modular,
            ModeArg::Concurrent => Mode::Concurrent,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum JoinArg {
    Gate,
    Concat,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum MergeArg {
    Replace,
    Max,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum BaselineArg {
    SourceCopy,
    TargetCopy,
}

/// Parses `argv` and runs the subcommand. Returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv).and_then(validate) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error[{}]: {}", e.code, e.message.replace('\n', " "));
            1
        }
    }
}

/// Checks that clap cannot express declaratively.
fn validate(cli: Cli) -> std::result::Result<Cli, clap::Error> {
    if let Command::Train(a) = &cli.command {
        if a.mode == ModeArg::Modular && a.detector.is_none() {
            return Err(Cli::command().error(
                ErrorKind::MissingRequiredArgument,
                "the following required arguments were not provided:\n  --detector <DETECTOR> (modular mode)",
            ));
        }
    }
    Ok(cli)
}

fn dispatch(command: Command) -> std::result::Result<(), ApiError> {
    match command {
        Command::BuildCorpus(a) => Ok(build_corpus_cmd(&a)?),
        Command::TrainDetector(a) => Ok(train_detector_cmd(&a)?),
        Command::PretrainEditor(a) => Ok(pretrain_editor_cmd(&a)?),
        Command::Train(a) => Ok(train_cmd(&a)?),
        Command::Neutralize(a) => neutralize_cmd(&a),
        Command::Detect(a) => detect_cmd(&a),
        Command::Evaluate(a) => Ok(evaluate_cmd(&a)?),
        Command::Serve(a) => Ok(serve_cmd(&a)?),
    }
}

fn load_run(config: Option<&Path>, seed: u64) -> Result<RunConfig> {
    let run = match config {
        Some(path) => {
            RunConfig::from_json(&std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?)?
        }
        None => RunConfig::default(),
    };
    Ok(run.with_seed(seed))
}

fn load_lexicon_arg(dir: Option<&Path>) -> Result<Vec<Lexicon>> {
    dir.map_or_else(|| Ok(bundled_lexicons()), load_lexicons)
}

fn progress(stage: &str, step: usize, loss: f64) {
    if step.is_multiple_of(100) {
        log::info!("{stage} step {step} loss {loss:.4}");
    }
}

fn build_corpus_cmd(a: &BuildCorpusArgs) -> Result<()> {
    std::fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let (train, neutral) = if a.synthetic {
        let corpus = generate(&SyntheticConfig {
            train_pairs: a.train_pairs,
            test_pairs: a.test_pairs,
            neutral: a.neutral,
            seed: a.seed,
            ..SyntheticConfig::default()
        });
        write_jsonl(&a.out.join(TRAIN_FILE), &corpus.train)?;
        write_jsonl(&a.out.join(TEST_FILE), &corpus.test)?;
        write_jsonl(&a.out.join(crate::corpus::NEUTRAL_FILE), &corpus.neutral)?;
        println!(
            "synthetic corpus: {} train, {} test, {} neutral",
            corpus.train.len(),
            corpus.test.len(),
            corpus.neutral.len()
        );
        (corpus.train, corpus.neutral)
    } else {
        let input = a
            .input
            .as_deref()
            .ok_or_else(|| Error::Config("--input is required".into()))?;
        let cfg = match &a.config {
            Some(path) => corpus_config(path)?,
            None => CorpusConfig::default(),
        };
        let (records, malformed) = read_records(input)?;
        let splits = build_corpus(&records, malformed, &cfg);
        splits.write(&a.out)?;
        println!(
            "{} records: {} biased (full), {} biased (word), {} neutral, {} rejected",
            splits.stats.records,
            splits.biased_full.len(),
            splits.biased_word.len(),
            splits.neutral.len(),
            splits.rejects.len()
        );
        (splits.biased_full, splits.neutral)
    };
    let vocab = build_vocab(&train, &neutral, a.vocab_cap);
    vocab.save(&a.out.join(VOCAB_FILE))?;
    println!("vocabulary: {} entries", vocab.len());
    Ok(())
}

/// Corpus settings file: window, min_edit, length_percentile, guard_initials
/// and optional wordlist / misspellings files.
#[derive(serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct CorpusFile {
    window: Option<usize>,
    min_edit: Option<usize>,
    length_percentile: Option<f64>,
    guard_initials: Option<bool>,
    wordlist: Option<PathBuf>,
    misspellings: Option<PathBuf>,
}

fn corpus_config(path: &Path) -> Result<CorpusConfig> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: CorpusFile = serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    let mut cfg = CorpusConfig::default();
    let words = |p: &Path| -> Result<std::collections::HashSet<String>> {
        let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
        Ok(text
            .lines()
            .map(|l| l.trim().to_lowercase())
            .filter(|l| !l.is_empty())
            .collect())
    };
    cfg.window = file.window.unwrap_or(cfg.window);
    cfg.min_edit = file.min_edit.unwrap_or(cfg.min_edit);
    cfg.length_percentile = file.length_percentile.unwrap_or(cfg.length_percentile);
    cfg.guard_initials = file.guard_initials.unwrap_or(cfg.guard_initials);
    if let Some(p) = &file.wordlist {
        cfg.wordlist = words(p)?;
    }
    if let Some(p) = &file.misspellings {
        cfg.misspellings = words(p)?;
    }
    Ok(cfg)
}

fn vocab_for(
    run: &RunArgs,
    cfg: &RunConfig,
    biased: &[BiasedRecord],
    neutral: &[NeutralRecord],
) -> Result<Vocab> {
    match &run.vocab {
        Some(path) => Vocab::load(path),
        None => Ok(build_vocab(biased, neutral, cfg.vocab_cap)),
    }
}

fn train_detector_cmd(a: &TrainDetectorArgs) -> Result<()> {
    let cfg = load_run(a.run.config.as_deref(), a.run.seed)?;
    let train: Vec<BiasedRecord> = read_jsonl(&a.train)?;
    let neutral: Vec<NeutralRecord> = read_jsonl(&a.neutral)?;
    let vocab = vocab_for(&a.run, &cfg, &train, &neutral)?;
    let lexicons = load_lexicon_arg(a.run.lexicons.as_deref())?;
    let (model, report) =
        train_detector_model(vocab, lexicons, &train, &neutral, &cfg, &mut progress)?;
    model.save(&a.out)?;
    println!(
        "detector saved to {} (final epoch loss {:.4})",
        a.out.display(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn pretrain_editor_cmd(a: &PretrainEditorArgs) -> Result<()> {
    let cfg = load_run(a.run.config.as_deref(), a.run.seed)?;
    let neutral: Vec<NeutralRecord> = read_jsonl(&a.neutral)?;
    let train: Vec<BiasedRecord> = match &a.train {
        Some(p) => read_jsonl(p)?,
        None => Vec::new(),
    };
    let vocab = vocab_for(&a.run, &cfg, &train, &neutral)?;
    let lexicons = load_lexicon_arg(a.run.lexicons.as_deref())?;
    let (model, report) = pretrain_editor_model(
        vocab,
        lexicons,
        &neutral,
        a.mode.into(),
        &cfg,
        &mut progress,
    )?;
    model.save(&a.out)?;
    println!(
        "pretrained {:?} saved to {} (final loss {:.4})",
        a.mode,
        a.out.display(),
        report.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn train_cmd(a: &TrainArgs) -> Result<()> {
    let mut cfg = load_run(a.config.as_deref(), a.seed)?;
    cfg.mode = a.mode.into();
    if let Some(j) = a.join {
        cfg.join = match j {
            JoinArg::Gate => JoinMode::Gate,
            JoinArg::Concat => JoinMode::Concat,
        };
    }
    if let Some(steps) = a.steps {
        cfg.fine_tuning.steps = Some(steps);
    }
    if let Some(alpha) = a.alpha {
        cfg.loss.alpha = alpha;
    }
    if let Some(beam) = a.beam {
        cfg.decode.beam = beam;
    }
    let editor = Model::load(&a.editor)?;
    // architecture sizes and vocabulary come from the pretrained parts
    cfg.editor = editor.meta.run.editor.clone();
    cfg.concurrent = editor.meta.run.concurrent;
    cfg.vocab_cap = editor.meta.run.vocab_cap;
    let mut parts = vec![editor];
    if let Some(path) = &a.detector {
        let det = Model::load(path)?;
        cfg.detector = det.meta.run.detector.clone();
        parts.push(det);
    }
    let refs: Vec<&Model> = parts.iter().collect();
    let mut model = assemble(&cfg, &refs)?;
    let train: Vec<BiasedRecord> = read_jsonl(&a.corpus)?;
    let report = fine_tune_model(&mut model, &train, &mut progress)?;
    model.save(&a.out)?;
    println!(
        "{:?} system saved to {} after {} steps (final loss {:.4})",
        a.mode,
        a.out.display(),
        report.losses.len(),
        report.losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn merge_rule(m: MergeArg) -> MergeRule {
    match m {
        MergeArg::Replace => MergeRule::Replace,
        MergeArg::Max => MergeRule::Max,
    }
}

fn format_probabilities(tokens: &[String], p: &[f64]) -> String {
    tokens
        .iter()
        .zip(p)
        .map(|(t, p)| format!("{t}:{p:.3}"))
        .collect::<Vec<_>>()
        .join(" ")
}

fn neutralize_cmd(a: &NeutralizeArgs) -> std::result::Result<(), ApiError> {
    let model = Model::load(&a.model.model)?;
    let req = NeutralizeRequest {
        text: a.text.clone(),
        category: a.category.clone(),
        control: a.control.clone(),
        merge: a.merge.map(merge_rule),
    };
    let resp = neutralize_text(&model, &req)?;
    if a.json {
        println!(
            "{}",
            serde_json::to_string(&resp).expect("response serializes")
        );
    } else {
        if let Some(p) = &resp.probabilities {
            println!("probabilities: {}", format_probabilities(&resp.tokens, p));
        }
        println!("output: {}", resp.output_text);
    }
    Ok(())
}

fn detect_cmd(a: &DetectArgs) -> std::result::Result<(), ApiError> {
    let model = Model::load(&a.model.model)?;
    let req = DetectRequest {
        text: a.text.clone(),
        category: a.category.clone(),
    };
    let resp = detect_text(&model, &req)?;
    if a.json {
        println!(
            "{}",
            serde_json::to_string(&resp).expect("response serializes")
        );
    } else {
        println!(
            "{}",
            format_probabilities(&resp.tokens, &resp.probabilities)
        );
        if let Ok(top) = crate::detector::select_top_word(&resp.probabilities) {
            println!("most biased: {}", resp.tokens[top]);
        }
    }
    Ok(())
}

fn evaluate_cmd(a: &EvaluateArgs) -> Result<()> {
    let test: Vec<BiasedRecord> = read_jsonl(&a.test)?;
    let cfg = EvalConfig {
        resamples: a.resamples,
        level: a.level,
        seed: a.seed,
    };
    let report = match (&a.model, a.baseline) {
        (_, Some(b)) => evaluate_baseline(
            match b {
                BaselineArg::SourceCopy => Baseline::SourceCopy,
                BaselineArg::TargetCopy => Baseline::TargetCopy,
            },
            &test,
            &cfg,
        )?,
        (Some(path), None) => {
            let model = Model::load(path)?;
            if model.system().is_none() {
                let p = detect_split(&model, &test)?;
                let labels: Vec<Vec<u8>> = test.iter().map(|r| r.labels.clone()).collect();
                let acc = crate::evaluation::detection_accuracy(&p, &labels)?;
                println!("detector top-word accuracy {:.2}", 100.0 * acc);
                return Ok(());
            }
            evaluate_system(&model, &test, &cfg)?
        }
        (None, None) => return Err(Error::Config("--model or --baseline is required".into())),
    };
    print!("{}", report.table());
    if let Some(out) = &a.out {
        use std::io::Write;
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(out)
            .map_err(|e| Error::io(out, e))?;
        f.write_all(report.to_jsonl().as_bytes())
            .map_err(|e| Error::io(out, e))?;
    }
    Ok(())
}

fn serve_cmd(a: &ServeArgs) -> Result<()> {
    let model = Model::load(&a.model.model)?;
    let digest = file_digest(&a.model.model)?;
    let runtime =
        tokio::runtime::Runtime::new().map_err(|e| Error::Config(format!("runtime: {e}")))?;
    runtime.block_on(crate::service::serve(
        ApiSession::new(model, digest),
        a.bind,
    ))
}
