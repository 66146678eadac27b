//! `nuer` command-line interface.
//!
//! Every command that writes files also writes a manifest next to its output
//! (`<dir>/manifest.json` or `<file>.manifest.json`) with the resolved
//! configuration and the sha256 of every input and output file. Manifests
//! carry no timestamps, so reruns are byte-identical.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::annotate::{annotate_corpus, make_audit_subset, AnnotationConfig, DEFAULT_THRESHOLD};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::corpus::{generate_corpus, load_dataset, save_dataset, split_corpus, Corpus, EntityLabel, GenConfig, SplitRatios};
use crate::diagnostics::{model_check, primitive_checks, CheckResult, CHECK_TASKS, MODEL_TOLERANCE, PRIMITIVE_TOLERANCE};
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::fitb::{self, dump_qualitative, evaluate_fitb, train_fitb, FitbMode, NumeralVocab, QualitativeRow};
use crate::model::{Model, ModelConfig, Task};
use crate::nn::GradCheckOptions;
use crate::qa::{self, evaluate_qa, train_qa, QaMode};
use crate::report::{fitb_run, merge_reports, qa_run, render_reports, tagger_run, FitbReport, QaReport, Report, TaggerReport};
use crate::tagger::{self, evaluate_tagger, few_shot_subset, train_tagger};
use crate::tokenizer::{build_vocab, Vocabulary};
use crate::train::{TrainConfig, TrainLog};

#[derive(Parser, Debug)]
#[command(name = "nuer", version, about = "Number entity recognition: data, training, evaluation and reports")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic annotated corpus and its vocabulary.
    Gen(GenArgs),
    /// Split a dataset into train/val/test files.
    Split(SplitArgs),
    /// Train a number entity tagger.
    TrainTagger(TrainTaggerArgs),
    /// Evaluate tagger checkpoints (one run per checkpoint).
    EvalTagger(EvalTaggerArgs),
    /// Train a span QA model (baseline or joint entity embeddings).
    TrainQa(TrainQaArgs),
    /// Evaluate QA checkpoints.
    EvalQa(EvalQaArgs),
    /// Train a fill-in-the-blank numeral predictor.
    TrainFitb(TrainFitbArgs),
    /// Evaluate fill-in-the-blank checkpoints.
    EvalFitb(EvalFitbArgs),
    /// Label a corpus with a trained tagger.
    Annotate(AnnotateArgs),
    /// Draw a magnitude-preserving audit subset.
    AuditSample(AuditArgs),
    /// Merge per-seed reports and render tables.
    Report(ReportArgs),
    /// Compare analytic gradients against central finite differences.
    GradCheck(GradCheckArgs),
}

#[derive(Args, Debug)]
struct GenArgs {
    /// Generator config (JSON); missing fields take defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for corpus.jsonl, vocab.json and manifest.json.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the number of sentences.
    #[arg(long)]
    n: Option<usize>,
    /// Attach a question and answer span to every sentence.
    #[arg(long)]
    questions: bool,
    /// Minimum token frequency for the vocabulary (numerals are always kept).
    #[arg(long, default_value_t = 1)]
    min_freq: usize,
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Annotated corpus to split.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for train.jsonl, val.jsonl and test.jsonl.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.75)]
    train: f64,
    #[arg(long, default_value_t = 0.10)]
    val: f64,
    #[arg(long, default_value_t = 0.15)]
    test: f64,
}

#[derive(Args, Debug)]
struct TrainCommon {
    /// Training data (nuer-v1).
    #[arg(long)]
    train: PathBuf,
    /// Validation data for best-epoch selection; the last epoch is kept without it.
    #[arg(long)]
    val: Option<PathBuf>,
    /// Vocabulary; its hash is written into every checkpoint.
    #[arg(long)]
    vocab: PathBuf,
    /// Checkpoint path. With several seeds it must contain `{seed}`.
    #[arg(long)]
    out: PathBuf,
    /// Seed for initialization, shuffling and dropout.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Train one model per seed (comma-separated); overrides --seed.
    #[arg(long, value_delimiter = ',')]
    seeds: Vec<u64>,
    /// Encoder config (JSON); missing fields take defaults.
    #[arg(long)]
    encoder: Option<PathBuf>,
    /// Print per-epoch progress to stderr.
    #[arg(long)]
    verbose: bool,
}

#[derive(Args, Debug)]
struct TrainTaggerArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long, default_value_t = tagger::DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = tagger::DEFAULT_LR)]
    lr: f64,
    #[arg(long, default_value_t = tagger::DEFAULT_BATCH)]
    batch: usize,
    /// Train on the first N training sentences per class instead of the full set.
    #[arg(long)]
    few_shot: Option<usize>,
    /// Classes for --few-shot (comma-separated labels); all six by default.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<EntityLabel>,
}

#[derive(Args, Debug)]
struct TrainQaArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long, default_value = "jem")]
    mode: QaMode,
    #[arg(long, default_value_t = qa::DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = qa::DEFAULT_LR)]
    lr: f64,
    #[arg(long, default_value_t = qa::DEFAULT_BATCH)]
    batch: usize,
}

#[derive(Args, Debug)]
struct TrainFitbArgs {
    #[command(flatten)]
    common: TrainCommon,
    #[arg(long, default_value = "entity")]
    mode: FitbMode,
    #[arg(long, default_value_t = fitb::DEFAULT_EPOCHS)]
    epochs: usize,
    #[arg(long, default_value_t = fitb::DEFAULT_LR)]
    lr: f64,
    #[arg(long, default_value_t = fitb::DEFAULT_BATCH)]
    batch: usize,
}

#[derive(Args, Debug)]
struct EvalCommon {
    /// Checkpoint(s); each one contributes a run keyed by its seed.
    #[arg(long, required = true, num_args = 1..)]
    ckpt: Vec<PathBuf>,
    /// Evaluation data (nuer-v1).
    #[arg(long)]
    data: PathBuf,
    /// Vocabulary the checkpoints were trained with.
    #[arg(long)]
    vocab: PathBuf,
    /// Report output path (nuer-report-v1 JSON).
    #[arg(long)]
    report: Option<PathBuf>,
    /// Run seed recorded in the report; defaults to the checkpoint's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Model name recorded in the report.
    #[arg(long, default_value = "nuer-encoder")]
    model_name: String,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
enum Entities {
    Gold,
    Tagger,
}

impl Entities {
    fn as_str(self) -> &'static str {
        match self {
            Entities::Gold => "gold",
            Entities::Tagger => "tagger",
        }
    }
}

#[derive(Args, Debug)]
struct EvalTaggerArgs {
    #[command(flatten)]
    common: EvalCommon,
    /// Dataset name recorded in the report; defaults to the data file stem.
    #[arg(long)]
    dataset: Option<String>,
    /// "full" or "few-shot".
    #[arg(long, default_value = "full")]
    variant: String,
    /// Classes the run covers (comma-separated); all six by default.
    #[arg(long, value_delimiter = ',')]
    classes: Vec<EntityLabel>,
}

#[derive(Args, Debug)]
struct EvalQaArgs {
    #[command(flatten)]
    common: EvalCommon,
    /// Source of the entity labels fed to joint-embedding models.
    #[arg(long, value_enum, default_value_t = Entities::Gold)]
    entities: Entities,
    /// Tagger checkpoint for --entities tagger.
    #[arg(long)]
    tagger_ckpt: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalFitbArgs {
    #[command(flatten)]
    common: EvalCommon,
    #[arg(long, value_delimiter = ',', default_values_t = fitb::DEFAULT_KS)]
    ks: Vec<usize>,
    #[arg(long, value_enum, default_value_t = Entities::Gold)]
    entities: Entities,
    #[arg(long)]
    tagger_ckpt: Option<PathBuf>,
    /// Write a qualitative JSONL dump comparing the first checkpoint with --dump-against.
    #[arg(long, requires = "dump_against")]
    dump: Option<PathBuf>,
    /// Checkpoint of the other FITB mode for --dump.
    #[arg(long)]
    dump_against: Option<PathBuf>,
    /// Predictions listed per model in the dump.
    #[arg(long, default_value_t = 4)]
    dump_k: usize,
}

#[derive(Args, Debug)]
struct AnnotateArgs {
    /// Annotation config (JSON); flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    ckpt: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    vocab: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Minimum winning probability for a numeral to keep its label [default: 0.5].
    #[arg(long)]
    threshold: Option<f64>,
    /// Also draw an audit subset of this size.
    #[arg(long)]
    audit_n: Option<usize>,
    #[arg(long, requires = "audit_n")]
    audit_out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args, Debug)]
struct AuditArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ReportArgs {
    /// Report files to merge.
    #[arg(required = true, num_args = 1..)]
    reports: Vec<PathBuf>,
    /// Write the merged reports as a JSON array.
    #[arg(long)]
    merged: Option<PathBuf>,
    /// Write the rendered tables to this file as well as stdout.
    #[arg(long)]
    text: Option<PathBuf>,
    /// Qualitative FITB dumps to render.
    #[arg(long, num_args = 1..)]
    qualitative: Vec<PathBuf>,
}

#[derive(Args, Debug)]
struct GradCheckArgs {
    /// Encoder config (JSON) for the model-level checks; vocab size is set from the check data.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Restrict to one task.
    #[arg(long, value_parser = clap::builder::PossibleValuesParser::new(CHECK_TASKS))]
    task: Option<String>,
    #[arg(long, default_value_t = 1e-5)]
    eps: f64,
    #[arg(long, default_value_t = 200)]
    min_coords: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Sentences in the probe loss.
    #[arg(long, default_value_t = 1)]
    examples: usize,
    /// Write results as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| Error::io("<stdout>", e))?
    };
}

/// Parses `argv` (including the program name), runs the command, and returns
/// the process exit status. Failures print one line to stderr:
/// `error: kind=<kind> msg=<message>`.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout().lock())
}

/// [`run`] with command output sent to `out` instead of stdout. Help, usage
/// and error lines still go to the process streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: kind=usage msg={first}");
            return 2;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: kind={} msg={}", e.kind(), e.to_string().replace('\n', " "));
            e.exit_code()
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> Result<()> {
    match cmd {
        Command::Gen(a) => gen(a, out),
        Command::Split(a) => split(a, out),
        Command::TrainTagger(a) => train_tagger_cmd(a, out),
        Command::EvalTagger(a) => eval_tagger_cmd(a, out),
        Command::TrainQa(a) => train_qa_cmd(a, out),
        Command::EvalQa(a) => eval_qa_cmd(a, out),
        Command::TrainFitb(a) => train_fitb_cmd(a, out),
        Command::EvalFitb(a) => eval_fitb_cmd(a, out),
        Command::Annotate(a) => annotate_cmd(a, out),
        Command::AuditSample(a) => audit_cmd(a, out),
        Command::Report(a) => report_cmd(a, out),
        Command::GradCheck(a) => grad_check_cmd(a, out),
    }
}

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(read_bytes(path)?)))
}

fn create_dir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn manifest_path_for_file(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".manifest.json");
    PathBuf::from(s)
}

fn file_hashes(paths: &[&Path]) -> Result<BTreeMap<String, String>> {
    paths
        .iter()
        .map(|p| Ok((p.display().to_string(), sha256_file(p)?)))
        .collect()
}

fn write_manifest(
    path: &Path,
    command: &str,
    config: Value,
    inputs: &[&Path],
    outputs: &[&Path],
    extra: Value,
) -> Result<()> {
    let mut m = json!({
        "command": command,
        "config": config,
        "inputs": file_hashes(inputs)?,
        "outputs": file_hashes(outputs)?,
    });
    if !extra.is_null() {
        m["details"] = extra;
    }
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    write_text(path, &text)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config serializes")
}

fn gen(a: GenArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg: GenConfig = match &a.config {
        Some(p) => read_json(p)?,
        None => GenConfig::default(),
    };
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if let Some(n) = a.n {
        cfg.n_sentences = n;
    }
    if a.questions {
        cfg.questions = true;
    }
    let corpus = generate_corpus(&cfg)?;
    let vocab = build_vocab(&corpus, a.min_freq)?;
    create_dir(&a.out)?;
    let data = a.out.join("corpus.jsonl");
    let vpath = a.out.join("vocab.json");
    save_dataset(&corpus, &data)?;
    vocab.save(&vpath)?;
    let inputs: Vec<&Path> = a.config.iter().map(|p| p.as_path()).collect();
    write_manifest(
        &a.out.join("manifest.json"),
        "gen",
        json!({"generator": to_value(&cfg), "min_freq": a.min_freq}),
        &inputs,
        &[&data, &vpath],
        json!({"sentences": corpus.len(), "vocab_size": vocab.len()}),
    )?;
    say!(out, "wrote {} sentences, vocabulary of {} to {}", corpus.len(), vocab.len(), a.out.display());
    Ok(())
}

fn split(a: SplitArgs, out: &mut dyn Write) -> Result<()> {
    let corpus = load_dataset(&a.data)?;
    let ratios = SplitRatios {
        train: a.train,
        val: a.val,
        test: a.test,
    };
    let (tr, va, te) = split_corpus(&corpus, ratios, a.seed)?;
    create_dir(&a.out)?;
    let paths = [a.out.join("train.jsonl"), a.out.join("val.jsonl"), a.out.join("test.jsonl")];
    for (c, p) in [&tr, &va, &te].into_iter().zip(&paths) {
        save_dataset(c, p)?;
    }
    let outs: Vec<&Path> = paths.iter().map(|p| p.as_path()).collect();
    write_manifest(
        &a.out.join("manifest.json"),
        "split",
        json!({"ratios": to_value(&ratios), "seed": a.seed}),
        &[&a.data],
        &outs,
        json!({"train": tr.len(), "val": va.len(), "test": te.len()}),
    )?;
    say!(out, "train {} / val {} / test {}", tr.len(), va.len(), te.len());
    Ok(())
}

struct TrainInputs {
    train: Corpus,
    val: Corpus,
    vocab: Vocabulary,
    encoder: EncoderConfig,
}

fn load_train_inputs(c: &TrainCommon) -> Result<TrainInputs> {
    let vocab = Vocabulary::load(&c.vocab)?;
    let train = load_dataset(&c.train)?;
    let val = match &c.val {
        Some(p) => load_dataset(p)?,
        None => Corpus::new(Vec::new(), "none"),
    };
    let mut encoder: EncoderConfig = match &c.encoder {
        Some(p) => read_json(p)?,
        None => EncoderConfig::default(),
    };
    encoder.vocab_size = vocab.len();
    Ok(TrainInputs {
        train,
        val,
        vocab,
        encoder,
    })
}

fn seeds_of(c: &TrainCommon) -> Result<Vec<u64>> {
    if c.seeds.is_empty() {
        return Ok(vec![c.seed]);
    }
    if c.seeds.len() > 1 && !c.out.to_string_lossy().contains("{seed}") {
        return Err(Error::Config("--out must contain `{seed}` when training several seeds".into()));
    }
    Ok(c.seeds.clone())
}

fn out_for_seed(out: &Path, seed: u64) -> PathBuf {
    PathBuf::from(out.to_string_lossy().replace("{seed}", &seed.to_string()))
}

/// Shared driver for the three training commands: one model per seed, each
/// saved with its manifest.
fn train_seeds(
    command: &str,
    c: &TrainCommon,
    inputs: &TrainInputs,
    task: Task,
    extra_config: Value,
    cfg_for: impl Fn(u64) -> TrainConfig,
    mut train: impl FnMut(&mut Model, &TrainConfig) -> Result<(Model, TrainLog)>,
    out: &mut dyn Write,
) -> Result<()> {
    for seed in seeds_of(c)? {
        let mut enc = inputs.encoder.clone();
        enc.seed = seed;
        let mut model = Model::new(ModelConfig {
            encoder: enc.clone(),
            task: task.clone(),
        })?;
        let mut tc = cfg_for(seed);
        tc.verbose = c.verbose;
        tc.validate()?;
        let (best, log) = train(&mut model, &tc)?;
        let path = out_for_seed(&c.out, seed);
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            create_dir(dir)?;
        }
        save_checkpoint(&best, &inputs.vocab, &path)?;
        let mut in_paths: Vec<&Path> = vec![&c.train, &c.vocab];
        in_paths.extend(c.val.iter().map(|p| p.as_path()));
        in_paths.extend(c.encoder.iter().map(|p| p.as_path()));
        write_manifest(
            &manifest_path_for_file(&path),
            command,
            json!({
                "model": to_value(&ModelConfig { encoder: enc, task: task.clone() }),
                "train": to_value(&tc),
                "task_options": extra_config.clone(),
            }),
            &in_paths,
            &[&path],
            to_value(&log),
        )?;
        match log.best_score {
            Some(s) => say!(out, 
                "seed {seed}: best epoch {} (validation {s:.2}) -> {}",
                log.best_epoch,
                path.display()
            ),
            None => say!(out, "seed {seed}: trained {} epochs -> {}", log.epochs.len(), path.display()),
        }
    }
    Ok(())
}

fn train_tagger_cmd(a: TrainTaggerArgs, out: &mut dyn Write) -> Result<()> {
    let mut inputs = load_train_inputs(&a.common)?;
    let classes = if a.classes.is_empty() {
        EntityLabel::ENTITIES.to_vec()
    } else {
        a.classes.clone()
    };
    if let Some(n) = a.few_shot {
        inputs.train = few_shot_subset(&inputs.train, n, &classes)?;
    }
    let extra = json!({"few_shot": a.few_shot, "classes": to_value(&classes)});
    let (train, val, vocab) = (inputs.train.clone(), inputs.val.clone(), inputs.vocab.clone());
    train_seeds(
        "train-tagger",
        &a.common,
        &inputs,
        Task::Tagger,
        extra,
        |s| TrainConfig::new(a.epochs, a.lr, a.batch, s),
        |m, tc| train_tagger(m, &vocab, &train, &val, tc),
        out,
    )
}

fn train_qa_cmd(a: TrainQaArgs, out: &mut dyn Write) -> Result<()> {
    let inputs = load_train_inputs(&a.common)?;
    let (train, val, vocab) = (inputs.train.clone(), inputs.val.clone(), inputs.vocab.clone());
    train_seeds(
        "train-qa",
        &a.common,
        &inputs,
        Task::Qa { mode: a.mode },
        Value::Null,
        |s| TrainConfig::new(a.epochs, a.lr, a.batch, s),
        |m, tc| train_qa(m, &vocab, &train, &val, tc),
        out,
    )
}

fn train_fitb_cmd(a: TrainFitbArgs, out: &mut dyn Write) -> Result<()> {
    let inputs = load_train_inputs(&a.common)?;
    let numerals = NumeralVocab::from_vocabulary(&inputs.vocab)?;
    let (train, val, vocab) = (inputs.train.clone(), inputs.val.clone(), inputs.vocab.clone());
    train_seeds(
        "train-fitb",
        &a.common,
        &inputs,
        Task::Fitb {
            mode: a.mode,
            n_numerals: numerals.len(),
        },
        Value::Null,
        |s| TrainConfig::new(a.epochs, a.lr, a.batch, s),
        |m, tc| train_fitb(m, &vocab, &numerals, &train, &val, tc),
        out,
    )
}

struct Loaded {
    models: Vec<(u64, Model)>,
    data: Corpus,
    vocab: Vocabulary,
}

fn load_eval(c: &EvalCommon) -> Result<Loaded> {
    let vocab = Vocabulary::load(&c.vocab)?;
    let data = load_dataset(&c.data)?;
    let mut models = Vec::new();
    for p in &c.ckpt {
        let (m, header) = load_checkpoint(p, Some(&vocab))?;
        let seed = match (c.seed, c.ckpt.len()) {
            (Some(s), 1) => s,
            _ => header.config.encoder.seed,
        };
        models.push((seed, m));
    }
    Ok(Loaded { models, data, vocab })
}

fn finish_eval(c: &EvalCommon, command: &str, report: Report, config: Value, extra_inputs: &[&Path]) -> Result<()> {
    if let Some(path) = &c.report {
        report.save(path)?;
        let mut inputs: Vec<&Path> = c.ckpt.iter().map(|p| p.as_path()).collect();
        inputs.extend([c.data.as_path(), c.vocab.as_path()]);
        inputs.extend_from_slice(extra_inputs);
        write_manifest(&manifest_path_for_file(path), command, config, &inputs, &[path], Value::Null)?;
    }
    Ok(())
}

fn eval_tagger_cmd(a: EvalTaggerArgs, out: &mut dyn Write) -> Result<()> {
    let l = load_eval(&a.common)?;
    let mut runs = Vec::new();
    for (seed, m) in &l.models {
        let metrics = evaluate_tagger(m, &l.vocab, &l.data)?;
        say!(out, "seed {seed}: micro-F1 {:.2}", metrics.micro_f1());
        for (e, s) in &metrics.per_entity {
            say!(out, "  {e:<10} P {:6.2}  R {:6.2}  F1 {:6.2}  support {}", s.precision, s.recall, s.f1, s.support);
        }
        runs.push(tagger_run(*seed, &metrics));
    }
    let dataset = a.dataset.clone().unwrap_or_else(|| stem(&a.common.data));
    let classes = if a.classes.is_empty() {
        EntityLabel::ENTITIES.to_vec()
    } else {
        a.classes.clone()
    };
    if a.variant != "full" && a.variant != "few-shot" {
        return Err(Error::Config(format!("unknown variant `{}`", a.variant)));
    }
    let report = Report::Tagger(TaggerReport::new(&a.common.model_name, &dataset, &a.variant, classes.clone(), runs));
    let config = json!({"dataset": dataset, "variant": a.variant, "classes": to_value(&classes), "model_name": a.common.model_name});
    finish_eval(&a.common, "eval-tagger", report, config, &[])
}

fn stem(p: &Path) -> String {
    p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_tagger(entities: Entities, path: &Option<PathBuf>, vocab: &Vocabulary) -> Result<Option<Model>> {
    match (entities, path) {
        (Entities::Gold, _) => Ok(None),
        (Entities::Tagger, None) => Err(Error::Config("--entities tagger needs --tagger-ckpt".into())),
        (Entities::Tagger, Some(p)) => {
            let (m, _) = load_checkpoint(p, Some(vocab))?;
            m.tag_head()?;
            Ok(Some(m))
        }
    }
}

fn single_mode<T: PartialEq + Copy>(modes: &[T]) -> Result<T> {
    let first = modes[0];
    if modes.iter().any(|m| *m != first) {
        return Err(Error::invalid("checkpoints in one report must share a mode"));
    }
    Ok(first)
}

fn eval_qa_cmd(a: EvalQaArgs, out: &mut dyn Write) -> Result<()> {
    let l = load_eval(&a.common)?;
    let tagger = load_tagger(a.entities, &a.tagger_ckpt, &l.vocab)?;
    let source = match &tagger {
        Some(t) => qa::EntitySource::Tagger(t),
        None => qa::EntitySource::Gold,
    };
    let mut modes = Vec::new();
    let mut runs = Vec::new();
    for (seed, m) in &l.models {
        let Task::Qa { mode } = m.task else {
            return Err(Error::invalid("checkpoint is not a QA model"));
        };
        modes.push(mode);
        let metrics = evaluate_qa(m, &l.vocab, &l.data, source)?;
        say!(out, "seed {seed}: {} EM {:.2} F1 {:.2}", mode.as_str(), metrics.exact_match, metrics.f1);
        runs.push(qa_run(*seed, &metrics));
    }
    let mode = single_mode(&modes)?;
    let report = Report::Qa(QaReport::new(&a.common.model_name, mode.as_str(), a.entities.as_str(), runs));
    let config = json!({"entities": a.entities.as_str(), "model_name": a.common.model_name, "max_span_len": qa::DEFAULT_MAX_SPAN_LEN});
    let extra: Vec<&Path> = a.tagger_ckpt.iter().map(|p| p.as_path()).collect();
    finish_eval(&a.common, "eval-qa", report, config, &extra)
}

fn eval_fitb_cmd(a: EvalFitbArgs, out: &mut dyn Write) -> Result<()> {
    let l = load_eval(&a.common)?;
    let numerals = NumeralVocab::from_vocabulary(&l.vocab)?;
    let tagger = load_tagger(a.entities, &a.tagger_ckpt, &l.vocab)?;
    let source = match &tagger {
        Some(t) => fitb::EntitySource::Tagger(t),
        None => fitb::EntitySource::Gold,
    };
    if a.ks.is_empty() || a.ks.contains(&0) {
        return Err(Error::Config("--ks must list positive k values".into()));
    }
    let mut modes = Vec::new();
    let mut runs = Vec::new();
    for (seed, m) in &l.models {
        let Task::Fitb { mode, .. } = m.task else {
            return Err(Error::invalid("checkpoint is not a FITB model"));
        };
        modes.push(mode);
        let metrics = evaluate_fitb(m, &l.vocab, &numerals, &l.data, &a.ks, source)?;
        let cells: Vec<String> = metrics
            .top_k
            .iter()
            .map(|(k, t)| format!("top-{k} {t:.2} (dist {:.2})", metrics.dist[k]))
            .collect();
        say!(out, "seed {seed}: {} {}", mode.as_str(), cells.join(", "));
        runs.push(fitb_run(*seed, &metrics));
    }
    let mode = single_mode(&modes)?;
    let mut extra: Vec<&Path> = a.tagger_ckpt.iter().map(|p| p.as_path()).collect();
    if let (Some(dump), Some(other)) = (&a.dump, &a.dump_against) {
        let (o, _) = load_checkpoint(other, Some(&l.vocab))?;
        let first = &l.models[0].1;
        let (baseline, entity) = match mode {
            FitbMode::Baseline => (first, &o),
            FitbMode::Entity => (&o, first),
        };
        let rows = dump_qualitative(baseline, entity, &l.vocab, &numerals, &l.data, a.dump_k, dump)?;
        say!(out, "wrote {} qualitative rows to {}", rows.len(), dump.display());
        extra.push(other);
    }
    let report = Report::Fitb(FitbReport::new(&a.common.model_name, mode.as_str(), a.entities.as_str(), runs));
    let config = json!({"ks": a.ks, "entities": a.entities.as_str(), "model_name": a.common.model_name, "dump_k": a.dump_k});
    finish_eval(&a.common, "eval-fitb", report, config, &extra)
}

fn annotate_cmd(a: AnnotateArgs, out: &mut dyn Write) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => read_json::<AnnotationConfig>(p)?,
        None => AnnotationConfig {
            checkpoint: String::new(),
            threshold: DEFAULT_THRESHOLD,
            audit_n: 0,
            seed: 0,
        },
    };
    if let Some(p) = &a.ckpt {
        cfg.checkpoint = p.display().to_string();
    }
    if let Some(t) = a.threshold {
        cfg.threshold = t;
    }
    if let Some(n) = a.audit_n {
        cfg.audit_n = n;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    if cfg.checkpoint.is_empty() {
        return Err(Error::Config("no checkpoint given (--ckpt or config)".into()));
    }
    cfg.validate()?;
    let vocab = Vocabulary::load(&a.vocab)?;
    let ckpt = PathBuf::from(&cfg.checkpoint);
    let (model, _) = load_checkpoint(&ckpt, Some(&vocab))?;
    model.tag_head()?;
    let raw = load_dataset(&a.data)?;
    let annotated = annotate_corpus(&model, &vocab, &raw, cfg.threshold)?;
    save_dataset(&annotated, &a.out)?;
    let mut outputs: Vec<PathBuf> = vec![a.out.clone()];
    if cfg.audit_n > 0 {
        let path = a
            .audit_out
            .clone()
            .unwrap_or_else(|| a.out.with_extension("audit.jsonl"));
        let audit = make_audit_subset(&annotated, cfg.audit_n, cfg.seed)?;
        save_dataset(&audit, &path)?;
        outputs.push(path);
    }
    let mut inputs: Vec<&Path> = vec![&ckpt, &a.data, &a.vocab];
    inputs.extend(a.config.iter().map(|p| p.as_path()));
    let outs: Vec<&Path> = outputs.iter().map(|p| p.as_path()).collect();
    let labeled: usize = annotated
        .sentences
        .iter()
        .map(|s| s.labels.iter().filter(|l| l.is_entity()).count())
        .sum();
    write_manifest(
        &manifest_path_for_file(&a.out),
        "annotate",
        to_value(&cfg),
        &inputs,
        &outs,
        json!({"sentences": annotated.len(), "labeled_numerals": labeled}),
    )?;
    say!(out, "annotated {} sentences ({labeled} numerals labeled) -> {}", annotated.len(), a.out.display());
    Ok(())
}

fn audit_cmd(a: AuditArgs, out: &mut dyn Write) -> Result<()> {
    let corpus = load_dataset(&a.data)?;
    let sample = make_audit_subset(&corpus, a.n, a.seed)?;
    save_dataset(&sample, &a.out)?;
    write_manifest(
        &manifest_path_for_file(&a.out),
        "audit-sample",
        json!({"n": a.n, "seed": a.seed}),
        &[&a.data],
        &[&a.out],
        Value::Null,
    )?;
    say!(out, "sampled {} of {} sentences -> {}", sample.len(), corpus.len(), a.out.display());
    Ok(())
}

fn load_qualitative(path: &Path) -> Result<Vec<QualitativeRow>> {
    let text = String::from_utf8(read_bytes(path)?).map_err(|e| Error::invalid(format!("{}: {e}", path.display())))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Schema {
                path: path.display().to_string(),
                line: i + 1,
                field: "row".into(),
                msg: e.to_string(),
            })
        })
        .collect()
}

fn report_cmd(a: ReportArgs, out: &mut dyn Write) -> Result<()> {
    let reports = a.reports.iter().map(Report::load).collect::<Result<Vec<_>>>()?;
    let merged = merge_reports(&reports)?;
    let mut rows = Vec::new();
    for q in &a.qualitative {
        rows.extend(load_qualitative(q)?);
    }
    let text = render_reports(&merged, &rows);
    say!(out, "{}", text.trim_end_matches('\n'));
    let mut outputs: Vec<&Path> = Vec::new();
    if let Some(p) = &a.merged {
        let values: Vec<Value> = merged
            .iter()
            .map(|r| serde_json::from_str(&r.to_json()).expect("report JSON"))
            .collect();
        let mut s = serde_json::to_string_pretty(&values).expect("reports serialize");
        s.push('\n');
        write_text(p, &s)?;
        outputs.push(p);
    }
    if let Some(p) = &a.text {
        write_text(p, &text)?;
        outputs.push(p);
    }
    if let Some(first) = outputs.first() {
        let mut inputs: Vec<&Path> = a.reports.iter().map(|p| p.as_path()).collect();
        inputs.extend(a.qualitative.iter().map(|p| p.as_path()));
        write_manifest(&manifest_path_for_file(first), "report", Value::Null, &inputs, &outputs, Value::Null)?;
    }
    Ok(())
}

fn grad_check_cmd(a: GradCheckArgs, out: &mut dyn Write) -> Result<()> {
    let encoder: Option<EncoderConfig> = a.config.as_deref().map(read_json).transpose()?;
    let opts = GradCheckOptions {
        eps: a.eps,
        min_coords: a.min_coords,
        seed: a.seed,
    };
    let mut failures = Vec::new();
    let mut results: Vec<(CheckResult, f64)> = Vec::new();
    if a.task.is_none() {
        for r in primitive_checks(a.seed)? {
            results.push((r, PRIMITIVE_TOLERANCE));
        }
    }
    let tasks: Vec<&str> = match &a.task {
        Some(t) => vec![t.as_str()],
        None => CHECK_TASKS.to_vec(),
    };
    for t in tasks {
        results.push((model_check(t, encoder.clone(), opts, a.examples)?, MODEL_TOLERANCE));
    }
    for (r, tol) in &results {
        let ok = r.max_rel_error < *tol;
        say!(out, 
            "{:<22} max_rel_error={:.3e} checked={} tolerance={:.0e} {}",
            r.name,
            r.max_rel_error,
            r.checked,
            tol,
            if ok { "PASS" } else { "FAIL" }
        );
        if !ok {
            failures.push(r.name.clone());
        }
    }
    if let Some(p) = &a.out {
        let v: Vec<Value> = results
            .iter()
            .map(|(r, tol)| json!({"result": to_value(r), "tolerance": tol}))
            .collect();
        let mut s = serde_json::to_string_pretty(&v).expect("results serialize");
        s.push('\n');
        write_text(p, &s)?;
        let cfg = json!({"eps": a.eps, "min_coords": a.min_coords, "seed": a.seed, "examples": a.examples, "task": a.task, "encoder": encoder.map(|e| to_value(&e))});
        let inputs: Vec<&Path> = a.config.iter().map(|p| p.as_path()).collect();
        write_manifest(&manifest_path_for_file(p), "grad-check", cfg, &inputs, &[p], Value::Null)?;
    }
    if failures.is_empty() {
        Ok(())
    } else {
        Err(Error::CheckFailed(format!("gradient check over tolerance: {}", failures.join(", "))))
    }
}
