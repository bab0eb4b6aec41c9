use std::collections::BTreeMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use log::{info, warn};

use promptclinic::corpus::synthetic::{generate, write_chat_corpus, SyntheticSpec};
use promptclinic::corpus::{load_corpus, read_manifest, Corpus, CorpusError, LoadOptions};
use promptclinic::experiment::{
    load_documents_reporting, preset_names, run_experiment, train_final, write_reports, ConfigError, CorpusFile,
    CorpusSource, DataError, ExperimentConfig, RunError, PRESETS,
};
use promptclinic::pipeline::{Classifier, PipelineError};

const MODEL_FILE: &str = "model.ckpt";

#[derive(Parser)]
#[command(name = "promptclinic", version, about = "Prompt-based transcript classification experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse and clean a directory of CHAT transcripts into a corpus file.
    Parse(ParseArgs),
    /// Cross-validate an experiment and write its reports.
    Run(RunArgs),
    /// Classify one document with a saved model.
    Predict(PredictArgs),
    /// Write a synthetic CHAT corpus with a planted filler-rate signal.
    Synth(SynthArgs),
    /// List the shipped presets, or print one.
    Presets { name: Option<String> },
}

#[derive(Args)]
struct ParseArgs {
    /// Directory searched recursively for `.cha` files.
    input: PathBuf,
    /// `id,label` CSV; defaults to `labels.csv` inside the input directory.
    #[arg(long)]
    manifest: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Fail on the first malformed file.
    #[arg(long)]
    strict: bool,
    /// Require this many transcripts, half per label.
    #[arg(long)]
    expect_total: Option<usize>,
    /// Speaker tiers kept in each document.
    #[arg(long, value_delimiter = ',', default_value = "PAR")]
    speakers: Vec<String>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    config: Option<PathBuf>,
    /// Run a shipped preset instead of a config file.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    /// Number of folds, overriding the config.
    #[arg(long)]
    folds: Option<usize>,
    /// Fail on malformed CHAT files instead of skipping them.
    #[arg(long)]
    strict: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Skip training the final model on all documents.
    #[arg(long)]
    no_model: bool,
    /// Caps the number of folds trained concurrently.
    #[arg(long, env = "PROMPTCLINIC_THREADS")]
    threads: Option<usize>,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, conflicts_with = "file")]
    text: Option<String>,
    /// Read the document from a file, or stdin when `-`.
    #[arg(long)]
    file: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    n_docs: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

struct Failure {
    code: u8,
    error: anyhow::Error,
}

fn fail(code: u8) -> impl FnOnce(anyhow::Error) -> Failure {
    move |error| Failure { code, error }
}

const CONFIG: u8 = 1;
const DATA: u8 = 2;
const DIVERGED: u8 = 3;

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        fail(CONFIG)(anyhow!("invalid config: {e}"))
    }
}

impl From<DataError> for Failure {
    fn from(e: DataError) -> Self {
        fail(DATA)(e.into())
    }
}

impl From<CorpusError> for Failure {
    fn from(e: CorpusError) -> Self {
        fail(DATA)(e.into())
    }
}

impl From<RunError> for Failure {
    fn from(e: RunError) -> Self {
        let code = match &e {
            e if e.is_divergence() => DIVERGED,
            RunError::Pipeline(PipelineError::Config(_) | PipelineError::Classify(_))
            | RunError::Fold {
                source: PipelineError::Config(_) | PipelineError::Classify(_),
                ..
            } => CONFIG,
            _ => DATA,
        };
        fail(code)(e.into())
    }
}

impl From<PipelineError> for Failure {
    fn from(e: PipelineError) -> Self {
        RunError::Pipeline(e).into()
    }
}

type Outcome = Result<(), Failure>;

fn count_line(corpus: &Corpus) -> String {
    use promptclinic::Label;
    format!(
        "{} transcripts (AD {} / HC {})",
        corpus.len(),
        corpus.count(Label::AD),
        corpus.count(Label::HC)
    )
}

fn parse(args: ParseArgs) -> Outcome {
    let manifest = match &args.manifest {
        Some(path) => read_manifest(path)?,
        None => {
            let default = args.input.join("labels.csv");
            if default.exists() {
                read_manifest(&default)?
            } else {
                BTreeMap::new()
            }
        }
    };
    let options = LoadOptions {
        strict: args.strict,
        expect_total: args.expect_total,
    };
    let report = load_corpus(&args.input, &manifest, &options)?;
    for (path, err) in &report.skipped {
        warn!("skipped {}: {err}", path.display());
    }
    println!("{}", count_line(&report.corpus));
    if !report.skipped.is_empty() {
        println!("{} malformed files skipped", report.skipped.len());
    }
    if let Some(out) = args.out {
        let speakers = args.speakers.into_iter().collect();
        let file = CorpusFile::new(report.corpus.documents(&speakers), &speakers);
        file.save(&out)
            .with_context(|| format!("writing {}", out.display()))
            .map_err(fail(DATA))?;
        println!("wrote {}", out.display());
    }
    Ok(())
}

fn run(args: RunArgs) -> Outcome {
    let cfg = match (&args.config, &args.preset) {
        (Some(path), _) => ExperimentConfig::load(path)?,
        (None, Some(name)) => ExperimentConfig::preset(name)?,
        (None, None) => unreachable!("clap requires one of --config and --preset"),
    };
    let mut cfg = cfg.with_overrides(args.seed, args.folds, args.threads)?;
    if args.strict {
        if let CorpusSource::Chat { strict, .. } = &mut cfg.corpus {
            *strict = true;
        }
    }
    let out = args
        .out
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("runs").join(&cfg.name));

    let (docs, skipped) = load_documents_reporting(&cfg)?;
    for (path, err) in &skipped {
        warn!("skipped {}: {err}", path.display());
    }
    info!("{} documents, config {}", docs.len(), cfg.hash());
    let report = run_experiment(&cfg, &docs)?;
    write_reports(&out, &report)
        .with_context(|| format!("writing reports to {}", out.display()))
        .map_err(fail(DATA))?;

    let m = &report.metrics;
    for (fold, acc) in m.fold_accuracies.iter().enumerate() {
        println!("fold {fold}: accuracy {acc:.4}");
    }
    println!(
        "accuracy {:.4} (sd {:.4})  precision {:.4}  recall {:.4}  f1 {:.4} (sd {:.4})",
        m.accuracy, m.acc_std_dev, m.precision, m.recall, m.f1, m.f1_std_dev
    );
    println!("reports in {}", out.display());

    if !args.no_model {
        let classifier = train_final(&cfg, &report, &docs)?;
        let meta = serde_json::json!({
            "experiment": cfg.name,
            "config_hash": report.metadata.config_hash,
            "seed": report.hyperparams.seed,
        });
        let path = out.join(MODEL_FILE);
        classifier.save(&path, &cfg.pipeline.template, meta)?;
        println!("model saved to {}", path.display());
    }
    Ok(())
}

fn read_document(args: &PredictArgs) -> Result<String, Failure> {
    match (&args.text, &args.file) {
        (Some(text), _) => Ok(text.clone()),
        (None, Some(path)) if path == Path::new("-") => {
            let mut text = String::new();
            std::io::stdin()
                .read_to_string(&mut text)
                .context("reading stdin")
                .map_err(fail(DATA))?;
            Ok(text)
        }
        (None, Some(path)) => std::fs::read_to_string(path)
            .with_context(|| format!("reading {}", path.display()))
            .map_err(fail(DATA)),
        (None, None) => Err(fail(CONFIG)(anyhow!("give --text or --file"))),
    }
}

fn predict(args: PredictArgs) -> Outcome {
    let text = read_document(&args)?;
    if !args.checkpoint.exists() {
        return Err(fail(DATA)(anyhow!("checkpoint {} not found", args.checkpoint.display())));
    }
    let (classifier, _) = Classifier::load(&args.checkpoint, None)
        .with_context(|| format!("loading {}", args.checkpoint.display()))
        .map_err(fail(DATA))?;
    let p = classifier.predict_text(&text).map_err(PipelineError::from)?;
    println!("label\t{}", p.label);
    println!("score_ad\t{}", p.score_ad);
    println!("score_hc\t{}", p.score_hc);
    println!("tie\t{}", p.tie);
    Ok(())
}

fn synth(args: SynthArgs) -> Outcome {
    let defaults = SyntheticSpec::default();
    let spec = SyntheticSpec {
        n_docs: args.n_docs.unwrap_or(defaults.n_docs),
        seed: args.seed.unwrap_or(defaults.seed),
        ..defaults
    };
    if spec.n_docs < 2 {
        return Err(fail(CONFIG)(anyhow!("--n-docs must be at least 2")));
    }
    write_chat_corpus(&args.out, &generate(&spec))
        .with_context(|| format!("writing {}", args.out.display()))
        .map_err(fail(DATA))?;
    println!("wrote {} transcripts and labels.csv to {}", spec.n_docs, args.out.display());
    Ok(())
}

fn presets(name: Option<String>) -> Outcome {
    match name {
        None => preset_names().for_each(|n| println!("{n}")),
        Some(name) => {
            let (_, text) = PRESETS
                .iter()
                .find(|(n, _)| *n == name)
                .ok_or(ConfigError::UnknownPreset(name))?;
            print!("{text}");
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Parse(args) => parse(args),
        Command::Run(args) => run(args),
        Command::Predict(args) => predict(args),
        Command::Synth(args) => synth(args),
        Command::Presets { name } => presets(name),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure { code, error }) => {
            eprintln!("error: {error:#}");
            ExitCode::from(code)
        }
    }
}
