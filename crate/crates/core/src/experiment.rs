//! Experiment configuration files, presets, corpus sources and run reports.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::corpus::synthetic::{generate, SyntheticSpec};
use crate::corpus::{load_corpus, read_manifest, ChatError, CorpusError, Document, LoadOptions, CLEANING_RULES_VERSION};
use crate::evaluation::{CvError, CvOptions, CvReport, EvalError, FoldPlan, FoldReport, MetricsReport};
use crate::pipeline::{run_cv, train_classifier, Classifier, FieldError, PipelineConfig, PipelineError};
use crate::trainer::{greedy_search, Hyperparams, SearchError, SearchGrid, TrainPolicy, BETA1, BETA2, EPSILON};

pub const PRESETS: &[(&str, &str)] = &[
    ("bert-style-verbalizer", include_str!("../presets/bert-style-verbalizer.toml")),
    ("llama2-style-lora-prompt1", include_str!("../presets/llama2-style-lora-prompt1.toml")),
    ("llama2-style-lora-prompt2", include_str!("../presets/llama2-style-lora-prompt2.toml")),
    ("conditional-learning", include_str!("../presets/conditional-learning.toml")),
    ("soft-prompt-tuning", include_str!("../presets/soft-prompt-tuning.toml")),
];

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CorpusSource {
    /// A directory of `.cha` files plus an `id,label` manifest.
    Chat {
        dir: PathBuf,
        manifest: PathBuf,
        #[serde(default)]
        strict: bool,
        #[serde(default)]
        expect_total: Option<usize>,
    },
    /// A normalized corpus file written by `parse`.
    Archive { path: PathBuf },
    Synthetic(SyntheticSpec),
}

impl Default for CorpusSource {
    fn default() -> Self {
        Self::Synthetic(SyntheticSpec::default())
    }
}

fn participant() -> Vec<String> {
    vec!["PAR".to_string()]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub name: String,
    /// Overrides both the fold seed and the training seed.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub corpus: CorpusSource,
    /// Speaker tiers that make up a document.
    #[serde(default = "participant")]
    pub speakers: Vec<String>,
    pub pipeline: PipelineConfig,
    #[serde(default)]
    pub cv: CvOptions,
    /// Greedy hyperparameter search before the reported run.
    #[serde(default)]
    pub search: Option<SearchGrid>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Syntax(String),
    #[error("{path}: {message}")]
    Field { path: String, message: String },
    #[error("unknown preset {0:?}")]
    UnknownPreset(String),
}

impl From<FieldError> for ConfigError {
    fn from(e: FieldError) -> Self {
        Self::Field {
            path: e.path,
            message: e.message,
        }
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (key, value) in overlay {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

fn preset_table(name: &str) -> Result<toml::Table, ConfigError> {
    let text = PRESETS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, t)| *t)
        .ok_or_else(|| ConfigError::UnknownPreset(name.to_string()))?;
    Ok(text.parse().expect("presets are valid TOML"))
}

pub fn preset_names() -> impl Iterator<Item = &'static str> {
    PRESETS.iter().map(|(n, _)| *n)
}

impl ExperimentConfig {
    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        Self::from_table(preset_table(name)?)
    }

    /// Parses TOML text. A top-level `preset = "name"` supplies defaults
    /// that the rest of the file overrides.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut table: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Syntax(e.to_string()))?;
        let table = match table.remove("preset") {
            Some(toml::Value::String(name)) => {
                let mut base = preset_table(&name)?;
                merge(&mut base, table);
                base
            }
            Some(_) => {
                return Err(ConfigError::Field {
                    path: "preset".into(),
                    message: "must be a preset name".into(),
                })
            }
            None => table,
        };
        Self::from_table(table)
    }

    /// Reads a config file; relative corpus paths resolve against its
    /// directory.
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut cfg = Self::parse(&text)?;
        if let Some(dir) = path.parent() {
            cfg.resolve_paths(dir);
        }
        Ok(cfg)
    }

    fn from_table(table: toml::Table) -> Result<Self, ConfigError> {
        let cfg: Self = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(|e| {
            ConfigError::Field {
                path: e.path().to_string(),
                message: e.inner().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        };
        match &mut self.corpus {
            CorpusSource::Chat { dir: d, manifest, .. } => {
                fix(d);
                fix(manifest);
            }
            CorpusSource::Archive { path } => fix(path),
            CorpusSource::Synthetic(_) => {}
        }
        if let Some(out) = &mut self.output_dir {
            fix(out);
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let field = |path: &str, message: &str| {
            Err(ConfigError::Field {
                path: path.into(),
                message: message.into(),
            })
        };
        self.pipeline.validate().map_err(|e| e.within("pipeline"))?;
        if self.cv.k < 2 {
            return field("cv.k", "need at least 2 folds");
        }
        if self.cv.vote_epochs.is_multiple_of(2) {
            return field("cv.vote_epochs", "must be odd");
        }
        if self.cv.threads == Some(0) {
            return field("cv.threads", "must be at least 1");
        }
        if self.speakers.is_empty() {
            return field("speakers", "must name at least one tier");
        }
        if let Some(grid) = &self.search {
            let axes = [
                ("search.learning_rate", grid.learning_rate.is_empty()),
                ("search.micro_batch_size", grid.micro_batch_size.is_empty()),
                ("search.gradient_accumulation_steps", grid.gradient_accumulation_steps.is_empty()),
                ("search.epochs", grid.epochs.is_empty()),
            ];
            if let Some((path, _)) = axes.iter().find(|(_, empty)| *empty) {
                return field(path, "empty search axis");
            }
        }
        if let CorpusSource::Synthetic(spec) = &self.corpus {
            if spec.n_docs < 2 || spec.min_sentences == 0 {
                return field("corpus", "synthetic corpus needs documents and sentences");
            }
        }
        Ok(())
    }

    /// Applies `--seed`, `--folds` and thread overrides, then revalidates.
    pub fn with_overrides(mut self, seed: Option<u64>, folds: Option<usize>, threads: Option<usize>) -> Result<Self, ConfigError> {
        if seed.is_some() {
            self.seed = seed;
        }
        if let Some(k) = folds {
            self.cv.k = k;
        }
        if threads.is_some() {
            self.cv.threads = threads;
        }
        self.validate()?;
        Ok(self)
    }

    /// The pipeline and CV options with the experiment seed applied.
    pub fn effective(&self) -> (PipelineConfig, CvOptions) {
        let mut pipeline = self.pipeline.clone();
        let mut cv = self.cv.clone();
        if let Some(seed) = self.seed {
            pipeline.hyperparams.seed = seed;
            cv.seed = seed;
        }
        (pipeline, cv)
    }

    /// The config without settings that cannot change results: thread
    /// count and output directory.
    pub fn canonical(&self) -> Self {
        let mut c = self.clone();
        c.cv.threads = None;
        c.output_dir = None;
        c
    }

    /// SHA-256 of the canonical JSON form (sorted keys).
    pub fn hash(&self) -> String {
        let value = serde_json::to_value(self.canonical()).expect("config serializes");
        hex::encode(Sha256::digest(value.to_string().as_bytes()))
    }

    pub fn speaker_set(&self) -> BTreeSet<String> {
        self.speakers.iter().cloned().collect()
    }
}

/// Normalized documents as written by `parse`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusFile {
    pub format_version: u32,
    pub cleaning_rules_version: u32,
    pub speakers: Vec<String>,
    pub documents: Vec<Document>,
}

impl CorpusFile {
    pub fn new(documents: Vec<Document>, speakers: &BTreeSet<String>) -> Self {
        Self {
            format_version: CORPUS_FORMAT_VERSION,
            cleaning_rules_version: CLEANING_RULES_VERSION,
            speakers: speakers.iter().cloned().collect(),
            documents,
        }
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).expect("documents serialize");
        std::fs::write(path, json + "\n")
    }

    pub fn load(path: &Path) -> Result<Self, DataError> {
        let text = std::fs::read_to_string(path).map_err(|e| DataError::Io(path.to_path_buf(), e))?;
        let file: Self = serde_json::from_str(&text).map_err(|e| DataError::Format(format!("{}: {e}", path.display())))?;
        if file.format_version != CORPUS_FORMAT_VERSION {
            return Err(DataError::Format(format!("unsupported corpus format {}", file.format_version)));
        }
        Ok(file)
    }
}

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error("{0}: {1}")]
    Io(PathBuf, std::io::Error),
    #[error("{0}")]
    Format(String),
}

/// Malformed CHAT files skipped during a non-strict load.
pub type Skipped = Vec<(PathBuf, ChatError)>;

/// Loads the configured corpus as documents.
pub fn load_documents(cfg: &ExperimentConfig) -> Result<Vec<Document>, DataError> {
    load_documents_reporting(cfg).map(|(docs, _)| docs)
}

/// Like [`load_documents`], also returning CHAT files skipped as malformed
/// in non-strict mode.
pub fn load_documents_reporting(cfg: &ExperimentConfig) -> Result<(Vec<Document>, Skipped), DataError> {
    match &cfg.corpus {
        CorpusSource::Chat {
            dir,
            manifest,
            strict,
            expect_total,
        } => {
            let manifest = read_manifest(manifest)?;
            let options = LoadOptions {
                strict: *strict,
                expect_total: *expect_total,
            };
            let report = load_corpus(dir, &manifest, &options)?;
            Ok((report.corpus.documents(&cfg.speaker_set()), report.skipped))
        }
        CorpusSource::Archive { path } => Ok((CorpusFile::load(path)?.documents, Vec::new())),
        CorpusSource::Synthetic(spec) => Ok((generate(spec), Vec::new())),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConstants {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

/// Everything needed to reproduce a report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub tool_version: String,
    pub experiment: String,
    pub config_hash: String,
    pub seed: u64,
    pub k: usize,
    pub n_documents: usize,
    pub strategy: crate::classify::Strategy,
    pub policy: String,
    pub cleaning_rules_version: u32,
    pub positive_class: String,
    pub accuracy: String,
    pub std_dev: String,
    pub optimizer: OptimizerConstants,
    pub config: ExperimentConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchPoint {
    pub hyperparams: Hyperparams,
    pub mean_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metadata: RunMetadata,
    pub hyperparams: Hyperparams,
    pub search: Option<Vec<SearchPoint>>,
    pub metrics: MetricsReport,
    pub plan: FoldPlan,
    pub folds: Vec<FoldReport>,
}

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Eval(EvalError),
    #[error("fold {fold} failed: {source}")]
    Fold { fold: usize, source: PipelineError },
    #[error(transparent)]
    Pipeline(#[from] PipelineError),
}

impl RunError {
    pub fn is_divergence(&self) -> bool {
        match self {
            Self::Fold { source, .. } | Self::Pipeline(source) => source.is_divergence(),
            Self::Eval(_) => false,
        }
    }
}

impl From<CvError<PipelineError>> for RunError {
    fn from(e: CvError<PipelineError>) -> Self {
        match e {
            CvError::Eval(e) => Self::Eval(e),
            CvError::Fold { fold, source } => Self::Fold { fold, source },
        }
    }
}

fn policy_name(p: &TrainPolicy) -> &'static str {
    match p {
        TrainPolicy::FullFinetune => "full_finetune",
        TrainPolicy::Lora(_) => "lora",
        TrainPolicy::SoftPromptOnly(_) => "soft_prompt_only",
    }
}

/// Cross-validates the experiment, running the greedy search first when
/// one is configured.
pub fn run_experiment(cfg: &ExperimentConfig, docs: &[Document]) -> Result<RunReport, RunError> {
    let (mut pipeline, cv) = cfg.effective();
    let mut search_log = None;
    if let Some(grid) = &cfg.search {
        let result = greedy_search(&pipeline.hyperparams, grid, |hp| {
            let mut candidate = pipeline.clone();
            candidate.hyperparams = hp.clone();
            log::info!("search: evaluating {hp:?}");
            run_cv(docs, &candidate, &cv).map(|r| r.metrics.accuracy)
        })
        .map_err(|e| match e {
            SearchError::EmptyGrid => RunError::Pipeline(PipelineError::Config(FieldError::new("search", "empty search axis"))),
            SearchError::Objective(e) => e.into(),
        })?;
        search_log = Some(
            result
                .evaluations
                .into_iter()
                .map(|(hyperparams, mean_accuracy)| SearchPoint {
                    hyperparams,
                    mean_accuracy,
                })
                .collect(),
        );
        pipeline.hyperparams = result.best;
    }
    let CvReport { plan, metrics, folds } = run_cv(docs, &pipeline, &cv)?;
    let metadata = RunMetadata {
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        experiment: cfg.name.clone(),
        config_hash: cfg.hash(),
        seed: cv.seed,
        k: cv.k,
        n_documents: docs.len(),
        strategy: pipeline.strategy,
        policy: policy_name(&pipeline.policy).to_string(),
        cleaning_rules_version: CLEANING_RULES_VERSION,
        positive_class: "AD".into(),
        accuracy: "mean of per-fold accuracies; precision, recall and F1 from pooled counts".into(),
        std_dev: "population (divisor k) across folds".into(),
        optimizer: OptimizerConstants {
            beta1: BETA1,
            beta2: BETA2,
            epsilon: EPSILON,
        },
        config: cfg.canonical(),
    };
    Ok(RunReport {
        metadata,
        hyperparams: pipeline.hyperparams,
        search: search_log,
        metrics,
        plan,
        folds,
    })
}

/// Trains one classifier on every document with the reported
/// hyperparameters.
pub fn train_final(cfg: &ExperimentConfig, report: &RunReport, docs: &[Document]) -> Result<Classifier, PipelineError> {
    let (mut pipeline, _) = cfg.effective();
    pipeline.hyperparams = report.hyperparams.clone();
    Ok(train_classifier(&pipeline, docs, &[])?.0)
}

pub const REPORT_FILE: &str = "report.json";
pub const FOLD_CSV_FILE: &str = "fold_accuracy.csv";

/// Writes `report.json` and `fold_accuracy.csv` into `dir`.
pub fn write_reports(dir: &Path, report: &RunReport) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    std::fs::write(dir.join(REPORT_FILE), json + "\n")?;
    let mut writer = csv::Writer::from_path(dir.join(FOLD_CSV_FILE))?;
    writer.write_record(["fold", "n", "accuracy", "f1"])?;
    for (f, f1) in report.folds.iter().zip(&report.metrics.fold_f1) {
        writer.write_record([f.fold.to_string(), f.ids.len().to_string(), f.accuracy.to_string(), f1.to_string()])?;
    }
    writer.flush()
}
