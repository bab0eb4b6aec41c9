use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;
use walkdir::WalkDir;

use super::{parse_chat, ChatError, Corpus, CorpusError, Label, Transcript};

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Abort on the first malformed file instead of skipping it.
    pub strict: bool,
    /// Require exactly this many transcripts, split evenly between labels.
    /// Implies `strict`.
    pub expect_total: Option<usize>,
}

impl LoadOptions {
    /// Options for the ADReSS-2020 training set: 108 transcripts, 54 per label.
    pub fn adress_train() -> Self {
        Self {
            strict: true,
            expect_total: Some(108),
        }
    }
}

#[derive(Debug)]
pub struct LoadReport {
    pub corpus: Corpus,
    /// Files that failed to parse and were skipped.
    pub skipped: Vec<(PathBuf, ChatError)>,
}

/// Reads an `id,label` CSV manifest.
pub fn read_manifest(path: &Path) -> Result<BTreeMap<String, Label>, CorpusError> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| CorpusError::Manifest(format!("{}: {e}", path.display())))?;
    let headers = reader
        .headers()
        .map_err(|e| CorpusError::Manifest(e.to_string()))?
        .clone();
    if headers.len() < 2 || &headers[0] != "id" || &headers[1] != "label" {
        return Err(CorpusError::Manifest(format!(
            "expected header \"id,label\", found {:?}",
            headers.iter().collect::<Vec<_>>()
        )));
    }
    let mut manifest = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| CorpusError::Manifest(e.to_string()))?;
        let id = record[0].to_string();
        let label: Label = record[1].parse()?;
        if manifest.insert(id.clone(), label).is_some() {
            return Err(CorpusError::DuplicateId(id));
        }
    }
    Ok(manifest)
}

fn chat_files(root: &Path) -> Result<Vec<PathBuf>, CorpusError> {
    let mut files = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| CorpusError::Io {
            path: root.display().to_string(),
            source: e.into(),
        })?;
        if entry.file_type().is_file() && entry.path().extension().is_some_and(|ext| ext == "cha") {
            files.push(entry.into_path());
        }
    }
    Ok(files)
}

/// Loads every `.cha` file under `root` and labels it from the manifest.
///
/// Transcript ids are file stems. Files are parsed in parallel; the corpus
/// is assembled in id order.
pub fn load_corpus(
    root: &Path,
    manifest: &BTreeMap<String, Label>,
    options: &LoadOptions,
) -> Result<LoadReport, CorpusError> {
    let strict = options.strict || options.expect_total.is_some();
    let files = chat_files(root)?;

    let parsed: Vec<_> = files
        .par_iter()
        .map(|path| {
            let raw = std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
                path: path.display().to_string(),
                source,
            })?;
            Ok((path.clone(), parse_chat(&raw)))
        })
        .collect::<Result<_, CorpusError>>()?;

    let mut seen = BTreeSet::new();
    let mut transcripts = Vec::new();
    let mut skipped = Vec::new();
    for (path, result) in parsed {
        let id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        if !seen.insert(id.clone()) {
            return Err(CorpusError::DuplicateId(id));
        }
        let chat = match result {
            Ok(chat) => chat,
            Err(source) if strict => {
                return Err(CorpusError::MalformedChat {
                    path: path.display().to_string(),
                    source,
                })
            }
            Err(source) => {
                warn!("skipping {}: {source}", path.display());
                skipped.push((path, source));
                continue;
            }
        };
        let label = *manifest
            .get(&id)
            .ok_or_else(|| CorpusError::MissingLabel(id.clone()))?;
        transcripts.push(Transcript {
            id,
            utterances: chat.utterances,
            label,
        });
    }

    if let Some(missing) = manifest.keys().find(|id| !seen.contains(*id)) {
        return Err(CorpusError::MissingTranscript(missing.clone()));
    }

    let corpus = Corpus::new(transcripts)?;
    if let Some(total) = options.expect_total {
        corpus.expect_balanced(total)?;
    }
    Ok(LoadReport { corpus, skipped })
}
