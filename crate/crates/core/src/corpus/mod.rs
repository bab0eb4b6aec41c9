//! Transcript corpus: CHAT ingestion, cleaning and labeled corpus assembly.

mod chat;
mod load;
pub mod synthetic;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

pub use chat::{clean_utterance, parse_chat, ParsedChat, Utterance, CLEANING_RULES_VERSION};
pub use load::{load_corpus, read_manifest, LoadOptions, LoadReport};

/// Diagnosis label. AD is the positive class everywhere in this crate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Label {
    AD,
    HC,
}

impl Label {
    /// Fixed label order; ties resolve to the first entry.
    pub const ALL: [Label; 2] = [Label::AD, Label::HC];

    pub fn index(self) -> usize {
        match self {
            Label::AD => 0,
            Label::HC => 1,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::AD => "AD",
            Label::HC => "HC",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "AD" => Ok(Label::AD),
            "HC" => Ok(Label::HC),
            other => Err(CorpusError::InvalidLabel(other.to_string())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ChatError {
    #[error("missing @Begin header")]
    MissingBegin,
    #[error("missing @End header")]
    MissingEnd,
    #[error("line {line}: @Begin must be the first header")]
    MisplacedBegin { line: usize },
    #[error("line {line}: tier line without ':' separator")]
    MissingSeparator { line: usize },
    #[error("line {line}: continuation line before any tier")]
    OrphanContinuation { line: usize },
    #[error("line {line}: content after @End")]
    ContentAfterEnd { line: usize },
    #[error("line {line}: unrecognized line")]
    UnrecognizedLine { line: usize },
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("malformed CHAT file {path}: {source}")]
    MalformedChat { path: String, source: ChatError },
    #[error("no label in manifest for transcript {0}")]
    MissingLabel(String),
    #[error("manifest lists {0} but no transcript file was found")]
    MissingTranscript(String),
    #[error("duplicate transcript id {0}")]
    DuplicateId(String),
    #[error("invalid label {0:?} (expected AD or HC)")]
    InvalidLabel(String),
    #[error("manifest error: {0}")]
    Manifest(String),
    #[error("expected {expected_total} transcripts ({expected_per_label} per label), found {found:?}")]
    CountMismatch {
        expected_total: usize,
        expected_per_label: usize,
        found: BTreeMap<Label, usize>,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// A labeled transcript.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transcript {
    pub id: String,
    pub utterances: Vec<Utterance>,
    pub label: Label,
}

/// The default speaker set: the participant tier only.
pub fn participant_only() -> BTreeSet<String> {
    BTreeSet::from(["PAR".to_string()])
}

impl Transcript {
    /// Joins the cleaned text of utterances spoken by `speakers`, in file
    /// order, then applies NFC normalization and lowercasing.
    pub fn to_document(&self, speakers: &BTreeSet<String>) -> String {
        let joined = self
            .utterances
            .iter()
            .filter(|u| speakers.contains(&u.speaker))
            .map(|u| u.clean_text.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        normalize_text(&joined)
    }
}

/// NFC normalization followed by lowercasing, as applied to every document.
pub fn normalize_text(text: &str) -> String {
    text.nfc().collect::<String>().to_lowercase()
}

/// A labeled collection of transcripts, ordered by id.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Corpus {
    transcripts: Vec<Transcript>,
    label_counts: BTreeMap<Label, usize>,
}

impl Corpus {
    /// Builds a corpus, sorting by id and rejecting duplicate ids.
    pub fn new(mut transcripts: Vec<Transcript>) -> Result<Self, CorpusError> {
        transcripts.sort_by(|a, b| a.id.cmp(&b.id));
        for pair in transcripts.windows(2) {
            if pair[0].id == pair[1].id {
                return Err(CorpusError::DuplicateId(pair[0].id.clone()));
            }
        }
        let mut label_counts: BTreeMap<Label, usize> = Label::ALL.iter().map(|l| (*l, 0)).collect();
        for t in &transcripts {
            *label_counts.entry(t.label).or_default() += 1;
        }
        Ok(Self {
            transcripts,
            label_counts,
        })
    }

    pub fn transcripts(&self) -> &[Transcript] {
        &self.transcripts
    }

    pub fn label_counts(&self) -> &BTreeMap<Label, usize> {
        &self.label_counts
    }

    pub fn len(&self) -> usize {
        self.transcripts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transcripts.is_empty()
    }

    pub fn count(&self, label: Label) -> usize {
        self.label_counts.get(&label).copied().unwrap_or(0)
    }

    /// Hard check used for the ADReSS-2020 training set (108 = 54 + 54).
    pub fn expect_balanced(&self, total: usize) -> Result<(), CorpusError> {
        let per_label = total / 2;
        if self.len() != total || Label::ALL.iter().any(|l| self.count(*l) != per_label) {
            return Err(CorpusError::CountMismatch {
                expected_total: total,
                expected_per_label: per_label,
                found: self.label_counts.clone(),
            });
        }
        Ok(())
    }

    /// Model-ready documents for the given speaker set.
    pub fn documents(&self, speakers: &BTreeSet<String>) -> Vec<Document> {
        self.transcripts
            .iter()
            .map(|t| Document {
                id: t.id.clone(),
                text: t.to_document(speakers),
                label: t.label,
            })
            .collect()
    }

    /// One-line summary in the form printed by the `parse` command.
    pub fn summary(&self) -> String {
        format!(
            "{} transcripts (AD {} / HC {})",
            self.len(),
            self.count(Label::AD),
            self.count(Label::HC)
        )
    }
}

/// Flat labeled text, the unit consumed by the classification pipeline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub text: String,
    pub label: Label,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn transcript() -> Transcript {
        let parsed = parse_chat("@Begin\n*PAR:\tthe boy fell .\n*INV:\tgo on .\n@End").unwrap();
        Transcript {
            id: "s001".into(),
            utterances: parsed.utterances,
            label: Label::AD,
        }
    }

    #[test]
    fn document_speaker_filter() {
        let t = transcript();
        assert_eq!(t.to_document(&participant_only()), "the boy fell .");
        let both = BTreeSet::from(["PAR".to_string(), "INV".to_string()]);
        assert_eq!(t.to_document(&both), "the boy fell . go on .");
        let none = BTreeSet::from(["XYZ".to_string()]);
        assert_eq!(t.to_document(&none), "");
    }

    #[test]
    fn document_lowercases_and_normalizes() {
        let parsed = parse_chat("@Begin\n*PAR:\tThe Cafe\u{301} .\n@End").unwrap();
        let t = Transcript {
            id: "x".into(),
            utterances: parsed.utterances,
            label: Label::HC,
        };
        assert_eq!(t.to_document(&participant_only()), "the caf\u{e9} .");
        assert!(t.utterances[0].raw_text.starts_with("The"));
    }

    #[test]
    fn corpus_rejects_duplicates() {
        let t = transcript();
        let err = Corpus::new(vec![t.clone(), t]).unwrap_err();
        assert!(matches!(err, CorpusError::DuplicateId(id) if id == "s001"));
    }

    #[test]
    fn label_round_trip() {
        for l in Label::ALL {
            assert_eq!(l.as_str().parse::<Label>().unwrap(), l);
        }
        assert!("MCI".parse::<Label>().is_err());
    }
}
