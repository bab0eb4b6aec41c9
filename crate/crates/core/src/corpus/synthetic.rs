//! Synthetic picture-description corpus with a planted disfluency signal.
//!
//! Both classes draw sentences from the same bank; they differ only in how
//! often a filler token ("uh", "um") is inserted before a word.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Document, Label};

const SENTENCES: &[&str] = &[
    "the boy is on the stool",
    "the stool is tipping over",
    "he is taking cookies from the jar",
    "the girl is reaching for a cookie",
    "the mother is washing the dishes",
    "the water is running over the sink",
    "the sink is overflowing",
    "she is drying a plate",
    "the window is open",
    "there are cups on the counter",
    "the curtains are by the window",
    "the boy is going to fall",
    "the girl is laughing",
    "the mother does not see them",
];

const FILLERS: &[&str] = &["uh", "um"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    /// Total documents, split evenly between labels.
    pub n_docs: usize,
    pub seed: u64,
    /// Probability of a filler before each word, AD class.
    pub ad_filler_rate: f64,
    /// Probability of a filler before each word, HC class.
    pub hc_filler_rate: f64,
    pub min_sentences: usize,
    pub max_sentences: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_docs: 200,
            seed: 7,
            ad_filler_rate: 0.4,
            hc_filler_rate: 0.03,
            min_sentences: 2,
            max_sentences: 4,
        }
    }
}

/// Generates the corpus; ids are `synth000`, `synth001`, ... with the
/// first half labeled AD.
pub fn generate(spec: &SyntheticSpec) -> Vec<Document> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    (0..spec.n_docs)
        .map(|i| {
            let label = if i < spec.n_docs / 2 { Label::AD } else { Label::HC };
            let rate = match label {
                Label::AD => spec.ad_filler_rate,
                Label::HC => spec.hc_filler_rate,
            };
            let n_sentences = rng.gen_range(spec.min_sentences..=spec.max_sentences.max(spec.min_sentences));
            let mut words: Vec<&str> = Vec::new();
            for _ in 0..n_sentences {
                let sentence = SENTENCES.choose(&mut rng).expect("non-empty bank");
                for word in sentence.split(' ') {
                    if rng.gen_bool(rate) {
                        words.push(FILLERS.choose(&mut rng).expect("non-empty fillers"));
                    }
                    words.push(word);
                }
                words.push(".");
            }
            Document {
                id: format!("synth{i:03}"),
                text: words.join(" "),
                label,
            }
        })
        .collect()
}

/// Writes documents as minimal CHAT files plus an `id,label` manifest.
pub fn write_chat_corpus(dir: &Path, docs: &[Document]) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut manifest = String::from("id,label\n");
    for doc in docs {
        let mut body = String::from("@UTF8\n@Begin\n@Languages:\teng\n@Participants:\tPAR Participant, INV Investigator\n");
        body.push_str("*INV:\ttell me everything you see going on in that picture .\n");
        for sentence in doc.text.split(" . ").map(|s| s.trim_end_matches(" .")) {
            if !sentence.is_empty() {
                let _ = writeln!(body, "*PAR:\t{sentence} .");
            }
        }
        body.push_str("@End\n");
        std::fs::write(dir.join(format!("{}.cha", doc.id)), body)?;
        let _ = writeln!(manifest, "{},{}", doc.id, doc.label);
    }
    std::fs::write(dir.join("labels.csv"), manifest)
}
