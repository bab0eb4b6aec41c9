//! Fixtures shared by the benchmarks.

use promptclinic::corpus::synthetic::{generate, SyntheticSpec};
use promptclinic::lm::{AttentionMode, Example, LanguageModel, ModelSpec, Target};

/// A model at the default preset width with `vocab` tokens.
pub fn model(mode: AttentionMode, vocab: usize) -> LanguageModel {
    let spec = ModelSpec {
        mode,
        ..ModelSpec::default()
    };
    LanguageModel::init(spec.with_vocab(vocab), 0).expect("default spec is valid")
}

/// Deterministic pseudo-random token ids below `vocab`, skipping the
/// reserved ids.
pub fn ids(len: usize, vocab: usize) -> Vec<usize> {
    (0..len).map(|i| 5 + (i * 7919) % (vocab - 5)).collect()
}

pub fn next_token_batch(n: usize, len: usize, vocab: usize) -> Vec<Example> {
    (0..n)
        .map(|i| Example {
            ids: ids(len + i, vocab),
            target: Target::NextToken { start: 1 },
        })
        .collect()
}

/// One CHAT transcript of roughly `sentences` main-tier lines with codes
/// and dependent tiers.
pub fn chat_transcript(sentences: usize) -> String {
    let docs = generate(&SyntheticSpec {
        n_docs: 2,
        min_sentences: sentences,
        max_sentences: sentences,
        ..SyntheticSpec::default()
    });
    let mut out = String::from("@UTF8\n@Begin\n@Languages:\teng\n@Participants:\tPAR Participant\n");
    for (i, sentence) in docs[0].text.split(" . ").enumerate() {
        out.push_str(&format!("*PAR:\t&uh {sentence} [/] (.) <the> [//] +...\n"));
        out.push_str(&format!("%mor:\tn|word{i} .\n"));
    }
    out.push_str("@End\n");
    out
}
