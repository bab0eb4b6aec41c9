#![allow(dead_code)]

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use promptclinic::lm::{AttentionMode, Example, LanguageModel, ModelSpec, Target};

pub fn micro_spec(mode: AttentionMode) -> ModelSpec {
    ModelSpec {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        d_ff: 16,
        max_len: 16,
        mode,
        tied_output: true,
        init_std: 0.3,
    }
}

pub fn micro_model(mode: AttentionMode, vocab: usize, seed: u64) -> LanguageModel {
    LanguageModel::init(micro_spec(mode).with_vocab(vocab), seed).unwrap()
}

pub fn normal(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    let dist = Normal::new(0.0, std).unwrap();
    Array2::from_shape_simple_fn((rows, cols), || dist.sample(rng))
}

pub fn random_ids(len: usize, vocab: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..len).map(|_| rng.gen_range(0..vocab)).collect()
}

/// A few next-token examples of different lengths.
pub fn causal_batch(vocab: usize, rng: &mut ChaCha8Rng) -> Vec<Example> {
    [5, 7, 4]
        .iter()
        .map(|&len| Example {
            ids: random_ids(len, vocab, rng),
            target: Target::NextToken { start: 1 },
        })
        .collect()
}

/// Mask-label examples whose mask sits at varying positions.
pub fn masked_batch(vocab: usize, rng: &mut ChaCha8Rng) -> Vec<Example> {
    [(5, 2), (6, 5), (4, 0)]
        .iter()
        .map(|&(len, position)| {
            let mut ids = random_ids(len, vocab, rng);
            ids[position] = promptclinic::lm::MASK;
            Example {
                ids,
                target: Target::MaskLabel {
                    position,
                    candidates: vec![vocab - 2, vocab - 1],
                    gold: position % 2,
                },
            }
        })
        .collect()
}
