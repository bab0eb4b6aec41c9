use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};

use promptclinic::adapters::{quantize_int8, LoraConfig};
use promptclinic::corpus::{clean_utterance, parse_chat};
use promptclinic::lm::{loss_and_grads, AttentionMode, GradMask, Objective};
use promptclinic::trainer::TrainPolicy;
use promptclinic_bench::{chat_transcript, ids, model, next_token_batch};

const VOCAB: usize = 300;

fn forward(c: &mut Criterion) {
    let lm = model(AttentionMode::Causal, VOCAB);
    let mut group = c.benchmark_group("forward");
    for len in [32, 128, 256] {
        let seq = ids(len, VOCAB);
        group.bench_with_input(BenchmarkId::from_parameter(len), &seq, |b, seq| {
            b.iter(|| lm.forward(black_box(seq)).unwrap())
        });
    }
    group.finish();
}

fn backward(c: &mut Criterion) {
    let base = model(AttentionMode::Causal, VOCAB);
    let batch = next_token_batch(4, 96, VOCAB);
    let mut lora = base.clone();
    TrainPolicy::Lora(LoraConfig {
        rank: 16,
        ..LoraConfig::default()
    })
    .prepare(&mut lora, &[], 0)
    .unwrap();
    let mut group = c.benchmark_group("loss_and_grads");
    group.sample_size(20);
    group.bench_function("full", |b| {
        b.iter(|| loss_and_grads(&base, black_box(&batch), Objective::NextTokenCe, GradMask::BASE).unwrap())
    });
    group.bench_function("lora_r16", |b| {
        b.iter(|| loss_and_grads(&lora, black_box(&batch), Objective::NextTokenCe, GradMask::ADAPTERS).unwrap())
    });
    group.finish();
}

fn quantize(c: &mut Criterion) {
    let lm = model(AttentionMode::Causal, VOCAB);
    let w = lm.params.blocks[0].up.weight.clone();
    c.bench_function("quantize_int8/256x64", |b| b.iter(|| quantize_int8(black_box(&w))));
}

fn parse(c: &mut Criterion) {
    let raw = chat_transcript(20);
    c.bench_function("parse_chat/20_lines", |b| b.iter(|| parse_chat(black_box(&raw)).unwrap()));
    let line = "&uh the boy [/] the boy (.) is <taking> [//] stealing \u{15}100_200\u{15} cookies +...";
    c.bench_function("clean_utterance", |b| b.iter(|| clean_utterance(black_box(line))));
}

criterion_group!(benches, forward, backward, quantize, parse);
criterion_main!(benches);
