//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line per
//! criterion and exits non-zero if any failed.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestRunner};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{causal_batch, masked_batch, micro_model, normal, random_ids};
use promptclinic::adapters::{quantize_int8, LoraConfig};
use promptclinic::classify::sequence_log_prob;
use promptclinic::corpus::{clean_utterance, parse_chat, Label};
use promptclinic::evaluation::{compute_metrics, majority_vote, stratified_folds};
use promptclinic::experiment::{load_documents, run_experiment, write_reports, ExperimentConfig, FOLD_CSV_FILE, REPORT_FILE};
use promptclinic::lm::{batch_loss, loss_and_grads, AttentionMode, Example, GradMask, LanguageModel, Objective};
use promptclinic::pipeline::{prepare_classifier, train_classifier, training_examples};
use promptclinic::prompting::{SoftPrompt, SoftPromptConfig};
use promptclinic::trainer::TrainPolicy;

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------- 1

fn criterion_1() -> Check {
    let (tp, fp, fn_, tn) = (43, 9, 11, 45);
    let mut pairs = Vec::new();
    pairs.extend(std::iter::repeat_n((Label::AD, Label::AD), tp));
    pairs.extend(std::iter::repeat_n((Label::AD, Label::HC), fp));
    pairs.extend(std::iter::repeat_n((Label::HC, Label::AD), fn_));
    pairs.extend(std::iter::repeat_n((Label::HC, Label::HC), tn));
    // Spread over ten folds; pooled counts must not depend on the split.
    let folds: Vec<Vec<_>> = (0..10).map(|f| pairs.iter().skip(f).step_by(10).copied().collect()).collect();
    let m = compute_metrics(&folds).map_err(|e| e.to_string())?;
    let expected = [("precision", m.precision, 0.8269), ("recall", m.recall, 0.7963), ("f1", m.f1, 0.8113)];
    for (name, got, want) in expected {
        ensure((got - want).abs() <= 0.00005, || format!("{name} {got:.6} vs {want}"))?;
    }
    Ok(format!("P={:.4} R={:.4} F1={:.4}", m.precision, m.recall, m.f1))
}

// ---------------------------------------------------------------- 2

fn max_abs_diff(a: &LanguageModel, b: &LanguageModel, ids: &[usize]) -> f64 {
    let la = a.forward(ids).unwrap().values;
    let lb = b.forward(ids).unwrap().values;
    (&la - &lb).iter().fold(0.0, |m, d| m.max(d.abs()))
}

fn criterion_2() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let vocab = 11;
    let base = micro_model(AttentionMode::Causal, vocab, 2);
    let lora = LoraConfig {
        rank: 3,
        targets: ["attn.q", "attn.k", "attn.v", "attn.o", "ffn.up", "ffn.down"].map(String::from).to_vec(),
        init_std: 0.2,
        ..Default::default()
    };
    let mut fresh = base.clone();
    fresh.adapters = lora.attach(&fresh.config, &mut rng).unwrap();

    let mut trained = fresh.clone();
    for (_, _, m) in trained.adapters.tensors_mut() {
        *m = normal(m.nrows(), m.ncols(), 0.2, &mut rng);
    }
    let mut merged = trained.clone();
    merged.merge_adapters().unwrap();
    ensure(merged.adapters.is_empty(), || "merge left adapters attached".into())?;

    let (mut identity, mut merge, mut moved) = (0.0_f64, 0.0_f64, 0.0_f64);
    for _ in 0..100 {
        let len = rng.gen_range(1..=base.config.max_len);
        let ids = random_ids(len, vocab, &mut rng);
        identity = identity.max(max_abs_diff(&base, &fresh, &ids));
        merge = merge.max(max_abs_diff(&trained, &merged, &ids));
        moved = moved.max(max_abs_diff(&base, &trained, &ids));
    }
    ensure(identity <= 1e-6, || format!("fresh adapters moved a logit by {identity:e}"))?;
    ensure(merge <= 1e-5, || format!("merged and unmerged differ by {merge:e}"))?;
    ensure(moved > 1e-3, || "trained adapters had no effect, merge check is vacuous".into())?;
    Ok(format!("identity {identity:.1e}, merge {merge:.1e}"))
}

// ---------------------------------------------------------------- 3

const FD_EPS: f64 = 1e-5;
const FD_TOL: f64 = 1e-4;
/// Denominator floor for the relative error; below it both gradients are
/// at the level of central-difference round-off.
const FD_FLOOR: f64 = 1e-6;

/// Compares analytic gradients of every entry in the `mask` groups against
/// central differences. Returns (entries checked, worst relative error).
fn finite_difference(lm: &LanguageModel, batch: &[Example], objective: Objective, mask: GradMask) -> Result<(usize, f64), String> {
    let (_, grads) = loss_and_grads(lm, batch, objective, mask).map_err(|e| e.to_string())?;
    let analytic: Vec<_> = grads.tensors(mask).into_iter().map(|(n, m)| (n, m.clone())).collect();
    let mut probe = lm.clone();
    let loss = |m: &LanguageModel| batch_loss(m, batch, objective).unwrap();
    let (mut checked, mut worst) = (0, 0.0_f64);
    for (t, (name, g)) in analytic.iter().enumerate() {
        for ((i, j), &a) in g.indexed_iter() {
            let orig = probe.tensors_mut(mask)[t].2[[i, j]];
            probe.tensors_mut(mask)[t].2[[i, j]] = orig + FD_EPS;
            let up = loss(&probe);
            probe.tensors_mut(mask)[t].2[[i, j]] = orig - FD_EPS;
            let down = loss(&probe);
            probe.tensors_mut(mask)[t].2[[i, j]] = orig;
            let n = (up - down) / (2.0 * FD_EPS);
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR);
            if rel > FD_TOL {
                return Err(format!("{name}[{i},{j}]: analytic {a:e} numeric {n:e} rel {rel:e}"));
            }
            worst = worst.max(rel);
            checked += 1;
        }
    }
    Ok((checked, worst))
}

fn all_zero(grads: &[(String, &ndarray::Array2<f64>)]) -> Result<(), String> {
    match grads.iter().find(|(_, m)| m.iter().any(|&v| v != 0.0)) {
        Some((name, _)) => Err(format!("{name} has a non-zero gradient")),
        None => Ok(()),
    }
}

fn criterion_3() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let vocab = 9;
    let causal = micro_model(AttentionMode::Causal, vocab, 30);
    let mut masked = micro_model(AttentionMode::Masked, vocab, 31);
    masked.params.out_proj = Some(normal(vocab, masked.config.d_model, 0.3, &mut rng));
    masked.config.tied_output = false;
    let cb = causal_batch(vocab, &mut rng);
    let mb = masked_batch(vocab, &mut rng);

    let mut report = Vec::new();
    let mut record = |label: &str, r: (usize, f64)| report.push(format!("{label} {} entries worst {:.1e}", r.0, r.1));

    record("base/causal", finite_difference(&causal, &cb, Objective::NextTokenCe, GradMask::BASE)?);
    record("base/masked", finite_difference(&masked, &mb, Objective::MaskLabelCe, GradMask::BASE)?);

    let lora = LoraConfig {
        rank: 2,
        targets: ["attn.q", "attn.k", "attn.v", "attn.o", "ffn.up", "ffn.down"].map(String::from).to_vec(),
        init_std: 0.3,
        ..Default::default()
    };
    let mut adapted = causal.clone();
    adapted.adapters = lora.attach(&adapted.config, &mut rng).unwrap();
    for (name, _, m) in adapted.adapters.tensors_mut() {
        if name.ends_with(".B") {
            *m = normal(m.nrows(), m.ncols(), 0.3, &mut rng);
        }
    }
    record("lora", finite_difference(&adapted, &cb, Objective::NextTokenCe, GradMask::ADAPTERS)?);

    let mut prompted = causal.clone();
    prompted.soft_prompt = Some(SoftPrompt::new(normal(3, prompted.config.d_model, 0.5, &mut rng)).unwrap());
    record("soft/causal", finite_difference(&prompted, &cb, Objective::NextTokenCe, GradMask::SOFT_PROMPT)?);
    let mut prompted_masked = masked.clone();
    prompted_masked.soft_prompt = Some(SoftPrompt::new(normal(3, masked.config.d_model, 0.5, &mut rng)).unwrap());
    record("soft/masked", finite_difference(&prompted_masked, &mb, Objective::MaskLabelCe, GradMask::SOFT_PROMPT)?);

    // Frozen groups under each policy.
    let mut both = adapted.clone();
    both.soft_prompt = prompted.soft_prompt.clone();
    let lora_mask = TrainPolicy::Lora(lora).grad_mask();
    let (_, g) = loss_and_grads(&both, &cb, Objective::NextTokenCe, lora_mask).map_err(|e| e.to_string())?;
    all_zero(&g.tensors(GradMask::BASE))?;
    all_zero(&g.tensors(GradMask::SOFT_PROMPT))?;
    ensure(g.tensors(GradMask::ADAPTERS).iter().any(|(_, m)| m.iter().any(|&v| v != 0.0)), || {
        "adapter gradients are all zero".into()
    })?;

    let soft_mask = TrainPolicy::SoftPromptOnly(SoftPromptConfig::default()).grad_mask();
    let (_, g) = loss_and_grads(&both, &cb, Objective::NextTokenCe, soft_mask).map_err(|e| e.to_string())?;
    all_zero(&g.tensors(GradMask::BASE))?;
    all_zero(&g.tensors(GradMask::ADAPTERS))?;
    ensure(g.soft_prompt.as_ref().is_some_and(|m| m.iter().any(|&v| v != 0.0)), || {
        "soft prompt gradient is all zero".into()
    })?;
    report.push("frozen groups exactly zero".into());
    Ok(report.join("; "))
}

// ---------------------------------------------------------------- 4

fn oracle_log_softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let log_z = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row.iter().map(|v| v - log_z).collect()
}

/// Next-token distribution after `ids`, from a fresh forward pass over
/// exactly that prefix.
fn next_token_log_probs(lm: &LanguageModel, ids: &[usize]) -> Vec<f64> {
    let logits = lm.forward(ids).unwrap().values;
    oracle_log_softmax(&logits.row(logits.nrows() - 1).to_vec())
}

fn sequences(vocab: usize, len: usize) -> Vec<Vec<usize>> {
    (0..vocab.pow(len as u32))
        .map(|mut code| {
            (0..len)
                .map(|_| {
                    let t = code % vocab;
                    code /= vocab;
                    t
                })
                .collect()
        })
        .collect()
}

fn criterion_4() -> Check {
    let vocab = 5;
    let mut spec = common::micro_spec(AttentionMode::Causal);
    spec.max_len = 4;
    spec.init_std = 1.0;
    let lm = LanguageModel::init(spec.with_vocab(vocab), 4).unwrap();
    let (mut worst_lp, mut worst_norm, mut enumerated) = (0.0_f64, 0.0_f64, 0);
    for prefix_len in 1..=3 {
        for prefix in sequences(vocab, prefix_len) {
            let max_cont = 4 - prefix_len;
            for cont_len in 1..=max_cont {
                let mut total = 0.0;
                for cont in sequences(vocab, cont_len) {
                    let got = sequence_log_prob(&lm, &prefix, &cont).map_err(|e| e.to_string())?;
                    let mut want = 0.0;
                    let mut ids = prefix.clone();
                    for &tok in &cont {
                        let lp = next_token_log_probs(&lm, &ids);
                        worst_norm = worst_norm.max((lp.iter().map(|v| v.exp()).sum::<f64>() - 1.0).abs());
                        want += lp[tok];
                        ids.push(tok);
                    }
                    worst_lp = worst_lp.max((got - want).abs());
                    total += got.exp();
                    enumerated += 1;
                }
                worst_norm = worst_norm.max((total - 1.0).abs());
            }
        }
    }
    ensure(worst_lp <= 1e-9, || format!("log-prob differs from enumeration by {worst_lp:e}"))?;
    ensure(worst_norm <= 1e-9, || format!("probabilities sum off by {worst_norm:e}"))?;
    Ok(format!("{enumerated} sequences, max |dlogp| {worst_lp:.1e}, max |sum-1| {worst_norm:.1e}"))
}

// ---------------------------------------------------------------- 5

fn criterion_5() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst_ratio = 0.0_f64;
    for trial in 0..1000 {
        let rows = rng.gen_range(1..=12);
        let cols = rng.gen_range(1..=24);
        let std = 10f64.powf(rng.gen_range(-3.0..2.0));
        let mut w = normal(rows, cols, std, &mut rng);
        if trial % 10 == 0 {
            w.row_mut(0).fill(0.0);
        }
        let q = quantize_int8(&w);
        let deq = q.dequantize();
        for ((i, j), &x) in w.indexed_iter() {
            let scale = q.scales()[i];
            let err = (x - deq[[i, j]]).abs();
            ensure(err <= scale / 2.0, || format!("trial {trial}: |w - dq| = {err:e} > scale/2 = {:e}", scale / 2.0))?;
            worst_ratio = worst_ratio.max(err / scale);
        }
        ensure(q.codes().iter().all(|&c| (-127..=127).contains(&c)), || format!("trial {trial}: code -128"))?;
        let neg = quantize_int8(&w.mapv(|x| -x));
        ensure(neg.scales() == q.scales(), || format!("trial {trial}: scales differ under negation"))?;
        ensure(neg.codes().iter().zip(q.codes()).all(|(&a, &b)| a == -b), || {
            format!("trial {trial}: codes not sign-symmetric")
        })?;
    }
    Ok(format!("1000 matrices, worst error {worst_ratio:.4} x scale"))
}

// ---------------------------------------------------------------- 6

fn labels_strategy() -> impl Strategy<Value = (Vec<Label>, usize, u64)> {
    (20usize..=500, 2usize..=10, any::<u64>()).prop_flat_map(|(n, k, seed)| {
        (
            proptest::collection::vec(prop_oneof![Just(Label::AD), Just(Label::HC)], n),
            Just(k),
            Just(seed),
        )
    })
}

fn spread(counts: impl Iterator<Item = usize>) -> usize {
    let v: Vec<usize> = counts.collect();
    v.iter().max().unwrap() - v.iter().min().unwrap()
}

fn fold_properties() -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 300,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&labels_strategy(), |(labels, k, seed)| {
            let items: Vec<(String, Label)> =
                labels.iter().enumerate().map(|(i, l)| (format!("d{i:04}"), *l)).collect();
            let plan = stratified_folds(&items, k, seed).unwrap();
            prop_assert_eq!(plan.folds.len(), k);
            let mut all: Vec<&String> = plan.folds.iter().flatten().collect();
            all.sort();
            let expected: Vec<&String> = items.iter().map(|(id, _)| id).collect();
            prop_assert_eq!(all, expected, "folds are not a partition");
            let label_of = |id: &String| items[id[1..].parse::<usize>().unwrap()].1;
            for label in Label::ALL {
                let s = spread(plan.folds.iter().map(|f| f.iter().filter(|id| label_of(id) == label).count()));
                prop_assert!(s <= 1, "{:?} counts spread by {}", label, s);
            }
            prop_assert!(spread(plan.folds.iter().map(Vec::len)) <= 1);
            prop_assert_eq!(&plan, &stratified_folds(&items, k, seed).unwrap());
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn vote_properties() -> Result<(), String> {
    let mut runner = TestRunner::new(Config {
        cases: 300,
        failure_persistence: None,
        ..Config::default()
    });
    let epochs = (1usize..40).prop_flat_map(|n| proptest::collection::vec(proptest::collection::vec(any::<bool>(), n), 3));
    runner
        .run(&epochs, |epochs| {
            let lists: Vec<Vec<(String, Label)>> = epochs
                .iter()
                .map(|e| {
                    e.iter()
                        .enumerate()
                        .map(|(i, &ad)| (format!("d{i}"), if ad { Label::AD } else { Label::HC }))
                        .collect()
                })
                .collect();
            let voted = majority_vote(&lists).unwrap();
            for (i, (_, label)) in voted.iter().enumerate() {
                let agree = lists.iter().filter(|l| l[i].1 == *label).count();
                prop_assert!(agree >= 2, "item {} won with {} of 3 votes", i, agree);
            }
            Ok(())
        })
        .map_err(|e| e.to_string())
}

fn determinism_config(threads: usize) -> ExperimentConfig {
    ExperimentConfig::parse(&format!(
        r#"
preset = "bert-style-verbalizer"
name = "determinism"
[corpus]
kind = "synthetic"
n_docs = 40
[pipeline.model]
d_model = 16
n_layers = 1
n_heads = 2
d_ff = 32
[pipeline.hyperparams]
epochs = 3
micro_batch_size = 4
[cv]
k = 4
threads = {threads}
"#
    ))
    .unwrap()
}

fn report_bytes(threads: usize, dir: &Path) -> Result<(Vec<u8>, Vec<u8>), String> {
    let cfg = determinism_config(threads);
    let docs = load_documents(&cfg).map_err(|e| e.to_string())?;
    let report = run_experiment(&cfg, &docs).map_err(|e| e.to_string())?;
    let out = dir.join(format!("t{threads}"));
    write_reports(&out, &report).map_err(|e| e.to_string())?;
    let read = |f: &str| std::fs::read(out.join(f)).map_err(|e| e.to_string());
    Ok((read(REPORT_FILE)?, read(FOLD_CSV_FILE)?))
}

fn criterion_6() -> Check {
    fold_properties()?;
    vote_properties()?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let sequential = report_bytes(1, dir.path())?;
    for threads in [2, 4] {
        let parallel = report_bytes(threads, dir.path())?;
        ensure(parallel == sequential, || format!("report bytes differ with {threads} threads"))?;
    }
    Ok("300 fold cases, 300 vote cases, reports identical for 1/2/4 threads".into())
}

// ---------------------------------------------------------------- 7

const END_TO_END_BUDGET: Duration = Duration::from_secs(600);

fn criterion_7() -> Check {
    let start = Instant::now();
    let mut results = Vec::new();
    let mut failures = Vec::new();
    for (preset, floor) in [
        ("bert-style-verbalizer", 0.90),
        ("llama2-style-lora-prompt1", 0.90),
        ("conditional-learning", 0.75),
    ] {
        let t = Instant::now();
        let cfg = ExperimentConfig::preset(preset).map_err(|e| e.to_string())?;
        let docs = load_documents(&cfg).map_err(|e| e.to_string())?;
        ensure(docs.len() == 200, || format!("synthetic corpus has {} documents", docs.len()))?;
        let report = run_experiment(&cfg, &docs).map_err(|e| e.to_string())?;
        let acc = report.metrics.accuracy;
        results.push(format!("{preset} {acc:.3} ({:.0}s)", t.elapsed().as_secs_f64()));
        if acc < floor {
            failures.push(format!("{preset} accuracy {acc:.3} < {floor}"));
        }
    }
    let elapsed = start.elapsed();
    if elapsed > END_TO_END_BUDGET {
        failures.push(format!("took {:.0}s", elapsed.as_secs_f64()));
    }
    let summary = format!("{}; total {:.0}s", results.join(", "), elapsed.as_secs_f64());
    if failures.is_empty() {
        Ok(summary)
    } else {
        Err(format!("{}: {summary}", failures.join(", ")))
    }
}

// ---------------------------------------------------------------- 8

fn criterion_8() -> Check {
    let cfg = ExperimentConfig::preset("soft-prompt-tuning").map_err(|e| e.to_string())?;
    ensure(cfg.pipeline.hyperparams.epochs <= 10, || "preset trains for more than 10 epochs".into())?;
    let docs = load_documents(&cfg).map_err(|e| e.to_string())?;
    let (pipeline, _) = cfg.effective();
    let before = prepare_classifier(&pipeline, &docs).map_err(|e| e.to_string())?;
    let examples = training_examples(&before.task, &docs);
    let objective = pipeline.strategy.objective();
    let initial = batch_loss(&before.lm, &examples, objective).map_err(|e| e.to_string())?;

    let (after, _) = train_classifier(&pipeline, &docs, &[]).map_err(|e| e.to_string())?;
    let trained = batch_loss(&after.lm, &examples, objective).map_err(|e| e.to_string())?;
    ensure(after.lm.params == before.lm.params, || "base weights changed".into())?;
    ensure(after.lm.adapters == before.lm.adapters, || "adapters changed".into())?;
    ensure(after.lm.soft_prompt != before.lm.soft_prompt, || "soft prompt did not move".into())?;
    let drop = 1.0 - trained / initial;
    ensure(drop >= 0.20, || format!("training loss {initial:.4} -> {trained:.4}, drop {:.1}%", 100.0 * drop))?;
    Ok(format!("training loss {initial:.4} -> {trained:.4} ({:.1}% lower), base untouched", 100.0 * drop))
}

// ---------------------------------------------------------------- 9

fn chat_conformance() -> Result<usize, String> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data/chat");
    let expected: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("expected.json")).map_err(|e| e.to_string())?)
            .map_err(|e| e.to_string())?;
    let cases = expected.as_object().ok_or("expected.json is not an object")?;
    ensure(cases.len() == 20, || format!("{} conformance files", cases.len()))?;
    for (file, want) in cases {
        let raw = std::fs::read_to_string(dir.join(file)).map_err(|e| format!("{file}: {e}"))?;
        match (parse_chat(&raw), want.get("error")) {
            (Ok(parsed), None) => {
                let got: Vec<(String, String)> =
                    parsed.utterances.iter().map(|u| (u.speaker.clone(), u.clean_text.clone())).collect();
                let want: Vec<(String, String)> = serde_json::from_value(want["utterances"].clone()).unwrap();
                ensure(got == want, || format!("{file}: got {got:?}, want {want:?}"))?;
            }
            (Err(err), Some(kind)) => {
                let debug = format!("{err:?}");
                let variant = debug.split([' ', '{']).next().unwrap();
                ensure(variant == kind.as_str().unwrap(), || format!("{file}: got {debug}, want {kind}"))?;
                if let Some(line) = want["line"].as_u64() {
                    ensure(debug.contains(&format!("line: {line} ")), || format!("{file}: got {debug}, want line {line}"))?;
                }
            }
            (Ok(_), Some(kind)) => return Err(format!("{file}: parsed, want {kind}")),
            (Err(err), None) => return Err(format!("{file}: {err}")),
        }
    }
    Ok(cases.len())
}

fn code_injected() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        "[a-z]{1,6}",
        Just("&uh".to_string()),
        Just("&=laughs".to_string()),
        Just("(.)".to_string()),
        Just("(..)".to_string()),
        Just("(...)".to_string()),
        Just("[/]".to_string()),
        Just("[//]".to_string()),
        Just("[: word]".to_string()),
        Just("[* p:w]".to_string()),
        Just("+...".to_string()),
        Just("+//.".to_string()),
        Just("\u{15}100_200\u{15}".to_string()),
        "[<>\\[\\]()&+.: \u{15}a]{1,4}",
    ];
    proptest::collection::vec(piece, 0..16).prop_map(|parts| {
        let mut s = String::new();
        for (i, p) in parts.iter().enumerate() {
            s.push_str(p);
            if i % 3 != 2 {
                s.push(' ');
            }
        }
        s
    })
}

fn criterion_9() -> Check {
    let files = chat_conformance()?;
    let mut runner = TestRunner::new(Config {
        cases: 1000,
        failure_persistence: None,
        ..Config::default()
    });
    runner
        .run(&code_injected(), |s| {
            let once = clean_utterance(&s);
            prop_assert_eq!(&clean_utterance(&once), &once);
            prop_assert!(!once.contains(['<', '>', '\u{15}']), "codes survive in {:?}", once);
            prop_assert!(once.split(' ').all(|t| !t.starts_with(['&', '+'])), "codes survive in {:?}", once);
            Ok(())
        })
        .map_err(|e| e.to_string())?;
    Ok(format!("{files} files conform, idempotence on 1000 strings"))
}

// ----------------------------------------------------------------

fn main() {
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    type Criterion = (&'static str, &'static str, fn() -> Check, Duration);
    let criteria: [Criterion; 9] = [
        ("1", "metric arithmetic", criterion_1, Duration::from_secs(1)),
        ("2", "LoRA identity and merge", criterion_2, Duration::from_secs(10)),
        ("3", "gradient suite", criterion_3, Duration::from_secs(120)),
        ("4", "conditional-likelihood oracle", criterion_4, Duration::MAX),
        ("5", "int8 quantization", criterion_5, Duration::MAX),
        ("6", "cross-validation harness", criterion_6, Duration::MAX),
        ("7", "end-to-end strategies", criterion_7, END_TO_END_BUDGET),
        ("8", "soft-prompt mechanism", criterion_8, Duration::MAX),
        ("9", "CHAT conformance", criterion_9, Duration::MAX),
    ];
    let mut failed = 0;
    for (id, name, check, budget) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == id) {
            continue;
        }
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        let elapsed = start.elapsed();
        let result = match result {
            Ok(_) if elapsed > budget => Err(format!("over the {}s budget", budget.as_secs())),
            r => r,
        };
        let (status, detail) = match &result {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!("[{status}] criterion {id} {name}: {detail} [{:.2}s]", elapsed.as_secs_f64());
        failed += result.is_err() as usize;
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
