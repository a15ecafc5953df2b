use std::fs;

use proptest::prelude::*;

use domsel::bench::{self, BenchConfig};
use domsel::harness::{self, emit_boxplot, emit_scatter, emit_selector_compare, load_records, Workspace};
use domsel::selection::FitConfig;
use domsel::spnet::SpNetParams;
use domsel::trainer::{evaluate, run_experiment, target_episodes, token_vocabulary, train, SpanCounts, TrainConfig};

proptest! {
    #[test]
    fn one_more_correct_span_never_lowers_f1(correct in 0..20usize, extra_pred in 0..20usize, extra_gold in 1..20usize) {
        let before = SpanCounts { correct, predicted: correct + extra_pred, gold: correct + extra_gold };
        let after = SpanCounts { correct: correct + 1, predicted: before.predicted + 1, gold: before.gold };
        prop_assert!(after.f1() >= before.f1());
    }
}

fn small_bench() -> BenchConfig {
    BenchConfig {
        domains: 3,
        sentences: 30,
        adversarial_sentences: 30,
        ..BenchConfig::default()
    }
}

fn quick_config() -> TrainConfig {
    TrainConfig {
        learning_rate: 0.05,
        train_episodes: 3,
        eval_episodes: 2,
        seeds: vec![1, 2],
        ..TrainConfig::default()
    }
}

#[test]
fn self_training_reaches_high_f1() {
    let domains = bench::generate(&BenchConfig::default()).unwrap();
    let alpha = &domains[0];
    let config = TrainConfig {
        learning_rate: 0.05,
        train_episodes: 300,
        eval_episodes: 5,
        seeds: vec![1],
        ..TrainConfig::default()
    };
    let result = run_experiment(&[alpha], alpha, &config).unwrap();
    assert!(result.f1 >= 0.9, "f1 {}", result.f1);
}

#[test]
fn repeated_seed_keeps_the_mean() {
    let domains = bench::generate(&small_bench()).unwrap();
    let config = TrainConfig { seeds: vec![1], ..quick_config() };
    let once = run_experiment(&[&domains[1]], &domains[0], &config).unwrap();
    let twice = run_experiment(&[&domains[1]], &domains[0], &TrainConfig { seeds: vec![1, 1], ..config }).unwrap();
    assert_eq!(once.mean, twice.mean);
    assert_eq!(twice.std, 0.0);
}

#[test]
fn evaluation_is_idempotent() {
    let domains = bench::generate(&small_bench()).unwrap();
    let config = TrainConfig { weight_decay: 0.0, ..quick_config() };
    let vocab = token_vocabulary(&[&domains[0], &domains[1]]);
    let params = SpNetParams::init(vocab.iter().map(String::as_str), &config.spnet(), 1).unwrap();
    let episodes = target_episodes(&domains[1], &config, 1).unwrap();
    let trained = train(params, &episodes, &config).unwrap().params;
    let eval = target_episodes(&domains[0], &config, 2).unwrap();
    assert_eq!(evaluate(&trained, &eval).unwrap(), evaluate(&trained, &eval).unwrap());
}

#[test]
fn sweep_counts_resumes_and_emits_purely() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = harness::write_benchmark(&small_bench(), dir.path()).unwrap();
    plan.train = quick_config();
    let m = plan.universe.len();
    assert_eq!(m, 4);

    let ws = Workspace::open(plan.clone()).unwrap();
    let records = ws.sweep().unwrap();
    // Every non-empty subset of the other M-1 domains, for each target.
    assert_eq!(records.len(), m * ((1 << (m - 1)) - 1));
    let runs_path = ws.out_dir().join(harness::RUNS_FILE);
    let runs_before = fs::read_to_string(&runs_path).unwrap();
    assert_eq!(runs_before.lines().count(), 1 + records.len() * 2);
    let records_before = fs::read(ws.out_dir().join(harness::RECORDS_FILE)).unwrap();
    drop(ws);

    let ws = Workspace::open(plan).unwrap();
    let tasks = ws.sweep_tasks().unwrap();
    assert_eq!(ws.pending(&tasks), 0);
    assert_eq!(ws.execute(&tasks), 0);
    let again = ws.sweep().unwrap();
    assert_eq!(again, records);
    assert_eq!(fs::read_to_string(&runs_path).unwrap(), runs_before);
    assert_eq!(fs::read(ws.out_dir().join(harness::RECORDS_FILE)).unwrap(), records_before);

    let loaded = load_records(ws.out_dir().join(harness::RECORDS_FILE)).unwrap();
    let fit = FitConfig::default();
    assert_eq!(emit_scatter(&loaded, &fit).unwrap(), emit_scatter(&loaded, &fit).unwrap());
    assert_eq!(emit_boxplot(&loaded).unwrap(), emit_boxplot(&loaded).unwrap());
    assert_eq!(
        emit_selector_compare(&loaded, &fit).unwrap(),
        emit_selector_compare(&loaded, &fit).unwrap()
    );
}
