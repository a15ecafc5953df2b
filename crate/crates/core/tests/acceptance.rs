//! Acceptance suite. Runs every criterion in sequence, prints one
//! `PASS`/`FAIL` line per criterion and exits non-zero if any failed.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fs;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use domsel::bench::{self, BenchConfig, ADVERSARIAL_NAME};
use domsel::corpus::{merge_domains, Domain, Episode, LabeledSentence};
use domsel::harness::{self, all_sources_f1, compare_selectors, Selector, Workspace};
use domsel::selection::{
    combined_score, enumerate_candidates, fit_weights, predicted_performance, rank_candidates, CombinationWeights,
    FitConfig, SweepRecord,
};
use domsel::similarity::{lo_with, tis, tvc, LabelPolicy, SimilarityTriple};
use domsel::spnet::{
    backward, bce_loss, contrastive_loss, divergence_loss, episode_loss, orthogonality_loss, OrthogonalityMode,
    ScoreMode, SpNetConfig, SpNetParams,
};
use domsel::tensor::Matrix;
use domsel::trainer::SpanCounts;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

/// Random valid BIO labels over `slots`.
fn random_bio(rng: &mut ChaCha8Rng, len: usize, slots: &[&str]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(len);
    for i in 0..len {
        let r = rng.gen_range(0..3);
        let prev_slot = out.get(i.wrapping_sub(1)).and_then(|l| l.get(2..)).map(str::to_owned);
        let label = match (r, prev_slot) {
            (0, _) => "O".to_string(),
            (1, Some(s)) => format!("I-{s}"),
            _ => format!("B-{}", slots.choose(rng).expect("non-empty")),
        };
        out.push(label);
    }
    out
}

// ---------------------------------------------------------------------------
// Gradients

fn gradient_episode(rng: &mut ChaCha8Rng) -> Episode {
    let slots = ["a", "b"];
    let support_lens = [rng.gen_range(1..=2), rng.gen_range(1..=2)];
    let query_len = rng.gen_range(1..=2);
    let support: Vec<LabeledSentence> = support_lens
        .iter()
        .map(|&n| {
            let tokens: Vec<String> = (0..n).map(|_| format!("s{}", rng.gen_range(0..4))).collect();
            let labels = random_bio(rng, n, &slots);
            LabeledSentence::new(tokens, labels).expect("valid")
        })
        .collect();
    let support_slots: Vec<String> = support
        .iter()
        .flat_map(|s| s.slots().into_iter().map(str::to_owned).collect::<Vec<_>>())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let slot_refs: Vec<&str> = support_slots.iter().map(String::as_str).collect();
    // Query tokens never occur in the support, so no query word sits exactly
    // on a prototype where the probability clamp has a kink.
    let tokens: Vec<String> = (0..query_len).map(|_| format!("q{}", rng.gen_range(0..4))).collect();
    let labels = if slot_refs.is_empty() {
        vec!["O".to_string(); query_len]
    } else {
        random_bio(rng, query_len, &slot_refs)
    };
    let query = vec![LabeledSentence::new(tokens, labels).expect("valid")];
    Episode::new(support, query, 1).expect("valid episode")
}

fn randomize(params: &mut SpNetParams, rng: &mut ChaCha8Rng) {
    let h = params.hidden() as f64;
    let w = &mut params.weights;
    for x in w.table.as_mut_slice() {
        *x = rng.gen_range(-1.0..1.0);
    }
    for m in [&mut w.w_shared, &mut w.w_private] {
        for x in m.as_mut_slice() {
            *x = rng.gen_range(-1.0..1.0) * (3.0 / h).sqrt();
        }
    }
    for m in [&mut w.b_shared, &mut w.b_private] {
        for x in m.as_mut_slice() {
            *x = rng.gen_range(-0.3..0.3);
        }
    }
}

fn loss_at(params: &SpNetParams, episode: &Episode) -> f64 {
    episode_loss(params, episode).expect("loss").total
}

fn gradient_check() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut worst_at = String::new();
    let mut checked = 0usize;
    for seed in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let episode = gradient_episode(&mut rng);
        let words: usize = episode.support.iter().chain(&episode.query).map(LabeledSentence::len).sum();
        assert!(words <= 6);
        let vocab: BTreeSet<String> =
            episode.support.iter().chain(&episode.query).flat_map(|s| s.tokens.clone()).collect();
        let config = SpNetConfig {
            hidden: rng.gen_range(2..=8),
            unk_buckets: 1,
            score_mode: if seed % 2 == 0 { ScoreMode::Cosine } else { ScoreMode::Vpb },
            orthogonality: if seed % 4 < 2 {
                OrthogonalityMode::PerWord
            } else {
                OrthogonalityMode::Frobenius
            },
            ..SpNetConfig::default()
        };
        let mut params = SpNetParams::init(vocab.iter().map(String::as_str), &config, seed).expect("init");
        randomize(&mut params, &mut rng);
        let (_, grads) = backward(&params, &episode).expect("backward");
        for (t, name) in domsel::spnet::Weights::NAMES.iter().enumerate() {
            let len = params.weights.tensors()[t].len();
            for i in 0..len {
                let eps = 1e-5;
                let base = params.weights.tensors()[t].as_slice()[i];
                let at = |delta: f64| {
                    let mut p = params.clone();
                    p.weights.tensors_mut()[t].as_mut_slice()[i] = base + delta;
                    loss_at(&p, &episode)
                };
                let numeric = (at(eps) - at(-eps)) / (2.0 * eps);
                let analytic = grads.tensors()[t].as_slice()[i];
                let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
                checked += 1;
                if rel > worst {
                    worst = rel;
                    worst_at = format!("seed {seed} {name}[{i}] analytic {analytic:.3e} numeric {numeric:.3e}");
                }
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(30),
        format!("{checked} entries, max relative error {worst:.2e} ({worst_at}), {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------------------
// Similarity oracles

const WORDS: [&str; 8] = ["Alpha", "alpha", "BETA", "gamma", "Delta", "eps", "Zeta", "eta"];

fn random_domain(rng: &mut ChaCha8Rng, name: &str) -> Domain {
    let slots = ["x", "y", "z"];
    let n = rng.gen_range(1..=4);
    let mut sentences = Vec::new();
    for _ in 0..n {
        let len = rng.gen_range(1..=5);
        let tokens: Vec<String> = (0..len).map(|_| WORDS.choose(rng).expect("word").to_string()).collect();
        let mut labels = random_bio(rng, len, &slots);
        if labels.iter().all(|l| l == "O") {
            labels[0] = format!("B-{}", slots.choose(rng).expect("slot"));
        }
        sentences.push(LabeledSentence::new(tokens, labels).expect("valid"));
    }
    Domain::new(name, sentences).expect("valid domain")
}

fn oracle_tokens(d: &Domain) -> Vec<String> {
    d.sentences().iter().flat_map(|s| s.tokens.iter().map(|t| t.to_lowercase())).collect()
}

fn oracle_tvc(s: &Domain, t: &Domain) -> f64 {
    let src: HashSet<String> = oracle_tokens(s).into_iter().collect();
    let tgt: HashSet<String> = oracle_tokens(t).into_iter().collect();
    tgt.iter().filter(|w| src.contains(*w)).count() as f64 / tgt.len() as f64
}

fn oracle_labels(d: &Domain, policy: LabelPolicy) -> HashSet<String> {
    d.sentences()
        .iter()
        .flat_map(|s| s.labels.iter())
        .filter_map(|l| match policy {
            LabelPolicy::RawBio => Some(l.clone()),
            LabelPolicy::Slots => l.split_once('-').map(|(_, slot)| slot.to_string()),
        })
        .collect()
}

fn oracle_lo(s: &Domain, t: &Domain, policy: LabelPolicy) -> f64 {
    let src = oracle_labels(s, policy);
    let tgt = oracle_labels(t, policy);
    tgt.iter().filter(|l| src.contains(*l)).count() as f64 / tgt.len() as f64
}

fn oracle_tfidf(d: &Domain, universe: &[&Domain]) -> HashMap<String, f64> {
    let tokens = oracle_tokens(d);
    let docs: Vec<HashSet<String>> = universe.iter().map(|u| oracle_tokens(u).into_iter().collect()).collect();
    let mut out = HashMap::new();
    for w in &tokens {
        let count = tokens.iter().filter(|x| *x == w).count() as f64;
        let df = docs.iter().filter(|doc| doc.contains(w)).count() as f64;
        let idf = (universe.len() as f64 / df).log10();
        out.insert(w.clone(), count / tokens.len() as f64 * idf);
    }
    out
}

fn oracle_tis(s: &Domain, t: &Domain, universe: &[&Domain]) -> f64 {
    let a = oracle_tfidf(s, universe);
    let b = oracle_tfidf(t, universe);
    let na = a.values().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.values().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    let dot: f64 = a.iter().map(|(w, x)| x * b.get(w).copied().unwrap_or(0.0)).sum();
    (dot / (na * nb)).clamp(0.0, 1.0)
}

fn similarity_oracles() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0_f64;
    let mut comparisons = 0usize;
    for seed in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let n = rng.gen_range(2..=4);
        let domains: Vec<Domain> = (0..n).map(|i| random_domain(&mut rng, &format!("d{i}"))).collect();
        let universe: Vec<&Domain> = domains.iter().collect();
        let mut pairs: Vec<(Domain, &Domain)> = Vec::new();
        for t in &domains {
            for s in &domains {
                pairs.push((s.clone(), t));
            }
            let rest: Vec<&Domain> = domains.iter().filter(|d| d.name != t.name).collect();
            pairs.push((merge_domains(&rest, "rest").expect("merge"), t));
        }
        for (s, t) in &pairs {
            let diffs = [
                tvc(s, t).expect("tvc") - oracle_tvc(s, t),
                tis(s, t, &universe).expect("tis") - oracle_tis(s, t, &universe),
                lo_with(s, t, LabelPolicy::Slots).expect("lo") - oracle_lo(s, t, LabelPolicy::Slots),
                lo_with(s, t, LabelPolicy::RawBio).expect("lo") - oracle_lo(s, t, LabelPolicy::RawBio),
            ];
            for d in diffs {
                worst = worst.max(d.abs());
                comparisons += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-12 && elapsed < Duration::from_secs(5),
        format!("{comparisons} comparisons, max difference {worst:.1e}, {elapsed:.2?}"),
    )
}

// ---------------------------------------------------------------------------
// Weight fitting

const PLANTED: [f64; 3] = [0.2, 0.3, 0.5];

fn planted_records(rng: &mut ChaCha8Rng, noise: f64) -> Vec<SweepRecord> {
    let normal = rand_distr::Normal::new(0.0, noise.max(f64::MIN_POSITIVE)).expect("std");
    (0..31)
        .map(|i| {
            let x: [f64; 3] = [rng.gen(), rng.gen(), rng.gen()];
            let clean = 0.6 * (PLANTED[0] * x[0] + PLANTED[1] * x[1] + PLANTED[2] * x[2]) + 0.1;
            let jitter = if noise > 0.0 { rng.sample(normal) } else { 0.0 };
            SweepRecord {
                target: "t".into(),
                combination: vec![format!("c{i}")],
                triple: SimilarityTriple {
                    tvc: x[0],
                    tis: x[1],
                    lo: x[2],
                    source_name: format!("c{i}"),
                    target_name: "t".into(),
                },
                performance: (clean + jitter).clamp(0.0, 1.0),
            }
        })
        .collect()
}

fn linf(theta: &[f64; 3]) -> f64 {
    theta.iter().zip(PLANTED).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
}

fn weight_fit_recovery() -> Outcome {
    let start = Instant::now();
    let config = FitConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let clean = fit_weights(&planted_records(&mut rng, 0.0), &config).expect("fit");
    let clean_err = linf(&clean.theta);
    let mut noisy_worst = 0.0_f64;
    for seed in 0..10 {
        let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
        let fit = fit_weights(&planted_records(&mut rng, 0.02), &config).expect("fit");
        noisy_worst = noisy_worst.max(linf(&fit.theta));
    }
    let elapsed = start.elapsed();
    outcome(
        clean_err <= 0.02 && clean.residual <= 1e-8 && noisy_worst <= 0.1 && elapsed < Duration::from_secs(10),
        format!(
            "noiseless error {clean_err:.2e} residual {:.2e}; noisy worst error {noisy_worst:.3}; {elapsed:.2?}",
            clean.residual
        ),
    )
}

// ---------------------------------------------------------------------------
// Affine-scored and plain argmax

fn argmax_equivalence() -> Outcome {
    let domains = bench::generate(&BenchConfig::default()).expect("bench");
    let target = &domains[0];
    let sources: Vec<&Domain> = domains[1..].iter().collect();
    let universe: Vec<&Domain> = domains.iter().collect();
    let candidates = enumerate_candidates(&sources, target, &universe).expect("candidates");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut mismatches = 0;
    for _ in 0..100 {
        let raw: [f64; 3] = [rng.gen::<f64>() + 1e-3, rng.gen::<f64>(), rng.gen::<f64>()];
        let sum: f64 = raw.iter().sum();
        let mut weights = CombinationWeights::from_theta(raw.map(|x| x / sum));
        weights.fits.insert(
            target.name.clone(),
            domsel::selection::LinearFit {
                w: rng.gen_range(1e-3..3.0),
                b: rng.gen_range(0.0..1.0),
            },
        );
        let plain = rank_candidates(&candidates, |t| combined_score(&weights, t)).expect("rank");
        let affine = rank_candidates(&candidates, |t| {
            predicted_performance(&weights, &target.name, t).expect("fit present")
        })
        .expect("rank");
        if plain.0 != affine.0 {
            mismatches += 1;
        }
    }
    outcome(
        mismatches == 0 && candidates.len() == 31,
        format!("{} candidates, {mismatches} mismatches in 100 draws", candidates.len()),
    )
}

// ---------------------------------------------------------------------------
// Benchmark runs

struct BenchmarkRun {
    records: Vec<SweepRecord>,
    adversarial_loo: Vec<(String, f64, f64)>,
    records_csv: Vec<u8>,
    elapsed: Duration,
}

fn run_benchmark(dir: &Path) -> BenchmarkRun {
    let start = Instant::now();
    let plan = harness::write_benchmark(&BenchConfig::default(), dir).expect("benchmark");
    let ws = Workspace::open(plan).expect("workspace");
    let records = ws.sweep().expect("sweep");
    let loo = ws.leave_one_out_matrix().expect("loo");
    let elapsed = start.elapsed();
    let adversarial_loo = loo
        .entries
        .iter()
        .filter(|((_, s), _)| s == ADVERSARIAL_NAME)
        .map(|((t, _), e)| (t.clone(), e.mean, e.std))
        .collect();
    let records_csv = fs::read(ws.out_dir().join(harness::RECORDS_FILE)).expect("records.csv");
    BenchmarkRun {
        records,
        adversarial_loo,
        records_csv,
        elapsed,
    }
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn selector_means(run: &BenchmarkRun) -> BTreeMap<&'static str, f64> {
    let selections = compare_selectors(&run.records, &FitConfig::default()).expect("selectors");
    Selector::ALL
        .iter()
        .map(|&k| (k.name(), mean(selections.iter().filter(|s| s.selector == k).map(|s| s.f1))))
        .collect()
}

fn negative_transfer(run: &BenchmarkRun) -> Vec<(&'static str, Outcome)> {
    let entries: Vec<String> = run
        .adversarial_loo
        .iter()
        .map(|(t, m, s)| format!("{t} {m:+.3}±{s:.3}"))
        .collect();
    let a_ok = !run.adversarial_loo.is_empty() && run.adversarial_loo.iter().all(|(_, m, s)| *m <= *s);
    let combined = selector_means(run)["combined"];
    let all = mean(all_sources_f1(&run.records).into_values());
    let in_time = run.elapsed < Duration::from_secs(300);
    vec![
        (
            "negative transfer: removing the adversarial source never hurts",
            outcome(a_ok, entries.join(", ")),
        ),
        (
            "negative transfer: combined selection beats all sources by 2 points",
            outcome(
                combined - all >= 0.02 && in_time,
                format!("combined {combined:.4} vs all sources {all:.4}, sweep and matrix {:.1?}", run.elapsed),
            ),
        ),
    ]
}

fn selector_comparison(run: &BenchmarkRun) -> Outcome {
    let means = selector_means(run);
    let combined = means["combined"];
    let pass = ["tvc", "tis", "lo"].iter().all(|k| combined >= means[k]);
    let detail: Vec<String> = means.iter().map(|(k, v)| format!("{k} {v:.4}")).collect();
    outcome(pass, detail.join(", "))
}

fn determinism(first: &BenchmarkRun) -> Outcome {
    let dir = tempfile::tempdir().expect("tempdir");
    let second = run_benchmark(dir.path());
    outcome(
        first.records_csv == second.records_csv && !first.records_csv.is_empty(),
        format!("{} bytes, second run {:.1?}", first.records_csv.len(), second.elapsed),
    )
}

// ---------------------------------------------------------------------------
// Loss closed forms

fn loss_closed_forms() -> Outcome {
    let shared = Matrix::from_rows(&[vec![0.3, -1.2, 0.5], vec![1.0, 0.4, -0.7], vec![-0.2, 0.9, 0.1]]);
    let (l1, _) = contrastive_loss(&shared, &[0, 0, 0], 0.5).expect("l1");

    let private = Matrix::from_rows(&[vec![1.0, 0.0], vec![-1.0, 0.0]]);
    let l2 = divergence_loss(&private).expect("l2");
    let l2_expected = -2.0 * 1e-8_f64.ln() / 4.0;

    let s = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]);
    let p = Matrix::from_rows(&[vec![0.0, 1.0], vec![0.0, -1.0]]);
    let l3_word = orthogonality_loss(&s, &p, OrthogonalityMode::PerWord).expect("l3");
    let l3_frob = orthogonality_loss(&s, &p, OrthogonalityMode::Frobenius).expect("l3");

    let classes = 4;
    let scores = Matrix::zeros(3, classes);
    let labels = [Some(0), Some(2), Some(3)];
    let l4_cos = bce_loss(&scores, &labels, ScoreMode::Cosine).expect("l4");
    let vpb_scores = Matrix::zeros(3, classes);
    let l4_vpb = bce_loss(&vpb_scores, &labels, ScoreMode::Vpb).expect("l4");
    let l4_expected = classes as f64 * std::f64::consts::LN_2;

    let errors = [
        l1.abs(),
        (l2 - l2_expected).abs(),
        l3_word.abs(),
        l3_frob.abs(),
        (l4_cos - l4_expected).abs(),
        (l4_vpb - l4_expected).abs(),
    ];
    let worst = errors.iter().copied().fold(0.0, f64::max);
    outcome(
        worst <= 1e-9,
        format!("L1 {l1:.1e}, L2 {l2:.6}, L3 {l3_word:.1e}/{l3_frob:.1e}, L4 {l4_cos:.6}/{l4_vpb:.6}; max error {worst:.1e}"),
    )
}

// ---------------------------------------------------------------------------
// Span F1

/// A span `[i, j)` of slot `s` exists iff position `i` opens an `s` span,
/// every later position inside is `I-s`, and position `j` is not `I-s`.
fn oracle_spans(tags: &[String]) -> Vec<(String, usize, usize)> {
    let slot_of = |t: &str| t.get(2..).map(str::to_owned);
    let mut spans = Vec::new();
    for i in 0..tags.len() {
        let Some(s) = slot_of(&tags[i]) else { continue };
        let inside = format!("I-{s}");
        let opens = tags[i].starts_with("B-")
            || (i == 0 || (tags[i - 1] != format!("B-{s}") && tags[i - 1] != inside));
        if !opens {
            continue;
        }
        for j in i + 1..=tags.len() {
            let body_ok = tags[i + 1..j].iter().all(|t| *t == inside);
            let closed = j == tags.len() || tags[j] != inside;
            if body_ok && closed {
                spans.push((s.clone(), i, j));
            }
        }
    }
    spans
}

fn random_tags(rng: &mut ChaCha8Rng) -> Vec<String> {
    const TAGS: [&str; 5] = ["O", "B-x", "I-x", "B-y", "I-y"];
    let len = rng.gen_range(0..=12);
    (0..len).map(|_| TAGS.choose(rng).expect("tag").to_string()).collect()
}

fn span_f1_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(500);
    let mut counts = SpanCounts::default();
    let (mut correct, mut predicted, mut gold) = (0usize, 0usize, 0usize);
    for _ in 0..500 {
        let g = random_tags(&mut rng);
        let mut p = g.clone();
        for t in p.iter_mut() {
            if rng.gen_bool(0.3) {
                *t = random_tags(&mut rng).pop().unwrap_or_else(|| "O".into());
            }
        }
        counts.add_sequence(&g, &p);
        let gs = oracle_spans(&g);
        let ps = oracle_spans(&p);
        correct += gs.iter().filter(|s| ps.contains(s)).count();
        gold += gs.len();
        predicted += ps.len();
    }
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let (pr, rc) = (ratio(correct, predicted), ratio(correct, gold));
    let f1 = if pr + rc > 0.0 { 2.0 * pr * rc / (pr + rc) } else { 0.0 };
    let same = counts.correct == correct && counts.predicted == predicted && counts.gold == gold;
    outcome(
        same && counts.f1() == f1,
        format!(
            "correct {}/{correct}, predicted {}/{predicted}, gold {}/{gold}, f1 {:.6}/{f1:.6}",
            counts.correct,
            counts.predicted,
            counts.gold,
            counts.f1()
        ),
    )
}

fn main() -> ExitCode {
    let mut results: Vec<(&str, Outcome)> = Vec::new();
    let mut report = |name: &'static str, o: Outcome| {
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        results.push((name, o));
    };
    report("gradients match finite differences", gradient_check());
    report("similarity indicators match brute force", similarity_oracles());
    report("planted weights are recovered", weight_fit_recovery());
    report("affine and plain argmax agree", argmax_equivalence());
    report("loss closed forms", loss_closed_forms());
    report("span F1 matches brute force", span_f1_oracle());

    let dir = tempfile::tempdir().expect("tempdir");
    let run = run_benchmark(dir.path());
    for (name, o) in negative_transfer(&run) {
        report(name, o);
    }
    report("combined selector matches or beats each single indicator", selector_comparison(&run));
    report("records.csv is reproducible", determinism(&run));

    let failed = results.iter().filter(|(_, o)| !o.pass).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
