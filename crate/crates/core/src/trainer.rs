//! Episode training with AdamW, span-level F1 evaluation, and multi-seed runs.

use std::collections::BTreeSet;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::corpus::{build_episodes_with, merge_domains, Domain, Episode, EpisodeSpec, OUTSIDE};
use crate::error::{Error, Result};
use crate::spnet::{
    prepared_backward, predict_episode, LossWeights, OrthogonalityMode, PreparedEpisode, ScoreMode, SpNetConfig,
    SpNetParams, Weights,
};

/// Offset mixed into the seed of evaluation episodes so they differ from
/// the training episodes drawn with the same seed.
const EVAL_SEED_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub epochs: usize,
    pub seeds: Vec<u64>,
    pub similarity_mode: ScoreMode,
    pub orthogonality: OrthogonalityMode,
    pub loss_weights: LossWeights,
    pub tau: f64,
    pub hidden: usize,
    pub unk_buckets: usize,
    pub k_shot: usize,
    /// Training episodes drawn per run; one optimizer step per episode per epoch.
    pub train_episodes: usize,
    pub eval_episodes: usize,
    pub query_size: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Moving-average window of the early-stop rule; 0 disables early stopping.
    pub early_stop_window: usize,
    pub early_stop_tol: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            weight_decay: 5e-5,
            epochs: 1,
            seeds: (1..=10).collect(),
            similarity_mode: ScoreMode::Cosine,
            orthogonality: OrthogonalityMode::PerWord,
            loss_weights: LossWeights::default(),
            tau: 0.5,
            hidden: 16,
            unk_buckets: 64,
            k_shot: 1,
            train_episodes: 100,
            eval_episodes: 10,
            query_size: crate::corpus::DEFAULT_QUERY_SIZE,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            early_stop_window: 50,
            early_stop_tol: 1e-5,
        }
    }
}

impl TrainConfig {
    /// The paper's optimizer settings: learning rate 2e-5, weight decay 5e-5.
    pub fn paper() -> Self {
        TrainConfig {
            learning_rate: 2e-5,
            ..TrainConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Invalid(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate must be positive, got {}", self.learning_rate));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight_decay must be non-negative, got {}", self.weight_decay));
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if self.seeds.is_empty() {
            return bad("seeds must not be empty".into());
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.loss_weights.as_array().iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return bad("loss weights must be non-negative".into());
        }
        if self.hidden == 0 || self.k_shot == 0 || self.train_episodes == 0 || self.eval_episodes == 0 {
            return bad("hidden, k_shot, train_episodes and eval_episodes must be positive".into());
        }
        if self.query_size == 0 {
            return bad("query_size must be positive".into());
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) || !(self.eps > 0.0) {
            return bad("beta1 and beta2 must lie in [0, 1) and eps must be positive".into());
        }
        if !(self.early_stop_tol >= 0.0) {
            return bad("early_stop_tol must be non-negative".into());
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: TrainConfig = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn spnet(&self) -> SpNetConfig {
        SpNetConfig {
            hidden: self.hidden,
            tau: self.tau,
            loss_weights: self.loss_weights,
            score_mode: self.similarity_mode,
            orthogonality: self.orthogonality,
            unk_buckets: self.unk_buckets,
        }
    }
}

/// Adaptive-moment optimizer with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    lr: f64,
    weight_decay: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Weights,
    v: Weights,
}

impl AdamW {
    pub fn new(like: &Weights, config: &TrainConfig) -> Self {
        AdamW {
            lr: config.learning_rate,
            weight_decay: config.weight_decay,
            beta1: config.beta1,
            beta2: config.beta2,
            eps: config.eps,
            step: 0,
            m: like.zeros_like(),
            v: like.zeros_like(),
        }
    }

    /// `p <- p - lr * wd * p - lr * m_hat / (sqrt(v_hat) + eps)`
    pub fn step(&mut self, params: &mut Weights, grads: &Weights) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        let (b1, b2) = (self.beta1, self.beta2);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.m.tensors_mut().into_iter().zip(self.v.tensors_mut()));
        for ((p, g), (m, v)) in tensors {
            let (p, g) = (p.as_mut_slice(), g.as_slice());
            let (m, v) = (m.as_mut_slice(), v.as_mut_slice());
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let update = (m[i] / c1) / ((v[i] / c2).sqrt() + self.eps);
                p[i] -= self.lr * (self.weight_decay * p[i] + update);
            }
        }
    }
}

/// Compares the mean loss of the last `window` steps with the window before.
fn converged(log: &[f64], window: usize, tol: f64) -> bool {
    if window == 0 || log.len() < 2 * window {
        return false;
    }
    let n = log.len();
    let recent: f64 = log[n - window..].iter().sum::<f64>() / window as f64;
    let before: f64 = log[n - 2 * window..n - window].iter().sum::<f64>() / window as f64;
    before - recent < tol
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: SpNetParams,
    /// Total loss of every optimizer step, in order.
    pub loss_log: Vec<f64>,
    pub early_stopped: bool,
}

/// Runs `config.epochs` passes over `episodes`, one AdamW step per episode,
/// stopping early once the moving-average loss stops improving.
pub fn train(params: SpNetParams, episodes: &[Episode], config: &TrainConfig) -> Result<TrainOutcome> {
    if episodes.is_empty() {
        return Err(Error::Invalid("no training episodes".into()));
    }
    config.validate()?;
    let mut params = params;
    params.validate()?;
    let prepared = episodes
        .iter()
        .map(|e| PreparedEpisode::new(&params, e))
        .collect::<Result<Vec<_>>>()?;
    let mut opt = AdamW::new(&params.weights, config);
    let mut loss_log = Vec::with_capacity(config.epochs * episodes.len());
    for _ in 0..config.epochs {
        for (index, ep) in prepared.iter().enumerate() {
            let (loss, grads) = prepared_backward(&params, ep)
                .map_err(|e| match e {
                    Error::NonFinite(what) => Error::NonFinite(format!("training episode {index}: {what}")),
                    other => other,
                })?;
            if !loss.total.is_finite() || !grads.is_finite() {
                return Err(Error::NonFinite(format!("training episode {index}: loss {}", loss.total)));
            }
            opt.step(&mut params.weights, &grads);
            if !params.weights.is_finite() {
                return Err(Error::NonFinite(format!("parameters after training episode {index}")));
            }
            loss_log.push(loss.total);
            if converged(&loss_log, config.early_stop_window, config.early_stop_tol) {
                return Ok(TrainOutcome {
                    params,
                    loss_log,
                    early_stopped: true,
                });
            }
        }
    }
    Ok(TrainOutcome {
        params,
        loss_log,
        early_stopped: false,
    })
}

pub fn write_loss_log<W: Write>(mut out: W, log: &[f64]) -> std::io::Result<()> {
    writeln!(out, "step,loss")?;
    for (i, l) in log.iter().enumerate() {
        writeln!(out, "{i},{l}")?;
    }
    Ok(())
}

/// An exact-match unit of span scoring; `end` is exclusive.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Span {
    pub slot: String,
    pub start: usize,
    pub end: usize,
}

/// Extracts slot spans from a BIO sequence. An `I-x` that does not continue
/// an open `x` span starts a new one.
pub fn extract_spans<S: AsRef<str>>(tags: &[S]) -> Vec<Span> {
    let mut spans = Vec::new();
    let mut open: Option<Span> = None;
    for (i, tag) in tags.iter().enumerate() {
        let tag = tag.as_ref();
        let (begin, slot) = match (tag.strip_prefix("B-"), tag.strip_prefix("I-")) {
            (Some(s), _) => (true, Some(s)),
            (_, Some(s)) => (false, Some(s)),
            _ => (false, None),
        };
        match slot {
            Some(s) if !begin && open.as_ref().is_some_and(|o| o.slot == s) => {
                open.as_mut().expect("checked").end = i + 1;
            }
            Some(s) => {
                spans.extend(open.take());
                open = Some(Span {
                    slot: s.to_string(),
                    start: i,
                    end: i + 1,
                });
            }
            None => spans.extend(open.take()),
        }
    }
    spans.extend(open);
    spans
}

/// Word classes to BIO: runs of the same slot become one span.
pub fn classes_to_bio<S: AsRef<str>>(classes: &[S]) -> Vec<String> {
    let mut out = Vec::with_capacity(classes.len());
    for (i, c) in classes.iter().enumerate() {
        let c = c.as_ref();
        if c == OUTSIDE {
            out.push(OUTSIDE.to_string());
        } else if i > 0 && classes[i - 1].as_ref() == c {
            out.push(format!("I-{c}"));
        } else {
            out.push(format!("B-{c}"));
        }
    }
    out
}

/// Micro-averaged span counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct SpanCounts {
    pub correct: usize,
    pub predicted: usize,
    pub gold: usize,
}

impl SpanCounts {
    pub fn add_sequence<S: AsRef<str>, T: AsRef<str>>(&mut self, gold: &[S], predicted: &[T]) {
        let gold: BTreeSet<Span> = extract_spans(gold).into_iter().collect();
        let pred: BTreeSet<Span> = extract_spans(predicted).into_iter().collect();
        self.correct += gold.intersection(&pred).count();
        self.gold += gold.len();
        self.predicted += pred.len();
    }

    pub fn precision(&self) -> f64 {
        ratio(self.correct, self.predicted)
    }

    pub fn recall(&self) -> f64 {
        ratio(self.correct, self.gold)
    }

    pub fn f1(&self) -> f64 {
        let (p, r) = (self.precision(), self.recall());
        if p + r > 0.0 {
            2.0 * p * r / (p + r)
        } else {
            0.0
        }
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub per_seed_f1: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl EvalResult {
    fn single(counts: SpanCounts) -> Self {
        let f1 = counts.f1();
        EvalResult {
            f1,
            precision: counts.precision(),
            recall: counts.recall(),
            per_seed_f1: vec![f1],
            mean: f1,
            std: 0.0,
        }
    }

    /// Aggregates per-seed results; `f1`, `precision` and `recall` are means.
    pub fn from_seeds(results: &[EvalResult]) -> Self {
        let n = results.len().max(1) as f64;
        let per_seed_f1: Vec<f64> = results.iter().map(|r| r.f1).collect();
        let (mean, std) = mean_std(&per_seed_f1);
        EvalResult {
            f1: mean,
            precision: results.iter().map(|r| r.precision).sum::<f64>() / n,
            recall: results.iter().map(|r| r.recall).sum::<f64>() / n,
            per_seed_f1,
            mean,
            std,
        }
    }
}

/// Mean and sample standard deviation (0 for fewer than two values).
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Predicted BIO tags for every query sentence of an episode.
pub fn predict_tags(params: &SpNetParams, episode: &Episode) -> Result<Vec<Vec<String>>> {
    let prepared = PreparedEpisode::new(params, episode)?;
    let prediction = predict_episode(params, &prepared)?;
    let mut out = Vec::with_capacity(episode.query.len());
    let mut offset = 0;
    for &len in &prepared.query_lengths {
        let classes: Vec<&str> = prediction.labels[offset..offset + len]
            .iter()
            .map(|&c| prepared.classes[c].as_str())
            .collect();
        out.push(classes_to_bio(&classes));
        offset += len;
    }
    Ok(out)
}

/// Micro span P/R/F1 over every query sentence of every episode.
pub fn evaluate(params: &SpNetParams, episodes: &[Episode]) -> Result<EvalResult> {
    if !params.weights.is_finite() {
        return Err(Error::NonFinite("parameters".into()));
    }
    let mut counts = SpanCounts::default();
    for episode in episodes {
        let predicted = predict_tags(params, episode)?;
        for (sentence, tags) in episode.query.iter().zip(&predicted) {
            counts.add_sequence(&sentence.labels, tags);
        }
    }
    Ok(EvalResult::single(counts))
}

/// Verbatim tokens of the given domains, sorted and deduplicated.
pub fn token_vocabulary(domains: &[&Domain]) -> Vec<String> {
    let set: BTreeSet<&str> = domains
        .iter()
        .flat_map(|d| d.sentences().iter())
        .flat_map(|s| s.tokens.iter().map(String::as_str))
        .collect();
    set.into_iter().map(String::from).collect()
}

/// Evaluation episodes of `target` for one seed. They depend only on the
/// target and the seed, so every source combination is scored on the same tasks.
pub fn target_episodes(target: &Domain, config: &TrainConfig, seed: u64) -> Result<Vec<Episode>> {
    let spec = EpisodeSpec::new(config.k_shot, config.eval_episodes, seed ^ EVAL_SEED_SALT).query_size(config.query_size);
    build_episodes_with(target, spec)
}

/// One training run on the merged sources and its evaluation on the target.
pub fn run_seed(sources: &[&Domain], target: &Domain, config: &TrainConfig, seed: u64) -> Result<EvalResult> {
    if sources.is_empty() {
        return Err(Error::Invalid("no source domains".into()));
    }
    let merged = merge_domains(sources, "sources")?;
    let mut all: Vec<&Domain> = sources.to_vec();
    all.push(target);
    let vocab = token_vocabulary(&all);
    let params = SpNetParams::init(vocab.iter().map(String::as_str), &config.spnet(), seed)?;
    let spec = EpisodeSpec::new(config.k_shot, config.train_episodes, seed).query_size(config.query_size);
    let train_eps = build_episodes_with(&merged, spec)?;
    let outcome = train(params, &train_eps, config)?;
    evaluate(&outcome.params, &target_episodes(target, config, seed)?)
}

/// Trains on the merged sources and evaluates on the target once per seed.
pub fn run_experiment(sources: &[&Domain], target: &Domain, config: &TrainConfig) -> Result<EvalResult> {
    config.validate()?;
    let per_seed = config
        .seeds
        .iter()
        .map(|&seed| run_seed(sources, target, config, seed))
        .collect::<Result<Vec<_>>>()?;
    Ok(EvalResult::from_seeds(&per_seed))
}
