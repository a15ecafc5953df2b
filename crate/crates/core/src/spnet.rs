//! Shared-private prototype network.
//!
//! Words are embedded by a trainable token table mixed over a one-word
//! window, passed through a shared and a private residual layer, and
//! classified against per-class prototypes of the shared features. The four
//! training losses are built on an [`autodiff::Graph`](crate::autodiff::Graph)
//! so every parameter receives an exact gradient.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{Graph, Var};
use crate::corpus::{Episode, LabeledSentence, OUTSIDE};
use crate::error::{Error, Result};
use crate::tensor::{norm, Matrix};

/// Floor applied to pairwise divergences before the logarithm.
pub const DIVERGENCE_EPS: f64 = 1e-8;
/// Probabilities fed to the cross-entropy are kept inside `[eps, 1 - eps]`.
pub const PROB_EPS: f64 = 1e-7;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScoreMode {
    #[default]
    Cosine,
    /// Projection onto the prototype direction minus half the prototype norm.
    Vpb,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrthogonalityMode {
    /// Mean over words of `|shared_i . private_i|`.
    #[default]
    PerWord,
    /// Squared Frobenius norm of `shared^T private`.
    Frobenius,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
    pub delta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            alpha: 0.2,
            beta: 0.1,
            gamma: 0.2,
            delta: 0.5,
        }
    }
}

impl LossWeights {
    pub fn as_array(&self) -> [f64; 4] {
        [self.alpha, self.beta, self.gamma, self.delta]
    }

    pub fn zero() -> Self {
        LossWeights {
            alpha: 0.0,
            beta: 0.0,
            gamma: 0.0,
            delta: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpNetConfig {
    pub hidden: usize,
    pub tau: f64,
    pub loss_weights: LossWeights,
    pub score_mode: ScoreMode,
    pub orthogonality: OrthogonalityMode,
    /// Rows shared by out-of-vocabulary tokens, picked by hash.
    pub unk_buckets: usize,
}

impl Default for SpNetConfig {
    fn default() -> Self {
        SpNetConfig {
            hidden: 16,
            tau: 0.5,
            loss_weights: LossWeights::default(),
            score_mode: ScoreMode::Cosine,
            orthogonality: OrthogonalityMode::PerWord,
            unk_buckets: 64,
        }
    }
}

/// The trainable tensors, also used to hold their gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    pub table: Matrix,
    pub w_shared: Matrix,
    pub b_shared: Matrix,
    pub w_private: Matrix,
    pub b_private: Matrix,
}

impl Weights {
    pub const NAMES: [&'static str; 5] = ["token_embeddings", "w_shared", "b_shared", "w_private", "b_private"];

    pub fn tensors(&self) -> [&Matrix; 5] {
        [&self.table, &self.w_shared, &self.b_shared, &self.w_private, &self.b_private]
    }

    pub fn tensors_mut(&mut self) -> [&mut Matrix; 5] {
        [
            &mut self.table,
            &mut self.w_shared,
            &mut self.b_shared,
            &mut self.w_private,
            &mut self.b_private,
        ]
    }

    pub fn zeros_like(&self) -> Weights {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Weights {
            table: z(&self.table),
            w_shared: z(&self.w_shared),
            b_shared: z(&self.b_shared),
            w_private: z(&self.w_private),
            b_private: z(&self.b_private),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|m| m.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SpNetParams {
    /// Token (verbatim) to table row.
    pub vocab: BTreeMap<String, usize>,
    pub unk_buckets: usize,
    pub weights: Weights,
    pub tau: f64,
    pub loss_weights: LossWeights,
    pub score_mode: ScoreMode,
    pub orthogonality: OrthogonalityMode,
}

fn hash64(seed: u64, key: &str) -> [u8; 32] {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(key.as_bytes());
    hasher.finalize().into()
}

/// Unit-norm Gaussian direction derived from `(seed, key)`.
pub fn hashed_unit_vector(seed: u64, key: &str, h: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::from_seed(hash64(seed, key));
    loop {
        let v: Vec<f64> = (0..h).map(|_| StandardNormal.sample(&mut rng)).collect();
        let n = norm(&v);
        if n > 0.0 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

impl SpNetParams {
    /// Builds the parameter set for a vocabulary. Token rows start at a
    /// unit vector derived from a hash of `(seed, token)`; layer weights are
    /// Gaussian with variance `1/h`, biases zero.
    pub fn init<'a>(vocabulary: impl IntoIterator<Item = &'a str>, config: &SpNetConfig, seed: u64) -> Result<Self> {
        let h = config.hidden;
        if h == 0 {
            return Err(Error::Invalid("hidden width must be positive".into()));
        }
        if !(config.tau > 0.0) {
            return Err(Error::Invalid(format!("temperature {} must be positive", config.tau)));
        }
        let mut vocab = BTreeMap::new();
        for token in vocabulary {
            let next = vocab.len();
            vocab.entry(token.to_owned()).or_insert(next);
        }
        let mut rows: Vec<(usize, String)> = vocab.iter().map(|(t, &r)| (r, t.clone())).collect();
        rows.sort();
        let mut table = Matrix::zeros(vocab.len() + config.unk_buckets, h);
        for (r, token) in &rows {
            table.row_mut(*r).copy_from_slice(&hashed_unit_vector(seed, token, h));
        }
        for b in 0..config.unk_buckets {
            let key = format!("\u{0}unk{b}");
            table.row_mut(vocab.len() + b).copy_from_slice(&hashed_unit_vector(seed, &key, h));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_1a7e_u64);
        let normal = Normal::new(0.0, 1.0 / (h as f64).sqrt()).expect("valid std");
        let mut dense = || Matrix::from_vec(h, h, (0..h * h).map(|_| normal.sample(&mut rng)).collect());
        let w_shared = dense();
        let w_private = dense();
        let params = SpNetParams {
            vocab,
            unk_buckets: config.unk_buckets,
            weights: Weights {
                table,
                w_shared,
                b_shared: Matrix::zeros(1, h),
                w_private,
                b_private: Matrix::zeros(1, h),
            },
            tau: config.tau,
            loss_weights: config.loss_weights,
            score_mode: config.score_mode,
            orthogonality: config.orthogonality,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn hidden(&self) -> usize {
        self.weights.w_shared.rows()
    }

    /// Table row of a token; unknown tokens fall into a hashed bucket.
    pub fn row_of(&self, token: &str) -> usize {
        if let Some(&r) = self.vocab.get(token) {
            return r;
        }
        if self.unk_buckets == 0 {
            // Without buckets every unknown token shares the last row.
            return self.weights.table.rows() - 1;
        }
        let digest = hash64(0, token);
        let bucket = u64::from_le_bytes(digest[..8].try_into().expect("8 bytes")) % self.unk_buckets as u64;
        self.vocab.len() + bucket as usize
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hidden();
        if h == 0 {
            return Err(Error::Shape("hidden width is zero".into()));
        }
        let w = &self.weights;
        let shapes = [
            (w.table.cols(), h, "token_embeddings width"),
            (w.w_shared.cols(), h, "w_shared cols"),
            (w.w_private.rows(), h, "w_private rows"),
            (w.w_private.cols(), h, "w_private cols"),
            (w.b_shared.cols(), h, "b_shared width"),
            (w.b_private.cols(), h, "b_private width"),
            (w.b_shared.rows(), 1, "b_shared rows"),
            (w.b_private.rows(), 1, "b_private rows"),
            (w.table.rows(), self.vocab.len() + self.unk_buckets, "token_embeddings rows"),
        ];
        for (got, want, what) in shapes {
            if got != want {
                return Err(Error::Shape(format!("{what}: {got}, expected {want}")));
            }
        }
        if w.table.rows() == 0 {
            return Err(Error::Invalid("token table has no rows".into()));
        }
        if self.vocab.values().any(|&r| r >= self.vocab.len()) {
            return Err(Error::Invalid("vocabulary row index out of range".into()));
        }
        if !w.is_finite() {
            return Err(Error::NonFinite("parameters".into()));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::Invalid(format!("temperature {} must be positive", self.tau)));
        }
        if self.loss_weights.as_array().iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(Error::Invalid("loss weights must be non-negative".into()));
        }
        Ok(())
    }

    fn taps(&self, sentence: &LabeledSentence) -> Vec<Vec<(usize, f64)>> {
        let rows: Vec<usize> = sentence.tokens.iter().map(|t| self.row_of(t)).collect();
        (0..rows.len())
            .map(|i| {
                let mut taps = vec![(rows[i], 1.0)];
                if i > 0 {
                    taps.push((rows[i - 1], 0.5));
                }
                if i + 1 < rows.len() {
                    taps.push((rows[i + 1], 0.5));
                }
                taps
            })
            .collect()
    }
}

struct ParamVars {
    table: Var,
    w_shared: Var,
    b_shared: Var,
    w_private: Var,
    b_private: Var,
}

impl ParamVars {
    fn attach(g: &mut Graph, w: &Weights) -> ParamVars {
        ParamVars {
            table: g.leaf(w.table.clone()),
            w_shared: g.leaf(w.w_shared.clone()),
            b_shared: g.leaf(w.b_shared.clone()),
            w_private: g.leaf(w.w_private.clone()),
            b_private: g.leaf(w.b_private.clone()),
        }
    }

    fn vars(&self) -> [Var; 5] {
        [self.table, self.w_shared, self.b_shared, self.w_private, self.b_private]
    }
}

/// `x + relu(x W + b)`
fn residual_layer(g: &mut Graph, x: Var, w: Var, b: Var) -> Result<Var> {
    let lin = g.matmul(x, w)?;
    let lin = g.add_row(lin, b)?;
    let act = g.relu(lin);
    g.add(x, act)
}

fn orthogonality_node(g: &mut Graph, shared: Var, private: Var, mode: OrthogonalityMode) -> Result<Var> {
    match mode {
        OrthogonalityMode::PerWord => {
            let d = g.row_dot(shared, private)?;
            let a = g.abs(d);
            Ok(g.mean(a))
        }
        OrthogonalityMode::Frobenius => {
            let st = g.transpose(shared);
            let m = g.matmul(st, private)?;
            Ok(g.sum_squares(m))
        }
    }
}

fn contrastive_node(g: &mut Graph, shared: Var, classes: &[usize], tau: f64) -> Result<Var> {
    let n = g.normalize_rows(shared);
    let sim = g.matmul_t(n, n)?;
    g.contrastive(sim, classes, tau)
}

fn divergence_node(g: &mut Graph, private: Var) -> Result<Var> {
    let centered = g.center_rows(private);
    let d = g.matmul_t(centered, centered)?;
    Ok(g.clamp_log_mean(d, DIVERGENCE_EPS))
}

fn scores_node(g: &mut Graph, query: Var, protos: Var, mode: ScoreMode) -> Result<Var> {
    match mode {
        ScoreMode::Cosine => {
            let q = g.normalize_rows(query);
            let p = g.normalize_rows(protos);
            g.matmul_t(q, p)
        }
        ScoreMode::Vpb => {
            let p = g.normalize_rows(protos);
            let proj = g.matmul_t(query, p)?;
            let norms = g.row_norms(protos);
            let norms = g.transpose(norms);
            let half = g.scale(norms, -0.5);
            g.add_row(proj, half)
        }
    }
}

fn probabilities_node(g: &mut Graph, scores: Var, mode: ScoreMode) -> Var {
    let p = match mode {
        ScoreMode::Cosine => g.affine(scores, 0.5, 0.5),
        ScoreMode::Vpb => g.sigmoid(scores),
    };
    g.clamp(p, PROB_EPS, 1.0 - PROB_EPS)
}

fn one_hot(labels: &[Option<usize>], classes: usize) -> Matrix {
    let mut m = Matrix::zeros(labels.len(), classes);
    for (i, l) in labels.iter().enumerate() {
        if let Some(c) = *l {
            if c < classes {
                m[(i, c)] = 1.0;
            }
        }
    }
    m
}

fn require_words(n: usize, what: &str) -> Result<()> {
    if n < 2 {
        return Err(Error::Invalid(format!("{what} needs at least 2 support words, got {n}")));
    }
    Ok(())
}

/// Word vectors of one sentence: each token's row plus half of each neighbor's.
pub fn encode(params: &SpNetParams, sentence: &LabeledSentence) -> Matrix {
    let mut g = Graph::new();
    let table = g.leaf(params.weights.table.clone());
    let e = g.mix(table, params.taps(sentence)).expect("taps index the table");
    g.value(e).clone()
}

fn apply_layer(e: &Matrix, w: &Matrix, b: &Matrix) -> Result<Matrix> {
    let mut g = Graph::new();
    let (x, w, b) = (g.leaf(e.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
    let out = residual_layer(&mut g, x, w, b)?;
    Ok(g.value(out).clone())
}

/// Shared features `E + relu(E W_s + b_s)`, per word.
pub fn shared_forward(params: &SpNetParams, e: &Matrix) -> Result<Matrix> {
    apply_layer(e, &params.weights.w_shared, &params.weights.b_shared)
}

/// Private features `E + relu(E W_p + b_p)`, per word.
pub fn private_forward(params: &SpNetParams, e: &Matrix) -> Result<Matrix> {
    apply_layer(e, &params.weights.w_private, &params.weights.b_private)
}

/// Contrastive loss over the support shared features. Returns the loss and
/// the number of zero-norm vectors that were given similarity 0.
pub fn contrastive_loss(support_shared: &Matrix, word_classes: &[usize], tau: f64) -> Result<(f64, usize)> {
    require_words(support_shared.rows(), "contrastive loss")?;
    let mut g = Graph::new();
    let x = g.leaf(support_shared.clone());
    let l = contrastive_node(&mut g, x, word_classes, tau)?;
    Ok((g.value(l).item(), g.zero_norm_rows()))
}

/// Divergence loss `-(1/n^2) sum log max(D_ij, eps)` over centered private features.
pub fn divergence_loss(support_private: &Matrix) -> Result<f64> {
    require_words(support_private.rows(), "divergence loss")?;
    let mut g = Graph::new();
    let x = g.leaf(support_private.clone());
    let l = divergence_node(&mut g, x)?;
    Ok(g.value(l).item())
}

pub fn orthogonality_loss(support_shared: &Matrix, support_private: &Matrix, mode: OrthogonalityMode) -> Result<f64> {
    let mut g = Graph::new();
    let s = g.leaf(support_shared.clone());
    let p = g.leaf(support_private.clone());
    let l = orthogonality_node(&mut g, s, p, mode)?;
    Ok(g.value(l).item())
}

/// Class prototypes: row `c` is the mean shared vector of class `c`.
#[derive(Clone, Debug, PartialEq)]
pub struct PrototypeSet {
    pub vectors: Matrix,
}

impl PrototypeSet {
    pub fn len(&self) -> usize {
        self.vectors.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.rows() == 0
    }
}

pub fn prototypes(support_shared: &Matrix, word_classes: &[usize], class_count: usize) -> Result<PrototypeSet> {
    let mut g = Graph::new();
    let x = g.leaf(support_shared.clone());
    let p = g.class_mean(x, word_classes, class_count)?;
    Ok(PrototypeSet {
        vectors: g.value(p).clone(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// Word x class scores.
    pub scores: Matrix,
    /// Highest-scoring class per word; ties go to the lower class index.
    pub labels: Vec<usize>,
    pub zero_norm_vectors: usize,
}

pub fn argmax_rows(scores: &Matrix) -> Vec<usize> {
    (0..scores.rows())
        .map(|i| {
            let row = scores.row(i);
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

pub fn predict(query_shared: &Matrix, prototypes: &PrototypeSet, mode: ScoreMode) -> Result<Prediction> {
    if prototypes.is_empty() {
        return Err(Error::Invalid("empty prototype set".into()));
    }
    let mut g = Graph::new();
    let q = g.leaf(query_shared.clone());
    let p = g.leaf(prototypes.vectors.clone());
    let s = scores_node(&mut g, q, p, mode)?;
    let scores = g.value(s).clone();
    Ok(Prediction {
        labels: argmax_rows(&scores),
        scores,
        zero_norm_vectors: g.zero_norm_rows(),
    })
}

/// Binary cross-entropy between squashed scores and one-hot word classes.
/// A `None` label marks a word whose class has no prototype.
pub fn bce_loss(scores: &Matrix, word_classes: &[Option<usize>], mode: ScoreMode) -> Result<f64> {
    if word_classes.len() != scores.rows() {
        return Err(Error::Shape(format!("{} labels for {} score rows", word_classes.len(), scores.rows())));
    }
    if !scores.is_finite() {
        return Err(Error::NonFinite("scores".into()));
    }
    let mut g = Graph::new();
    let s = g.leaf(scores.clone());
    let p = probabilities_node(&mut g, s, mode);
    let l = g.bce(p, one_hot(word_classes, scores.cols()))?;
    Ok(g.value(l).item())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub contrastive: f64,
    pub divergence: f64,
    pub orthogonality: f64,
    pub bce: f64,
    pub total: f64,
}

pub fn total_loss(l1: f64, l2: f64, l3: f64, l4: f64, weights: &LossWeights) -> f64 {
    weights.alpha * l1 + weights.beta * l2 + weights.gamma * l3 + weights.delta * l4
}

/// Word-level class inventory of an episode: `O` first when the support
/// has outside words, then the support slots in inventory order.
pub fn episode_classes(episode: &Episode) -> Vec<String> {
    let has_outside = episode
        .support
        .iter()
        .any(|s| s.labels.iter().any(|l| l == OUTSIDE));
    let mut classes = Vec::with_capacity(episode.label_inventory.len() + 1);
    if has_outside {
        classes.push(OUTSIDE.to_string());
    }
    classes.extend(episode.label_inventory.iter().cloned());
    classes
}

/// An episode flattened to words, with class ids resolved.
#[derive(Clone, Debug)]
pub struct PreparedEpisode {
    pub classes: Vec<String>,
    support_taps: Vec<Vec<(usize, f64)>>,
    query_taps: Vec<Vec<(usize, f64)>>,
    pub support_classes: Vec<usize>,
    pub query_classes: Vec<Option<usize>>,
    /// Word count of every query sentence, in order.
    pub query_lengths: Vec<usize>,
}

impl PreparedEpisode {
    pub fn new(params: &SpNetParams, episode: &Episode) -> Result<Self> {
        let classes = episode_classes(episode);
        let class_id = |name: &str| classes.iter().position(|c| c == name);
        let mut support_taps = Vec::new();
        let mut support_classes = Vec::new();
        for s in &episode.support {
            support_taps.extend(params.taps(s));
            for c in s.word_classes() {
                support_classes.push(class_id(c).ok_or_else(|| {
                    Error::Invalid(format!("support class {c:?} missing from the inventory"))
                })?);
            }
        }
        let mut query_taps = Vec::new();
        let mut query_classes = Vec::new();
        let mut query_lengths = Vec::new();
        for s in &episode.query {
            query_taps.extend(params.taps(s));
            query_classes.extend(s.word_classes().map(class_id));
            query_lengths.push(s.len());
        }
        Ok(PreparedEpisode {
            classes,
            support_taps,
            query_taps,
            support_classes,
            query_classes,
            query_lengths,
        })
    }

    pub fn support_words(&self) -> usize {
        self.support_taps.len()
    }

    pub fn query_words(&self) -> usize {
        self.query_taps.len()
    }
}

/// Per-word features of one episode.
#[derive(Clone, Debug)]
pub struct EncodedEpisode {
    pub support_shared: Matrix,
    pub support_private: Matrix,
    pub query_shared: Matrix,
    pub word_labels: Vec<usize>,
    pub class_count: usize,
}

struct EpisodeGraph {
    graph: Graph,
    params: ParamVars,
    support_shared: Var,
    support_private: Var,
    query_shared: Var,
    scores: Var,
    parts: [Var; 4],
    total: Var,
}

fn build_graph(params: &SpNetParams, prepared: &PreparedEpisode) -> Result<EpisodeGraph> {
    require_words(prepared.support_words(), "episode")?;
    let mut g = Graph::new();
    let pv = ParamVars::attach(&mut g, &params.weights);
    let e_support = g.mix(pv.table, prepared.support_taps.clone())?;
    let e_query = g.mix(pv.table, prepared.query_taps.clone())?;
    let support_shared = residual_layer(&mut g, e_support, pv.w_shared, pv.b_shared)?;
    let support_private = residual_layer(&mut g, e_support, pv.w_private, pv.b_private)?;
    let query_shared = residual_layer(&mut g, e_query, pv.w_shared, pv.b_shared)?;

    let l1 = contrastive_node(&mut g, support_shared, &prepared.support_classes, params.tau)?;
    let l1 = g.label(l1, "contrastive");
    let l2 = divergence_node(&mut g, support_private)?;
    let l2 = g.label(l2, "divergence");
    let l3 = orthogonality_node(&mut g, support_shared, support_private, params.orthogonality)?;
    let l3 = g.label(l3, "orthogonality");
    let protos = g.class_mean(support_shared, &prepared.support_classes, prepared.classes.len())?;
    let scores = scores_node(&mut g, query_shared, protos, params.score_mode)?;
    let probs = probabilities_node(&mut g, scores, params.score_mode);
    let l4 = g.bce(probs, one_hot(&prepared.query_classes, prepared.classes.len()))?;
    let l4 = g.label(l4, "bce");
    let lw = params.loss_weights;
    let total = g.weighted_sum(&[(l1, lw.alpha), (l2, lw.beta), (l3, lw.gamma), (l4, lw.delta)])?;
    let total = g.label(total, "total");
    Ok(EpisodeGraph {
        graph: g,
        params: pv,
        support_shared,
        support_private,
        query_shared,
        scores,
        parts: [l1, l2, l3, l4],
        total,
    })
}

impl EpisodeGraph {
    fn breakdown(&self) -> LossBreakdown {
        let v = |x: Var| self.graph.value(x).item();
        LossBreakdown {
            contrastive: v(self.parts[0]),
            divergence: v(self.parts[1]),
            orthogonality: v(self.parts[2]),
            bce: v(self.parts[3]),
            total: v(self.total),
        }
    }
}

pub fn encode_episode(params: &SpNetParams, episode: &Episode) -> Result<EncodedEpisode> {
    let prepared = PreparedEpisode::new(params, episode)?;
    let eg = build_graph(params, &prepared)?;
    Ok(EncodedEpisode {
        support_shared: eg.graph.value(eg.support_shared).clone(),
        support_private: eg.graph.value(eg.support_private).clone(),
        query_shared: eg.graph.value(eg.query_shared).clone(),
        word_labels: prepared.support_classes,
        class_count: prepared.classes.len(),
    })
}

pub fn episode_loss(params: &SpNetParams, episode: &Episode) -> Result<LossBreakdown> {
    let prepared = PreparedEpisode::new(params, episode)?;
    prepared_loss(params, &prepared)
}

pub fn prepared_loss(params: &SpNetParams, prepared: &PreparedEpisode) -> Result<LossBreakdown> {
    let eg = build_graph(params, prepared)?;
    eg.graph.ensure_finite(eg.total)?;
    Ok(eg.breakdown())
}

/// Loss components and the gradient of the weighted total with respect to
/// every trainable tensor.
pub fn backward(params: &SpNetParams, episode: &Episode) -> Result<(LossBreakdown, Weights)> {
    let prepared = PreparedEpisode::new(params, episode)?;
    prepared_backward(params, &prepared)
}

pub fn prepared_backward(params: &SpNetParams, prepared: &PreparedEpisode) -> Result<(LossBreakdown, Weights)> {
    let eg = build_graph(params, prepared)?;
    eg.graph.ensure_finite(eg.total)?;
    let grads = eg.graph.backward(eg.total)?;
    let mut out = params.weights.zeros_like();
    for (slot, var) in out.tensors_mut().into_iter().zip(eg.params.vars()) {
        if let Some(g) = grads.get(var) {
            *slot = g.clone();
        }
    }
    Ok((eg.breakdown(), out))
}

/// Word-class scores and argmax labels for every query word.
pub fn predict_episode(params: &SpNetParams, prepared: &PreparedEpisode) -> Result<Prediction> {
    let eg = build_graph(params, prepared)?;
    let scores = eg.graph.value(eg.scores).clone();
    Ok(Prediction {
        labels: argmax_rows(&scores),
        scores,
        zero_norm_vectors: eg.graph.zero_norm_rows(),
    })
}
