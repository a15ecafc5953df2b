//! Multi-domain BIO-tagged corpora and K-shot episode construction.
//!
//! Domain files are JSON Lines: one `{"tokens": [...], "labels": [...]}`
//! object per line.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label used for words outside of any slot.
pub const OUTSIDE: &str = "O";

/// Default number of query sentences drawn per episode.
pub const DEFAULT_QUERY_SIZE: usize = 16;

/// Slot name carried by a BIO tag, or `None` for `O`.
pub fn slot_name(label: &str) -> Option<&str> {
    label
        .strip_prefix("B-")
        .or_else(|| label.strip_prefix("I-"))
}

/// Checks strict BIO validity of a tag sequence. On failure returns the
/// offending position and a description.
pub fn validate_bio<S: AsRef<str>>(labels: &[S]) -> std::result::Result<(), (usize, String)> {
    let mut open: Option<&str> = None;
    for (i, label) in labels.iter().enumerate() {
        let label = label.as_ref();
        if label == OUTSIDE {
            open = None;
        } else if let Some(slot) = label.strip_prefix("B-") {
            if slot.is_empty() {
                return Err((i, format!("tag {label:?} has an empty slot name")));
            }
            open = Some(slot);
        } else if let Some(slot) = label.strip_prefix("I-") {
            if slot.is_empty() {
                return Err((i, format!("tag {label:?} has an empty slot name")));
            }
            if open != Some(slot) {
                return Err((
                    i,
                    format!("tag {label:?} is not preceded by B-{slot} or I-{slot}"),
                ));
            }
        } else {
            return Err((i, format!("tag {label:?} is not O, B-<slot> or I-<slot>")));
        }
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSentence {
    pub tokens: Vec<String>,
    pub labels: Vec<String>,
}

impl LabeledSentence {
    pub fn new(tokens: Vec<String>, labels: Vec<String>) -> Result<Self> {
        let sentence = LabeledSentence { tokens, labels };
        sentence.check().map_err(|message| Error::InvalidSentence {
            index: 0,
            message,
        })?;
        Ok(sentence)
    }

    fn check(&self) -> std::result::Result<(), String> {
        if self.tokens.is_empty() {
            return Err("sentence has no tokens".into());
        }
        if self.tokens.len() != self.labels.len() {
            return Err(format!(
                "{} tokens but {} labels",
                self.tokens.len(),
                self.labels.len()
            ));
        }
        validate_bio(&self.labels).map_err(|(pos, msg)| format!("invalid BIO at position {pos}: {msg}"))
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Distinct slot names in this sentence.
    pub fn slots(&self) -> BTreeSet<&str> {
        self.labels.iter().filter_map(|l| slot_name(l)).collect()
    }

    /// Word-level classes: slot name with the BIO prefix removed, or `O`.
    pub fn word_classes(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| slot_name(l).unwrap_or(OUTSIDE))
    }
}

/// A named collection of labeled sentences with derived vocabulary and slot set.
#[derive(Clone, Debug, PartialEq)]
pub struct Domain {
    pub name: String,
    sentences: Vec<LabeledSentence>,
    vocabulary: BTreeSet<String>,
    label_set: BTreeSet<String>,
}

impl Domain {
    pub fn new(name: impl Into<String>, sentences: Vec<LabeledSentence>) -> Result<Self> {
        for (index, s) in sentences.iter().enumerate() {
            s.check()
                .map_err(|message| Error::InvalidSentence { index, message })?;
        }
        let mut vocabulary = BTreeSet::new();
        let mut label_set = BTreeSet::new();
        for s in &sentences {
            vocabulary.extend(s.tokens.iter().map(|t| t.to_lowercase()));
            label_set.extend(s.slots().into_iter().map(str::to_owned));
        }
        Ok(Domain {
            name: name.into(),
            sentences,
            vocabulary,
            label_set,
        })
    }

    /// Parses JSON Lines content. Blank lines are ignored; line numbers in
    /// errors are 1-based.
    pub fn from_jsonl(name: impl Into<String>, text: &str) -> Result<Self> {
        let mut sentences = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let sentence: LabeledSentence =
                serde_json::from_str(line).map_err(|e| Error::MalformedLine {
                    line: i + 1,
                    message: e.to_string(),
                })?;
            sentences.push(sentence);
        }
        Domain::new(name, sentences)
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            // Serializing a struct of string vectors cannot fail.
            let line = serde_json::to_string(s).expect("sentence serializes");
            let _ = writeln!(out, "{line}");
        }
        out
    }

    pub fn sentences(&self) -> &[LabeledSentence] {
        &self.sentences
    }

    /// Lowercased unique tokens.
    pub fn vocabulary(&self) -> &BTreeSet<String> {
        &self.vocabulary
    }

    /// Unique slot names, BIO prefixes stripped, `O` excluded.
    pub fn label_set(&self) -> &BTreeSet<String> {
        &self.label_set
    }

    /// Unique raw tags including `O` and the BIO prefixes.
    pub fn raw_label_set(&self) -> BTreeSet<String> {
        self.sentences
            .iter()
            .flat_map(|s| s.labels.iter().cloned())
            .collect()
    }

    pub fn size(&self) -> usize {
        self.sentences.len()
    }

    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(LabeledSentence::len).sum()
    }

    pub fn with_name(mut self, name: impl Into<String>) -> Self {
        self.name = name.into();
        self
    }
}

pub fn load_domain(path: impl AsRef<Path>, name: &str) -> Result<Domain> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Domain::from_jsonl(name, &text)
}

/// Loads a domain whose name is the file stem.
pub fn load_domain_file(path: impl AsRef<Path>) -> Result<Domain> {
    let path = path.as_ref();
    let name = path
        .file_stem()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Error::Invalid(format!("cannot derive a domain name from {}", path.display())))?;
    load_domain(path, name)
}

pub fn save_domain(domain: &Domain, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, domain.to_jsonl()).map_err(|e| Error::io(path, e))
}

/// Concatenates sentences in input order; vocabulary and slot set are unions.
pub fn merge_domains(domains: &[&Domain], name: &str) -> Result<Domain> {
    if domains.is_empty() {
        return Err(Error::Invalid("cannot merge an empty list of domains".into()));
    }
    let mut sentences = Vec::with_capacity(domains.iter().map(|d| d.size()).sum());
    let mut vocabulary = BTreeSet::new();
    let mut label_set = BTreeSet::new();
    for d in domains {
        sentences.extend(d.sentences.iter().cloned());
        vocabulary.extend(d.vocabulary.iter().cloned());
        label_set.extend(d.label_set.iter().cloned());
    }
    Ok(Domain {
        name: name.to_owned(),
        sentences,
        vocabulary,
        label_set,
    })
}

/// One few-shot task: a K-shot support set and a query set.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub support: Vec<LabeledSentence>,
    pub query: Vec<LabeledSentence>,
    pub k: usize,
    /// Slot names present in the support set, sorted.
    pub label_inventory: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct EpisodeDump {
    support: Vec<LabeledSentence>,
    query: Vec<LabeledSentence>,
    k: usize,
}

impl Episode {
    pub fn new(support: Vec<LabeledSentence>, query: Vec<LabeledSentence>, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Invalid("k must be at least 1".into()));
        }
        if support.is_empty() {
            return Err(Error::Invalid("episode has an empty support set".into()));
        }
        for (index, s) in support.iter().chain(query.iter()).enumerate() {
            s.check()
                .map_err(|message| Error::InvalidSentence { index, message })?;
        }
        let counts = slot_sentence_counts(&support);
        if let Some((label, &available)) = counts.iter().find(|(_, &c)| c < k) {
            return Err(Error::InsufficientShots {
                label: label.to_string(),
                available,
                required: k,
            });
        }
        let label_inventory: Vec<String> = counts.keys().map(|s| s.to_string()).collect();
        for s in &query {
            for slot in s.slots() {
                if !counts.contains_key(slot) {
                    return Err(Error::Invalid(format!(
                        "query slot {slot:?} does not occur in the support set"
                    )));
                }
            }
        }
        Ok(Episode {
            support,
            query,
            k,
            label_inventory,
        })
    }

    /// Serializes as `{"support":[…],"query":[…],"k":K}`.
    pub fn to_json(&self) -> String {
        let dump = EpisodeDump {
            support: self.support.clone(),
            query: self.query.clone(),
            k: self.k,
        };
        serde_json::to_string(&dump).expect("episode serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let dump: EpisodeDump =
            serde_json::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        Episode::new(dump.support, dump.query, dump.k)
    }
}

/// Writes one episode per line.
pub fn episodes_to_jsonl(episodes: &[Episode]) -> String {
    let mut out = String::new();
    for e in episodes {
        let _ = writeln!(out, "{}", e.to_json());
    }
    out
}

pub fn episodes_from_jsonl(text: &str) -> Result<Vec<Episode>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(Episode::from_json(line).map_err(|e| Error::MalformedLine {
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

fn slot_sentence_counts(sentences: &[LabeledSentence]) -> BTreeMap<&str, usize> {
    let mut counts = BTreeMap::new();
    for s in sentences {
        for slot in s.slots() {
            *counts.entry(slot).or_insert(0) += 1;
        }
    }
    counts
}

#[derive(Clone, Copy, Debug)]
pub struct EpisodeSpec {
    pub k: usize,
    pub n_episodes: usize,
    pub query_size: usize,
    pub seed: u64,
}

impl EpisodeSpec {
    pub fn new(k: usize, n_episodes: usize, seed: u64) -> Self {
        EpisodeSpec {
            k,
            n_episodes,
            query_size: DEFAULT_QUERY_SIZE,
            seed,
        }
    }

    pub fn query_size(self, query_size: usize) -> Self {
        EpisodeSpec { query_size, ..self }
    }
}

pub fn build_episodes(domain: &Domain, k: usize, n_episodes: usize, seed: u64) -> Result<Vec<Episode>> {
    build_episodes_with(domain, EpisodeSpec::new(k, n_episodes, seed))
}

/// Greedy minimum-inclusion sampling: support sentences are added one at a
/// time, always the one covering the most slots still below quota (ties
/// broken by a seeded shuffle); query sentences are drawn uniformly from
/// the remainder.
pub fn build_episodes_with(domain: &Domain, spec: EpisodeSpec) -> Result<Vec<Episode>> {
    if spec.k == 0 {
        return Err(Error::Invalid("k must be at least 1".into()));
    }
    if domain.size() < 2 {
        return Err(Error::Invalid(format!(
            "domain {:?} has {} sentence(s); at least 2 are needed",
            domain.name,
            domain.size()
        )));
    }
    let counts = slot_sentence_counts(&domain.sentences);
    if let Some((label, &available)) = counts.iter().find(|(_, &c)| c < spec.k) {
        return Err(Error::InsufficientShots {
            label: label.to_string(),
            available,
            required: spec.k,
        });
    }
    let inventory: Vec<&str> = counts.keys().copied().collect();
    let sentence_slots: Vec<Vec<usize>> = domain
        .sentences
        .iter()
        .map(|s| {
            s.slots()
                .into_iter()
                .map(|slot| inventory.binary_search(&slot).expect("slot counted"))
                .collect()
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut episodes = Vec::with_capacity(spec.n_episodes);
    for _ in 0..spec.n_episodes {
        let mut order: Vec<usize> = (0..domain.size()).collect();
        order.shuffle(&mut rng);

        let mut deficit = vec![spec.k; inventory.len()];
        let mut taken = vec![false; domain.size()];
        let mut support_idx = Vec::new();
        while deficit.iter().any(|&d| d > 0) {
            let mut best: Option<(usize, usize)> = None;
            for &i in &order {
                if taken[i] {
                    continue;
                }
                let gain = sentence_slots[i].iter().filter(|&&s| deficit[s] > 0).count();
                if gain > 0 && best.is_none_or(|(_, g)| gain > g) {
                    best = Some((i, gain));
                }
            }
            let (pick, _) = best.expect("feasibility checked above");
            taken[pick] = true;
            for &s in &sentence_slots[pick] {
                deficit[s] = deficit[s].saturating_sub(1);
            }
            support_idx.push(pick);
        }
        // Domains without any slots still need one support sentence.
        if support_idx.is_empty() {
            let pick = order[0];
            taken[pick] = true;
            support_idx.push(pick);
        }

        let remainder: Vec<usize> = order.iter().copied().filter(|&i| !taken[i]).collect();
        if remainder.is_empty() {
            return Err(Error::Invalid(format!(
                "domain {:?} has no sentences left for a query set after the {}-shot support",
                domain.name, spec.k
            )));
        }
        let query_len = spec.query_size.min(remainder.len()).max(1);
        let query_idx: Vec<usize> = remainder
            .choose_multiple(&mut rng, query_len)
            .copied()
            .collect();

        let support: Vec<LabeledSentence> =
            support_idx.iter().map(|&i| domain.sentences[i].clone()).collect();
        let query: Vec<LabeledSentence> =
            query_idx.iter().map(|&i| domain.sentences[i].clone()).collect();
        episodes.push(Episode {
            label_inventory: slot_sentence_counts(&support)
                .keys()
                .map(|s| s.to_string())
                .collect(),
            support,
            query,
            k: spec.k,
        });
    }
    Ok(episodes)
}
