//! Inter-domain similarity indicators: target vocabulary covered (TVC),
//! tf-idf cosine similarity (TIS) and label overlap (LO).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::Domain;
use crate::error::{Error, Result};

/// Which labels take part in the label-overlap score.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelPolicy {
    /// Slot names with `B-`/`I-` stripped; `O` excluded.
    #[default]
    Slots,
    /// Raw BIO tags including `O`.
    RawBio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimilarityTriple {
    pub tvc: f64,
    pub tis: f64,
    pub lo: f64,
    pub source_name: String,
    pub target_name: String,
}

impl SimilarityTriple {
    pub fn as_array(&self) -> [f64; 3] {
        [self.tvc, self.tis, self.lo]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TfIdfVector {
    pub domain_name: String,
    pub weights: BTreeMap<String, f64>,
}

impl TfIdfVector {
    pub fn norm(&self) -> f64 {
        self.weights.values().map(|w| w * w).sum::<f64>().sqrt()
    }

    /// Cosine similarity; 0 when either vector has zero norm.
    pub fn cosine(&self, other: &TfIdfVector) -> f64 {
        let (na, nb) = (self.norm(), other.norm());
        if na == 0.0 || nb == 0.0 {
            return 0.0;
        }
        let dot: f64 = self
            .weights
            .iter()
            .filter_map(|(t, w)| other.weights.get(t).map(|v| w * v))
            .sum();
        // Adding 0.0 turns a clamped -0.0 into +0.0.
        (dot / (na * nb)).clamp(0.0, 1.0) + 0.0
    }
}

/// Fraction of the target vocabulary covered by the source vocabulary.
pub fn tvc(source: &Domain, target: &Domain) -> Result<f64> {
    let target_vocab = target.vocabulary();
    if target_vocab.is_empty() {
        return Err(Error::Invalid(format!(
            "target {:?} has an empty vocabulary",
            target.name
        )));
    }
    let covered = target_vocab
        .iter()
        .filter(|t| source.vocabulary().contains(*t))
        .count();
    Ok(covered as f64 / target_vocab.len() as f64)
}

fn label_set(domain: &Domain, policy: LabelPolicy) -> BTreeSet<String> {
    match policy {
        LabelPolicy::Slots => domain.label_set().clone(),
        LabelPolicy::RawBio => domain.raw_label_set(),
    }
}

/// Fraction of target label types also present in the source.
pub fn lo(source: &Domain, target: &Domain) -> Result<f64> {
    lo_with(source, target, LabelPolicy::Slots)
}

pub fn lo_with(source: &Domain, target: &Domain, policy: LabelPolicy) -> Result<f64> {
    let tgt = label_set(target, policy);
    if tgt.is_empty() {
        return Err(Error::Invalid(format!(
            "target {:?} has an empty label set",
            target.name
        )));
    }
    let src = label_set(source, policy);
    Ok(tgt.intersection(&src).count() as f64 / tgt.len() as f64)
}

fn term_counts(domain: &Domain) -> BTreeMap<String, usize> {
    let mut counts = BTreeMap::new();
    for s in domain.sentences() {
        for t in &s.tokens {
            *counts.entry(t.to_lowercase()).or_insert(0) += 1;
        }
    }
    counts
}

/// Document frequencies over a universe in which each domain is one document.
///
/// A domain is scored against the universe when every one of its tokens
/// occurs in some universe domain; merged source combinations therefore
/// qualify while unrelated text does not.
#[derive(Clone, Debug)]
pub struct TfIdfModel {
    documents: usize,
    document_frequency: BTreeMap<String, usize>,
}

impl TfIdfModel {
    pub fn new(universe: &[&Domain]) -> Result<Self> {
        if universe.len() < 2 {
            return Err(Error::Invalid(format!(
                "tf-idf needs at least 2 domains, got {}",
                universe.len()
            )));
        }
        let mut document_frequency = BTreeMap::new();
        for d in universe {
            if d.token_count() == 0 {
                return Err(Error::Invalid(format!("domain {:?} has no tokens", d.name)));
            }
            for t in d.vocabulary() {
                *document_frequency.entry(t.clone()).or_insert(0) += 1;
            }
        }
        Ok(TfIdfModel {
            documents: universe.len(),
            document_frequency,
        })
    }

    /// Base-10 inverse document frequency, or `None` for tokens outside the universe.
    pub fn idf(&self, token: &str) -> Option<f64> {
        self.document_frequency
            .get(token)
            .map(|&df| (self.documents as f64 / df as f64).log10())
    }

    pub fn vector(&self, domain: &Domain) -> Result<TfIdfVector> {
        let counts = term_counts(domain);
        let total: usize = counts.values().sum();
        if total == 0 {
            return Err(Error::Invalid(format!("domain {:?} has no tokens", domain.name)));
        }
        let mut weights = BTreeMap::new();
        for (token, n) in counts {
            let idf = self
                .idf(&token)
                .ok_or_else(|| Error::NotInUniverse(domain.name.clone()))?;
            weights.insert(token, n as f64 / total as f64 * idf);
        }
        Ok(TfIdfVector {
            domain_name: domain.name.clone(),
            weights,
        })
    }
}

pub fn tfidf_vectors(universe: &[&Domain]) -> Result<Vec<TfIdfVector>> {
    let model = TfIdfModel::new(universe)?;
    universe.iter().map(|d| model.vector(d)).collect()
}

pub fn tis(source: &Domain, target: &Domain, universe: &[&Domain]) -> Result<f64> {
    let model = TfIdfModel::new(universe)?;
    Ok(model.vector(source)?.cosine(&model.vector(target)?))
}

pub fn triple(source: &Domain, target: &Domain, universe: &[&Domain]) -> Result<SimilarityTriple> {
    Scorer::new(universe, LabelPolicy::Slots)?.triple(source, target)
}

/// Scores many sources against targets of one universe without rebuilding
/// document frequencies.
#[derive(Clone, Debug)]
pub struct Scorer {
    model: TfIdfModel,
    policy: LabelPolicy,
}

impl Scorer {
    pub fn new(universe: &[&Domain], policy: LabelPolicy) -> Result<Self> {
        Ok(Scorer {
            model: TfIdfModel::new(universe)?,
            policy,
        })
    }

    pub fn model(&self) -> &TfIdfModel {
        &self.model
    }

    pub fn tis(&self, source: &Domain, target: &Domain) -> Result<f64> {
        Ok(self.model.vector(source)?.cosine(&self.model.vector(target)?))
    }

    pub fn triple(&self, source: &Domain, target: &Domain) -> Result<SimilarityTriple> {
        Ok(SimilarityTriple {
            tvc: tvc(source, target)?,
            tis: self.tis(source, target)?,
            lo: lo_with(source, target, self.policy)?,
            source_name: source.name.clone(),
            target_name: target.name.clone(),
        })
    }
}
