//! Synthetic multi-domain slot-tagging benchmark.
//!
//! Regular domains are generated from template grammars over a shared slot
//! inventory: domain `i` uses a window of consecutive slots, so neighbors
//! share more slots (and slot values, and cue words) than distant domains.
//! One adversarial domain uses its own vocabulary and its own slots and is
//! larger than the others, so merging it into a training set only dilutes
//! the fixed training budget.

use std::collections::BTreeSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{Domain, LabeledSentence, OUTSIDE};
use crate::error::{Error, Result};

const SLOT_NAMES: [&str; 10] = [
    "city", "date", "time", "artist", "genre", "cuisine", "rating", "party", "venue", "device",
];
const ADVERSARIAL_SLOTS: [&str; 4] = ["serial", "batch", "code", "lot"];
const DOMAIN_NAMES: [&str; 8] = ["alpha", "bravo", "charlie", "delta", "echo", "foxtrot", "golf", "hotel"];
pub const ADVERSARIAL_NAME: &str = "xray";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Regular domains, besides the adversarial one.
    pub domains: usize,
    pub sentences: usize,
    pub adversarial_sentences: usize,
    /// Whether to emit the adversarial domain at all.
    pub adversarial: bool,
    pub slots_per_domain: usize,
    /// Size of the global slot inventory the windows are cut from.
    pub slot_pool: usize,
    /// Values each domain draws for each of its slots.
    pub values_per_slot: usize,
    pub carriers_per_domain: usize,
    /// Carrier words a domain shares with the next carrier window.
    pub carrier_overlap: usize,
    /// Domain `i` takes carrier window `i * carrier_step mod domains`; values
    /// other than 1 decouple vocabulary neighbors from slot neighbors.
    pub carrier_step: usize,
    pub shared_carriers: usize,
    pub templates_per_domain: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            domains: 5,
            sentences: 60,
            adversarial_sentences: 240,
            adversarial: true,
            slots_per_domain: 3,
            slot_pool: 7,
            values_per_slot: 8,
            carriers_per_domain: 12,
            carrier_overlap: 8,
            carrier_step: 2,
            shared_carriers: 4,
            templates_per_domain: 6,
            seed: 7,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.domains == 0 || self.domains > DOMAIN_NAMES.len() {
            return Err(Error::Invalid(format!("domains must be in 1..={}", DOMAIN_NAMES.len())));
        }
        if self.slot_pool == 0 || self.slot_pool > SLOT_NAMES.len() {
            return Err(Error::Invalid(format!("slot_pool must be in 1..={}", SLOT_NAMES.len())));
        }
        if self.slots_per_domain == 0 || self.slots_per_domain > self.slot_pool {
            return Err(Error::Invalid("slots_per_domain must be in 1..=slot_pool".into()));
        }
        if self.values_per_slot == 0 || self.carriers_per_domain == 0 || self.templates_per_domain == 0 {
            return Err(Error::Invalid("values, carriers and templates must be positive".into()));
        }
        if self.carrier_overlap >= self.carriers_per_domain {
            return Err(Error::Invalid("carrier_overlap must be below carriers_per_domain".into()));
        }
        if self.sentences < 2 * self.slots_per_domain + 2 {
            return Err(Error::Invalid("too few sentences per domain for episodes".into()));
        }
        if self.adversarial && self.adversarial_sentences < 2 * ADVERSARIAL_SLOTS.len() + 2 {
            return Err(Error::Invalid("too few adversarial sentences for episodes".into()));
        }
        Ok(())
    }
}

/// Pronounceable pseudo-words, unique across one generator.
struct Words {
    rng: ChaCha8Rng,
    used: BTreeSet<String>,
}

impl Words {
    fn fresh(&mut self) -> String {
        const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
        const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
        loop {
            let syllables = self.rng.gen_range(2..=3);
            let w: String = (0..syllables)
                .map(|_| format!("{}{}", ONSETS.choose(&mut self.rng).unwrap(), VOWELS.choose(&mut self.rng).unwrap()))
                .collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn many(&mut self, n: usize) -> Vec<String> {
        (0..n).map(|_| self.fresh()).collect()
    }

    /// Slot values; every third one spans two words.
    fn values(&mut self, n: usize) -> Vec<Vec<String>> {
        (0..n)
            .map(|i| if i % 3 == 2 { self.many(2) } else { self.many(1) })
            .collect()
    }
}

/// A slot type with its global cue word and value pool.
struct SlotSpec {
    name: String,
    cue: String,
    values: Vec<Vec<String>>,
}

enum Piece {
    Word(String),
    Slot(usize),
}

struct Grammar {
    slots: Vec<usize>,
    values: Vec<Vec<Vec<String>>>,
    templates: Vec<Vec<Piece>>,
}

fn make_templates(
    rng: &mut ChaCha8Rng,
    slots: &[usize],
    specs: &[SlotSpec],
    carriers: &[String],
    shared: &[String],
    n: usize,
) -> Vec<Vec<Piece>> {
    let mut templates = Vec::with_capacity(n);
    for t in 0..n {
        // Round-robin over slots guarantees every slot appears in some template.
        let first = slots[t % slots.len()];
        let mut chosen = vec![first];
        if slots.len() > 1 && rng.gen_bool(0.5) {
            let other = *slots.iter().filter(|&&s| s != first).collect::<Vec<_>>().choose(rng).unwrap();
            chosen.push(*other);
        }
        let mut pieces = Vec::new();
        let lead = rng.gen_range(1..=2);
        for _ in 0..lead {
            pieces.push(Piece::Word(pick_carrier(rng, carriers, shared)));
        }
        for &s in &chosen {
            pieces.push(Piece::Word(specs[s].cue.clone()));
            pieces.push(Piece::Slot(s));
            if rng.gen_bool(0.5) {
                pieces.push(Piece::Word(pick_carrier(rng, carriers, shared)));
            }
        }
        templates.push(pieces);
    }
    templates
}

fn pick_carrier(rng: &mut ChaCha8Rng, own: &[String], shared: &[String]) -> String {
    if !shared.is_empty() && rng.gen_bool(0.3) {
        shared.choose(rng).unwrap().clone()
    } else {
        own.choose(rng).unwrap().clone()
    }
}

fn realize(rng: &mut ChaCha8Rng, grammar: &Grammar, specs: &[SlotSpec], template: &[Piece]) -> LabeledSentence {
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    for piece in template {
        match piece {
            Piece::Word(w) => {
                tokens.push(w.clone());
                labels.push(OUTSIDE.to_string());
            }
            Piece::Slot(s) => {
                let local = grammar.slots.iter().position(|x| x == s).expect("slot of grammar");
                let value = grammar.values[local].choose(rng).unwrap();
                for (j, w) in value.iter().enumerate() {
                    tokens.push(w.clone());
                    let prefix = if j == 0 { "B" } else { "I" };
                    labels.push(format!("{prefix}-{}", specs[*s].name));
                }
            }
        }
    }
    LabeledSentence { tokens, labels }
}

fn generate_domain(rng: &mut ChaCha8Rng, name: &str, grammar: &Grammar, specs: &[SlotSpec], n: usize) -> Result<Domain> {
    // Cycle through templates first so every slot is represented.
    let mut sentences = Vec::with_capacity(n);
    for i in 0..n {
        let t = if i < grammar.templates.len() * 2 {
            i % grammar.templates.len()
        } else {
            rng.gen_range(0..grammar.templates.len())
        };
        sentences.push(realize(rng, grammar, specs, &grammar.templates[t]));
    }
    Domain::new(name, sentences)
}

/// Generates the benchmark domains; the adversarial one (if any) comes last.
pub fn generate(config: &BenchConfig) -> Result<Vec<Domain>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut words = Words {
        rng: ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1)),
        used: BTreeSet::new(),
    };
    let specs: Vec<SlotSpec> = SLOT_NAMES[..config.slot_pool]
        .iter()
        .map(|&name| SlotSpec {
            name: name.to_string(),
            cue: words.fresh(),
            values: words.values(config.values_per_slot * 2),
        })
        .collect();
    let shared = words.many(config.shared_carriers);
    // Carrier windows: domain i starts `stride` words after domain i - 1.
    let stride = config.carriers_per_domain - config.carrier_overlap;
    let carrier_pool = words.many(stride * (config.domains - 1) + config.carriers_per_domain);

    let mut domains = Vec::new();
    for (i, name) in DOMAIN_NAMES[..config.domains].iter().enumerate() {
        let slots: Vec<usize> = (0..config.slots_per_domain).map(|j| (i + j) % config.slot_pool).collect();
        let values = slots
            .iter()
            .map(|&s| {
                let mut pool = specs[s].values.clone();
                pool.shuffle(&mut rng);
                pool.truncate(config.values_per_slot);
                pool
            })
            .collect();
        let window = (i * config.carrier_step) % config.domains;
        let carriers = carrier_pool[window * stride..window * stride + config.carriers_per_domain].to_vec();
        let templates = make_templates(&mut rng, &slots, &specs, &carriers, &shared, config.templates_per_domain);
        let grammar = Grammar {
            slots,
            values,
            templates,
        };
        domains.push(generate_domain(&mut rng, name, &grammar, &specs, config.sentences)?);
    }

    if config.adversarial {
        let adv_specs: Vec<SlotSpec> = ADVERSARIAL_SLOTS
            .iter()
            .map(|&name| SlotSpec {
                name: name.to_string(),
                cue: words.fresh(),
                values: words.values(config.values_per_slot),
            })
            .collect();
        let slots: Vec<usize> = (0..adv_specs.len()).collect();
        let values = adv_specs.iter().map(|s| s.values.clone()).collect();
        let carriers = words.many(config.carriers_per_domain);
        let templates = make_templates(&mut rng, &slots, &adv_specs, &carriers, &[], config.templates_per_domain);
        let grammar = Grammar {
            slots,
            values,
            templates,
        };
        domains.push(generate_domain(
            &mut rng,
            ADVERSARIAL_NAME,
            &grammar,
            &adv_specs,
            config.adversarial_sentences,
        )?);
    }
    Ok(domains)
}
