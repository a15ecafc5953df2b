//! Generators shared by the integration tests.
#![allow(dead_code)]

use proptest::prelude::*;

use domsel::corpus::{Domain, LabeledSentence};

pub const TOKENS: [&str; 10] = ["Book", "book", "a", "flight", "TO", "london", "play", "jazz", "rain", "today"];
pub const SLOTS: [&str; 4] = ["city", "genre", "date", "item"];

/// Turns arbitrary choices into a valid BIO sequence: 0 is `O`, 1 continues
/// the previous slot when there is one, anything else begins a new slot.
pub fn bio_from(choices: &[u8]) -> Vec<String> {
    let mut out: Vec<String> = Vec::with_capacity(choices.len());
    for &c in choices {
        let prev = out.last().and_then(|l| l.get(2..)).map(str::to_owned);
        let label = match (c % 3, prev) {
            (0, _) => "O".to_string(),
            (1, Some(s)) => format!("I-{s}"),
            _ => format!("B-{}", SLOTS[(c as usize / 3) % SLOTS.len()]),
        };
        out.push(label);
    }
    out
}

pub fn sentence_strategy() -> impl Strategy<Value = LabeledSentence> {
    prop::collection::vec((0..TOKENS.len(), any::<u8>()), 1..6).prop_map(|words| {
        let tokens = words.iter().map(|&(t, _)| TOKENS[t].to_string()).collect();
        let choices: Vec<u8> = words.iter().map(|&(_, c)| c).collect();
        LabeledSentence::new(tokens, bio_from(&choices)).expect("valid sentence")
    })
}

/// Small random domain with at least one slot.
pub fn domain_strategy(name: &'static str) -> impl Strategy<Value = Domain> {
    (prop::collection::vec(sentence_strategy(), 1..5), 0..SLOTS.len()).prop_map(move |(mut sentences, slot)| {
        sentences.push(
            LabeledSentence::new(vec!["to".into(), "paris".into()], vec!["O".into(), format!("B-{}", SLOTS[slot])])
                .expect("valid"),
        );
        Domain::new(name, sentences).expect("valid domain")
    })
}

pub fn sent(tokens: &str, labels: &str) -> LabeledSentence {
    LabeledSentence::new(
        tokens.split_whitespace().map(str::to_owned).collect(),
        labels.split_whitespace().map(str::to_owned).collect(),
    )
    .expect("valid sentence")
}
