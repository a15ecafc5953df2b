#![no_main]

use domsel::corpus::{episodes_from_jsonl, Episode};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(episode) = Episode::from_json(data) {
        assert_eq!(Episode::from_json(&episode.to_json()).unwrap(), episode);
    }
    let _ = episodes_from_jsonl(data);
});
