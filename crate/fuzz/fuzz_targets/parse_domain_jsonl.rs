#![no_main]

use domsel::corpus::Domain;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(domain) = Domain::from_jsonl("fuzz", data) {
        let again = Domain::from_jsonl("fuzz", &domain.to_jsonl()).expect("re-parse of serialized domain");
        assert_eq!(domain, again);
    }
});
