#![no_main]

use domsel::selection::CombinationWeights;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(w) = CombinationWeights::from_json(data) {
        let sum: f64 = w.theta.iter().sum();
        assert!((sum - 1.0).abs() < 1e-6);
    }
});
