#![no_main]

use domsel::harness::ExperimentPlan;
use domsel::trainer::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    if let Ok(plan) = ExperimentPlan::from_toml(data) {
        assert_eq!(ExperimentPlan::from_toml(&plan.to_toml()).unwrap(), plan);
    }
    let _ = TrainConfig::from_toml(data);
});
