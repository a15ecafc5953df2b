#![no_main]

use domsel::harness::read_runs_csv;
use domsel::selection::read_sweep_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let _ = read_sweep_csv(data);
    let _ = read_runs_csv(data);
});
