#![no_main]

use libfuzzer_sys::fuzz_target;
use obsint::data::parse_gt_csv;

fuzz_target!(|data: &str| {
    // Must not panic on any input
    let _ = parse_gt_csv(data, "fuzz");
});
