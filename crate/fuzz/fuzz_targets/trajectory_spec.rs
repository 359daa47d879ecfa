#![no_main]

use libfuzzer_sys::fuzz_target;
use obsint::data::TrajectorySpec;

fuzz_target!(|data: &[u8]| {
    let Ok(spec) = serde_json::from_slice::<TrajectorySpec>(data) else { return };
    if spec.validate().is_ok() {
        let _ = spec.sample_count();
        let _ = spec.true_measurement(spec.duration * 0.5);
    }
});
