#![no_main]

use libfuzzer_sys::fuzz_target;
use obsint::trainer::Checkpoint;

fuzz_target!(|data: &str| {
    if let Ok(ck) = Checkpoint::from_json(data) {
        let again = Checkpoint::from_json(&ck.to_json()).expect("re-serialized checkpoint must load");
        assert_eq!(again.to_json(), ck.to_json());
    }
});
