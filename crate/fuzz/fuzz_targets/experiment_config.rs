#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &str| {
    // The first line doubles as a `--set` override.
    let (first, rest) = data.split_once('\n').unwrap_or((data, ""));
    let _ = obsint_cli::parse_config(rest, &[first.to_string()], None);
    if let Ok(cfg) = obsint_cli::parse_config(data, &[], Some(1)) {
        let _ = cfg.validate();
        let _ = cfg.data_source();
    }
});
