#![no_main]

use libfuzzer_sys::fuzz_target;
use subspec_core::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        // Parsing and validation must reject, never panic.
        if let Ok(cfg) = RunConfig::from_json(text, std::path::Path::new(".")) {
            let _ = cfg.problem();
            let _ = cfg.domain_spec().validate();
        }
    }
});
