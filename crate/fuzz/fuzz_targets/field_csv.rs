#![no_main]

use libfuzzer_sys::fuzz_target;
use subspec_core::field::parse_field_csv;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(values) = parse_field_csv(text) {
            assert!(values.iter().all(|v| v.is_finite()));
        }
    }
});
