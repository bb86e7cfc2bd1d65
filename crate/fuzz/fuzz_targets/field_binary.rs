#![no_main]

use libfuzzer_sys::fuzz_target;
use subspec_core::Field;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = Field::from_bytes(data) {
        // Accepted fields re-encode to the same bytes.
        assert_eq!(Field::from_bytes(&f.to_bytes()).unwrap(), f);
    }
});
