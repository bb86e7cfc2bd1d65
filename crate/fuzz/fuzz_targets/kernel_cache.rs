#![no_main]

use libfuzzer_sys::fuzz_target;
use subspec_core::cache::{decode, encode};

fuzz_target!(|data: &[u8]| {
    if let Ok(k) = decode(data, None) {
        let mut key = [0u8; 32];
        key.copy_from_slice(&data[8..40]);
        assert_eq!(decode(&encode(&k, &key), Some(&key)).unwrap(), k);
    }
});
