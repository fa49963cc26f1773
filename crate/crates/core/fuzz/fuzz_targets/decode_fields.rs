#![no_main]

use libfuzzer_sys::fuzz_target;
use semfield::harness::{decode_fields, encode_fields};

fuzz_target!(|data: &[u8]| {
    if let Ok(fields) = decode_fields(data) {
        if let Ok(again) = encode_fields(&fields) {
            assert_eq!(again, data);
        }
    }
});
