#![no_main]

use libfuzzer_sys::fuzz_target;
use semfield::harness::{decode_episode, encode_episode};

fuzz_target!(|data: &[u8]| {
    if let Ok(ep) = decode_episode(data) {
        // Anything that decodes must re-encode to the same bytes.
        let again = encode_episode(&ep).expect("decoded episode re-encodes");
        assert_eq!(again, data);
    }
});
