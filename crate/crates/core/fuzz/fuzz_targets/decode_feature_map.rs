#![no_main]

use libfuzzer_sys::fuzz_target;
use semfield::harness::decode_feature_map;

fuzz_target!(|data: &[u8]| {
    // First three bytes pick the shape, the rest is the file.
    if data.len() < 3 {
        return;
    }
    let (w, h, f) = (data[0] as usize, data[1] as usize, data[2] as usize);
    if let Ok(v) = decode_feature_map(&data[3..], w, h, f) {
        assert_eq!(v.len() * 4, data.len() - 3);
        assert!(v.iter().all(|x| x.is_finite()));
    }
});
