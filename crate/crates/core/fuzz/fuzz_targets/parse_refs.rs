#![no_main]

use libfuzzer_sys::fuzz_target;
use semfield::semantics::ReferenceSelection;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(sel) = ReferenceSelection::from_json(text) {
        let _ = sel.to_json();
    }
});
