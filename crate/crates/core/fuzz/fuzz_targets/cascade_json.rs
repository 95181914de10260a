#![no_main]

use libfuzzer_sys::fuzz_target;
use vjcascade::cascadexml::{from_canonical_json, to_canonical_json};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = from_canonical_json(data) {
        let bytes = to_canonical_json(&c);
        let again = from_canonical_json(&bytes).expect("canonical JSON parses");
        assert_eq!(to_canonical_json(&again), bytes);
    }
});
