#![no_main]

use libfuzzer_sys::fuzz_target;
use vjcascade::cascadexml::{parse_cascade_xml, to_canonical_json, write_cascade_xml};

fuzz_target!(|data: &[u8]| {
    if let Ok(c) = parse_cascade_xml(data) {
        let again = parse_cascade_xml(&write_cascade_xml(&c)).expect("written XML parses");
        assert_eq!(again.stages.len(), c.stages.len());
        let _ = to_canonical_json(&c);
    }
});
