#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use vjcascade::dataset::parse_ground_truth;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(gt) = parse_ground_truth(text, Path::new("fuzz.txt")) {
            let again = parse_ground_truth(&gt.to_text(), Path::new("again.txt")).expect("serialized truth parses");
            assert_eq!(again.images, gt.images);
        }
    }
});
