#![no_main]

use libfuzzer_sys::fuzz_target;
use vjcascade::imagecore::{compute_integral, decode_image};

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_image(data) {
        if img.width() as usize * img.height() as usize <= 1 << 20 {
            let _ = compute_integral(&img);
        }
    }
});
