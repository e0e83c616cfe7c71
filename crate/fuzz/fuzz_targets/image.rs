#![no_main]

use ddnet::data::{decode_gray, decode_image, decode_mask};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(img) = decode_image(data) {
        assert_eq!(img.pixels.len(), img.width * img.height * 3);
    }
    if let Ok((h, w, px)) = decode_gray(data) {
        assert_eq!(px.len(), h * w);
    }
    let _ = decode_mask(data, None);
    let _ = decode_mask(data, Some((8, 8)));
});
