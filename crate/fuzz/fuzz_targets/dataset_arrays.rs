#![no_main]

use clan_core::data::io::{decode_images, decode_labels};
use libfuzzer_sys::fuzz_target;

// First four bytes pick the array geometry, the rest is the payload.
fuzz_target!(|data: &[u8]| {
    if data.len() < 4 {
        return;
    }
    let (dims, payload) = data.split_at(4);
    let count = dims[0] as usize % 5;
    let h = 1 + dims[1] as usize % 8;
    let w = 1 + dims[2] as usize % 8;
    let classes = 1 + dims[3] as usize % 8;
    if let Ok(images) = decode_images(payload, count, 3, h, w) {
        assert_eq!(images.len(), count);
        assert!(images.iter().all(|t| t.data().iter().all(|v| (0.0..=1.0).contains(v))));
    }
    if let Ok(labels) = decode_labels(payload, count, h, w, classes) {
        assert_eq!(labels.len(), count);
        assert!(labels.iter().all(|l| l.data.iter().all(|&c| (c as usize) < classes)));
    }
});
