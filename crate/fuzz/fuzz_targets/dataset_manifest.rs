#![no_main]

use clan_core::data::io::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(m) = Manifest::from_json(text) {
            let again = Manifest::from_json(&m.to_json()).expect("accepted manifests re-parse");
            assert_eq!(again, m);
        }
    }
});
