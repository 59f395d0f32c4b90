#![no_main]

use clan_core::models::Checkpoint;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(ck) = Checkpoint::from_json(text) {
            assert_eq!(Checkpoint::from_json(&ck.to_json()).expect("round trip"), ck);
        }
    }
});
