#![no_main]

use clan_core::trainer::TrainConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&flag, rest)) = data.split_first() else {
        return;
    };
    if let Ok(text) = std::str::from_utf8(rest) {
        if let Ok(config) = TrainConfig::parse(text, flag & 1 == 1) {
            let _ = config.validate();
        }
    }
});
