#![no_main]

use clan_core::trainer::RunRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(run) = RunRecord::read_jsonl(data) {
        let _ = run.final_eval();
        let _ = run.to_jsonl();
    }
});
