#![no_main]

use clan_core::metrics::export::{read_metrics_csv, write_rows_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((classes, rows)) = read_metrics_csv(data) {
        let mut out = Vec::new();
        write_rows_csv(&rows, classes, &mut out).expect("writing accepted rows");
        let (c2, again) = read_metrics_csv(out.as_slice()).expect("re-read");
        assert_eq!((c2, again), (classes, rows));
    }
});
