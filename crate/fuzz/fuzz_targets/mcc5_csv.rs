#![no_main]

use faultdg_core::signal::{parse_mcc5_csv, ColumnMap};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let map = ColumnMap::default();
        for vibration_only in [false, true] {
            if let Ok(sig) = parse_mcc5_csv(text, "fuzz", vibration_only, &map) {
                assert!(sig.samples().all_finite());
                assert_eq!(sig.channels(), if vibration_only { 6 } else { 8 });
            }
        }
    }
});
