#![no_main]

use faultdg_core::stream::parse_features_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok((fm, domains)) = parse_features_csv(text, "fuzz", 4) {
            assert_eq!(fm.len(), domains.len());
            assert!(fm.labels().iter().all(|&l| l < 4));
        }
    }
});
