#![no_main]

use faultdg_core::experiment::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::parse(text) {
            // anything accepted must survive a round trip
            let again = ExperimentConfig::parse(&cfg.to_toml()).expect("round trip");
            assert_eq!(again.seed, cfg.seed);
            assert_eq!(again.per_class, cfg.per_class);
        }
    }
});
