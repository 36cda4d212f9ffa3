#![no_main]

use libfuzzer_sys::fuzz_target;
use tempseg::config::ExperimentConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_kv(text) {
            // Serialising a valid config and reading it back is lossless.
            assert_eq!(ExperimentConfig::from_kv(&cfg.to_kv()).unwrap(), cfg);
        }
    }
});
