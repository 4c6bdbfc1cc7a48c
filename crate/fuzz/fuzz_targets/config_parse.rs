#![no_main]

use isac_beam::config::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = ExperimentConfig::from_toml_str(text) {
            // a resolved config always serializes for the hash
            let _ = cfg.canonical_json();
        }
    }
});
