#![no_main]

use libfuzzer_sys::fuzz_target;
use lgq_cli::config::ScenarioConfig;

// Scenario configs are the one untrusted input surface: parsing, validation
// and resolution must never panic, and accepted configs must round-trip.
fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = ScenarioConfig::from_json(text) {
            let _ = config.resolve();
            let json = config.to_json();
            let reparsed = ScenarioConfig::from_json(&json).expect("serialized config reparses");
            assert_eq!(config, reparsed);
        }
    }
});
