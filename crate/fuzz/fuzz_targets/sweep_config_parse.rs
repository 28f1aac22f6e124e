//! Fuzz the sweep-config JSON parser: arbitrary bytes must never panic the
//! parser or the validator, and anything that parses and validates must
//! survive a serialize/reparse round trip.

#![no_main]

use idcais::sweep::SweepConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(config) = SweepConfig::from_json_str(text) else {
        return;
    };
    let valid = config.validate().is_ok();
    let json = serde_json::to_string(&config).expect("parsed configs must serialize");
    let again = SweepConfig::from_json_str(&json).expect("serialized configs must reparse");
    assert_eq!(
        valid,
        again.validate().is_ok(),
        "validity must survive a round trip"
    );
});
