//! Fuzz the scenario JSON parser: arbitrary bytes must never panic the
//! parser or the validator, and anything that parses and validates must
//! survive a serialize/reparse round trip.

#![no_main]

use idcais::scenario::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let Ok(scenario) = Scenario::from_json_str(text) else {
        return;
    };
    let valid = scenario.validate().is_ok();
    let json = serde_json::to_string(&scenario).expect("parsed scenarios must serialize");
    let again = Scenario::from_json_str(&json).expect("serialized scenarios must reparse");
    assert_eq!(
        valid,
        again.validate().is_ok(),
        "validity must survive a round trip"
    );
});
