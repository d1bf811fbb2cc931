#![no_main]

use attnpool::data::{format_features, parse_features};
use libfuzzer_sys::fuzz_target;

// Accepted input must survive a format/parse round trip unchanged.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(frames) = parse_features(text, "fuzz") {
        let once = format_features(&frames);
        let again = parse_features(&once, "fuzz").expect("formatted output parses");
        assert_eq!(once, format_features(&again));
    }
});
