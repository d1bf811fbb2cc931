#![no_main]

use attnpool::eval::{format_trials, parse_trials};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(trials) = parse_trials(text, "fuzz") {
        let again = parse_trials(&format_trials(&trials), "fuzz").expect("formatted output parses");
        assert_eq!(trials, again);
    }
});
