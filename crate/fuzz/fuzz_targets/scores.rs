#![no_main]

use attnpool::eval::parse_scores;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(lines) = parse_scores(text, "fuzz") {
        assert!(lines.iter().all(|l| l.score.is_finite()));
    }
});
