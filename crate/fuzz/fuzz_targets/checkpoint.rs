#![no_main]

use attnpool::network::{format_checkpoint, parse_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(ckpt) = parse_checkpoint(text, "fuzz") {
        let again = parse_checkpoint(&format_checkpoint(&ckpt), "fuzz").expect("formatted output parses");
        assert_eq!(ckpt, again);
    }
});
