#![no_main]

use attnpool::eval::{format_embeddings, parse_embeddings};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_embeddings(text, "fuzz") {
        let formatted = format_embeddings(rows.iter().map(|(id, v)| (id.as_str(), v.as_slice())));
        let again = parse_embeddings(&formatted, "fuzz").expect("formatted output parses");
        assert_eq!(rows, again);
    }
});
