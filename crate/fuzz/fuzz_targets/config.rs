#![no_main]

use attnpool::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(cfg) = ExperimentConfig::parse(text, "fuzz") {
        let again = ExperimentConfig::parse(&cfg.render(), "fuzz").expect("rendered config parses");
        assert_eq!(cfg.render(), again.render());
    }
});
