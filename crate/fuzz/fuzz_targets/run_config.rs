#![no_main]

use std::path::Path;

use libfuzzer_sys::fuzz_target;
use mstpp::config::RunConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = RunConfig::from_text(text, Path::new("/fuzz")) {
        let again = RunConfig::from_text(&cfg.canonical_text(), Path::new("/fuzz")).expect("canonical text parses");
        assert_eq!(again.hash(), cfg.hash());
    }
});
