#![no_main]

use libfuzzer_sys::fuzz_target;
use mstpp::diagnostics::summarize;
use mstpp::hmc::parse_chain_csv;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(chain) = parse_chain_csv(text) {
        let names: Vec<String> = (0..chain.p).map(|k| format!("theta_{k}")).collect();
        let _ = summarize(&chain, &names);
    }
});
