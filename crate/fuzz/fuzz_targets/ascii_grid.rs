#![no_main]

use libfuzzer_sys::fuzz_target;
use mstpp::raster::{ascii_grid_string, parse_ascii_grid};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(raster) = parse_ascii_grid(text) {
        // whatever parses must survive a write/read cycle
        let again = parse_ascii_grid(&ascii_grid_string(&raster)).expect("written grid parses");
        assert_eq!(again.header().ncols, raster.header().ncols);
        assert_eq!(again.header().nrows, raster.header().nrows);
        let _ = raster.standardize();
    }
});
