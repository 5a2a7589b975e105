#![no_main]

use libfuzzer_sys::fuzz_target;
use mstpp::telemetry::{estimate_delta_bar, parse_track, track_csv_string};

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(track) = parse_track(text, "fuzz") {
        let again = parse_track(&track_csv_string(&track), "fuzz").expect("written track parses");
        assert_eq!(again.len(), track.len());
        let _ = estimate_delta_bar(&track, 70.0);
    }
});
