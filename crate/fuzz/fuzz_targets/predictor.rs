#![no_main]

use libfuzzer_sys::fuzz_target;

// Input: CSV, a NUL byte, then the JSON sidecar.
fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let (csv, json) = s.split_once('\0').unwrap_or((s, ""));
        let _ = wavefilter::io::parse_predictor(csv, json);
    }
});
