#![no_main]

use libfuzzer_sys::fuzz_target;

// Input: CSV, a NUL byte, then the JSON sidecar.
fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let (csv, json) = s.split_once('\0').unwrap_or((s, ""));
        if let Ok(bank) = wavefilter::io::parse_filter_bank(csv, json) {
            // Whatever parses must serialize back to an equal bank.
            let meta = serde_json::to_string(&wavefilter::io::filter_bank_meta(&bank)).unwrap();
            let again = wavefilter::io::parse_filter_bank(&wavefilter::io::filter_bank_csv(&bank), &meta).unwrap();
            assert_eq!(again.phis(), bank.phis());
        }
    }
});
