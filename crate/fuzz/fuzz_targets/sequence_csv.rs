#![no_main]

use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        let _ = wavefilter::io::parse_sequence_csv(s);
        if let Ok(traj) = wavefilter::io::parse_trajectory_csv(s) {
            let text = wavefilter::io::trajectory_csv(&traj);
            assert_eq!(wavefilter::io::parse_trajectory_csv(&text).unwrap(), traj);
        }
    }
});
