#![no_main]

use libfuzzer_sys::fuzz_target;
use wavefilter::filters::FilterMethod;
use wavefilter::lds::SystemName;
use wavefilter::verify::Profile;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = std::str::from_utf8(data) {
        if let Ok(m) = s.parse::<FilterMethod>() {
            assert_eq!(m.to_string().parse::<FilterMethod>().unwrap(), m);
        }
        let _ = s.parse::<SystemName>();
        let _ = s.parse::<Profile>();
        let _ = wavefilter::bench::ExperimentConfig::named(s);
    }
});
