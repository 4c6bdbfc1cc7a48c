#![no_main]

use isac_beam::units;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(mw) = units::parse_power_mw(text) {
        assert!(mw >= 0.0);
    }
    let _ = units::parse_ratio(text);
    let _ = units::parse_frequency_hz(text);
    if let Ok(region) = units::parse_angle_region(text) {
        assert!(region
            .intervals_deg
            .iter()
            .all(|&(lo, hi)| lo <= hi && lo >= -90.0 && hi <= 90.0));
    }
    let _ = units::parse_range_region(text);
});
