#![no_main]

use isac_beam::waveform::read_waveform_csv;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(seq) = read_waveform_csv(data) {
        assert!(seq.iter().all(|z| z.re.is_finite() && z.im.is_finite()));
    }
});
