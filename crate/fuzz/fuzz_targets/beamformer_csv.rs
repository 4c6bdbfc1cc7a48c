#![no_main]

use isac_beam::io::{read_beamformer_csv, write_beamformer_csv};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(w) = read_beamformer_csv(data) {
        let mut buf = Vec::new();
        write_beamformer_csv(&mut buf, &w).unwrap();
        assert_eq!(read_beamformer_csv(buf.as_slice()).unwrap(), w);
    }
});
