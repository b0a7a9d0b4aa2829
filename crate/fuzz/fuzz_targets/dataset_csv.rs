#![no_main]

use libfuzzer_sys::fuzz_target;
use plr_core::chooser::Dataset;

fuzz_target!(|data: &[u8]| {
    if let Ok(d) = Dataset::read_csv(data) {
        let mut out = Vec::new();
        d.write_csv(&mut out).unwrap();
        assert_eq!(Dataset::read_csv(out.as_slice()).ok(), Some(d));
    }
});
