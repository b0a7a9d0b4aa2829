#![no_main]

use libfuzzer_sys::fuzz_target;
use plr_core::sim::Snapshot;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(snap) = Snapshot::from_json_str(text) {
        assert_eq!(Snapshot::from_json_str(&snap.to_json()).ok(), Some(snap));
    }
});
