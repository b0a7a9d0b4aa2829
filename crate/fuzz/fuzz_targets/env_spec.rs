#![no_main]

use libfuzzer_sys::fuzz_target;
use plr_core::world::EnvSpec;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(spec) = EnvSpec::from_json_str(text) {
        assert_eq!(EnvSpec::from_json_str(&spec.to_json()).ok(), Some(spec));
    }
});
