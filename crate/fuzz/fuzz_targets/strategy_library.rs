#![no_main]

use libfuzzer_sys::fuzz_target;
use plr_core::strategy::StrategyLibrary;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(lib) = StrategyLibrary::from_json_str(text) {
        let _ = lib.node_count();
        assert_eq!(StrategyLibrary::from_json_str(&lib.to_json()).ok(), Some(lib));
    }
});
