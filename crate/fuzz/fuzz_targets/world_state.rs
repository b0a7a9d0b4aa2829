#![no_main]

use libfuzzer_sys::fuzz_target;
use plr_core::world::{perceive, TrueWorldState};

// Decoded states feed perception directly in the CLI, so that path must
// not panic either.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(state) = TrueWorldState::from_json_str(text) {
        let seen = perceive(&state);
        assert_eq!(seen.boxes().len(), state.box_count());
    }
});
