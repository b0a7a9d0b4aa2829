#![no_main]

use libfuzzer_sys::fuzz_target;
use plr_core::chooser::ChooserModel;
use plr_core::strategy::FEATURE_DIM;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(m) = ChooserModel::from_json_str(text) {
        // A validated model must score any well-formed feature vector.
        let _ = m.predict(&[0.0; FEATURE_DIM]).unwrap();
        assert_eq!(ChooserModel::from_json_str(&m.to_json()).ok(), Some(m));
    }
});
