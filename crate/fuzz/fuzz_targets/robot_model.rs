#![no_main]

use libfuzzer_sys::fuzz_target;
use plr_core::motion::RobotModel;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        let _ = RobotModel::from_json_str(text);
    }
});
