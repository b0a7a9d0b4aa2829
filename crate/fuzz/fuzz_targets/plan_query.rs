#![no_main]

use libfuzzer_sys::fuzz_target;
use plr_core::motion::PlanQuery;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(q) = PlanQuery::from_json_str(text) {
        let again = PlanQuery::from_json_str(&serde_json::to_string(&q).unwrap()).expect("accepted query reparses");
        assert_eq!(q, again);
    }
});
