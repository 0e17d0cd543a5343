#![no_main]

use cavsim::engine::RunRecord;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rec) = RunRecord::from_json(text) {
        assert_eq!(RunRecord::from_json(&rec.to_json()).expect("round trip"), rec);
    }
});
