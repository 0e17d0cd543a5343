#![no_main]

use cavsim::output::{evaluate, parse_expectations};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(rows) = parse_expectations(text) {
        for e in &rows {
            let _ = evaluate(e, Some(e.target));
            let _ = evaluate(e, None);
        }
    }
});
