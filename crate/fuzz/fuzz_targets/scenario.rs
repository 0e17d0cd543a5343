#![no_main]

use cavsim::scenario::Scenario;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(s) = Scenario::parse(text) {
        // whatever parses must write back to an equal scenario
        let again = Scenario::parse(&s.to_text()).expect("written scenario parses");
        assert_eq!(again, s);
        let _ = s.sweep_points();
    }
});
