#![no_main]

use cavsim::units::{format_list, parse_list, parse_quantity, parse_vector, Quantity};
use libfuzzer_sys::fuzz_target;

const QUANTITIES: [Quantity; 9] = [
    Quantity::AngularFrequency,
    Quantity::Frequency,
    Quantity::Time,
    Quantity::Length,
    Quantity::Temperature,
    Quantity::Field,
    Quantity::Intensity,
    Quantity::Rate,
    Quantity::Dimensionless,
];

// First byte picks the quantity, the rest is the value text.
fuzz_target!(|data: &[u8]| {
    let Some((&k, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let q = QUANTITIES[k as usize % QUANTITIES.len()];
    let _ = parse_quantity(text, q);
    let _ = parse_vector(text, q);
    if let Ok(xs) = parse_list(text, q) {
        assert!(xs.iter().all(|x| x.is_finite()));
        assert_eq!(parse_list(&format_list(&xs, q), q).expect("formatted list parses"), xs);
    }
});
