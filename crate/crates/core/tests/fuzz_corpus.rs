//! Replays the checked-in fuzz seeds through the parsers, so the seeds stay valid
//! inputs and the round-trip properties hold on stable toolchains too.

use std::fs;
use std::path::{Path, PathBuf};

use cavsim::engine::RunRecord;
use cavsim::output::{parse_expectations, Manifest};
use cavsim::scenario::Scenario;
use cavsim::units::{format_list, parse_list, Quantity};

fn seeds(target: &str) -> Vec<PathBuf> {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fuzz/corpus")
        .join(target);
    let mut v: Vec<PathBuf> = fs::read_dir(&dir).unwrap().map(|e| e.unwrap().path()).collect();
    v.sort();
    assert!(!v.is_empty(), "no seeds in {}", dir.display());
    v
}

#[test]
fn scenario_seeds_parse_and_round_trip() {
    for p in seeds("scenario") {
        let s = Scenario::parse(&fs::read_to_string(&p).unwrap()).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
        assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
    }
}

#[test]
fn manifest_seeds_round_trip() {
    for p in seeds("manifest") {
        let m = Manifest::parse(&fs::read_to_string(&p).unwrap()).unwrap();
        assert_eq!(Manifest::parse(&m.emit()).unwrap(), m);
    }
}

#[test]
fn expectation_seeds_parse() {
    for p in seeds("expectations") {
        assert!(!parse_expectations(&fs::read_to_string(&p).unwrap()).unwrap().is_empty());
    }
}

#[test]
fn run_record_seeds() {
    let mut ok = 0;
    for p in seeds("run_record") {
        if let Ok(rec) = RunRecord::from_json(&fs::read_to_string(&p).unwrap()) {
            assert_eq!(RunRecord::from_json(&rec.to_json()).unwrap(), rec);
            ok += 1;
        }
    }
    assert!(ok >= 1);
}

#[test]
fn unit_seeds() {
    let qs = [
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
    for p in seeds("units") {
        let bytes = fs::read(&p).unwrap();
        let q = qs[bytes[0] as usize % qs.len()];
        let xs = parse_list(std::str::from_utf8(&bytes[1..]).unwrap(), q)
            .unwrap_or_else(|e| panic!("{}: {e:?}", p.display()));
        assert_eq!(parse_list(&format_list(&xs, q), q).unwrap(), xs);
    }
}
