use cavsim::constants::KB;
use cavsim::detection::{
    decompose_peaks, synthesize_tof, temperature_from_ensemble, temperature_from_tof, vertical_extent,
    FlightKinematics, TofConfig,
};
use cavsim::engine::{Atom, Snapshot};
use cavsim::scenario::preset;
use cavsim::{Constants, Vector3};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn cloud(n: usize, sigma_z: f64, temperature: f64, vz: f64, seed: u64) -> Snapshot {
    let c = Constants::cesium_d2();
    let sv = (KB * temperature / c.mass).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zn = Normal::new(0.0, sigma_z).unwrap();
    let vn = Normal::new(vz, sv).unwrap();
    let atoms = (0..n)
        .map(|_| Atom {
            pos: Vector3::new(0.0, 0.0, zn.sample(&mut rng)),
            vel: Vector3::new(0.0, 0.0, vn.sample(&mut rng)),
            alive: true,
        })
        .collect();
    Snapshot {
        time: 0.0,
        weight: 50.0,
        atoms,
    }
}

#[test]
fn every_atom_crosses_the_sheet_once() {
    let s = preset("fig2").unwrap();
    let mut init = s.init;
    init.n_atoms = 3000;
    let ens = cavsim::model::sample_ensemble(&s.constants(), &init, 4).unwrap();
    let snap = ens.snapshot();
    let trace = synthesize_tof(&snap, 0.0, &s.constants(), &TofConfig::default());
    assert!((trace.total() / snap.total_weight() - 1.0).abs() < 1e-12);
    assert!(trace.counts.iter().all(|&c| c >= 0.0));
}

#[test]
fn decomposition_ignores_count_scale() {
    let c = Constants::cesium_d2();
    let mut atoms = cloud(6000, 1e-4, 20e-6, -0.15, 1).atoms;
    atoms.extend(cloud(3000, 1e-4, 10e-6, 0.0, 2).atoms);
    let snap = Snapshot {
        time: 0.0,
        weight: 1.0,
        atoms,
    };
    let trace = synthesize_tof(&snap, 0.0, &c, &TofConfig::default());
    let a = decompose_peaks(&trace).unwrap();
    let mut scaled = trace.clone();
    for x in &mut scaled.counts {
        *x *= 7.25;
    }
    let b = decompose_peaks(&scaled).unwrap();
    assert_eq!(a.peaks.len(), 2);
    assert_eq!(b.peaks.len(), 2);
    for (p, q) in a.peaks.iter().zip(&b.peaks) {
        assert!((p.center_ms - q.center_ms).abs() < 1e-9 * p.center_ms);
        assert!((p.sigma_ms - q.sigma_ms).abs() < 1e-9 * p.sigma_ms);
        assert!((p.fraction - q.fraction).abs() < 1e-9);
    }
    assert!((a.delayed_fraction() - 1.0 / 3.0).abs() < 0.03);
}

#[test]
fn tof_and_ensemble_temperatures_agree() {
    let c = Constants::cesium_d2();
    let cfg = TofConfig::default();
    for (t, sigma_z) in [(20e-6, 50e-6), (8e-6, 100e-6), (50e-6, 300e-6)] {
        let snap = cloud(20_000, sigma_z, t, 0.0, 9);
        let trace = synthesize_tof(&snap, 0.0, &c, &cfg);
        let dec = decompose_peaks(&trace).unwrap();
        let (z0, sz) = vertical_extent(&snap, None);
        let kin = FlightKinematics {
            sheet_depth: cfg.sheet_depth,
            g_accel: c.g_accel,
            mass: c.mass,
            z0,
            sigma_z: sz,
            lead: 0.0,
        };
        let tof = temperature_from_tof(dec.delayed(), &kin).unwrap();
        let ens = temperature_from_ensemble(&snap, &c, 2, None).unwrap();
        assert!(dec.delayed().sigma_ms > 2.0 * tof.floor_ms);
        assert!(!tof.upper_bound);
        assert!(
            (tof.temperature / ens - 1.0).abs() < 0.10,
            "T {t}: {} vs {ens}",
            tof.temperature
        );
    }
}

#[test]
fn narrow_peak_is_flagged_as_upper_bound() {
    let c = Constants::cesium_d2();
    let cfg = TofConfig::default();
    let snap = cloud(5000, 3e-3, 1e-9, 0.0, 3);
    let trace = synthesize_tof(&snap, 0.0, &c, &cfg);
    let dec = decompose_peaks(&trace).unwrap();
    let (z0, sz) = vertical_extent(&snap, None);
    let kin = FlightKinematics {
        sheet_depth: cfg.sheet_depth,
        g_accel: c.g_accel,
        mass: c.mass,
        z0,
        sigma_z: sz * 1.5,
        lead: 0.0,
    };
    let tof = temperature_from_tof(dec.delayed(), &kin).unwrap();
    assert!(tof.upper_bound);
    assert!(tof.temperature.is_finite());
}
