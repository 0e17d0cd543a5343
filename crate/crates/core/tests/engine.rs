use cavsim::engine::{run_exposure_series, run_scenario, AtomEnsemble, RunRecord};
use cavsim::force::EmissionPattern;
use cavsim::scenario::{preset, EnvelopeKind, EtaModeKind, Scenario};
use cavsim::Vector3;

fn at_rest(name: &str, n: usize, t: f64) -> Scenario {
    let mut s = Scenario::template(name);
    s.init.n_atoms = n;
    s.init.t_mot = 1e-12;
    s.init.drop_height = 0.0;
    s.init.cloud_sigma = Vector3::zeros();
    s.drive.s_single_beam = 16.0;
    s.drive.exposure_time = t;
    s.force.envelope = EnvelopeKind::Unbounded;
    s.engine.duration = t;
    s
}

fn variance(rec: &RunRecord, axis: usize) -> f64 {
    let atoms = &rec.final_snapshot.atoms;
    let n = atoms.len() as f64;
    let mean = atoms.iter().map(|a| a.vel[axis]).sum::<f64>() / n;
    atoms.iter().map(|a| (a.vel[axis] - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

#[test]
fn recoil_diffusion_without_cavity() {
    let t = 2e-3;
    let gamma_fs = 1e6;
    let mut s = at_rest("diffusion", 20_000, t);
    s.gain.eta_mode = EtaModeKind::Off;
    s.gain.gamma_fs = Some(gamma_fs);
    let rec = run_scenario(&s, 3).unwrap();
    let c = s.constants();
    let dipole = s.drive.dipole_axis();
    for (axis, unit, absorb) in [(0, Vector3::x(), 1.0), (1, Vector3::y(), 0.0), (2, Vector3::z(), 0.0)] {
        let zeta = EmissionPattern::Dipole.second_moment(&dipole, &unit);
        let expected = gamma_fs * c.v_rec * c.v_rec * (zeta + absorb) * t;
        let got = variance(&rec, axis);
        assert!((got / expected - 1.0).abs() < 0.03, "axis {axis}: {got} vs {expected}");
    }
}

#[test]
fn dark_motion_conserves_energy() {
    let mut s = at_rest("dark", 8, 0.0);
    s.init.t_mot = 50e-6;
    s.init.cloud_sigma = Vector3::repeat(1e-3);
    s.gain.eta_mode = EtaModeKind::Off;
    s.engine.duration = 0.1;
    let ens0 = s.sample(4).unwrap();
    let rec = run_scenario(&s, 4).unwrap();
    let g = s.constants().g_accel;
    let energy = |p: &Vector3<f64>, v: &Vector3<f64>| 0.5 * v.norm_squared() + g * p.z;
    for (a, b) in ens0.atoms.iter().zip(&rec.final_snapshot.atoms) {
        let e0 = energy(&a.pos, &a.vel);
        let e1 = energy(&b.pos, &b.vel);
        assert!(
            (e1 - e0).abs() <= 1e-6 * (0.5 * a.vel.norm_squared() + g * 0.05),
            "{e0} -> {e1}"
        );
        assert_eq!(a.vel.x, b.vel.x);
    }
}

#[test]
fn zero_exposure_is_free_fall() {
    let mut s = preset("fig2").unwrap();
    s.sweep = None;
    s.init.n_atoms = 500;
    s.drive.exposure_time = 0.0;
    s.engine.duration = 3e-3;
    let ens0 = s.sample(2).unwrap();
    let rec = run_scenario(&s, 2).unwrap();
    let g = s.constants().g_accel;
    let t = rec.final_snapshot.time;
    for (a, b) in ens0.atoms.iter().zip(&rec.final_snapshot.atoms) {
        assert_eq!(a.vel.x, b.vel.x);
        assert!((b.vel.z - (a.vel.z - g * t)).abs() < 1e-12);
    }
    assert!(rec.summaries.iter().all(|r| r.light == 0.0 && r.eta == 0.0));
}

#[test]
fn reruns_are_identical_across_worker_counts() {
    let mut s = preset("fig4").unwrap();
    s.init.n_atoms = 800;
    s.drive.exposure_time = 0.5e-3;
    s.engine.workers = 1;
    let a = run_scenario(&s, 8).unwrap();
    let b = run_scenario(&s, 8).unwrap();
    assert_eq!(a.to_json(), b.to_json());
    s.engine.workers = 3;
    let c = run_scenario(&s, 8).unwrap();
    assert_eq!(a.summaries, c.summaries);
    assert_eq!(a.final_snapshot, c.final_snapshot);
    let d = run_scenario(&s, 9).unwrap();
    assert_ne!(a.final_snapshot, d.final_snapshot);
}

#[test]
fn exposure_series_matches_independent_runs() {
    let mut base = preset("fig2").unwrap();
    base.sweep = None;
    base.init.n_atoms = 300;
    let points: Vec<Scenario> = [0.4e-3, 0.0, 1.1e-3, 0.25e-3]
        .iter()
        .map(|&t| {
            let mut p = base.clone();
            p.drive.exposure_time = t;
            p
        })
        .collect();
    let series = run_exposure_series(&points, 6).unwrap();
    for (p, rec) in points.iter().zip(&series) {
        let single = run_scenario(p, 6).unwrap();
        assert_eq!(rec.to_json(), single.to_json(), "t_e {}", p.drive.exposure_time);
    }
    let mut other = points.clone();
    other[1].drive.delta_a *= 1.1;
    assert!(run_exposure_series(&other, 6).is_err());
}

#[test]
fn cavity_slows_the_falling_cloud() {
    let mut s = preset("single_atom").unwrap();
    s.init.n_atoms = 500;
    s.gain.eta_fixed = 1.0;
    s.drive.exposure_time = 0.5e-3;
    let rec = run_scenario(&s, 1).unwrap();
    let lit = rec.summaries.iter().filter(|r| r.time <= 0.5e-3).collect::<Vec<_>>();
    let v0 = lit.first().unwrap().mean_v[2];
    let v1 = lit.last().unwrap().mean_v[2];
    assert!(v0 < -0.14 && v1.abs() < 0.02, "{v0} -> {v1}");
}

#[test]
fn run_record_round_trips_and_rejects_tampering() {
    let mut s = preset("fig3").unwrap();
    s.sweep = None;
    s.init.n_atoms = 50;
    s.drive.exposure_time = 0.1e-3;
    let rec = run_scenario(&s, 5).unwrap();
    let json = rec.to_json();
    let back = RunRecord::from_json(&json).unwrap();
    assert_eq!(back, rec);
    let mut bad = rec.clone();
    bad.config.drive.s_single_beam += 1.0;
    assert!(RunRecord::from_json(&bad.to_json()).is_err());
    let mut bad = rec;
    bad.schema_version += 1;
    assert!(RunRecord::from_json(&bad.to_json()).is_err());
    assert!(RunRecord::from_json("{}").is_err());
}

#[test]
fn fast_atoms_raise_a_warning() {
    let mut s = preset("single_atom").unwrap();
    s.init.n_atoms = 20;
    s.init.drop_height = 0.1;
    s.drive.exposure_time = 50e-6;
    let rec = run_scenario(&s, 1).unwrap();
    assert_eq!(rec.warnings.len(), 1, "{:?}", rec.warnings);
    assert!(rec.warnings[0].contains("linear-friction range"));
}

#[test]
fn ensemble_from_states_keeps_order() {
    let states = [
        (Vector3::new(1.0, 2.0, 3.0), Vector3::zeros()),
        (Vector3::zeros(), Vector3::x()),
    ];
    let ens = AtomEnsemble::from_states(&states, 2.0, 1);
    assert_eq!(ens.len(), 2);
    assert_eq!(ens.atoms[0].pos.z, 3.0);
    assert_eq!(ens.snapshot().total_weight(), 4.0);
}
