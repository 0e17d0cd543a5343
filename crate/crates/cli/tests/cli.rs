use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn cavsim(args: &[&str], out_root: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cavsim"))
        .args(args)
        .env("CAVSIM_OUT", out_root)
        .output()
        .unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "name = small\n[atoms]\nn_atoms = 40\nt_mot = 10 uK\ndrop_height = 1.15 mm\n\
[drive]\nintensity = 16 Is\ndelta_a = -63 MHz\ndelta_c = -150 MHz\nexposure_time = 0.2 ms\n\
[engine]\nduration = 5 ms\n";

#[test]
fn simulate_writes_to_the_output_root() {
    let root = tempfile::tempdir().unwrap();
    let scn = root.path().join("small.scn");
    fs::write(&scn, SMALL).unwrap();
    let o = cavsim(
        &["simulate", "--scenario", scn.to_str().unwrap(), "--seed", "4"],
        root.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let bundle = root.path().join("small");
    for f in [
        "manifest.txt",
        "summary.csv",
        "metrics.csv",
        "runs/000/tof.csv",
        "runs/000/run_record.json",
    ] {
        assert!(bundle.join(f).is_file(), "{f}");
    }
    let manifest = fs::read_to_string(bundle.join("manifest.txt")).unwrap();
    assert!(manifest.lines().any(|l| l == "seed = 4"));
}

fn tree(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((
                    p.strip_prefix(dir).unwrap().display().to_string(),
                    fs::read(&p).unwrap(),
                ));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn same_command_twice_is_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let scn = root.path().join("small.scn");
    fs::write(&scn, SMALL).unwrap();
    let run = |dir: &str, workers: &str| {
        let out = root.path().join(dir);
        let o = cavsim(
            &[
                "simulate",
                "--scenario",
                scn.to_str().unwrap(),
                "--workers",
                workers,
                "--out",
                out.to_str().unwrap(),
            ],
            root.path(),
        );
        assert!(o.status.success(), "{}", stderr(&o));
        tree(&out)
    };
    let a = run("a", "2");
    assert_eq!(a, run("b", "2"));
    // the worker count is part of the recorded config but not of the results
    let c = run("c", "1");
    let data = |t: &[(String, Vec<u8>)]| -> Vec<(String, Vec<u8>)> {
        t.iter().filter(|(n, _)| n.ends_with(".csv")).cloned().collect()
    };
    assert_eq!(data(&a), data(&c));
    assert!(data(&a).len() >= 3);
}

#[test]
fn atoms_override_is_recorded() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("o");
    let o = cavsim(
        &[
            "simulate",
            "--scenario",
            "single_atom",
            "--atoms",
            "30",
            "--out",
            out.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let scn = fs::read_to_string(out.join("scenario.scn")).unwrap();
    assert!(scn.lines().any(|l| l.trim() == "n_atoms = 30"), "{scn}");
}

#[test]
fn errors_are_machine_readable() {
    let root = tempfile::tempdir().unwrap();
    let bad = root.path().join("bad.scn");
    fs::write(&bad, SMALL.replace("t_mot = 10 uK", "t_mot = 10")).unwrap();
    let o = cavsim(&["simulate", "--scenario", bad.to_str().unwrap()], root.path());
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[config] line=4: "), "{}", stderr(&o));

    let o = cavsim(&["simulate", "--scenario", "missing.scn"], root.path());
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[io]: missing.scn"), "{}", stderr(&o));

    // an unstable step fails after parsing; nothing is left behind
    fs::write(&bad, format!("{SMALL}[gain]\neta_mode = fixed\neta_fixed = 50\n")).unwrap();
    let out = root.path().join("never");
    let o = cavsim(
        &[
            "simulate",
            "--scenario",
            bad.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(!o.status.success());
    assert!(stderr(&o).starts_with("error[unstable_step]"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn spectrum_and_threshold_csv() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("spec");
    let o = cavsim(
        &["spectrum", "--out", out.to_str().unwrap(), "--stride", "50"],
        root.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("spectrum.csv")).unwrap();
    assert_eq!(csv.lines().next().unwrap(), "detuning_MHz,rho_normalized,eta_s");
    assert!(csv.lines().count() > 10);

    let o = cavsim(
        &["threshold", "--scenario", "fig3", "--intensities", "1:20:1"],
        root.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8(o.stdout).unwrap();
    let mut lines = text.lines();
    let header = lines.next().unwrap();
    for col in ["p_sat", "gamma_fs", "eta", "above_threshold"] {
        assert!(header.split(',').any(|h| h == col));
    }
    let flags: Vec<&str> = lines.map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(flags.len(), 20);
    assert_eq!(flags[0], "0");
    assert_eq!(*flags.last().unwrap(), "1");
}

#[test]
fn report_exit_code_follows_the_rows() {
    let root = tempfile::tempdir().unwrap();
    let out = root.path().join("b");
    let o = cavsim(
        &[
            "simulate",
            "--scenario",
            "single_atom",
            "--atoms",
            "30",
            "--out",
            out.to_str().unwrap(),
        ],
        root.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let exp = root.path().join("e.csv");
    fs::write(
        &exp,
        "metric,target,tolerance,mode,evidence,note\npoints,1,0,abs,sanity,\n",
    )
    .unwrap();
    let o = cavsim(
        &[
            "report",
            "--bundle",
            out.to_str().unwrap(),
            "--expect",
            exp.to_str().unwrap(),
        ],
        root.path(),
    );
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(String::from_utf8_lossy(&o.stdout).starts_with("PASS"));
    assert!(out.join("report.csv").is_file());

    fs::write(
        &exp,
        "metric,target,tolerance,mode,evidence,note\npoints,2,0,abs,sanity,\n",
    )
    .unwrap();
    let o = cavsim(
        &[
            "report",
            "--bundle",
            out.to_str().unwrap(),
            "--expect",
            exp.to_str().unwrap(),
        ],
        root.path(),
    );
    assert_eq!(o.status.code(), Some(1));

    fs::write(&exp, "metric,target\npoints,2\n").unwrap();
    let o = cavsim(
        &[
            "report",
            "--bundle",
            out.to_str().unwrap(),
            "--expect",
            exp.to_str().unwrap(),
        ],
        root.path(),
    );
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).starts_with("error[expectations]"), "{}", stderr(&o));
}

#[test]
fn presets_print() {
    let root = tempfile::tempdir().unwrap();
    let o = cavsim(&["preset", "fig2"], root.path());
    assert!(o.status.success());
    assert!(String::from_utf8_lossy(&o.stdout).contains("name = fig2"));
    let o = cavsim(&["preset", "fig9"], root.path());
    assert!(stderr(&o).starts_with("error[invalid_parameter]"));
}
