//! Output bundles: per-run CSVs, run-record archives, a hashed manifest, and the
//! expectation report.
//!
//! Bundle layout:
//!
//! ```text
//! manifest.txt        key = value, with a sha256 per file
//! summary.csv         one row per sweep point
//! metrics.csv         scalar metrics read by `report`
//! spectrum.csv        when requested
//! runs/NNN/tof.csv, runs/NNN/timeseries.csv, runs/NNN/run_record.json
//! runs/NNN/image.csv  when requested
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{
    exponential_fit, friction_rate_fit, is_monotone_nondecreasing, max_step_ratio, plateau_onset, window_mean,
};
use crate::detection::{
    decompose_peaks, delayed_selection, image_xz, synthesize_tof, temperature_from_ensemble, temperature_from_tof,
    vertical_extent, Decomposition, FlightKinematics, Image, TofConfig, TofTrace,
};
use crate::engine::{run_exposure_series, run_scenario, AtomEnsemble, RunRecord};
use crate::error::{Error, Result};
use crate::scenario::{EtaModeKind, Scenario};
use crate::spectrum::SpectrumTable;
use crate::zeeman::{eta_saturation_rolloff, scattering_rate_fs, steady_state, threshold_state};

pub const BUNDLE_SCHEMA_VERSION: u32 = 1;
/// How every floating-point CSV field is written.
pub const FLOAT_FORMAT: &str = "scientific, 9 significant digits";
/// Settling band for the fall-time plateau, as a fraction of the total rise. The
/// curve counts as flat when it stays within the same band after the onset.
pub const PLATEAU_BAND: f64 = 0.05;
pub const ENV_OUT: &str = "CAVSIM_OUT";

fn fnum(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.8e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Output root: `$CAVSIM_OUT`, else `cavsim-out` in the working directory.
pub fn default_output_root() -> PathBuf {
    std::env::var_os(ENV_OUT)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("cavsim-out"))
}

/// Observables reduced from one run.
#[derive(Debug, Clone, PartialEq)]
pub struct PointResult {
    pub index: usize,
    pub sweep_value: Option<f64>,
    pub scenario: Scenario,
    pub record: RunRecord,
    pub tof: TofTrace,
    pub decomposition: Option<Decomposition>,
    /// Delayed-peak center relative to the start of extinction (the only peak if there is one), ms.
    pub t_f_ms: f64,
    /// Over the delayed sub-population, from true velocities.
    pub t_z: f64,
    /// Same, inferred from the delayed peak width.
    pub t_z_tof: f64,
    pub t_z_tof_upper_bound: bool,
    pub delayed_fraction: f64,
    /// Emission ratio and scattering rate at the end of the exposure.
    pub eta: f64,
    pub gamma_fs: f64,
    pub p_sat: f64,
    pub image: Option<Image>,
}

pub fn analyze_point(
    index: usize,
    sweep_value: Option<f64>,
    scenario: &Scenario,
    record: RunRecord,
) -> Result<PointResult> {
    let c = scenario.constants();
    let cfg = TofConfig {
        sheet_depth: scenario.detection.sheet_depth,
        bin_width: scenario.detection.bin_width,
    };
    cfg.validate()?;
    let snap = &record.final_snapshot;
    let t_e = scenario.drive.exposure_time;
    let tof = synthesize_tof(snap, t_e, &c, &cfg);
    let decomposition = decompose_peaks(&tof).ok();

    let (mut t_f_ms, mut t_z, mut t_z_tof, mut upper, mut delayed_fraction) =
        (f64::NAN, f64::NAN, f64::NAN, false, 0.0);
    if let Some(dec) = &decomposition {
        let peak = *dec.delayed();
        t_f_ms = peak.center_ms;
        delayed_fraction = dec.delayed_fraction();
        let sel = delayed_selection(snap, t_e, &c, &cfg, dec);
        t_z = temperature_from_ensemble(snap, &c, 2, Some(&sel)).unwrap_or(f64::NAN);
        let (z0, sigma_z) = vertical_extent(snap, Some(&sel));
        let kin = FlightKinematics {
            sheet_depth: cfg.sheet_depth,
            g_accel: c.g_accel,
            mass: c.mass,
            z0,
            sigma_z,
            lead: snap.time - t_e,
        };
        if let Ok(t) = temperature_from_tof(&peak, &kin) {
            t_z_tof = t.temperature;
            upper = t.upper_bound;
        }
    }
    let lit = record.summaries.iter().rev().find(|r| r.time < t_e);
    let image = if scenario.output.images {
        let delay = (scenario.detection.image_delay - (snap.time - t_e)).max(0.0);
        Some(image_xz(snap, delay, scenario.detection.pixel, &c)?)
    } else {
        None
    };
    Ok(PointResult {
        index,
        sweep_value,
        scenario: scenario.clone(),
        tof,
        decomposition,
        t_f_ms,
        t_z,
        t_z_tof,
        t_z_tof_upper_bound: upper,
        delayed_fraction,
        eta: lit.map_or(0.0, |r| r.eta),
        gamma_fs: lit.map_or(0.0, |r| r.gamma_fs),
        p_sat: scenario.drive.p_sat(&c),
        image,
        record,
    })
}

/// Runs every sweep point. Exposure-time sweeps share their lit prefix.
pub fn run_points(scenario: &Scenario, seed: u64) -> Result<Vec<PointResult>> {
    let points = scenario.sweep_points()?;
    let exposure_sweep = scenario
        .sweep
        .as_ref()
        .is_some_and(|s| s.path == "drive.exposure_time" && s.values.len() > 1);
    let records = if exposure_sweep {
        let scenarios: Vec<Scenario> = points.iter().map(|(_, s)| s.clone()).collect();
        run_exposure_series(&scenarios, seed)?
    } else {
        points
            .iter()
            .map(|(_, s)| run_scenario(s, seed))
            .collect::<Result<Vec<_>>>()?
    };
    points
        .into_iter()
        .zip(records)
        .enumerate()
        .map(|(i, ((v, s), rec))| analyze_point(i, v, &s, rec))
        .collect()
}

/// Scalar metrics over a set of points, keyed by name.
pub fn compute_metrics(scenario: &Scenario, points: &[PointResult]) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    m.insert("points".to_string(), points.len() as f64);
    let Some(last) = points.last() else {
        return m;
    };
    m.insert("t_f_ms".into(), last.t_f_ms);
    m.insert("T_z_uK".into(), last.t_z * 1e6);
    m.insert("T_z_tof_uK".into(), last.t_z_tof * 1e6);
    m.insert("delayed_fraction".into(), last.delayed_fraction);
    m.insert("eta".into(), last.eta);
    m.insert("gamma_fs".into(), last.gamma_fs);
    m.insert(
        "delayed_fraction_max".into(),
        points.iter().map(|p| p.delayed_fraction).fold(0.0, f64::max),
    );

    if points.len() >= 2 {
        let etas: Vec<f64> = points.iter().map(|p| p.eta).collect();
        if let Some((i, ratio)) = max_step_ratio(&etas) {
            m.insert("eta_max_jump".into(), ratio);
            m.insert("threshold_p_sat".into(), points[i + 1].p_sat);
            m.insert("threshold_gamma_fs".into(), points[i + 1].gamma_fs);
        }
    }
    let temps: Vec<f64> = points.iter().map(|p| p.t_z * 1e6).filter(|t| t.is_finite()).collect();
    if points.len() >= 2 && !temps.is_empty() {
        let lo = temps.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = temps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m.insert("T_z_sweep_min_uK".into(), lo);
        m.insert("T_z_sweep_max_uK".into(), hi);
        m.insert("T_z_sweep_ratio".into(), hi / lo);
    }
    let exposure_sweep = scenario.sweep.as_ref().is_some_and(|s| s.path == "drive.exposure_time");
    if exposure_sweep && points.len() >= 4 {
        let mut xy: Vec<(f64, f64)> = points
            .iter()
            .map(|p| (p.scenario.drive.exposure_time * 1e3, p.t_f_ms))
            .filter(|(_, y)| y.is_finite())
            .collect();
        xy.sort_by(|a, b| a.0.total_cmp(&b.0));
        let xs: Vec<f64> = xy.iter().map(|p| p.0).collect();
        let ys: Vec<f64> = xy.iter().map(|p| p.1).collect();
        let tol = scenario.detection.bin_width * 1e3;
        if let Ok(p) = plateau_onset(&xs, &ys, PLATEAU_BAND) {
            let rising = xs.iter().take_while(|&&x| x <= p.onset).count().max(1);
            let monotone = is_monotone_nondecreasing(&ys[..rising.min(ys.len())], tol);
            let flat = p.drift <= PLATEAU_BAND * p.rise;
            m.insert("t_f_plateau_onset_ms".into(), p.onset);
            m.insert("t_f_plateau_ms".into(), p.value);
            m.insert("t_f_plateau_drift_ms".into(), p.drift);
            m.insert("t_f_monotone_then_flat".into(), f64::from(u8::from(monotone && flat)));
        }
    }

    // light-on window of the last point
    let sc = &last.scenario;
    let t_e = sc.drive.exposure_time;
    let rows: Vec<_> = last.record.summaries.iter().filter(|r| r.time < t_e).copied().collect();
    if let Some(r) = rows.last() {
        m.insert("T_z_exposure_end_uK".into(), r.temperature_inside[2] * 1e6);
        m.insert("T_x_exposure_end_uK".into(), r.temperature_inside[0] * 1e6);
        m.insert("fraction_inside_exposure_end".into(), r.fraction_inside);
    }
    if let Ok(v) = window_mean(&rows, 0.75 * t_e, t_e, |r| r.temperature_inside[2]) {
        m.insert("T_z_late_mean_uK".into(), v * 1e6);
    }
    if let Ok(v) = window_mean(&rows, 0.75 * t_e, t_e, |r| r.temperature_inside[0]) {
        m.insert("T_x_late_mean_uK".into(), v * 1e6);
    }
    let relax: Vec<_> = rows.iter().filter(|r| r.time > 0.0).collect();
    if relax.len() >= 4 {
        let ts: Vec<f64> = relax.iter().map(|r| r.time).collect();
        let ys: Vec<f64> = relax.iter().map(|r| r.temperature_inside[2]).collect();
        if let Ok(fit) = exponential_fit(&ts, &ys) {
            m.insert("T_z_relax_tau_ms".into(), fit.tau * 1e3);
        }
    }
    let early: Vec<_> = rows.iter().filter(|r| r.time <= 0.2e-3).collect();
    if early.len() >= 3 {
        let ts: Vec<f64> = early.iter().map(|r| r.time).collect();
        let vs: Vec<f64> = early.iter().map(|r| r.mean_v[2]).collect();
        if let Ok(gamma) = friction_rate_fit(&ts, &vs, sc.constants().g_accel) {
            m.insert("friction_rate_per_s".into(), gamma);
            m.insert("initial_decel_m_s2".into(), gamma * vs[0].abs());
        }
    }
    m
}

/// One bundle file, path relative to the bundle root with `/` separators.
struct BundleFile {
    name: String,
    bytes: Vec<u8>,
}

fn csv_bytes(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("writing to memory");
    for r in rows {
        w.write_record(&r).expect("writing to memory");
    }
    w.into_inner().expect("writing to memory")
}

pub fn tof_csv(trace: &TofTrace) -> Vec<u8> {
    csv_bytes(
        &["time_ms", "counts"],
        trace
            .centers_ms()
            .zip(&trace.counts)
            .map(|(t, c)| vec![fnum(t), fnum(*c)]),
    )
}

pub fn timeseries_csv(record: &RunRecord) -> Vec<u8> {
    let header = [
        "time_ms",
        "mean_vx",
        "mean_vy",
        "mean_vz",
        "T_x_uK",
        "T_y_uK",
        "T_z_uK",
        "T_x_inside_uK",
        "T_y_inside_uK",
        "T_z_inside_uK",
        "fraction_inside",
        "light",
        "eta",
        "gamma_fs",
        "above_threshold",
        "inversion_w",
    ];
    csv_bytes(
        &header,
        record.summaries.iter().map(|r| {
            let mut row = vec![fnum(r.time * 1e3)];
            row.extend(r.mean_v.iter().map(|v| fnum(*v)));
            row.extend(r.temperature.iter().map(|t| fnum(t * 1e6)));
            row.extend(r.temperature_inside.iter().map(|t| fnum(t * 1e6)));
            row.extend([
                fnum(r.fraction_inside),
                fnum(r.light),
                fnum(r.eta),
                fnum(r.gamma_fs),
                u8::from(r.above_threshold).to_string(),
                fnum(r.inversion_w),
            ]);
            row
        }),
    )
}

pub fn summary_csv(points: &[PointResult]) -> Vec<u8> {
    let header = [
        "point",
        "sweep_value",
        "t_e_ms",
        "t_f_ms",
        "T_z_uK",
        "delayed_fraction",
        "eta",
        "gamma_fs",
        "p_sat",
        "T_z_tof_uK",
        "T_z_tof_upper_bound",
    ];
    csv_bytes(
        &header,
        points.iter().map(|p| {
            vec![
                p.index.to_string(),
                p.sweep_value.map(fnum).unwrap_or_default(),
                fnum(p.scenario.drive.exposure_time * 1e3),
                fnum(p.t_f_ms),
                fnum(p.t_z * 1e6),
                fnum(p.delayed_fraction),
                fnum(p.eta),
                fnum(p.gamma_fs),
                fnum(p.p_sat),
                fnum(p.t_z_tof * 1e6),
                u8::from(p.t_z_tof_upper_bound).to_string(),
            ]
        }),
    )
}

/// Every `stride`-th grid point of the table.
pub fn spectrum_csv(table: &SpectrumTable, stride: usize) -> Vec<u8> {
    let peak = table.peak_density();
    let stride = stride.max(1);
    csv_bytes(
        &["detuning_MHz", "rho_normalized", "eta_s"],
        (0..table.len()).step_by(stride).map(|j| {
            vec![
                fnum(table.detuning(j) * 1e-6),
                fnum(table.density[j] / peak),
                fnum(table.eta_s_profile[j]),
            ]
        }),
    )
}

pub fn image_csv(image: &Image) -> Vec<u8> {
    let mut rows = Vec::new();
    for iz in 0..image.nz {
        for ix in 0..image.nx {
            let w = image.counts[iz * image.nx + ix];
            if w > 0.0 {
                rows.push(vec![
                    fnum((image.x0 + (ix as f64 + 0.5) * image.pixel) * 1e3),
                    fnum((image.z0 + (iz as f64 + 0.5) * image.pixel) * 1e3),
                    fnum(w),
                ]);
            }
        }
    }
    csv_bytes(&["x_mm", "z_mm", "counts"], rows)
}

pub fn metrics_csv(metrics: &BTreeMap<String, f64>) -> Vec<u8> {
    csv_bytes(
        &["metric", "value"],
        metrics.iter().map(|(k, v)| vec![k.clone(), fnum(*v)]),
    )
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Plain-text `key = value` manifest.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    /// `(file name, sha256)` for every listed file.
    pub fn files(&self) -> Vec<(&str, &str)> {
        self.entries
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("file.").map(|f| (f, v.as_str())))
            .collect()
    }

    pub fn emit(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Archive(format!("manifest line {}: expected `key = value`", i + 1)))?;
            let (k, v) = (k.trim(), v.trim());
            if k.is_empty() {
                return Err(Error::Archive(format!("manifest line {}: empty key", i + 1)));
            }
            if entries.iter().any(|(e, _): &(String, String)| e == k) {
                return Err(Error::Archive(format!("manifest line {}: duplicate key `{k}`", i + 1)));
            }
            entries.push((k.to_string(), v.to_string()));
        }
        Ok(Manifest { entries })
    }

    /// Hash over the sorted `sha256  name` lines, like a tree hash.
    pub fn content_hash(files: &[(&str, &str)]) -> String {
        let mut lines: Vec<String> = files.iter().map(|(n, h)| format!("{h}  {n}\n")).collect();
        lines.sort();
        sha256_hex(lines.concat().as_bytes())
    }

    /// Re-hashes every listed file under `dir`.
    pub fn verify(&self, dir: &Path) -> Result<()> {
        let files = self.files();
        if files.is_empty() {
            return Err(Error::Archive("manifest lists no files".into()));
        }
        for (name, hash) in &files {
            let bytes = fs::read(dir.join(name)).map_err(|e| Error::Archive(format!("{name}: {e}")))?;
            if sha256_hex(&bytes) != *hash {
                return Err(Error::Archive(format!("{name}: hash does not match the manifest")));
            }
        }
        match self.get("content_hash") {
            Some(h) if h == Manifest::content_hash(&files) => Ok(()),
            Some(_) => Err(Error::Archive("content hash does not match the file list".into())),
            None => Err(Error::Archive("manifest has no content_hash".into())),
        }
    }
}

pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    Manifest::parse(&fs::read_to_string(dir.join("manifest.txt"))?)
}

/// Result of [`run_and_emit`].
#[derive(Debug, Clone)]
pub struct Bundle {
    pub dir: PathBuf,
    pub points: Vec<PointResult>,
    pub metrics: BTreeMap<String, f64>,
    pub manifest: Manifest,
}

/// Runs the scenario (fanning out over the sweep) and writes a bundle to `dir`.
/// Files are staged next to `dir` and moved into place only on success.
pub fn run_and_emit(scenario: &Scenario, seed: u64, dir: &Path) -> Result<Bundle> {
    scenario.validate()?;
    let points = run_points(scenario, seed)?;
    let metrics = compute_metrics(scenario, &points);

    let mut files = vec![
        BundleFile {
            name: "summary.csv".into(),
            bytes: summary_csv(&points),
        },
        BundleFile {
            name: "metrics.csv".into(),
            bytes: metrics_csv(&metrics),
        },
        BundleFile {
            name: "scenario.scn".into(),
            bytes: scenario.to_text().into_bytes(),
        },
    ];
    if scenario.output.spectrum {
        let table = scenario.spectrum_table()?;
        files.push(BundleFile {
            name: "spectrum.csv".into(),
            bytes: spectrum_csv(&table, 5),
        });
    }
    for p in &points {
        let base = format!("runs/{:03}", p.index);
        files.push(BundleFile {
            name: format!("{base}/tof.csv"),
            bytes: tof_csv(&p.tof),
        });
        files.push(BundleFile {
            name: format!("{base}/timeseries.csv"),
            bytes: timeseries_csv(&p.record),
        });
        files.push(BundleFile {
            name: format!("{base}/run_record.json"),
            bytes: p.record.to_json().into_bytes(),
        });
        if let Some(img) = &p.image {
            files.push(BundleFile {
                name: format!("{base}/image.csv"),
                bytes: image_csv(img),
            });
        }
    }

    let hashes: Vec<(String, String)> = files.iter().map(|f| (f.name.clone(), sha256_hex(&f.bytes))).collect();
    let hash_refs: Vec<(&str, &str)> = hashes.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
    let mut entries = vec![
        ("schema_version".to_string(), BUNDLE_SCHEMA_VERSION.to_string()),
        ("generator".to_string(), format!("cavsim {}", env!("CARGO_PKG_VERSION"))),
        ("scenario".to_string(), scenario.name.clone()),
        ("config_hash".to_string(), scenario.config_hash()),
        ("seed".to_string(), seed.to_string()),
        ("atoms".to_string(), scenario.init.n_atoms.to_string()),
        ("points".to_string(), points.len().to_string()),
        ("float_format".to_string(), FLOAT_FORMAT.to_string()),
        (
            "run_record_schema".to_string(),
            crate::engine::RUN_RECORD_SCHEMA_VERSION.to_string(),
        ),
    ];
    entries.extend(hashes.iter().map(|(n, h)| (format!("file.{n}"), h.clone())));
    entries.push(("content_hash".to_string(), Manifest::content_hash(&hash_refs)));
    let manifest = Manifest { entries };
    files.push(BundleFile {
        name: "manifest.txt".into(),
        bytes: manifest.emit().into_bytes(),
    });

    write_atomically(dir, &files)?;
    Ok(Bundle {
        dir: dir.to_path_buf(),
        points,
        metrics,
        manifest,
    })
}

fn write_atomically(dir: &Path, files: &[BundleFile]) -> Result<()> {
    let name = dir
        .file_name()
        .and_then(|n| n.to_str())
        .ok_or_else(|| Error::invalid("out", format!("`{}` is not a usable directory name", dir.display())))?;
    let parent = match dir.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    if dir.exists() {
        let is_bundle = dir.join("manifest.txt").is_file();
        let is_empty = fs::read_dir(dir)?.next().is_none();
        if !is_bundle && !is_empty {
            return Err(Error::invalid(
                "out",
                format!("`{}` exists and is not an output bundle", dir.display()),
            ));
        }
    }
    fs::create_dir_all(&parent)?;
    let staging = parent.join(format!(".{name}.partial-{}", std::process::id()));
    if staging.exists() {
        fs::remove_dir_all(&staging)?;
    }
    let result = (|| -> Result<()> {
        for f in files {
            let path = staging.join(&f.name);
            if let Some(d) = path.parent() {
                fs::create_dir_all(d)?;
            }
            let mut out = fs::File::create(&path)?;
            out.write_all(&f.bytes)?;
            out.sync_all()?;
        }
        if dir.exists() {
            fs::remove_dir_all(dir)?;
        }
        fs::rename(&staging, dir)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = fs::remove_dir_all(&staging);
    }
    result
}

/// Quasi-static threshold curve: pumped steady state and emission ratio at
/// each single-beam intensity (units of `I_s`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRow {
    pub intensity: f64,
    pub p_sat: f64,
    pub gamma_fs: f64,
    pub eta: f64,
    pub above_threshold: bool,
}

pub fn threshold_curve(scenario: &Scenario, intensities: &[f64]) -> Result<Vec<ThresholdRow>> {
    if scenario.gain.eta_mode != EtaModeKind::Spectrum {
        return Err(Error::invalid(
            "eta_mode",
            "the threshold curve needs eta_mode = spectrum",
        ));
    }
    let sim = scenario.simulation()?;
    let table = sim.table.clone().expect("spectrum mode has a table");
    let gain = sim.gain.expect("spectrum mode has a gain model");
    let c = sim.constants;
    let ens: AtomEnsemble = scenario.sample(scenario.engine.seed)?;
    let n = sim.atoms_in_mode(&ens);
    intensities
        .iter()
        .map(|&s| {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::invalid("intensity", "must be positive"));
            }
            let drive = crate::model::DriveConfig {
                s_single_beam: s,
                ..scenario.drive
            };
            let gamma_fs = scenario
                .gain
                .gamma_fs
                .unwrap_or_else(|| scattering_rate_fs(&c, drive.s_total(), drive.delta_a));
            let state = steady_state(&c, &drive, gamma_fs)?;
            let em = threshold_state(&c, &state, &drive, n, gamma_fs, &table, &gain);
            let em = eta_saturation_rolloff(&em, em.p_sat);
            Ok(ThresholdRow {
                intensity: s,
                p_sat: em.p_sat,
                gamma_fs,
                eta: em.eta,
                above_threshold: em.above_threshold,
            })
        })
        .collect()
}

pub fn threshold_csv(rows: &[ThresholdRow]) -> Vec<u8> {
    csv_bytes(
        &["intensity_Is", "p_sat", "gamma_fs", "eta", "above_threshold"],
        rows.iter().map(|r| {
            vec![
                fnum(r.intensity),
                fnum(r.p_sat),
                fnum(r.gamma_fs),
                fnum(r.eta),
                u8::from(r.above_threshold).to_string(),
            ]
        }),
    )
}

/// How an expectation compares a metric with its target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompareMode {
    /// `|v - target| <= tolerance * |target|`
    Rel,
    Abs,
    /// `target / tolerance <= v <= target * tolerance`
    Factor,
    Min,
    Max,
    /// Documented as outside the model; never fails.
    NotReproduced,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Expectation {
    pub metric: String,
    pub target: f64,
    pub tolerance: f64,
    pub mode: CompareMode,
    /// Evidence class: `measured`, `analytic` or `sanity`.
    pub evidence: String,
    #[serde(default)]
    pub note: String,
}

pub fn parse_expectations(text: &str) -> Result<Vec<Expectation>> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for (i, rec) in rdr.deserialize::<Expectation>().enumerate() {
        let e = rec.map_err(|e| Error::Expectations(format!("row {}: {e}", i + 1)))?;
        if e.metric.is_empty() {
            return Err(Error::Expectations(format!("row {}: empty metric", i + 1)));
        }
        if !e.target.is_finite() || !e.tolerance.is_finite() {
            return Err(Error::Expectations(format!(
                "row {}: target and tolerance must be finite",
                i + 1
            )));
        }
        if e.mode == CompareMode::Factor && !(e.tolerance >= 1.0) {
            return Err(Error::Expectations(format!(
                "row {}: factor tolerance must be >= 1",
                i + 1
            )));
        }
        if !["measured", "analytic", "sanity"].contains(&e.evidence.as_str()) {
            return Err(Error::Expectations(format!(
                "row {}: evidence must be measured, analytic or sanity",
                i + 1
            )));
        }
        out.push(e);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Pass,
    Fail,
    NotReproduced,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Pass => "PASS",
            Status::Fail => "FAIL",
            Status::NotReproduced => "NOT_REPRODUCED",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub expectation: Expectation,
    pub value: Option<f64>,
    pub status: Status,
    pub detail: String,
}

pub fn evaluate(exp: &Expectation, value: Option<f64>) -> ReportRow {
    let (status, detail) = match (exp.mode, value) {
        (CompareMode::NotReproduced, _) => (Status::NotReproduced, exp.note.clone()),
        (_, None) => (Status::Fail, "metric missing from bundle".to_string()),
        (_, Some(v)) if !v.is_finite() => (Status::Fail, "metric is not finite".to_string()),
        (mode, Some(v)) => {
            let t = exp.target;
            let tol = exp.tolerance;
            let ok = match mode {
                CompareMode::Rel => (v - t).abs() <= tol * t.abs(),
                CompareMode::Abs => (v - t).abs() <= tol,
                CompareMode::Factor => t > 0.0 && v > 0.0 && v >= t / tol && v <= t * tol,
                CompareMode::Min => v >= t,
                CompareMode::Max => v <= t,
                CompareMode::NotReproduced => unreachable!(),
            };
            let detail = match mode {
                CompareMode::Rel if t != 0.0 => format!("relative deviation {:.4}", (v - t) / t),
                CompareMode::Factor if t > 0.0 && v > 0.0 => format!("ratio {:.4}", v / t),
                _ => format!("difference {:.6e}", v - t),
            };
            (if ok { Status::Pass } else { Status::Fail }, detail)
        }
    };
    ReportRow {
        expectation: exp.clone(),
        value,
        status,
        detail,
    }
}

pub fn read_metrics(dir: &Path) -> Result<BTreeMap<String, f64>> {
    let mut rdr = csv::Reader::from_path(dir.join("metrics.csv")).map_err(|e| Error::Archive(e.to_string()))?;
    let mut out = BTreeMap::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| Error::Archive(e.to_string()))?;
        let (Some(k), Some(v)) = (rec.get(0), rec.get(1)) else {
            return Err(Error::Archive("metrics.csv rows need two fields".into()));
        };
        let v: f64 = v
            .parse()
            .map_err(|_| Error::Archive(format!("metric `{k}`: bad number `{v}`")))?;
        out.insert(k.to_string(), v);
    }
    Ok(out)
}

/// Checks the bundle against its manifest, evaluates every expectation and
/// writes `report.csv` into the bundle.
pub fn compare_report(bundle: &Path, expectations: &Path) -> Result<Vec<ReportRow>> {
    read_manifest(bundle)?.verify(bundle)?;
    let metrics = read_metrics(bundle)?;
    let exps = parse_expectations(&fs::read_to_string(expectations)?)?;
    let rows: Vec<ReportRow> = exps
        .iter()
        .map(|e| evaluate(e, metrics.get(&e.metric).copied()))
        .collect();
    fs::write(bundle.join("report.csv"), report_csv(&rows))?;
    Ok(rows)
}

pub fn report_csv(rows: &[ReportRow]) -> Vec<u8> {
    csv_bytes(
        &[
            "metric",
            "value",
            "target",
            "tolerance",
            "mode",
            "evidence",
            "status",
            "detail",
        ],
        rows.iter().map(|r| {
            let e = &r.expectation;
            vec![
                e.metric.clone(),
                r.value.map(fnum).unwrap_or_default(),
                fnum(e.target),
                fnum(e.tolerance),
                serde_json::to_value(e.mode)
                    .ok()
                    .and_then(|v| v.as_str().map(str::to_string))
                    .unwrap_or_default(),
                e.evidence.clone(),
                r.status.as_str().to_string(),
                r.detail.clone(),
            ]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp(mode: CompareMode, target: f64, tol: f64) -> Expectation {
        Expectation {
            metric: "m".into(),
            target,
            tolerance: tol,
            mode,
            evidence: "analytic".into(),
            note: String::new(),
        }
    }

    #[test]
    fn comparison_modes() {
        assert_eq!(
            evaluate(&exp(CompareMode::Rel, 100.0, 0.1), Some(109.0)).status,
            Status::Pass
        );
        assert_eq!(
            evaluate(&exp(CompareMode::Rel, 100.0, 0.1), Some(111.0)).status,
            Status::Fail
        );
        assert_eq!(
            evaluate(&exp(CompareMode::Factor, 3.3, 2.0), Some(1.7)).status,
            Status::Pass
        );
        assert_eq!(
            evaluate(&exp(CompareMode::Factor, 3.3, 2.0), Some(1.6)).status,
            Status::Fail
        );
        assert_eq!(
            evaluate(&exp(CompareMode::Min, 100.0, 0.0), Some(100.0)).status,
            Status::Pass
        );
        assert_eq!(
            evaluate(&exp(CompareMode::Max, 50.0, 0.0), Some(51.0)).status,
            Status::Fail
        );
        assert_eq!(evaluate(&exp(CompareMode::Rel, 1.0, 0.1), None).status, Status::Fail);
        assert_eq!(
            evaluate(&exp(CompareMode::NotReproduced, 1.0, 0.1), None).status,
            Status::NotReproduced
        );
    }

    #[test]
    fn expectations_parse() {
        let text =
            "metric,target,tolerance,mode,evidence,note\n# comment\nT_z_uK, 120, 0.1, rel, analytic, equilibrium\n";
        let e = parse_expectations(text).unwrap();
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].mode, CompareMode::Rel);
        assert!(parse_expectations("metric,target,tolerance,mode,evidence\nx,1,1,sideways,analytic\n").is_err());
        assert!(parse_expectations("metric,target,tolerance,mode,evidence\nx,1,1,rel,hearsay\n").is_err());
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest {
            entries: vec![("a".into(), "1".into()), ("file.x.csv".into(), "ab".into())],
        };
        assert_eq!(Manifest::parse(&m.emit()).unwrap(), m);
        assert_eq!(m.files(), vec![("x.csv", "ab")]);
        assert!(Manifest::parse("novalue\n").is_err());
        assert!(Manifest::parse("a = 1\na = 2\n").is_err());
    }

    #[test]
    fn numbers_are_locale_free() {
        assert_eq!(fnum(0.15), "1.50000000e-1");
        assert_eq!(fnum(f64::NAN), "nan");
    }
}
