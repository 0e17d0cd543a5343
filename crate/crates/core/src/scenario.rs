//! Scenario files: a line-oriented `key = value` format with `[section]` headers,
//! `#` comments and unit suffixes. Every key is declared in one table, which
//! drives parsing, writing, and sweeps.
//!
//! ```text
//! name = fig2
//! [atoms]
//! n_atoms = 10000
//! t_mot = 10 uK
//! [drive]
//! intensity = 16 Is
//! delta_a = -63 MHz
//! delta_c = -150 MHz
//! exposure_time = 2 ms
//! ```

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::constants::{two_pi, Constants};
use crate::engine::{AtomEnsemble, EngineConfig, EtaMode, Simulation};
use crate::error::{ConfigError, ConfigErrorKind, Error, Result};
use crate::force::{EmissionPattern, Envelope, ForceModelConfig};
use crate::model::{sample_ensemble, AtomEnsembleInit, DriveConfig, Polarization};
use crate::spectrum::{cached_table, CavityGeometry, SpectrumTable};
use crate::units::{format_list, parse_list, parse_quantity, parse_vector, Quantity, UnitError};
use crate::zeeman::{GainModel, ThresholdAnchor};
use crate::Vector3 as V3;

const SECTIONS: &[&str] = &[
    "atoms",
    "drive",
    "force",
    "cavity",
    "gain",
    "engine",
    "detection",
    "sweep",
    "output",
];
const REQUIRED: &[&str] = &[
    "name",
    "atoms.n_atoms",
    "atoms.t_mot",
    "drive.intensity",
    "drive.delta_a",
    "drive.delta_c",
    "drive.exposure_time",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EnvelopeKind {
    Box,
    Unbounded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EtaModeKind {
    Spectrum,
    Fixed,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceSettings {
    pub kappa_eff: Option<f64>,
    pub fs_doppler_x: bool,
    pub emission: EmissionPattern,
    pub envelope: EnvelopeKind,
    pub envelope_size: Vector3<f64>,
    pub w_env: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavitySettings {
    pub length: f64,
    pub finesse: f64,
    /// rad/s.
    pub linewidth: f64,
    pub waist: f64,
    pub eps_x: f64,
    pub eps_y: f64,
    /// Hz.
    pub fold_target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainSettings {
    pub eta_mode: EtaModeKind,
    pub eta_fixed: f64,
    pub eta_c: f64,
    pub gamma_fs: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EngineSettings {
    pub dt: f64,
    pub duration: f64,
    pub record_interval: f64,
    pub seed: u64,
    pub workers: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectionSettings {
    pub sheet_depth: f64,
    pub bin_width: f64,
    pub pixel: f64,
    pub image_delay: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutputSettings {
    pub spectrum: bool,
    pub images: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub path: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub init: AtomEnsembleInit,
    pub drive: DriveConfig,
    pub force: ForceSettings,
    pub cavity: CavitySettings,
    pub gain: GainSettings,
    pub engine: EngineSettings,
    pub detection: DetectionSettings,
    pub sweep: Option<Sweep>,
    pub output: OutputSettings,
}

impl Scenario {
    /// Defaults for every optional key. The required keys get placeholder values.
    pub fn template(name: &str) -> Self {
        let geom = CavityGeometry::uncalibrated();
        Scenario {
            name: name.to_string(),
            init: AtomEnsembleInit {
                n_atoms: 10_000,
                n_physical: 1e6,
                t_mot: 10e-6,
                drop_height: 0.15 * 0.15 / (2.0 * 9.81),
                cloud_sigma: V3::repeat(0.3e-3),
            },
            drive: DriveConfig {
                s_single_beam: 0.0,
                delta_a: two_pi(-63e6),
                delta_c: two_pi(-150e6),
                polarization: Polarization::VerticalZ,
                b_field: V3::zeros(),
                exposure_time: 0.0,
                extinction_tau: 0.0,
            },
            force: ForceSettings {
                kappa_eff: None,
                fs_doppler_x: false,
                emission: EmissionPattern::Dipole,
                envelope: EnvelopeKind::Box,
                envelope_size: V3::new(2.5e-3, 0.8e-3, 75e-3),
                w_env: None,
            },
            cavity: CavitySettings {
                length: geom.length,
                finesse: geom.finesse,
                linewidth: geom.kappa,
                waist: geom.waist,
                eps_x: geom.eps_x,
                eps_y: geom.eps_y,
                fold_target: -200e6,
            },
            gain: GainSettings {
                eta_mode: EtaModeKind::Spectrum,
                eta_fixed: 0.0,
                eta_c: 1.0,
                gamma_fs: None,
            },
            engine: EngineSettings {
                dt: 1e-6,
                duration: 0.0,
                record_interval: 10e-6,
                seed: 1,
                workers: 0,
            },
            detection: DetectionSettings {
                sheet_depth: 0.02,
                bin_width: 0.5e-3,
                pixel: 50e-6,
                image_delay: 10e-3,
            },
            sweep: None,
            output: OutputSettings {
                spectrum: false,
                images: false,
            },
        }
    }

    pub fn parse(text: &str) -> std::result::Result<Scenario, ConfigError> {
        parse(text)
    }

    /// Canonical text form; `Scenario::parse(&s.to_text()) == s`.
    pub fn to_text(&self) -> String {
        emit(self)
    }

    /// Hex SHA-256 of the canonical text.
    pub fn config_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn constants(&self) -> Constants {
        Constants {
            kappa: self.cavity.linewidth,
            ..Constants::cesium_d2()
        }
    }

    pub fn geometry(&self) -> CavityGeometry {
        CavityGeometry {
            length: self.cavity.length,
            finesse: self.cavity.finesse,
            kappa: self.cavity.linewidth,
            waist: self.cavity.waist,
            eps_x: self.cavity.eps_x,
            eps_y: self.cavity.eps_y,
            aberr_coeff: 0.0,
            t_max: 0,
        }
    }

    pub fn spectrum_table(&self) -> Result<Arc<SpectrumTable>> {
        cached_table(&self.geometry(), self.cavity.fold_target)
    }

    pub fn force_config(&self) -> ForceModelConfig {
        let c = self.constants();
        ForceModelConfig {
            kappa_eff: self.force.kappa_eff.unwrap_or(c.kappa),
            include_fs_doppler_x: self.force.fs_doppler_x,
            dipole_axis: self.drive.dipole_axis(),
            emission: self.force.emission,
            envelope: match self.force.envelope {
                EnvelopeKind::Unbounded => Envelope::Unbounded,
                EnvelopeKind::Box => Envelope::Box {
                    size: self.force.envelope_size,
                    w_env: self.force.w_env,
                },
            },
        }
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            dt: self.engine.dt,
            duration: self.engine.duration,
            record_interval: self.engine.record_interval,
            workers: self.engine.workers,
            eta_mode: match self.gain.eta_mode {
                EtaModeKind::Spectrum => EtaMode::Spectrum,
                EtaModeKind::Fixed => EtaMode::Fixed(self.gain.eta_fixed),
                EtaModeKind::Off => EtaMode::Off,
            },
            gamma_fs_override: self.gain.gamma_fs,
        }
    }

    pub fn gain_model(&self, table: &SpectrumTable) -> Result<GainModel> {
        GainModel::calibrate(&self.constants(), table, &ThresholdAnchor::default(), self.gain.eta_c)
    }

    pub fn simulation(&self) -> Result<Simulation> {
        let c = self.constants();
        let (table, gain) = if self.gain.eta_mode == EtaModeKind::Spectrum {
            let table = self.spectrum_table()?;
            let gain = self.gain_model(&table)?;
            (Some(table), Some(gain))
        } else {
            (None, None)
        };
        Simulation::new(c, self.drive, self.force_config(), self.engine_config(), table, gain)
    }

    pub fn sample(&self, seed: u64) -> Result<AtomEnsemble> {
        sample_ensemble(&self.constants(), &self.init, seed)
    }

    /// Range checks applied after parsing; use after editing fields directly.
    pub fn validate(&self) -> std::result::Result<(), ConfigError> {
        match self.range_violation() {
            Some((key, reason)) => Err(ConfigError::global(ConfigErrorKind::OutOfRange {
                key: key.to_string(),
                reason,
            })),
            None => Ok(()),
        }
    }

    /// Numeric value at a parameter path such as `drive.intensity`, in stored units.
    pub fn value(&self, path: &str) -> Option<f64> {
        let f = field(path)?;
        match (f.get)(self) {
            Value::Num(v) => Some(v),
            Value::Opt(v) => v,
            _ => None,
        }
    }

    /// Copy with one numeric parameter replaced, re-validated.
    pub fn with_value(&self, path: &str, v: f64) -> std::result::Result<Scenario, ConfigError> {
        let f = field(path)
            .filter(|f| f.kind.is_numeric())
            .ok_or_else(|| ConfigError::global(ConfigErrorKind::UnknownSweepPath(path.to_string())))?;
        let mut s = self.clone();
        (f.set)(
            &mut s,
            match f.kind {
                Kind::OptNum(_) => Value::Opt(Some(v)),
                _ => Value::Num(v),
            },
        );
        s.validate()?;
        Ok(s)
    }

    /// One scenario per sweep value (or the scenario itself without a sweep).
    pub fn sweep_points(&self) -> std::result::Result<Vec<(Option<f64>, Scenario)>, ConfigError> {
        match &self.sweep {
            None => Ok(vec![(None, self.clone())]),
            Some(sw) => sw
                .values
                .iter()
                .map(|&v| {
                    let mut s = self.with_value(&sw.path, v)?;
                    s.sweep = None;
                    Ok((Some(v), s))
                })
                .collect(),
        }
    }

    /// Quantity of a numeric parameter path.
    pub fn quantity_of(path: &str) -> Option<Quantity> {
        match field(path)?.kind {
            Kind::Num(q) | Kind::OptNum(q) => Some(q),
            _ => None,
        }
    }

    fn range_violation(&self) -> Option<(&'static str, String)> {
        let checks: [(&'static str, bool, &str); 30] = [
            ("name", valid_name(&self.name), "use letters, digits, '_', '-' or '.'"),
            ("atoms.n_atoms", self.init.n_atoms >= 1, "need at least one atom"),
            ("atoms.n_physical", self.init.n_physical > 0.0, "must be positive"),
            ("atoms.t_mot", self.init.t_mot > 0.0, "must be positive"),
            ("atoms.drop_height", self.init.drop_height >= 0.0, "must be >= 0"),
            (
                "atoms.cloud_sigma",
                self.init.cloud_sigma.iter().all(|s| *s >= 0.0),
                "must be >= 0",
            ),
            ("drive.intensity", self.drive.s_single_beam >= 0.0, "must be >= 0"),
            (
                "drive.delta_a",
                self.drive.delta_a != 0.0,
                "a resonant drive is outside the dispersive model",
            ),
            ("drive.exposure_time", self.drive.exposure_time >= 0.0, "must be >= 0"),
            ("drive.extinction_tau", self.drive.extinction_tau >= 0.0, "must be >= 0"),
            (
                "force.kappa_eff",
                self.force.kappa_eff.is_none_or(|k| k > 0.0),
                "must be positive",
            ),
            (
                "force.envelope_size",
                self.force.envelope_size.iter().all(|s| *s > 0.0),
                "must be positive",
            ),
            (
                "force.w_env",
                self.force.w_env.is_none_or(|w| w > 0.0),
                "must be positive",
            ),
            ("cavity.length", self.cavity.length > 0.0, "must be positive"),
            ("cavity.finesse", self.cavity.finesse > 0.0, "must be positive"),
            ("cavity.waist", self.cavity.waist > 0.0, "must be positive"),
            (
                "cavity.linewidth",
                self.linewidth_consistent(),
                "must equal 2 pi FSR / finesse within 1%",
            ),
            ("cavity.fold_target", self.cavity.fold_target < 0.0, "must be negative"),
            ("gain.eta_fixed", self.gain.eta_fixed >= 0.0, "must be >= 0"),
            ("gain.eta_c", self.gain.eta_c > 0.0, "must be positive"),
            (
                "gain.gamma_fs",
                self.gain.gamma_fs.is_none_or(|g| g >= 0.0),
                "must be >= 0",
            ),
            ("engine.dt", self.engine.dt > 0.0, "must be positive"),
            ("engine.duration", self.engine.duration >= 0.0, "must be >= 0"),
            (
                "engine.record_interval",
                self.engine.record_interval > 0.0,
                "must be positive",
            ),
            (
                "detection.sheet_depth",
                self.detection.sheet_depth > 0.0,
                "must be positive",
            ),
            (
                "detection.bin_width",
                self.detection.bin_width > 0.0,
                "must be positive",
            ),
            ("detection.pixel", self.detection.pixel > 0.0, "must be positive"),
            (
                "detection.image_delay",
                self.detection.image_delay >= 0.0,
                "must be >= 0",
            ),
            ("engine.workers", self.engine.workers <= 1024, "at most 1024"),
            ("atoms.n_atoms", self.init.n_atoms <= 100_000_000, "at most 1e8"),
        ];
        checks
            .iter()
            .find(|(_, ok, _)| !ok)
            .map(|(k, _, r)| (*k, r.to_string()))
    }

    fn linewidth_consistent(&self) -> bool {
        let g = self.geometry();
        let expected = two_pi(g.fsr() / g.finesse);
        ((g.kappa - expected) / expected).abs() <= 0.01
    }
}

fn valid_name(s: &str) -> bool {
    !s.is_empty()
        && s.chars()
            .all(|c| c.is_ascii_alphanumeric() || matches!(c, '_' | '-' | '.'))
}

#[derive(Debug, Clone, Copy)]
enum Kind {
    Num(Quantity),
    OptNum(Quantity),
    Vec3(Quantity),
    Int,
    Bool,
    Word(&'static [&'static str]),
    Text,
}

impl Kind {
    fn is_numeric(self) -> bool {
        matches!(self, Kind::Num(_) | Kind::OptNum(_))
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Num(f64),
    Opt(Option<f64>),
    Vec3(Vector3<f64>),
    Int(u64),
    Bool(bool),
    Word(String),
}

impl Value {
    fn num(self) -> f64 {
        match self {
            Value::Num(v) => v,
            _ => unreachable!("field table kind mismatch"),
        }
    }
    fn opt(self) -> Option<f64> {
        match self {
            Value::Opt(v) => v,
            _ => unreachable!("field table kind mismatch"),
        }
    }
    fn vec3(self) -> Vector3<f64> {
        match self {
            Value::Vec3(v) => v,
            _ => unreachable!("field table kind mismatch"),
        }
    }
    fn int(self) -> u64 {
        match self {
            Value::Int(v) => v,
            _ => unreachable!("field table kind mismatch"),
        }
    }
    fn flag(self) -> bool {
        match self {
            Value::Bool(v) => v,
            _ => unreachable!("field table kind mismatch"),
        }
    }
    fn word(self) -> String {
        match self {
            Value::Word(v) => v,
            _ => unreachable!("field table kind mismatch"),
        }
    }
}

struct Field {
    path: &'static str,
    kind: Kind,
    get: fn(&Scenario) -> Value,
    set: fn(&mut Scenario, Value),
}

macro_rules! num {
    ($path:literal, $q:ident, $($f:ident).+) => {
        Field { path: $path, kind: Kind::Num(Quantity::$q), get: |s| Value::Num(s.$($f).+), set: |s, v| s.$($f).+ = v.num() }
    };
}
macro_rules! opt {
    ($path:literal, $q:ident, $($f:ident).+) => {
        Field { path: $path, kind: Kind::OptNum(Quantity::$q), get: |s| Value::Opt(s.$($f).+), set: |s, v| s.$($f).+ = v.opt() }
    };
}
macro_rules! vec3 {
    ($path:literal, $q:ident, $($f:ident).+) => {
        Field { path: $path, kind: Kind::Vec3(Quantity::$q), get: |s| Value::Vec3(s.$($f).+), set: |s, v| s.$($f).+ = v.vec3() }
    };
}
macro_rules! flag {
    ($path:literal, $($f:ident).+) => {
        Field { path: $path, kind: Kind::Bool, get: |s| Value::Bool(s.$($f).+), set: |s, v| s.$($f).+ = v.flag() }
    };
}

const POLARIZATIONS: &[&str] = &["vertical_z", "horizontal_y"];
const PATTERNS: &[&str] = &["dipole", "isotropic", "axial_x"];
const ENVELOPES: &[&str] = &["box", "unbounded"];
const ETA_MODES: &[&str] = &["spectrum", "fixed", "off"];

static FIELDS: &[Field] = &[
    Field {
        path: "name",
        kind: Kind::Text,
        get: |s| Value::Word(s.name.clone()),
        set: |s, v| s.name = v.word(),
    },
    Field {
        path: "atoms.n_atoms",
        kind: Kind::Int,
        get: |s| Value::Int(s.init.n_atoms as u64),
        set: |s, v| s.init.n_atoms = v.int() as usize,
    },
    num!("atoms.n_physical", Dimensionless, init.n_physical),
    num!("atoms.t_mot", Temperature, init.t_mot),
    num!("atoms.drop_height", Length, init.drop_height),
    vec3!("atoms.cloud_sigma", Length, init.cloud_sigma),
    num!("drive.intensity", Intensity, drive.s_single_beam),
    num!("drive.delta_a", AngularFrequency, drive.delta_a),
    num!("drive.delta_c", AngularFrequency, drive.delta_c),
    Field {
        path: "drive.polarization",
        kind: Kind::Word(POLARIZATIONS),
        get: |s| Value::Word(s.drive.polarization.name().into()),
        set: |s, v| s.drive.polarization = Polarization::from_name(&v.word()).expect("validated word"),
    },
    vec3!("drive.b_field", Field, drive.b_field),
    num!("drive.exposure_time", Time, drive.exposure_time),
    num!("drive.extinction_tau", Time, drive.extinction_tau),
    opt!("force.kappa_eff", AngularFrequency, force.kappa_eff),
    flag!("force.fs_doppler_x", force.fs_doppler_x),
    Field {
        path: "force.emission",
        kind: Kind::Word(PATTERNS),
        get: |s| Value::Word(s.force.emission.name().into()),
        set: |s, v| s.force.emission = EmissionPattern::from_name(&v.word()).expect("validated word"),
    },
    Field {
        path: "force.envelope",
        kind: Kind::Word(ENVELOPES),
        get: |s| {
            Value::Word(
                match s.force.envelope {
                    EnvelopeKind::Box => "box",
                    EnvelopeKind::Unbounded => "unbounded",
                }
                .into(),
            )
        },
        set: |s, v| {
            s.force.envelope = if v.word() == "box" {
                EnvelopeKind::Box
            } else {
                EnvelopeKind::Unbounded
            }
        },
    },
    vec3!("force.envelope_size", Length, force.envelope_size),
    opt!("force.w_env", Length, force.w_env),
    num!("cavity.length", Length, cavity.length),
    num!("cavity.finesse", Dimensionless, cavity.finesse),
    num!("cavity.linewidth", AngularFrequency, cavity.linewidth),
    num!("cavity.waist", Length, cavity.waist),
    num!("cavity.eps_x", Length, cavity.eps_x),
    num!("cavity.eps_y", Length, cavity.eps_y),
    num!("cavity.fold_target", Frequency, cavity.fold_target),
    Field {
        path: "gain.eta_mode",
        kind: Kind::Word(ETA_MODES),
        get: |s| {
            Value::Word(
                match s.gain.eta_mode {
                    EtaModeKind::Spectrum => "spectrum",
                    EtaModeKind::Fixed => "fixed",
                    EtaModeKind::Off => "off",
                }
                .into(),
            )
        },
        set: |s, v| {
            s.gain.eta_mode = match v.word().as_str() {
                "spectrum" => EtaModeKind::Spectrum,
                "fixed" => EtaModeKind::Fixed,
                _ => EtaModeKind::Off,
            }
        },
    },
    num!("gain.eta_fixed", Dimensionless, gain.eta_fixed),
    num!("gain.eta_c", Dimensionless, gain.eta_c),
    opt!("gain.gamma_fs", Rate, gain.gamma_fs),
    num!("engine.dt", Time, engine.dt),
    num!("engine.duration", Time, engine.duration),
    num!("engine.record_interval", Time, engine.record_interval),
    Field {
        path: "engine.seed",
        kind: Kind::Int,
        get: |s| Value::Int(s.engine.seed),
        set: |s, v| s.engine.seed = v.int(),
    },
    Field {
        path: "engine.workers",
        kind: Kind::Int,
        get: |s| Value::Int(s.engine.workers as u64),
        set: |s, v| s.engine.workers = v.int() as usize,
    },
    num!("detection.sheet_depth", Length, detection.sheet_depth),
    num!("detection.bin_width", Time, detection.bin_width),
    num!("detection.pixel", Length, detection.pixel),
    num!("detection.image_delay", Time, detection.image_delay),
    flag!("output.spectrum", output.spectrum),
    flag!("output.images", output.images),
];

fn field(path: &str) -> Option<&'static Field> {
    FIELDS.iter().find(|f| f.path == path)
}

fn unit_error(key: &str, q: Quantity, e: UnitError) -> ConfigErrorKind {
    match e {
        UnitError::Missing => ConfigErrorKind::MissingUnit { key: key.to_string() },
        UnitError::Mismatch(unit) => ConfigErrorKind::UnitMismatch {
            key: key.to_string(),
            unit,
            expected: q.name(),
        },
        UnitError::BadNumber(s) => ConfigErrorKind::BadValue {
            key: key.to_string(),
            reason: format!("`{s}` is not a finite number"),
        },
        UnitError::Empty => ConfigErrorKind::BadValue {
            key: key.to_string(),
            reason: "empty value".into(),
        },
    }
}

fn parse_value(path: &str, kind: Kind, text: &str) -> std::result::Result<Value, ConfigErrorKind> {
    let bad = |reason: String| ConfigErrorKind::BadValue {
        key: path.to_string(),
        reason,
    };
    match kind {
        Kind::Num(q) => parse_quantity(text, q)
            .map(Value::Num)
            .map_err(|e| unit_error(path, q, e)),
        Kind::OptNum(q) => parse_quantity(text, q)
            .map(|v| Value::Opt(Some(v)))
            .map_err(|e| unit_error(path, q, e)),
        Kind::Vec3(q) => parse_vector(text, q)
            .map(Value::Vec3)
            .map_err(|e| unit_error(path, q, e)),
        Kind::Int => {
            if let Ok(v) = text.trim().parse::<u64>() {
                return Ok(Value::Int(v));
            }
            let v = parse_quantity(text, Quantity::Dimensionless)
                .map_err(|e| unit_error(path, Quantity::Dimensionless, e))?;
            if v < 0.0 || v.fract() != 0.0 || v > 9.007_199_254_740_992e15 {
                return Err(bad(format!("`{text}` is not a non-negative integer")));
            }
            Ok(Value::Int(v as u64))
        }
        Kind::Bool => match text {
            "true" | "yes" | "on" => Ok(Value::Bool(true)),
            "false" | "no" | "off" => Ok(Value::Bool(false)),
            _ => Err(bad(format!("`{text}` is not true or false"))),
        },
        Kind::Word(options) => {
            if options.contains(&text) {
                Ok(Value::Word(text.to_string()))
            } else {
                Err(bad(format!("`{text}` is not one of {}", options.join(", "))))
            }
        }
        Kind::Text => Ok(Value::Word(text.to_string())),
    }
}

fn format_value(kind: Kind, v: Value) -> Option<String> {
    Some(match (kind, v) {
        (Kind::Num(q), Value::Num(x)) => format_list(&[x], q),
        (Kind::OptNum(q), Value::Opt(x)) => format_list(&[x?], q),
        (Kind::Vec3(q), Value::Vec3(x)) => format_list(x.as_slice(), q),
        (Kind::Int, Value::Int(x)) => x.to_string(),
        (Kind::Bool, Value::Bool(x)) => x.to_string(),
        (_, Value::Word(x)) => x,
        _ => unreachable!("field table kind mismatch"),
    })
}

fn parse(text: &str) -> std::result::Result<Scenario, ConfigError> {
    let mut s = Scenario::template("");
    let mut seen: HashMap<String, usize> = HashMap::new();
    let mut section = String::new();
    let mut sweep_path: Option<(String, usize)> = None;
    let mut sweep_values: Option<(String, usize)> = None;

    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('[') {
            let name = rest
                .strip_suffix(']')
                .ok_or_else(|| ConfigError::at(line_no, ConfigErrorKind::Syntax("unterminated section header".into())))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(ConfigError::at(
                    line_no,
                    ConfigErrorKind::UnknownSection(name.to_string()),
                ));
            }
            section = name.to_string();
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| ConfigError::at(line_no, ConfigErrorKind::Syntax("expected `key = value`".into())))?;
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::at(
                line_no,
                ConfigErrorKind::Syntax(format!("bad key `{key}`")),
            ));
        }
        let path = if section.is_empty() {
            key.to_string()
        } else {
            format!("{section}.{key}")
        };
        if seen.contains_key(&path) {
            return Err(ConfigError::at(line_no, ConfigErrorKind::DuplicateKey(path)));
        }
        seen.insert(path.clone(), line_no);

        if section == "sweep" {
            match key {
                "path" => sweep_path = Some((value.to_string(), line_no)),
                "values" => sweep_values = Some((value.to_string(), line_no)),
                _ => return Err(ConfigError::at(line_no, ConfigErrorKind::UnknownKey(path))),
            }
            continue;
        }
        let f = field(&path).ok_or_else(|| ConfigError::at(line_no, ConfigErrorKind::UnknownKey(path.clone())))?;
        let v = parse_value(&path, f.kind, value).map_err(|k| ConfigError::at(line_no, k))?;
        (f.set)(&mut s, v);
    }

    let missing: Vec<String> = REQUIRED
        .iter()
        .filter(|k| !seen.contains_key(**k))
        .map(|k| k.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(ConfigError::global(ConfigErrorKind::MissingKeys(missing)));
    }

    match (sweep_path, sweep_values) {
        (None, None) => {}
        (Some(_), None) => {
            return Err(ConfigError::global(ConfigErrorKind::MissingKeys(vec![
                "sweep.values".into()
            ])))
        }
        (None, Some(_)) => {
            return Err(ConfigError::global(ConfigErrorKind::MissingKeys(vec![
                "sweep.path".into()
            ])))
        }
        (Some((path, pl)), Some((values, vl))) => {
            let q = Scenario::quantity_of(&path)
                .ok_or_else(|| ConfigError::at(pl, ConfigErrorKind::UnknownSweepPath(path.clone())))?;
            let values = parse_list(&values, q).map_err(|e| ConfigError::at(vl, unit_error("sweep.values", q, e)))?;
            s.sweep = Some(Sweep { path, values });
            if let Err(mut e) = s.sweep_points() {
                e.line = Some(vl);
                return Err(e);
            }
        }
    }

    if let Some((key, reason)) = s.range_violation() {
        return Err(ConfigError {
            line: seen.get(key).copied(),
            kind: ConfigErrorKind::OutOfRange {
                key: key.to_string(),
                reason,
            },
        });
    }
    Ok(s)
}

fn emit(s: &Scenario) -> String {
    let mut out = String::new();
    let mut section = "";
    for f in FIELDS {
        let (sec, key) = f.path.split_once('.').unwrap_or(("", f.path));
        let Some(text) = format_value(f.kind, (f.get)(s)) else {
            continue;
        };
        if sec != section {
            out.push_str(&format!("\n[{sec}]\n"));
            section = sec;
        }
        out.push_str(&format!("{key} = {text}\n"));
    }
    if let Some(sw) = &s.sweep {
        let q = Scenario::quantity_of(&sw.path).unwrap_or(Quantity::Dimensionless);
        out.push_str(&format!(
            "\n[sweep]\npath = {}\nvalues = {}\n",
            sw.path,
            format_list(&sw.values, q)
        ));
    }
    out
}

pub const PRESET_NAMES: &[&str] = &[
    "fig2",
    "fig3",
    "fig4",
    "fig5",
    "single_atom",
    "doppler_x",
    "off_resonant",
];

/// Text of a shipped preset, by name with or without the `.scn` extension.
pub fn preset_text(name: &str) -> Option<&'static str> {
    let name = name.strip_suffix(".scn").unwrap_or(name);
    Some(match name {
        "fig2" => include_str!("../presets/fig2.scn"),
        "fig3" => include_str!("../presets/fig3.scn"),
        "fig4" => include_str!("../presets/fig4.scn"),
        "fig5" => include_str!("../presets/fig5.scn"),
        "single_atom" => include_str!("../presets/single_atom.scn"),
        "doppler_x" => include_str!("../presets/doppler_x.scn"),
        "off_resonant" => include_str!("../presets/off_resonant.scn"),
        _ => return None,
    })
}

pub fn preset(name: &str) -> Result<Scenario> {
    let text = preset_text(name).ok_or_else(|| Error::invalid("preset", format!("no preset named `{name}`")))?;
    Ok(Scenario::parse(text)?)
}

/// Loads a scenario file. A path that does not exist but names a shipped preset
/// (`fig2` or `fig2.scn`) loads the preset.
pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario> {
    let path = path.as_ref();
    match std::fs::read_to_string(path) {
        Ok(text) => Ok(Scenario::parse(&text)?),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
            match preset_text(name) {
                Some(text) if path.parent().is_none_or(|p| p.as_os_str().is_empty()) => Ok(Scenario::parse(text)?),
                _ => Err(Error::Io(e)),
            }
        }
        Err(e) => Err(Error::Io(e)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "name = t\n[atoms]\nn_atoms = 10\nt_mot = 10 uK\n[drive]\nintensity = 16 Is\ndelta_a = -63 MHz\ndelta_c = -150 MHz\nexposure_time = 1 ms\n";

    #[test]
    fn minimal_file_parses() {
        let s = Scenario::parse(MINIMAL).unwrap();
        assert_eq!(s.init.n_atoms, 10);
        assert_eq!(s.drive.s_single_beam, 16.0);
        assert_eq!(s.drive.exposure_time, 1e-3);
    }

    #[test]
    fn empty_file_lists_required_keys() {
        let e = Scenario::parse("").unwrap_err();
        match e.kind {
            ConfigErrorKind::MissingKeys(k) => assert_eq!(k.len(), REQUIRED.len()),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let e = Scenario::parse(&format!("{MINIMAL}bogus = 1\n")).unwrap_err();
        assert_eq!(e.line, Some(10));
        assert!(matches!(e.kind, ConfigErrorKind::UnknownKey(_)));

        let e = Scenario::parse(&MINIMAL.replace("16 Is", "16 ms")).unwrap_err();
        assert_eq!(e.line, Some(6));
        assert!(matches!(e.kind, ConfigErrorKind::UnitMismatch { .. }));

        let e = Scenario::parse(&MINIMAL.replace("10 uK", "-1 uK")).unwrap_err();
        assert_eq!(e.line, Some(4));
        assert!(matches!(e.kind, ConfigErrorKind::OutOfRange { .. }));

        let e = Scenario::parse(&MINIMAL.replace("-63 MHz", "0 MHz")).unwrap_err();
        assert!(matches!(e.kind, ConfigErrorKind::OutOfRange { .. }));
    }

    #[test]
    fn sweep_paths_are_checked() {
        let ok = format!("{MINIMAL}[sweep]\npath = drive.intensity\nvalues = 1, 2, 4 Is\n");
        let s = Scenario::parse(&ok).unwrap();
        assert_eq!(s.sweep_points().unwrap().len(), 3);
        let bad = format!("{MINIMAL}[sweep]\npath = drive.polarization\nvalues = 1\n");
        assert!(matches!(
            Scenario::parse(&bad).unwrap_err().kind,
            ConfigErrorKind::UnknownSweepPath(_)
        ));
    }

    #[test]
    fn round_trip() {
        let mut s = Scenario::parse(MINIMAL).unwrap();
        s.force.w_env = Some(0.4e-3);
        s.sweep = Some(Sweep {
            path: "drive.delta_a".into(),
            values: vec![two_pi(-60e6), two_pi(-80e6)],
        });
        assert_eq!(Scenario::parse(&s.to_text()).unwrap(), s);
    }
}
