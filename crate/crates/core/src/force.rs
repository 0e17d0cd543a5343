//! Friction laws and recoil kicks.
//!
//! Cavity emission is a two-photon process (absorb along x from the standing
//! wave, emit along z into the resonator), so cavity friction acts on both x and z.

use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::constants::{Constants, HBAR, KB};
use crate::error::{Error, Result};
use crate::model::DriveConfig;

/// Angular distribution of free-space emission.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmissionPattern {
    /// `sin^2` about the dipole axis.
    Dipole,
    Isotropic,
    /// `+-x` only: the one-dimensional Doppler picture.
    AxialX,
}

impl EmissionPattern {
    pub fn name(self) -> &'static str {
        match self {
            EmissionPattern::Dipole => "dipole",
            EmissionPattern::Isotropic => "isotropic",
            EmissionPattern::AxialX => "axial_x",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "dipole" => Some(EmissionPattern::Dipole),
            "isotropic" => Some(EmissionPattern::Isotropic),
            "axial_x" => Some(EmissionPattern::AxialX),
            _ => None,
        }
    }

    /// Mean of `(k . axis)^2 / k^2` over emission directions.
    pub fn second_moment(self, dipole_axis: &Vector3<f64>, axis: &Vector3<f64>) -> f64 {
        let a = axis.normalize();
        match self {
            EmissionPattern::Dipole => {
                let c = dipole_axis.normalize().dot(&a);
                0.4 - 0.2 * c * c
            }
            EmissionPattern::Isotropic => 1.0 / 3.0,
            EmissionPattern::AxialX => a.x * a.x,
        }
    }
}

/// Region in which the cavity modes and incident beams overlap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Envelope {
    Unbounded,
    /// Full extents along x, y, z, with an optional Gaussian roll-off of scale
    /// `w_env` in the transverse (x, y) plane.
    Box {
        size: Vector3<f64>,
        w_env: Option<f64>,
    },
}

impl Envelope {
    pub fn cooling_volume() -> Self {
        Envelope::Box {
            size: Vector3::new(2.5e-3, 0.8e-3, 75e-3),
            w_env: None,
        }
    }

    /// Coupling factor in `[0, 1]`: 1 at the center, 0 outside.
    pub fn factor(&self, pos: &Vector3<f64>) -> f64 {
        match *self {
            Envelope::Unbounded => 1.0,
            Envelope::Box { size, w_env } => {
                if pos.x.abs() > 0.5 * size.x || pos.y.abs() > 0.5 * size.y || pos.z.abs() > 0.5 * size.z {
                    return 0.0;
                }
                match w_env {
                    Some(w) => (-2.0 * (pos.x * pos.x + pos.y * pos.y) / (w * w)).exp(),
                    None => 1.0,
                }
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let Envelope::Box { size, w_env } = self {
            if size.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
                return Err(Error::invalid("envelope", "extents must be positive"));
            }
            if let Some(w) = w_env {
                if !(*w > 0.0 && w.is_finite()) {
                    return Err(Error::invalid("w_env", "must be positive"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForceModelConfig {
    /// Effective cavity linewidth entering the friction, rad/s.
    pub kappa_eff: f64,
    pub include_fs_doppler_x: bool,
    pub dipole_axis: Vector3<f64>,
    pub emission: EmissionPattern,
    pub envelope: Envelope,
}

impl ForceModelConfig {
    pub fn new(c: &Constants, drive: &DriveConfig) -> Self {
        ForceModelConfig {
            kappa_eff: c.kappa,
            include_fs_doppler_x: false,
            dipole_axis: drive.dipole_axis(),
            emission: EmissionPattern::Dipole,
            envelope: Envelope::cooling_volume(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.kappa_eff > 0.0 && self.kappa_eff.is_finite()) {
            return Err(Error::invalid("kappa_eff", "must be positive"));
        }
        if !(self.dipole_axis.norm() > 0.0) {
            return Err(Error::invalid("dipole_axis", "must be nonzero"));
        }
        self.envelope.validate()
    }
}

/// Cavity friction rate `2 eta Gamma_fs v_rec k / kappa_eff`, 1/s.
pub fn cavity_friction_rate(c: &Constants, eta: f64, gamma_fs: f64, kappa_eff: f64) -> f64 {
    2.0 * eta * gamma_fs * c.v_rec * c.k / kappa_eff
}

/// Cavity-Doppler acceleration at the cavity center (envelope factor 1).
pub fn cavity_friction_accel(
    c: &Constants,
    v: &Vector3<f64>,
    eta: f64,
    gamma_fs: f64,
    cfg: &ForceModelConfig,
) -> Vector3<f64> {
    let gamma = cavity_friction_rate(c, eta, gamma_fs, cfg.kappa_eff);
    Vector3::new(-gamma * v.x, 0.0, -gamma * v.z)
}

/// Two-beam free-space Doppler friction coefficient along x, 1/s.
pub fn fs_doppler_rate(c: &Constants, drive: &DriveConfig) -> f64 {
    let x = 2.0 * drive.delta_a / c.gamma;
    let d = 1.0 + drive.s_total() + x * x;
    -8.0 * c.v_rec * c.k * drive.s_single_beam * drive.delta_a / (c.gamma * d * d)
}

pub fn fs_doppler_accel_x(c: &Constants, v_x: f64, drive: &DriveConfig) -> f64 {
    -fs_doppler_rate(c, drive) * v_x
}

/// Low-saturation Doppler temperature along the standing wave with `zeta_x` the
/// emission second moment along x: `hbar Gamma (1 + zeta_x)/8 (Gamma/2|d| + 2|d|/Gamma)`.
pub fn doppler_temperature_x(c: &Constants, delta_a: f64, zeta_x: f64) -> f64 {
    let d = delta_a.abs();
    HBAR * c.gamma * (1.0 + zeta_x) / 8.0 * (c.gamma / (2.0 * d) + 2.0 * d / c.gamma) / KB
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScatterEvent {
    FreeSpace,
    Cavity,
}

/// Momentum kick of one scattering event in units of `hbar k`.
pub fn sample_recoil_kicks<R: Rng + ?Sized>(
    event: ScatterEvent,
    pattern: EmissionPattern,
    dipole_axis: &Vector3<f64>,
    rng: &mut R,
) -> Vector3<f64> {
    let absorb = if rng.random::<bool>() { 1.0 } else { -1.0 };
    let emit = match event {
        ScatterEvent::Cavity => Vector3::new(0.0, 0.0, if rng.random::<bool>() { 1.0 } else { -1.0 }),
        ScatterEvent::FreeSpace => sample_emission(pattern, dipole_axis, rng),
    };
    Vector3::new(absorb, 0.0, 0.0) + emit
}

/// Unit emission direction drawn from `pattern`.
pub fn sample_emission<R: Rng + ?Sized>(
    pattern: EmissionPattern,
    dipole_axis: &Vector3<f64>,
    rng: &mut R,
) -> Vector3<f64> {
    match pattern {
        EmissionPattern::Isotropic => Vector3::from(UnitSphere.sample(rng)),
        EmissionPattern::AxialX => Vector3::new(if rng.random::<bool>() { 1.0 } else { -1.0 }, 0.0, 0.0),
        EmissionPattern::Dipole => loop {
            let u = Vector3::from(UnitSphere.sample(rng));
            let c = u.dot(dipole_axis);
            if rng.random::<f64>() < 1.0 - c * c {
                break u;
            }
        },
    }
}

/// Equilibrium vertical temperature of this model,
/// `kB T_z = hbar kappa_eff (eta + zeta_z) / (4 eta)`, where `zeta_z` is the
/// free-space emission second moment along z.
pub fn model_equilibrium_tz(eta: f64, kappa_eff: f64, zeta_z: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta", "no friction without cavity emission"));
    }
    Ok(HBAR * kappa_eff * (eta + zeta_z) / (4.0 * eta * KB))
}

/// Closed-form equilibrium `kB T_z = hbar kappa_eff (eta + 1/5) / (2 eta)`.
pub fn predicted_equilibrium_tz(eta: f64, cfg: &ForceModelConfig) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta", "no friction without cavity emission"));
    }
    Ok(HBAR * cfg.kappa_eff * (eta + 0.2) / (2.0 * eta * KB))
}

/// Small-`eta` limit `hbar kappa_eff / (10 kB eta)`.
pub fn single_atom_limit_tz(eta: f64, kappa_eff: f64) -> Result<f64> {
    if !(eta > 0.0) {
        return Err(Error::invalid("eta", "no friction without cavity emission"));
    }
    Ok(HBAR * kappa_eff / (10.0 * KB * eta))
}
