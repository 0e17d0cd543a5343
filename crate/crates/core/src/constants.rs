//! Fixed physical scalars for the cesium D2 line and the resonator.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reduced Planck constant, J s.
pub const HBAR: f64 = 1.054_571_817e-34;
/// Boltzmann constant, J/K.
pub const KB: f64 = 1.380_649e-23;
/// Speed of light, m/s.
pub const C: f64 = 299_792_458.0;
/// Bohr magneton, J/T.
pub const MU_B: f64 = 9.274_010_078_3e-24;
/// Atomic mass unit, kg.
pub const AMU: f64 = 1.660_539_066_60e-27;
/// Tabulated mass of 133Cs, kg. Only used to check the recoil-derived mass.
pub const CS133_MASS: f64 = 132.905_451_961 * AMU;
/// Landé factor of the `F = 4` ground manifold.
pub const G_F: f64 = 0.25;

/// Conversion helpers between ordinary and angular frequency.
#[inline]
pub fn two_pi(hz: f64) -> f64 {
    2.0 * PI * hz
}

#[inline]
pub fn to_hz(omega: f64) -> f64 {
    omega / (2.0 * PI)
}

/// Cs D2 line and cavity constants. `mass` is derived from the recoil velocity so
/// that `mass * v_rec == hbar * k` holds exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Wavelength of the cooling light, m.
    pub wavelength: f64,
    /// Wavenumber, rad/m.
    pub k: f64,
    /// Single-photon recoil velocity, m/s.
    pub v_rec: f64,
    /// Saturation intensity, W/m^2.
    pub saturation_intensity: f64,
    /// Natural linewidth (FWHM), rad/s.
    pub gamma: f64,
    /// Atomic mass, kg.
    pub mass: f64,
    /// Gravitational acceleration, m/s^2.
    pub g_accel: f64,
    /// TEM00 cavity linewidth (FWHM), rad/s.
    pub kappa: f64,
}

impl Constants {
    pub fn cesium_d2() -> Self {
        let wavelength = 852e-9;
        let k = 2.0 * PI / wavelength;
        let v_rec = 3.5e-3;
        Constants {
            wavelength,
            k,
            v_rec,
            saturation_intensity: 1.1e-3 / 1e-4,
            gamma: two_pi(5.22e6),
            mass: HBAR * k / v_rec,
            g_accel: 9.81,
            kappa: two_pi(2.0e6),
        }
    }

    /// Single-photon momentum, kg m/s.
    pub fn photon_momentum(&self) -> f64 {
        HBAR * self.k
    }

    /// One-dimensional thermal velocity spread `sqrt(kB T / m)`.
    pub fn thermal_velocity(&self, temperature: f64) -> f64 {
        (KB * temperature / self.mass).sqrt()
    }

    /// Temperature assigned to a one-dimensional velocity variance.
    pub fn temperature_from_variance(&self, variance: f64) -> f64 {
        self.mass * variance / KB
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("wavelength", self.wavelength),
            ("k", self.k),
            ("v_rec", self.v_rec),
            ("saturation_intensity", self.saturation_intensity),
            ("gamma", self.gamma),
            ("mass", self.mass),
            ("g_accel", self.g_accel),
            ("kappa", self.kappa),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::invalid(name, format!("must be positive, got {value}")));
            }
        }
        let recoil_mass = HBAR * self.k / self.v_rec;
        if ((self.mass - recoil_mass) / recoil_mass).abs() > 1e-9 {
            return Err(Error::invalid(
                "mass",
                format!("{} kg is inconsistent with hbar*k/v_rec = {recoil_mass} kg", self.mass),
            ));
        }
        Ok(())
    }
}

impl Default for Constants {
    fn default() -> Self {
        Constants::cesium_d2()
    }
}
