//! Drive and ensemble configuration shared by every other module.

use nalgebra::Vector3;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constants::{Constants, KB};
use crate::engine::{Atom, AtomEnsemble};
use crate::error::{Error, Result};

/// Polarization of the incident standing wave. The polarization axis is the
/// quantization axis of the internal-state model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Polarization {
    VerticalZ,
    HorizontalY,
}

impl Polarization {
    pub fn axis(self) -> Vector3<f64> {
        match self {
            Polarization::VerticalZ => Vector3::z(),
            Polarization::HorizontalY => Vector3::y(),
        }
    }

    /// Relative coupling of the circularly polarized Raman emission to the
    /// vertical resonator. Light circular about z propagates along the cavity
    /// axis; light circular about y only half projects onto it.
    pub fn cavity_coupling(self) -> f64 {
        match self {
            Polarization::VerticalZ => 1.0,
            Polarization::HorizontalY => 0.5,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Polarization::VerticalZ => "vertical_z",
            Polarization::HorizontalY => "horizontal_y",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        match name {
            "vertical_z" => Some(Polarization::VerticalZ),
            "horizontal_y" => Some(Polarization::HorizontalY),
            _ => None,
        }
    }
}

/// Incident-beam settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriveConfig {
    /// Single-beam intensity in units of the saturation intensity.
    pub s_single_beam: f64,
    /// Light-atom detuning `omega_i - omega_atom`, rad/s (negative is red).
    pub delta_a: f64,
    /// Laser-cavity detuning `omega_i - omega_c` relative to the nearest TEM00 resonance, rad/s.
    pub delta_c: f64,
    pub polarization: Polarization,
    /// Magnetic field, gauss.
    pub b_field: Vector3<f64>,
    /// Exposure time, s.
    pub exposure_time: f64,
    /// Exponential extinction time constant, s (0 = instantaneous).
    pub extinction_tau: f64,
}

impl DriveConfig {
    /// Mean saturation parameter seen by an atom in the retroreflected standing wave.
    pub fn s_total(&self) -> f64 {
        2.0 * self.s_single_beam
    }

    /// Off-resonant saturation parameter `s_total / (1 + (2 delta_a / Gamma)^2)`.
    /// With this definition `Gamma_fs = (Gamma/2) p / (1 + p)`.
    pub fn p_sat(&self, c: &Constants) -> f64 {
        p_sat(c, self.s_total(), self.delta_a)
    }

    pub fn dipole_axis(&self) -> Vector3<f64> {
        self.polarization.axis()
    }

    /// Magnitude of the field component perpendicular to the polarization axis, gauss.
    pub fn b_transverse(&self) -> f64 {
        let axis = self.polarization.axis();
        let parallel = self.b_field.dot(&axis);
        (self.b_field - axis * parallel).norm()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.s_single_beam >= 0.0 && self.s_single_beam.is_finite()) {
            return Err(Error::invalid("s_single_beam", "must be >= 0"));
        }
        if !(self.exposure_time >= 0.0 && self.exposure_time.is_finite()) {
            return Err(Error::invalid("exposure_time", "must be >= 0"));
        }
        if !(self.extinction_tau >= 0.0 && self.extinction_tau.is_finite()) {
            return Err(Error::invalid("extinction_tau", "must be >= 0"));
        }
        if !self.delta_a.is_finite() || !self.delta_c.is_finite() {
            return Err(Error::invalid("delta", "detunings must be finite"));
        }
        if self.b_field.iter().any(|b| !b.is_finite()) {
            return Err(Error::invalid("b_field", "must be finite"));
        }
        Ok(())
    }
}

pub fn p_sat(c: &Constants, s_total: f64, delta_a: f64) -> f64 {
    let x = 2.0 * delta_a / c.gamma;
    s_total / (1.0 + x * x)
}

/// MOT cloud parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomEnsembleInit {
    /// Number of sampled atoms.
    pub n_atoms: usize,
    /// Physical atom number represented by the whole sample.
    pub n_physical: f64,
    /// MOT temperature, K.
    pub t_mot: f64,
    /// Drop height above the cavity center, m.
    pub drop_height: f64,
    /// Per-axis rms cloud size, m.
    pub cloud_sigma: Vector3<f64>,
}

impl AtomEnsembleInit {
    pub fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(Error::invalid("n_atoms", "need at least one atom"));
        }
        if !(self.n_physical > 0.0 && self.n_physical.is_finite()) {
            return Err(Error::invalid("n_physical", "must be positive"));
        }
        if !(self.t_mot > 0.0 && self.t_mot.is_finite()) {
            return Err(Error::invalid("t_mot", "must be positive"));
        }
        if !(self.drop_height >= 0.0 && self.drop_height.is_finite()) {
            return Err(Error::invalid("drop_height", "must be >= 0"));
        }
        if self.cloud_sigma.iter().any(|s| !(*s >= 0.0 && s.is_finite())) {
            return Err(Error::invalid("cloud_sigma", "must be >= 0"));
        }
        Ok(())
    }

    /// Physical atoms represented by each sample.
    pub fn weight(&self) -> f64 {
        self.n_physical / self.n_atoms as f64
    }
}

/// Speed at the cavity center after falling from rest through `drop_height`,
/// counted positive downward.
pub fn initial_velocity_from_drop(c: &Constants, drop_height: f64) -> Result<f64> {
    if !(drop_height >= 0.0) || !drop_height.is_finite() {
        return Err(Error::invalid(
            "drop_height",
            format!("must be >= 0, got {drop_height}"),
        ));
    }
    Ok((2.0 * c.g_accel * drop_height).sqrt())
}

/// Samples the MOT cloud as it arrives at the cavity center: Gaussian positions
/// about the origin, Maxwell-Boltzmann velocities about the bulk drop velocity.
///
/// Atom `i` draws from its own ChaCha stream `(seed, i)`, and the engine keeps
/// drawing from that stream, so results do not depend on how atoms are split
/// across workers.
pub fn sample_ensemble(c: &Constants, init: &AtomEnsembleInit, seed: u64) -> Result<AtomEnsemble> {
    init.validate()?;
    let v0 = initial_velocity_from_drop(c, init.drop_height)?;
    let sigma_v = (KB * init.t_mot / c.mass).sqrt();
    let bulk = Vector3::new(0.0, 0.0, -v0);

    let mut atoms = Vec::with_capacity(init.n_atoms);
    let mut rngs = Vec::with_capacity(init.n_atoms);
    for i in 0..init.n_atoms {
        let mut rng = AtomEnsemble::atom_rng(seed, i);
        let mut normal3 = || {
            Vector3::new(
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
                StandardNormal.sample(&mut rng),
            )
        };
        let pos = normal3().component_mul(&init.cloud_sigma);
        let vel = bulk + normal3() * sigma_v;
        atoms.push(Atom { pos, vel, alive: true });
        rngs.push(rng);
    }
    Ok(AtomEnsemble::new(atoms, rngs, init.weight()))
}
