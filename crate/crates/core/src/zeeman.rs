//! Internal-state model over the nine `F = 4` sublevels: Clebsch-Gordan weights,
//! optical pumping with Larmor mixing, light shifts, and the collective-emission
//! threshold that switches the emission ratio between its below- and
//! above-threshold values.

use serde::{Deserialize, Serialize};

use crate::constants::{to_hz, two_pi, Constants, G_F, HBAR, MU_B};
use crate::error::{Error, Result};
use crate::model::{p_sat, DriveConfig};
use crate::spectrum::{eta_below_threshold, SpectrumTable, ETA_S_PEAK};

pub const N_SUBLEVELS: usize = 9;
const F_GROUND: i32 = 4;
/// Largest `h * r_max` allowed in one explicit pumping substep.
const PUMP_SUBSTEP: f64 = 0.1;

/// Free-space scattering rate per atom, 1/s.
pub fn scattering_rate_fs(c: &Constants, s_total: f64, delta_a: f64) -> f64 {
    if s_total <= 0.0 {
        return 0.0;
    }
    let x = 2.0 * delta_a / c.gamma;
    0.5 * c.gamma * s_total / (1.0 + s_total + x * x)
}

/// Total saturation parameter giving free-space scattering rate `gamma_fs` at `delta_a`.
/// Returns `None` when the rate is at or beyond the saturation limit.
pub fn s_total_for_rate(c: &Constants, gamma_fs: f64, delta_a: f64) -> Option<f64> {
    let x = 2.0 * delta_a / c.gamma;
    let half = 0.5 * c.gamma;
    if !(gamma_fs >= 0.0) || gamma_fs >= half {
        return None;
    }
    Some(gamma_fs * (1.0 + x * x) / (half - gamma_fs))
}

/// `|<4, m; 1, q | 5, m + q>|^2` for the `F = 4 -> F' = 5` transition.
pub fn cg_squared(m: i32, q: i32) -> Result<f64> {
    if m.abs() > F_GROUND {
        return Err(Error::invalid("m", format!("{m} is outside -4..=4")));
    }
    let mf = m as f64;
    Ok(match q {
        1 => (mf + 5.0) * (mf + 6.0) / 90.0,
        0 => (25.0 - mf * mf) / 45.0,
        -1 => (5.0 - mf) * (6.0 - mf) / 90.0,
        _ => return Err(Error::invalid("q", format!("{q} is not -1, 0 or +1"))),
    })
}

fn cg2(m: i32, q: i32) -> f64 {
    cg_squared(m, q).unwrap_or(0.0)
}

#[inline]
fn idx(m: i32) -> usize {
    (m + F_GROUND) as usize
}

/// Light shift of sublevel `m` under the pi-polarized standing wave, Hz.
pub fn light_shift(c: &Constants, m: i32, drive: &DriveConfig) -> Result<f64> {
    light_shift_at(c, m, drive.s_total(), drive.delta_a)
}

fn light_shift_at(c: &Constants, m: i32, s_total: f64, delta_a: f64) -> Result<f64> {
    if delta_a == 0.0 {
        return Err(Error::invalid("delta_a", "light shift is undefined on resonance"));
    }
    let g = to_hz(c.gamma);
    Ok(g * g * s_total * cg_squared(m, 0)? / (8.0 * to_hz(delta_a)))
}

pub fn light_shifts(c: &Constants, drive: &DriveConfig) -> Result<[f64; N_SUBLEVELS]> {
    let mut out = [0.0; N_SUBLEVELS];
    for m in -F_GROUND..=F_GROUND {
        out[idx(m)] = light_shift(c, m, drive)?;
    }
    Ok(out)
}

/// Larmor frequency for a field of `b_gauss`, rad/s.
pub fn larmor_rate(b_gauss: f64) -> f64 {
    G_F * MU_B * b_gauss.abs() * 1e-4 / HBAR
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZeemanState {
    /// Populations indexed by `m + 4`.
    pub populations: [f64; N_SUBLEVELS],
    /// Light shifts, Hz, indexed by `m + 4`.
    pub light_shifts: [f64; N_SUBLEVELS],
    /// Largest population difference between adjacent sublevels.
    pub inversion_w: f64,
    /// Adjacent pair `(m, m + 1)` achieving `inversion_w`.
    pub gain_pair: (i32, i32),
}

impl ZeemanState {
    pub fn uniform() -> Self {
        ZeemanState::from_populations([1.0 / N_SUBLEVELS as f64; N_SUBLEVELS]).expect("uniform is normalized")
    }

    pub fn from_populations(populations: [f64; N_SUBLEVELS]) -> Result<Self> {
        check_normalized(&populations)?;
        let mut s = ZeemanState {
            populations,
            light_shifts: [0.0; N_SUBLEVELS],
            inversion_w: 0.0,
            gain_pair: (0, 1),
        };
        s.update_inversion();
        Ok(s)
    }

    pub fn population(&self, m: i32) -> f64 {
        self.populations[idx(m)]
    }

    /// Differential light shift across the gain pair, Hz.
    pub fn differential_shift(&self) -> f64 {
        let (a, b) = self.gain_pair;
        self.light_shifts[idx(a)] - self.light_shifts[idx(b)]
    }

    fn update_inversion(&mut self) {
        let mut best = (0.0, (0, 1));
        for m in -F_GROUND..F_GROUND {
            let d = (self.populations[idx(m + 1)] - self.populations[idx(m)]).abs();
            if d > best.0 {
                best = (d, (m, m + 1));
            }
        }
        self.inversion_w = best.0;
        self.gain_pair = best.1;
    }
}

fn check_normalized(p: &[f64; N_SUBLEVELS]) -> Result<()> {
    let sum: f64 = p.iter().sum();
    let min = p.iter().cloned().fold(f64::INFINITY, f64::min);
    if !sum.is_finite() || (sum - 1.0).abs() > 1e-9 || min < -1e-12 {
        return Err(Error::NotNormalized { sum, min });
    }
    Ok(())
}

/// Generator `M` of `d pi / dt = M pi` (column = source sublevel).
pub fn rate_matrix(gamma_fs: f64, omega_larmor: f64) -> [[f64; N_SUBLEVELS]; N_SUBLEVELS] {
    let mut mtx = [[0.0; N_SUBLEVELS]; N_SUBLEVELS];
    for m in -F_GROUND..=F_GROUND {
        let j = idx(m);
        let excite = gamma_fs * cg2(m, 0);
        // pi excitation to |5, m>, then decay to m - q
        for q in -1..=1 {
            let mg = m - q;
            if mg.abs() <= F_GROUND {
                mtx[idx(mg)][j] += excite * cg2(mg, q);
            }
        }
        mtx[j][j] -= excite;
        for nb in [m - 1, m + 1] {
            if nb.abs() <= F_GROUND {
                mtx[idx(nb)][j] += omega_larmor;
                mtx[j][j] -= omega_larmor;
            }
        }
    }
    mtx
}

/// Advances the populations by `dt` under the drive, with explicit substeps small
/// enough for stability, then renormalizes. Light shifts are refreshed from the drive.
pub fn pump_step(
    state: &ZeemanState,
    c: &Constants,
    drive: &DriveConfig,
    gamma_fs: f64,
    dt: f64,
) -> Result<ZeemanState> {
    check_normalized(&state.populations)?;
    if !(dt >= 0.0) || !(gamma_fs >= 0.0) {
        return Err(Error::invalid("dt", "time step and rate must be >= 0"));
    }
    let mtx = rate_matrix(gamma_fs, larmor_rate(drive.b_transverse()));
    let r_max = (0..N_SUBLEVELS).map(|j| -mtx[j][j]).fold(0.0, f64::max);
    let mut p = state.populations;
    if r_max > 0.0 && dt > 0.0 {
        let n_sub = (dt * r_max / PUMP_SUBSTEP).ceil().max(1.0) as usize;
        let h = dt / n_sub as f64;
        for _ in 0..n_sub {
            let mut dp = [0.0; N_SUBLEVELS];
            for (i, row) in mtx.iter().enumerate() {
                dp[i] = row.iter().zip(&p).map(|(a, b)| a * b).sum::<f64>();
            }
            for (pi, d) in p.iter_mut().zip(&dp) {
                *pi = (*pi + h * d).max(0.0);
            }
        }
    }
    let sum: f64 = p.iter().sum();
    for pi in &mut p {
        *pi /= sum;
    }
    let mut next = ZeemanState {
        populations: p,
        light_shifts: state.light_shifts,
        inversion_w: 0.0,
        gain_pair: (0, 1),
    };
    if drive.delta_a != 0.0 {
        next.light_shifts = light_shifts(c, drive)?;
    }
    next.update_inversion();
    Ok(next)
}

/// Iterates [`pump_step`] from the uniform mixture until the populations stop changing.
pub fn steady_state(c: &Constants, drive: &DriveConfig, gamma_fs: f64) -> Result<ZeemanState> {
    let mtx = rate_matrix(gamma_fs, larmor_rate(drive.b_transverse()));
    let r_max = (0..N_SUBLEVELS).map(|j| -mtx[j][j]).fold(0.0, f64::max);
    let mut state = ZeemanState::uniform();
    if r_max == 0.0 {
        return pump_step(&state, c, drive, 0.0, 0.0);
    }
    let dt = 50.0 / r_max;
    for _ in 0..100_000 {
        let next = pump_step(&state, c, drive, gamma_fs, dt)?;
        let change = next
            .populations
            .iter()
            .zip(&state.populations)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        state = next;
        if change < 1e-15 {
            break;
        }
    }
    Ok(state)
}

/// Calibrated small-signal gain constant and the above-threshold emission ratio.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainModel {
    pub g0: f64,
    pub eta_c: f64,
}

/// Operating point at which threshold is pinned.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdAnchor {
    pub delta_a: f64,
    /// Hz.
    pub delta_c: f64,
    pub n_atoms: f64,
    pub gamma_fs: f64,
}

impl Default for ThresholdAnchor {
    fn default() -> Self {
        ThresholdAnchor {
            delta_a: two_pi(-78e6),
            delta_c: -150e6,
            n_atoms: 1e6,
            gamma_fs: 2e5,
        }
    }
}

impl GainModel {
    /// Pins `g0` so that gain equals loss at the anchor, vertical polarization and zero field.
    pub fn calibrate(c: &Constants, table: &SpectrumTable, anchor: &ThresholdAnchor, eta_c: f64) -> Result<Self> {
        let s_total = s_total_for_rate(c, anchor.gamma_fs, anchor.delta_a)
            .ok_or_else(|| Error::invalid("gamma_fs", "anchor rate exceeds saturation"))?;
        let drive = DriveConfig {
            s_single_beam: 0.5 * s_total,
            delta_a: anchor.delta_a,
            delta_c: two_pi(anchor.delta_c),
            polarization: crate::model::Polarization::VerticalZ,
            b_field: nalgebra::Vector3::zeros(),
            exposure_time: 0.0,
            extinction_tau: 0.0,
        };
        let state = steady_state(c, &drive, anchor.gamma_fs)?;
        let unit = GainModel { g0: 1.0, eta_c };
        let g = unit.gain(c, &state, &drive, anchor.n_atoms, anchor.gamma_fs, table);
        if !(g > 0.0) {
            return Err(Error::invalid("anchor", "no gain at the calibration point"));
        }
        Ok(GainModel { g0: c.kappa / g, eta_c })
    }

    pub fn default_for(c: &Constants, table: &SpectrumTable) -> Result<Self> {
        GainModel::calibrate(c, table, &ThresholdAnchor::default(), 1.0)
    }

    /// Small-signal collective gain, 1/s.
    pub fn gain(
        &self,
        c: &Constants,
        state: &ZeemanState,
        drive: &DriveConfig,
        n_in_mode: f64,
        gamma_fs: f64,
        table: &SpectrumTable,
    ) -> f64 {
        let rho_norm = eta_below_threshold(table, to_hz(drive.delta_c)) / ETA_S_PEAK;
        self.g0
            * n_in_mode.max(0.0)
            * gamma_fs
            * state.inversion_w
            * suppression_factor(c, state.differential_shift())
            * rho_norm
            * drive.polarization.cavity_coupling()
    }
}

/// Reabsorption suppression from light-shift nondegeneracy: Lorentzian overlap of
/// the differential shift (Hz) against the cavity half width.
pub fn suppression_factor(c: &Constants, diff_shift_hz: f64) -> f64 {
    let half = to_hz(c.kappa) / 2.0;
    let d2 = diff_shift_hz * diff_shift_hz;
    if d2 == 0.0 {
        return 0.0;
    }
    d2 / (d2 + half * half)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmissionState {
    pub eta: f64,
    pub eta_s: f64,
    pub eta_c: f64,
    pub gamma_fs: f64,
    pub gamma_c: f64,
    pub p_sat: f64,
    pub above_threshold: bool,
    /// Collective gain, 1/s.
    pub gain: f64,
    /// Single-beam intensity at which gain would equal loss with the present
    /// inversion and light-shift suppression held fixed, W/m^2 (infinite if unreachable).
    pub i_th: f64,
}

impl EmissionState {
    /// Emission with a prescribed ratio and no threshold logic.
    pub fn fixed(eta: f64, gamma_fs: f64) -> Self {
        EmissionState {
            eta,
            eta_s: eta,
            eta_c: eta,
            gamma_fs,
            gamma_c: eta * gamma_fs,
            p_sat: 0.0,
            above_threshold: false,
            gain: 0.0,
            i_th: f64::INFINITY,
        }
    }

    pub fn dark() -> Self {
        EmissionState::fixed(0.0, 0.0)
    }
}

pub fn threshold_state(
    c: &Constants,
    state: &ZeemanState,
    drive: &DriveConfig,
    n_in_mode: f64,
    gamma_fs: f64,
    table: &SpectrumTable,
    model: &GainModel,
) -> EmissionState {
    let eta_s = eta_below_threshold(table, to_hz(drive.delta_c));
    let gain = model.gain(c, state, drive, n_in_mode, gamma_fs, table);
    let above = n_in_mode > 0.0 && gain > 0.0 && gain >= c.kappa;
    let eta = if above { model.eta_c.max(eta_s) } else { eta_s };

    let i_th = if gain > 0.0 {
        let rate_th = gamma_fs * c.kappa / gain;
        s_total_for_rate(c, rate_th, drive.delta_a)
            .map(|s| 0.5 * s * c.saturation_intensity)
            .unwrap_or(f64::INFINITY)
    } else {
        f64::INFINITY
    };
    EmissionState {
        eta,
        eta_s,
        eta_c: model.eta_c,
        gamma_fs,
        gamma_c: eta * gamma_fs,
        p_sat: p_sat(c, drive.s_total(), drive.delta_a),
        above_threshold: above,
        gain,
        i_th,
    }
}

/// Slow decrease of the collective emission ratio toward saturation, `eta / (1 + p)`,
/// never below the below-threshold value.
pub fn eta_saturation_rolloff(emission: &EmissionState, p_sat: f64) -> EmissionState {
    let mut out = *emission;
    if emission.above_threshold {
        out.eta = (emission.eta / (1.0 + p_sat.max(0.0))).max(emission.eta_s);
        out.gamma_c = out.eta * out.gamma_fs;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Polarization;
    use nalgebra::Vector3;

    fn drive(s_single: f64, delta_mhz: f64) -> DriveConfig {
        DriveConfig {
            s_single_beam: s_single,
            delta_a: two_pi(delta_mhz * 1e6),
            delta_c: two_pi(-150e6),
            polarization: Polarization::VerticalZ,
            b_field: Vector3::zeros(),
            exposure_time: 1e-3,
            extinction_tau: 0.0,
        }
    }

    #[test]
    fn scattering_rate_limits() {
        let c = Constants::cesium_d2();
        assert_eq!(scattering_rate_fs(&c, 0.0, two_pi(-63e6)), 0.0);
        let sat = scattering_rate_fs(&c, 1e12, 0.0);
        assert!((sat - 1.64e7).abs() / 1.64e7 < 0.01);
        let r = scattering_rate_fs(&c, 32.0, two_pi(-63e6));
        assert!((r - 8.5e5).abs() / 8.5e5 < 0.02, "{r}");
        let s = s_total_for_rate(&c, r, two_pi(-63e6)).unwrap();
        assert!((s - 32.0).abs() < 1e-9);
    }

    #[test]
    fn clebsch_gordan_values() {
        assert!((cg_squared(0, 0).unwrap() - 25.0 / 45.0).abs() < 1e-15);
        assert!((cg_squared(4, 1).unwrap() - 1.0).abs() < 1e-15);
        for m in -4..=4 {
            let s: f64 = (-1..=1).map(|q| cg_squared(m, q).unwrap()).sum();
            assert!((s - 11.0 / 9.0).abs() < 1e-14);
        }
        assert!(cg_squared(5, 0).is_err());
        assert!(cg_squared(0, 2).is_err());
    }

    #[test]
    fn decay_branching_is_normalized() {
        for me in -4i32..=4 {
            let s: f64 = (-1..=1).filter(|&q| (me - q).abs() <= 4).map(|q| cg2(me - q, q)).sum();
            assert!((s - 1.0).abs() < 1e-14, "m_e = {me}: {s}");
        }
    }

    #[test]
    fn rate_matrix_conserves_population() {
        let m = rate_matrix(3e5, 1e5);
        for j in 0..N_SUBLEVELS {
            let col: f64 = (0..N_SUBLEVELS).map(|i| m[i][j]).sum();
            assert!(col.abs() < 1e-9, "column {j}: {col}");
        }
    }

    #[test]
    fn steady_state_prefers_low_m() {
        let c = Constants::cesium_d2();
        let st = steady_state(&c, &drive(16.0, -63.0), 2e5).unwrap();
        for m in 0..4 {
            assert!(st.population(m) > st.population(m + 1));
            assert!((st.population(m) - st.population(-m)).abs() < 1e-12);
        }
        assert!((st.inversion_w - 0.1608).abs() < 1e-3, "{}", st.inversion_w);
    }

    #[test]
    fn transverse_field_washes_out_inversion() {
        let c = Constants::cesium_d2();
        let mut d = drive(16.0, -63.0);
        d.b_field = Vector3::new(0.4, 0.0, 0.0);
        assert!((to_hz(larmor_rate(0.4)) - 140e3).abs() < 1e3);
        let st = steady_state(&c, &d, 2e5).unwrap();
        assert!(st.inversion_w < 0.01, "{}", st.inversion_w);

        let mut dz = drive(16.0, -63.0);
        dz.b_field = Vector3::new(0.0, 0.0, 0.4);
        let a = steady_state(&c, &dz, 2e5).unwrap();
        let b = steady_state(&c, &drive(16.0, -63.0), 2e5).unwrap();
        assert_eq!(a.populations, b.populations);
    }

    #[test]
    fn pump_step_rejects_unnormalized() {
        let c = Constants::cesium_d2();
        let mut st = ZeemanState::uniform();
        st.populations[0] += 0.1;
        assert!(matches!(
            pump_step(&st, &c, &drive(16.0, -63.0), 1e5, 1e-6),
            Err(Error::NotNormalized { .. })
        ));
    }

    #[test]
    fn light_shift_values() {
        let c = Constants::cesium_d2();
        let d = drive(16.0, -63.0);
        let diff = light_shift(&c, 3, &d).unwrap() - light_shift(&c, 4, &d).unwrap();
        assert!((diff.abs() - 270e3).abs() < 5e3, "{diff}");
        let d2 = drive(32.0, -63.0);
        for m in -4..=4 {
            let ratio = light_shift(&c, m, &d2).unwrap() / light_shift(&c, m, &d).unwrap();
            assert!((ratio - 2.0).abs() < 1e-14);
        }
        assert!(light_shift(&c, 0, &drive(16.0, 0.0)).is_err());
        assert!(light_shift(&c, 0, &d).unwrap() < 0.0);
    }

    #[test]
    fn rolloff_contract() {
        let mut em = EmissionState::fixed(1.0, 1e5);
        em.eta_s = 0.05;
        em.above_threshold = true;
        assert_eq!(eta_saturation_rolloff(&em, 0.0).eta, 1.0);
        assert!((eta_saturation_rolloff(&em, 1.0).eta - 0.5).abs() < 1e-15);
        assert_eq!(eta_saturation_rolloff(&em, 1e6).eta, 0.05);
        let r = eta_saturation_rolloff(&em, 1.0);
        assert_eq!(r.gamma_c, r.eta * r.gamma_fs);
    }
}
