//! Transverse-mode spectrum of the near-confocal resonator.
//!
//! Mode `(m, n)` sits at `-a_x m - a_y n + b (m + n)^2` relative to the TEM00
//! resonance. The linear terms come from the deviation from confocality, the
//! quadratic term from mirror spherical aberration. With `b > 0` the spectrum
//! folds back on itself near `t = m + n = a / 2b`, and the mode density peaks
//! at that caustic. Detunings in this module are ordinary frequencies in Hz.

use std::f64::consts::PI;
use std::sync::{Arc, Mutex};

use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::constants::{to_hz, two_pi, Constants, C};
use crate::error::{Error, Result};

/// Measured below-threshold emission ratio at the density peak.
pub const ETA_S_PEAK: f64 = 0.05;
/// Points on the periodic detuning grid spanning one free spectral range.
pub const GRID_POINTS: usize = 20_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CavityGeometry {
    /// Mirror separation, m.
    pub length: f64,
    pub finesse: f64,
    /// TEM00 linewidth (FWHM), rad/s.
    pub kappa: f64,
    /// TEM00 waist, m.
    pub waist: f64,
    /// Signed deviation from confocality along x and y, m (negative = short).
    pub eps_x: f64,
    pub eps_y: f64,
    /// Quadratic aberration coefficient, Hz per (mode order)^2.
    pub aberr_coeff: f64,
    /// Highest transverse order `m + n` retained.
    pub t_max: u32,
}

impl CavityGeometry {
    /// The resonator as built, before the aberration term is calibrated.
    pub fn uncalibrated() -> Self {
        CavityGeometry {
            length: 0.075,
            finesse: 1000.0,
            kappa: two_pi(2.0e6),
            waist: 101e-6,
            eps_x: -24e-6,
            eps_y: -28e-6,
            aberr_coeff: 0.0,
            t_max: 0,
        }
    }

    /// Free spectral range, Hz.
    pub fn fsr(&self) -> f64 {
        C / (2.0 * self.length)
    }

    /// Per-axis linear coefficients `a_i = FSR |eps_i| / (pi R)`, `R = L + |eps_i|`, Hz per order.
    pub fn linear_coefficients(&self) -> (f64, f64) {
        let fsr = self.fsr();
        let coeff = |eps: f64| fsr * eps.abs() / (PI * (self.length + eps.abs()));
        (coeff(self.eps_x), coeff(self.eps_y))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("length", self.length),
            ("finesse", self.finesse),
            ("kappa", self.kappa),
            ("waist", self.waist),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(name, format!("must be positive, got {v}")));
            }
        }
        if !self.eps_x.is_finite() || !self.eps_y.is_finite() || !self.aberr_coeff.is_finite() {
            return Err(Error::invalid("eps", "must be finite"));
        }
        let expected = two_pi(self.fsr() / self.finesse);
        if ((self.kappa - expected) / expected).abs() > 0.01 {
            return Err(Error::invalid(
                "kappa",
                format!(
                    "linewidth {:.4} MHz disagrees with FSR/F = {:.4} MHz",
                    to_hz(self.kappa) / 1e6,
                    to_hz(expected) / 1e6
                ),
            ));
        }
        Ok(())
    }
}

impl Default for CavityGeometry {
    fn default() -> Self {
        CavityGeometry::uncalibrated()
    }
}

/// Folds a frequency offset into `(-fsr/2, fsr/2]`.
pub fn fold_offset(nu: f64, fsr: f64) -> f64 {
    0.5 * fsr - (0.5 * fsr - nu).rem_euclid(fsr)
}

/// Frequency of mode `(m, n)` relative to the nearest TEM00 resonance, Hz.
pub fn mode_offset(m: i64, n: i64, geom: &CavityGeometry) -> Result<f64> {
    if m < 0 || n < 0 {
        return Err(Error::invalid("mode order", format!("({m}, {n}) has a negative order")));
    }
    Ok(raw_offset(m as f64, n as f64, geom))
}

fn raw_offset(m: f64, n: f64, geom: &CavityGeometry) -> f64 {
    let (ax, ay) = geom.linear_coefficients();
    let t = m + n;
    fold_offset(-ax * m - ay * n + geom.aberr_coeff * t * t, geom.fsr())
}

/// Quadratic coefficient placing the vertex of `-a t + b t^2` at `fold` (< 0).
pub fn fold_coefficient(a: f64, fold: f64) -> Result<f64> {
    if !(a > 0.0) {
        return Err(Error::NoFold(format!("linear coefficient {a} Hz gives no vertex")));
    }
    if !(fold < 0.0) {
        return Err(Error::invalid(
            "fold_target",
            format!("must be negative, got {fold} Hz"),
        ));
    }
    Ok(a * a / (4.0 * fold.abs()))
}

/// Fixes `aberr_coeff` so the slower-dispersing axis folds at `fold_target`,
/// and retains modes up to the order where that branch returns to the TEM00
/// frequency.
pub fn calibrate_spectrum(geom: &CavityGeometry, fold_target: f64) -> Result<CavityGeometry> {
    let (ax, ay) = geom.linear_coefficients();
    let a = ax.min(ay);
    if !(a > 0.0) {
        return Err(Error::NoFold(format!(
            "eps_x = {} m, eps_y = {} m: the cavity is confocal along one axis",
            geom.eps_x, geom.eps_y
        )));
    }
    if fold_target.abs() >= 0.5 * geom.fsr() {
        return Err(Error::invalid(
            "fold_target",
            "must lie within half a free spectral range",
        ));
    }
    let b = fold_coefficient(a, fold_target)?;
    let vertex_order = a / (2.0 * b);
    Ok(CavityGeometry {
        aberr_coeff: b,
        t_max: (2.0 * vertex_order).round() as u32,
        ..*geom
    })
}

/// Single-mode peak emission ratio `24 F / (pi k^2 w0^2)` for an atom on the TEM00 axis.
pub fn single_mode_eta(k: f64, finesse: f64, waist: f64) -> f64 {
    24.0 * finesse / (PI * k * k * waist * waist)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModeEntry {
    pub offset_hz: f64,
    pub weight: f64,
    pub order: (u32, u32),
}

/// Mode density and below-threshold emission ratio on a periodic grid covering one FSR.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumTable {
    pub geometry: CavityGeometry,
    /// Detuning of grid point 0, Hz. Point `j` is at `grid_start + j * grid_step`.
    pub grid_start: f64,
    pub grid_step: f64,
    /// Mode density, modes per Hz.
    pub density: Vec<f64>,
    pub eta_s_profile: Vec<f64>,
    /// Normalization with `eta_s = c_norm * density`.
    pub c_norm: f64,
}

impl SpectrumTable {
    /// Builds the table for a calibrated geometry. Every mode up to `t_max`
    /// carries unit weight and a Lorentzian line of the TEM00 width.
    pub fn build(geom: &CavityGeometry) -> Result<Self> {
        geom.validate()?;
        if geom.t_max == 0 || geom.aberr_coeff <= 0.0 {
            return Err(Error::invalid("geometry", "spectrum is not calibrated"));
        }
        let fsr = geom.fsr();
        let n = GRID_POINTS;
        let step = fsr / n as f64;
        let start = -0.5 * fsr + step;

        // cloud-in-cell deposit of every mode onto the periodic grid
        let mut hist = vec![0.0f64; n];
        let (ax, ay) = geom.linear_coefficients();
        let b = geom.aberr_coeff;
        for t in 0..=geom.t_max {
            let tf = t as f64;
            let quad = b * tf * tf;
            for m in 0..=t {
                let mf = m as f64;
                let nu = fold_offset(-ax * mf - ay * (tf - mf) + quad, fsr);
                let u = ((nu - start) / step).rem_euclid(n as f64);
                let i0 = u.floor();
                let frac = u - i0;
                let i0 = (i0 as usize) % n;
                hist[i0] += 1.0 - frac;
                hist[(i0 + 1) % n] += frac;
            }
        }

        let hwhm = to_hz(geom.kappa) / 2.0;
        let kernel: Vec<f64> = (0..n)
            .map(|j| periodic_lorentzian(j as f64 * step, hwhm, fsr))
            .collect();
        let mut density = circular_convolve(&hist, &kernel);
        for d in &mut density {
            *d = d.max(0.0);
        }

        let peak = density.iter().cloned().fold(0.0, f64::max);
        let c_norm = ETA_S_PEAK / peak;
        let eta_s_profile = density.iter().map(|d| c_norm * d).collect();
        Ok(SpectrumTable {
            geometry: *geom,
            grid_start: start,
            grid_step: step,
            density,
            eta_s_profile,
            c_norm,
        })
    }

    /// Calibrates `geom` with `fold_target` and builds its table.
    pub fn calibrated(geom: &CavityGeometry, fold_target: f64) -> Result<Self> {
        SpectrumTable::build(&calibrate_spectrum(geom, fold_target)?)
    }

    /// Every retained transverse mode, enumerated in order of increasing `m + n`.
    pub fn entries(&self) -> impl Iterator<Item = ModeEntry> + '_ {
        let geom = self.geometry;
        (0..=geom.t_max).flat_map(move |t| {
            (0..=t).map(move |m| ModeEntry {
                offset_hz: raw_offset(m as f64, (t - m) as f64, &geom),
                weight: 1.0,
                order: (m, t - m),
            })
        })
    }

    pub fn mode_count(&self) -> u64 {
        let t = self.geometry.t_max as u64;
        (t + 1) * (t + 2) / 2
    }

    pub fn len(&self) -> usize {
        self.density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.density.is_empty()
    }

    pub fn detuning(&self, j: usize) -> f64 {
        self.grid_start + j as f64 * self.grid_step
    }

    fn interpolate(&self, values: &[f64], delta: f64) -> f64 {
        let n = values.len();
        let folded = fold_offset(delta, self.geometry.fsr());
        let u = ((folded - self.grid_start) / self.grid_step).rem_euclid(n as f64);
        let i0 = u.floor();
        let frac = u - i0;
        let i0 = (i0 as usize) % n;
        values[i0] * (1.0 - frac) + values[(i0 + 1) % n] * frac
    }

    pub fn peak_density(&self) -> f64 {
        self.density.iter().cloned().fold(0.0, f64::max)
    }

    /// Grid detuning of the density maximum, Hz.
    pub fn peak_detuning(&self) -> f64 {
        let (j, _) = self
            .density
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (j, &d)| if d > acc.1 { (j, d) } else { acc });
        self.detuning(j)
    }

    /// Lowest and highest grid detuning where the density exceeds `fraction` of its peak, Hz.
    pub fn density_extent(&self, fraction: f64) -> (f64, f64) {
        let cut = fraction * self.peak_density();
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for (j, &d) in self.density.iter().enumerate() {
            if d > cut {
                let x = self.detuning(j);
                lo = lo.min(x);
                hi = hi.max(x);
            }
        }
        (lo, hi)
    }

    pub fn eta_s_max(&self) -> f64 {
        self.eta_s_profile.iter().cloned().fold(0.0, f64::max)
    }
}

/// Process-wide memo of calibrated tables; sweeps rebuild the same table otherwise.
pub fn cached_table(geom: &CavityGeometry, fold_target: f64) -> Result<Arc<SpectrumTable>> {
    type Cache = Vec<((CavityGeometry, u64), Arc<SpectrumTable>)>;
    static CACHE: Mutex<Cache> = Mutex::new(Vec::new());
    let key = (*geom, fold_target.to_bits());
    let mut cache = CACHE.lock().unwrap_or_else(|e| e.into_inner());
    if let Some((_, t)) = cache.iter().find(|(k, _)| *k == key) {
        return Ok(Arc::clone(t));
    }
    let table = Arc::new(SpectrumTable::calibrated(geom, fold_target)?);
    if cache.len() >= 16 {
        cache.remove(0);
    }
    cache.push((key, Arc::clone(&table)));
    Ok(table)
}

/// Mode density at detuning `delta` (Hz), modes per Hz.
pub fn mode_density(table: &SpectrumTable, delta: f64) -> f64 {
    table.interpolate(&table.density, delta)
}

/// Below-threshold ratio of cavity to free-space emission at laser-cavity detuning `delta_c` (Hz).
pub fn eta_below_threshold(table: &SpectrumTable, delta_c: f64) -> f64 {
    table.interpolate(&table.eta_s_profile, delta_c)
}

/// Lorentzian of half width `hwhm` summed over all images spaced by `period`;
/// normalized to unit area over one period.
pub fn periodic_lorentzian(x: f64, hwhm: f64, period: f64) -> f64 {
    let a = 2.0 * PI * hwhm / period;
    let theta = 2.0 * PI * x / period;
    let denom = 2.0 * (0.5 * a).sinh().powi(2) + 2.0 * (0.5 * theta).sin().powi(2);
    a.sinh() / (period * denom)
}

fn circular_convolve(signal: &[f64], kernel: &[f64]) -> Vec<f64> {
    let n = signal.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);
    let mut a: Vec<Complex<f64>> = signal.iter().map(|&x| Complex::new(x, 0.0)).collect();
    let mut b: Vec<Complex<f64>> = kernel.iter().map(|&x| Complex::new(x, 0.0)).collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= *y;
    }
    inv.process(&mut a);
    a.iter().map(|z| z.re / n as f64).collect()
}

/// Single-mode anchor evaluated with the crate constants.
pub fn default_single_mode_eta(c: &Constants, geom: &CavityGeometry) -> f64 {
    single_mode_eta(c.k, geom.finesse, geom.waist)
}
