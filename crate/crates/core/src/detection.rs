//! Time-of-flight traces, peak decomposition, temperatures and xz images.

use libm::erf;
use serde::{Deserialize, Serialize};

use crate::constants::{Constants, KB};
use crate::engine::Snapshot;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TofConfig {
    /// Depth of the light sheet below the cavity center, m.
    pub sheet_depth: f64,
    /// Histogram bin width, s.
    pub bin_width: f64,
}

impl Default for TofConfig {
    fn default() -> Self {
        TofConfig {
            sheet_depth: 0.02,
            bin_width: 0.5e-3,
        }
    }
}

impl TofConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sheet_depth > 0.0 && self.sheet_depth.is_finite()) {
            return Err(Error::invalid("sheet_depth", "must be positive"));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(Error::invalid("bin_width", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TofTrace {
    pub bin_edges_ms: Vec<f64>,
    /// Physical atoms crossing the sheet per bin.
    pub counts: Vec<f64>,
    pub sheet_depth: f64,
}

impl TofTrace {
    pub fn bin_width_ms(&self) -> f64 {
        self.bin_edges_ms[1] - self.bin_edges_ms[0]
    }

    pub fn centers_ms(&self) -> impl Iterator<Item = f64> + '_ {
        self.bin_edges_ms.windows(2).map(|w| 0.5 * (w[0] + w[1]))
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Time for a particle at height `z0` with vertical velocity `vz` (upward
/// positive) to fall through `z = -depth`, s.
pub fn crossing_time(z0: f64, vz: f64, depth: f64, g: f64) -> f64 {
    let disc = vz * vz + 2.0 * g * (z0 + depth);
    if disc < 0.0 {
        return 0.0;
    }
    ((vz + disc.sqrt()) / g).max(0.0)
}

/// Arrival times at the sheet in ms after `reference_time`.
pub fn arrival_times_ms(snapshot: &Snapshot, reference_time: f64, c: &Constants, depth: f64) -> Vec<f64> {
    let lead = snapshot.time - reference_time;
    snapshot
        .atoms
        .iter()
        .map(|a| 1e3 * (lead + crossing_time(a.pos.z, a.vel.z, depth, c.g_accel)))
        .collect()
}

/// Histogram of sheet-crossing times, measured from `reference_time` (usually the
/// start of light extinction).
pub fn synthesize_tof(snapshot: &Snapshot, reference_time: f64, c: &Constants, cfg: &TofConfig) -> TofTrace {
    let bw = cfg.bin_width * 1e3;
    let times = arrival_times_ms(snapshot, reference_time, c, cfg.sheet_depth);
    if times.is_empty() {
        return TofTrace {
            bin_edges_ms: vec![0.0, bw],
            counts: vec![0.0],
            sheet_depth: cfg.sheet_depth,
        };
    }
    let lo = times.iter().map(|t| (t / bw).floor() as i64).min().unwrap_or(0);
    let hi = times.iter().map(|t| (t / bw).floor() as i64).max().unwrap_or(0);
    let n = (hi - lo + 1) as usize;
    let mut counts = vec![0.0; n];
    for t in &times {
        counts[((t / bw).floor() as i64 - lo) as usize] += snapshot.weight;
    }
    TofTrace {
        bin_edges_ms: (0..=n).map(|k| (lo + k as i64) as f64 * bw).collect(),
        counts,
        sheet_depth: cfg.sheet_depth,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeakFit {
    pub center_ms: f64,
    /// Rms width after removing the binning contribution, ms.
    pub sigma_ms: f64,
    pub fraction: f64,
    /// Sum of squared count residuals of the model this peak belongs to.
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    /// Sorted by center time.
    pub peaks: Vec<PeakFit>,
    pub ssr_one: f64,
    pub ssr_two: f64,
}

impl Decomposition {
    /// The later peak when two are present, else the only one.
    pub fn delayed(&self) -> &PeakFit {
        self.peaks.last().expect("at least one peak")
    }

    pub fn has_delayed_peak(&self) -> bool {
        self.peaks.len() == 2
    }

    /// Weight fraction in the delayed peak (0 with a single peak).
    pub fn delayed_fraction(&self) -> f64 {
        if self.has_delayed_peak() {
            self.peaks[1].fraction
        } else {
            0.0
        }
    }
}

const EM_ITERATIONS: usize = 2000;

#[derive(Debug, Clone, Copy)]
struct Component {
    mean: f64,
    var: f64,
    weight: f64,
}

fn gauss(x: f64, c: &Component) -> f64 {
    let d = x - c.mean;
    (-0.5 * d * d / c.var).exp() / (2.0 * std::f64::consts::PI * c.var).sqrt()
}

fn em(xs: &[f64], ws: &[f64], mut comps: Vec<Component>, var_floor: f64) -> (Vec<Component>, f64) {
    let total: f64 = ws.iter().sum();
    let k = comps.len();
    let mut resp = vec![0.0; k];
    let mut last = f64::NEG_INFINITY;
    let mut loglik = f64::NEG_INFINITY;
    for _ in 0..EM_ITERATIONS {
        let mut sw = vec![0.0; k];
        let mut sx = vec![0.0; k];
        let mut sxx = vec![0.0; k];
        loglik = 0.0;
        for (&x, &w) in xs.iter().zip(ws) {
            if w <= 0.0 {
                continue;
            }
            let mut norm = 0.0;
            for (r, c) in resp.iter_mut().zip(&comps) {
                *r = c.weight * gauss(x, c);
                norm += *r;
            }
            if norm <= 0.0 {
                // far tail of every component: assign to the nearest
                let j = (0..k)
                    .min_by(|&a, &b| {
                        ((x - comps[a].mean).abs() / comps[a].var.sqrt())
                            .total_cmp(&((x - comps[b].mean).abs() / comps[b].var.sqrt()))
                    })
                    .unwrap_or(0);
                resp.iter_mut().for_each(|r| *r = 0.0);
                resp[j] = 1.0;
                norm = 1.0;
                loglik += w * -700.0;
            } else {
                loglik += w * norm.ln();
            }
            for j in 0..k {
                let r = w * resp[j] / norm;
                sw[j] += r;
                sx[j] += r * x;
                sxx[j] += r * x * x;
            }
        }
        for j in 0..k {
            if sw[j] <= 0.0 {
                continue;
            }
            let mean = sx[j] / sw[j];
            comps[j] = Component {
                mean,
                var: (sxx[j] / sw[j] - mean * mean).max(var_floor),
                weight: sw[j] / total,
            };
        }
        if (loglik - last).abs() <= 1e-12 * loglik.abs().max(1.0) {
            break;
        }
        last = loglik;
    }
    (comps, loglik)
}

fn weighted_quantile(xs: &[f64], ws: &[f64], q: f64) -> f64 {
    let total: f64 = ws.iter().sum();
    let mut acc = 0.0;
    for (&x, &w) in xs.iter().zip(ws) {
        acc += w;
        if acc >= q * total {
            return x;
        }
    }
    *xs.last().unwrap_or(&0.0)
}

fn predicted_ssr(trace: &TofTrace, comps: &[(f64, f64, f64)]) -> f64 {
    let total = trace.total();
    let cdf = |x: f64, m: f64, s: f64| 0.5 * (1.0 + erf((x - m) / (s * std::f64::consts::SQRT_2)));
    trace
        .bin_edges_ms
        .windows(2)
        .zip(&trace.counts)
        .map(|(e, &n)| {
            let model: f64 = comps
                .iter()
                .map(|&(m, s, f)| total * f * (cdf(e[1], m, s) - cdf(e[0], m, s)))
                .sum();
            (n - model) * (n - model)
        })
        .sum()
}

/// Fits a `k`-component Gaussian mixture (`k` = 1 or 2) to the binned trace.
/// Returns `(center, sigma, fraction)` per component, widths corrected for binning.
pub fn fit_mixture(trace: &TofTrace, k: usize) -> Result<Vec<(f64, f64, f64)>> {
    let total = trace.total();
    if !(total > 0.0) || trace.counts.iter().any(|c| !(*c >= 0.0)) {
        return Err(Error::DegenerateTrace("TOF trace has no counts"));
    }
    let xs: Vec<f64> = trace.centers_ms().collect();
    let ws = &trace.counts;
    let bw = trace.bin_width_ms();
    let sheppard = bw * bw / 12.0;
    let var_floor = 1.01 * sheppard;
    let mean = xs.iter().zip(ws).map(|(x, w)| x * w).sum::<f64>() / total;
    let var = (xs.iter().zip(ws).map(|(x, w)| w * (x - mean) * (x - mean)).sum::<f64>() / total).max(var_floor);

    let comps = match k {
        1 => em(&xs, ws, vec![Component { mean, var, weight: 1.0 }], var_floor).0,
        2 => {
            let mut best: Option<(Vec<Component>, f64)> = None;
            for (qa, qb) in [(0.25, 0.75), (0.1, 0.9), (0.05, 0.6), (0.4, 0.95)] {
                let a = weighted_quantile(&xs, ws, qa);
                let b = weighted_quantile(&xs, ws, qb);
                let init = vec![
                    Component {
                        mean: a,
                        var: 0.25 * var,
                        weight: 0.5,
                    },
                    Component {
                        mean: b,
                        var: 0.25 * var,
                        weight: 0.5,
                    },
                ];
                let (c, ll) = em(&xs, ws, init, var_floor);
                if best.as_ref().is_none_or(|(_, b)| ll > *b) {
                    best = Some((c, ll));
                }
            }
            best.expect("at least one start").0
        }
        _ => return Err(Error::invalid("components", "only 1 or 2 supported")),
    };
    let mut out: Vec<(f64, f64, f64)> = comps
        .iter()
        .map(|c| (c.mean, (c.var - sheppard).max(0.01 * sheppard).sqrt(), c.weight))
        .collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Minimum weight fraction for a second component to count as a separate peak.
const MIN_PEAK_FRACTION: f64 = 0.005;

/// One- or two-peak decomposition; the two-peak model is kept when it lowers the
/// residual more than fivefold.
pub fn decompose_peaks(trace: &TofTrace) -> Result<Decomposition> {
    let one = fit_mixture(trace, 1)?;
    let two = fit_mixture(trace, 2)?;
    let ssr_one = predicted_ssr(trace, &one);
    let ssr_two = predicted_ssr(trace, &two);
    let scale: f64 = trace.counts.iter().map(|c| c * c).sum();
    let use_two = ssr_one > 5.0 * ssr_two
        && ssr_one > 1e-9 * scale
        && two.iter().all(|p| p.2 >= MIN_PEAK_FRACTION)
        && (two[1].0 - two[0].0).abs() > trace.bin_width_ms();
    let (chosen, ssr) = if use_two { (two, ssr_two) } else { (one, ssr_one) };
    Ok(Decomposition {
        peaks: chosen
            .into_iter()
            .map(|(center_ms, sigma_ms, fraction)| PeakFit {
                center_ms,
                sigma_ms,
                fraction,
                residual: ssr,
            })
            .collect(),
        ssr_one,
        ssr_two,
    })
}

/// Marks atoms more likely to belong to the delayed peak than to the earlier one.
pub fn delayed_selection(
    snapshot: &Snapshot,
    reference_time: f64,
    c: &Constants,
    cfg: &TofConfig,
    dec: &Decomposition,
) -> Vec<bool> {
    let times = arrival_times_ms(snapshot, reference_time, c, cfg.sheet_depth);
    if !dec.has_delayed_peak() {
        return vec![true; times.len()];
    }
    let (a, b) = (dec.peaks[0], dec.peaks[1]);
    let density = |t: f64, p: &PeakFit| {
        let d = (t - p.center_ms) / p.sigma_ms;
        p.fraction * (-0.5 * d * d).exp() / p.sigma_ms
    };
    times.iter().map(|&t| density(t, &b) > density(t, &a)).collect()
}

/// `mass var(v_axis) / kB` over the selected atoms.
pub fn temperature_from_ensemble(
    snapshot: &Snapshot,
    c: &Constants,
    axis: usize,
    selection: Option<&[bool]>,
) -> Result<f64> {
    if axis > 2 {
        return Err(Error::invalid("axis", "must be 0, 1 or 2"));
    }
    let vs: Vec<f64> = snapshot
        .atoms
        .iter()
        .enumerate()
        .filter(|(i, _)| selection.is_none_or(|s| s.get(*i).copied().unwrap_or(false)))
        .map(|(_, a)| a.vel[axis])
        .collect();
    if vs.len() < 2 {
        return Err(Error::EmptySelection("fewer than two atoms selected"));
    }
    let n = vs.len() as f64;
    let shift = vs[0];
    let mean = vs.iter().map(|v| v - shift).sum::<f64>() / n;
    let var = vs.iter().map(|v| (v - shift - mean).powi(2)).sum::<f64>() / (n - 1.0);
    Ok(c.mass * var / KB)
}

/// Ballistic flight from the snapshot to the sheet.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlightKinematics {
    pub sheet_depth: f64,
    pub g_accel: f64,
    pub mass: f64,
    /// Mean height of the sub-population at the snapshot, m.
    pub z0: f64,
    /// Rms vertical extent at the snapshot, m.
    pub sigma_z: f64,
    /// Snapshot time minus the TOF reference time, s.
    pub lead: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TofTemperature {
    pub temperature: f64,
    /// Width at or below the position-broadening floor; `temperature` is then an upper bound.
    pub upper_bound: bool,
    /// Arrival-time spread contributed by the initial cloud size, ms.
    pub floor_ms: f64,
}

/// Maps a peak's arrival-time width back to a velocity spread through the
/// ballistic Jacobian at the peak center, removing the spread due to cloud size.
pub fn temperature_from_tof(peak: &PeakFit, kin: &FlightKinematics) -> Result<TofTemperature> {
    let t = 1e-3 * peak.center_ms - kin.lead;
    if !(t > 0.0) {
        return Err(Error::invalid("center_ms", "peak precedes the snapshot"));
    }
    let g = kin.g_accel;
    let v = (-kin.sheet_depth - kin.z0 + 0.5 * g * t * t) / t;
    let slope = g * t - v;
    let dt_dv = t / slope;
    let floor = kin.sigma_z / slope;
    let sigma_t = 1e-3 * peak.sigma_ms;
    let excess = sigma_t * sigma_t - floor * floor;
    let upper_bound = excess <= 0.0;
    let var_v = if upper_bound {
        sigma_t * sigma_t / (dt_dv * dt_dv)
    } else {
        excess / (dt_dv * dt_dv)
    };
    Ok(TofTemperature {
        temperature: kin.mass * var_v / KB,
        upper_bound,
        floor_ms: 1e3 * floor,
    })
}

/// Mean height and rms vertical extent of the selected atoms.
pub fn vertical_extent(snapshot: &Snapshot, selection: Option<&[bool]>) -> (f64, f64) {
    let zs: Vec<f64> = snapshot
        .atoms
        .iter()
        .enumerate()
        .filter(|(i, _)| selection.is_none_or(|s| s.get(*i).copied().unwrap_or(false)))
        .map(|(_, a)| a.pos.z)
        .collect();
    if zs.is_empty() {
        return (0.0, 0.0);
    }
    let n = zs.len() as f64;
    let mean = zs.iter().sum::<f64>() / n;
    let var = zs.iter().map(|z| (z - mean) * (z - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Weighted 2-D histogram in the xz plane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Image {
    pub x0: f64,
    pub z0: f64,
    pub pixel: f64,
    pub nx: usize,
    pub nz: usize,
    /// Row-major: `counts[iz * nx + ix]`.
    pub counts: Vec<f64>,
}

impl Image {
    pub fn centroid(&self) -> (f64, f64) {
        let mut sum = 0.0;
        let mut sx = 0.0;
        let mut sz = 0.0;
        for iz in 0..self.nz {
            for ix in 0..self.nx {
                let w = self.counts[iz * self.nx + ix];
                sum += w;
                sx += w * (self.x0 + (ix as f64 + 0.5) * self.pixel);
                sz += w * (self.z0 + (iz as f64 + 0.5) * self.pixel);
            }
        }
        if sum > 0.0 {
            (sx / sum, sz / sum)
        } else {
            (0.0, 0.0)
        }
    }

    pub fn total(&self) -> f64 {
        self.counts.iter().sum()
    }
}

/// Positions `(x, z)` after ballistic flight for `delay` seconds.
pub fn propagate_xz(snapshot: &Snapshot, delay: f64, g: f64) -> Vec<(f64, f64)> {
    snapshot
        .atoms
        .iter()
        .map(|a| {
            (
                a.pos.x + a.vel.x * delay,
                a.pos.z + a.vel.z * delay - 0.5 * g * delay * delay,
            )
        })
        .collect()
}

pub fn image_xz(snapshot: &Snapshot, delay: f64, pixel: f64, c: &Constants) -> Result<Image> {
    if !(delay >= 0.0) {
        return Err(Error::invalid("delay", "must be >= 0"));
    }
    if !(pixel > 0.0) {
        return Err(Error::invalid("pixel", "must be positive"));
    }
    let pts = propagate_xz(snapshot, delay, c.g_accel);
    if pts.is_empty() {
        return Ok(Image {
            x0: 0.0,
            z0: 0.0,
            pixel,
            nx: 0,
            nz: 0,
            counts: Vec::new(),
        });
    }
    let cell = |v: f64| (v / pixel).floor() as i64;
    let (ix0, ix1) = pts
        .iter()
        .fold((i64::MAX, i64::MIN), |(a, b), p| (a.min(cell(p.0)), b.max(cell(p.0))));
    let (iz0, iz1) = pts
        .iter()
        .fold((i64::MAX, i64::MIN), |(a, b), p| (a.min(cell(p.1)), b.max(cell(p.1))));
    let nx = (ix1 - ix0 + 1) as usize;
    let nz = (iz1 - iz0 + 1) as usize;
    let mut counts = vec![0.0; nx * nz];
    for &(x, z) in &pts {
        counts[(cell(z) - iz0) as usize * nx + (cell(x) - ix0) as usize] += snapshot.weight;
    }
    Ok(Image {
        x0: ix0 as f64 * pixel,
        z0: iz0 as f64 * pixel,
        pixel,
        nx,
        nz,
        counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::Atom;
    use nalgebra::Vector3;

    fn snap(states: &[(f64, f64)]) -> Snapshot {
        Snapshot {
            time: 0.0,
            weight: 1.0,
            atoms: states
                .iter()
                .map(|&(z, vz)| Atom {
                    pos: Vector3::new(0.0, 0.0, z),
                    vel: Vector3::new(0.0, 0.0, vz),
                    alive: true,
                })
                .collect(),
        }
    }

    #[test]
    fn crossing_times() {
        assert!((crossing_time(0.0, 0.0, 0.02, 9.81) - 0.06386).abs() < 1e-5);
        assert!((crossing_time(0.0, -0.15, 0.02, 9.81) - 0.0504).abs() < 1e-4);
    }

    #[test]
    fn empty_snapshot_gives_zero_trace() {
        let c = Constants::cesium_d2();
        let t = synthesize_tof(&snap(&[]), 0.0, &c, &TofConfig::default());
        assert_eq!(t.total(), 0.0);
        assert!(decompose_peaks(&t).is_err());
    }

    #[test]
    fn temperature_of_identical_velocities_is_zero() {
        let c = Constants::cesium_d2();
        let s = snap(&[(0.0, 0.1), (0.0, 0.1), (0.0, 0.1)]);
        assert_eq!(temperature_from_ensemble(&s, &c, 2, None).unwrap(), 0.0);
        assert!(temperature_from_ensemble(&s, &c, 2, Some(&[true, false, false])).is_err());
    }

    #[test]
    fn image_of_raw_snapshot() {
        let c = Constants::cesium_d2();
        let s = snap(&[(0.0, 0.0), (1e-3, 0.0)]);
        let img = image_xz(&s, 0.0, 50e-6, &c).unwrap();
        assert_eq!(img.total(), 2.0);
        let fallen = image_xz(&snap(&[(0.0, 0.0)]), 10e-3, 50e-6, &c).unwrap();
        assert!((fallen.centroid().1 + 0.4905e-3).abs() < 50e-6);
    }
}
