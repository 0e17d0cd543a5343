//! Reductions of run records to scalar metrics.

use serde::{Deserialize, Serialize};

use crate::engine::SummaryRow;
use crate::error::{Error, Result};

/// Least-squares friction rate from a mean vertical velocity trace, assuming
/// `d<v_z>/dt = -gamma <v_z> - g`. Increments between consecutive samples are
/// regressed, so kick noise enters once per interval.
pub fn friction_rate_fit(times: &[f64], mean_vz: &[f64], g: f64) -> Result<f64> {
    if times.len() != mean_vz.len() || times.len() < 2 {
        return Err(Error::DegenerateTrace("need at least two samples"));
    }
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for i in 0..times.len() - 1 {
        let dt = times[i + 1] - times[i];
        let y = mean_vz[i + 1] - mean_vz[i] + g * dt;
        let x = -0.5 * (mean_vz[i] + mean_vz[i + 1]) * dt;
        sxy += x * y;
        sxx += x * x;
    }
    if !(sxx > 0.0) {
        return Err(Error::DegenerateTrace("velocity trace is flat at zero"));
    }
    Ok(sxy / sxx)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpFit {
    pub tau: f64,
    pub amplitude: f64,
    pub offset: f64,
    pub rms: f64,
}

impl ExpFit {
    pub fn eval(&self, t: f64) -> f64 {
        self.offset + self.amplitude * (-t / self.tau).exp()
    }
}

fn linear_given_tau(ts: &[f64], ys: &[f64], t0: f64, tau: f64) -> (f64, f64, f64) {
    // y = offset + amplitude * e, e = exp(-(t - t0)/tau)
    let n = ts.len() as f64;
    let (mut se, mut see, mut sy, mut sey) = (0.0, 0.0, 0.0, 0.0);
    for (&t, &y) in ts.iter().zip(ys) {
        let e = (-(t - t0) / tau).exp();
        se += e;
        see += e * e;
        sy += y;
        sey += e * y;
    }
    let det = n * see - se * se;
    if det.abs() < 1e-300 {
        return (sy / n, 0.0, f64::INFINITY);
    }
    let amp = (n * sey - se * sy) / det;
    let off = (sy - amp * se) / n;
    let ssr: f64 = ts
        .iter()
        .zip(ys)
        .map(|(&t, &y)| {
            let r = y - off - amp * (-(t - t0) / tau).exp();
            r * r
        })
        .sum();
    (off, amp, ssr)
}

/// Fits `y = offset + amplitude exp(-t / tau)` by a scan over `log tau` followed by
/// golden-section refinement; amplitude and offset are solved linearly. Time is
/// measured from the first sample.
pub fn exponential_fit(ts: &[f64], ys: &[f64]) -> Result<ExpFit> {
    if ts.len() != ys.len() || ts.len() < 4 {
        return Err(Error::DegenerateTrace("need at least four samples"));
    }
    let t0 = ts[0];
    let span = ts[ts.len() - 1] - t0;
    let step = ts[1] - t0;
    if !(span > 0.0 && step > 0.0) {
        return Err(Error::DegenerateTrace("time axis is not increasing"));
    }
    let cost = |ln_tau: f64| linear_given_tau(ts, ys, t0, ln_tau.exp()).2;
    let (lo, hi) = ((0.2 * step).ln(), (10.0 * span).ln());
    let n_scan = 200;
    let mut best = (lo, f64::INFINITY);
    for k in 0..=n_scan {
        let x = lo + (hi - lo) * k as f64 / n_scan as f64;
        let c = cost(x);
        if c < best.1 {
            best = (x, c);
        }
    }
    let h = (hi - lo) / n_scan as f64;
    let (mut a, mut b) = (best.0 - h, best.0 + h);
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..100 {
        let c1 = b - phi * (b - a);
        let c2 = a + phi * (b - a);
        if cost(c1) < cost(c2) {
            b = c2;
        } else {
            a = c1;
        }
    }
    let tau = (0.5 * (a + b)).exp();
    let (offset, amplitude_t0, ssr) = linear_given_tau(ts, ys, t0, tau);
    Ok(ExpFit {
        tau,
        amplitude: amplitude_t0 * (t0 / tau).exp(),
        offset,
        rms: (ssr / ts.len() as f64).sqrt(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plateau {
    /// Abscissa at which the curve first comes within the band of its maximum.
    pub onset: f64,
    /// Plateau level (the maximum).
    pub value: f64,
    pub rise: f64,
    /// Largest drop below the level after the onset.
    pub drift: f64,
}

/// Plateau of a rising curve. The level is the curve maximum; the onset is the
/// first point within `band` (fraction of the total rise) of that level, with
/// the crossing linearly interpolated.
pub fn plateau_onset(xs: &[f64], ys: &[f64], band: f64) -> Result<Plateau> {
    let n = xs.len();
    if n != ys.len() || n < 3 {
        return Err(Error::DegenerateTrace("need at least three points"));
    }
    let value = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let rise = value - ys[0];
    if !(rise > 0.0) {
        return Err(Error::DegenerateTrace("curve does not rise"));
    }
    let target = value - band * rise;
    let i = ys.iter().position(|&y| y >= target).expect("the maximum qualifies");
    let onset = if i == 0 {
        xs[0]
    } else {
        let (y0, y1) = (ys[i - 1], ys[i]);
        let f = ((target - y0) / (y1 - y0)).clamp(0.0, 1.0);
        xs[i - 1] + f * (xs[i] - xs[i - 1])
    };
    let drift = ys[i..].iter().map(|y| value - y).fold(0.0, f64::max);
    Ok(Plateau {
        onset,
        value,
        rise,
        drift,
    })
}

/// Non-decreasing up to `tol` between consecutive points.
pub fn is_monotone_nondecreasing(ys: &[f64], tol: f64) -> bool {
    ys.windows(2).all(|w| w[1] >= w[0] - tol)
}

/// Largest ratio `y[i+1] / y[i]` between consecutive positive values.
pub fn max_step_ratio(ys: &[f64]) -> Option<(usize, f64)> {
    ys.windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] > 0.0)
        .map(|(i, w)| (i, w[1] / w[0]))
        .max_by(|a, b| a.1.total_cmp(&b.1))
}

/// Mean of `f(row)` over rows with `t0 <= time <= t1`.
pub fn window_mean(rows: &[SummaryRow], t0: f64, t1: f64, f: impl Fn(&SummaryRow) -> f64) -> Result<f64> {
    let vals: Vec<f64> = rows
        .iter()
        .filter(|r| r.time >= t0 - 1e-12 && r.time <= t1 + 1e-12)
        .map(f)
        .collect();
    if vals.is_empty() {
        return Err(Error::EmptySelection("no summary rows in window"));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recovers_exponential() {
        let ts: Vec<f64> = (0..100).map(|i| 1e-3 + i as f64 * 2e-5).collect();
        let ys: Vec<f64> = ts.iter().map(|t| 30.0 + 20.0 * (-t / 2e-4).exp()).collect();
        let fit = exponential_fit(&ts, &ys).unwrap();
        assert!((fit.tau - 2e-4).abs() / 2e-4 < 1e-6, "{}", fit.tau);
        assert!((fit.offset - 30.0).abs() < 1e-6);
        assert!((fit.eval(1e-3) - ys[0]).abs() < 1e-6);
    }

    #[test]
    fn friction_fit_on_exact_trace() {
        let gamma = 600.0;
        let g = 9.81;
        let ts: Vec<f64> = (0..200).map(|i| i as f64 * 1e-5).collect();
        let vs: Vec<f64> = ts
            .iter()
            .map(|t| -0.15 * (-gamma * t).exp() - g / gamma * (1.0 - (-gamma * t).exp()))
            .collect();
        let fit = friction_rate_fit(&ts, &vs, g).unwrap();
        assert!((fit - gamma).abs() / gamma < 1e-3, "{fit}");
    }

    #[test]
    fn plateau_of_saturating_curve() {
        let xs: Vec<f64> = (0..60).map(|i| i as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 1.0 - (-x / 0.5f64).exp()).collect();
        let p = plateau_onset(&xs, &ys, 0.02).unwrap();
        // the maximum sits slightly below 1, so the band is reached just before x = 0.5 ln 50
        assert!((p.onset - 0.5 * 50f64.ln()).abs() < 0.1, "{}", p.onset);
        // points inside the band still sit below the level
        assert!(p.drift > 0.0 && p.drift <= 0.02 * p.rise);
        assert!(is_monotone_nondecreasing(&ys, 0.0));
    }

    #[test]
    fn step_ratio() {
        let (i, r) = max_step_ratio(&[0.03, 0.031, 0.9, 0.8]).unwrap();
        assert_eq!(i, 1);
        assert!(r > 20.0);
    }
}
