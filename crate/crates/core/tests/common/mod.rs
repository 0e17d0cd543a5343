//! Independent reference implementations used by the integration tests and the
//! acceptance runner. Nothing here calls into the library's formulas.

#![allow(dead_code)]

use cavsim::constants::{HBAR, KB};
use cavsim::Constants;

fn factorial(n: i32) -> f64 {
    assert!(n >= 0, "factorial of {n}");
    (1..=n).map(f64::from).product()
}

/// Wigner 3-j symbol for integer angular momenta (Racah formula).
pub fn wigner_3j(j1: i32, j2: i32, j3: i32, m1: i32, m2: i32, m3: i32) -> f64 {
    if m1 + m2 + m3 != 0 || m1.abs() > j1 || m2.abs() > j2 || m3.abs() > j3 {
        return 0.0;
    }
    if j3 < (j1 - j2).abs() || j3 > j1 + j2 {
        return 0.0;
    }
    let tri =
        factorial(j1 + j2 - j3) * factorial(j1 - j2 + j3) * factorial(-j1 + j2 + j3) / factorial(j1 + j2 + j3 + 1);
    let pre = (tri
        * factorial(j1 + m1)
        * factorial(j1 - m1)
        * factorial(j2 + m2)
        * factorial(j2 - m2)
        * factorial(j3 + m3)
        * factorial(j3 - m3))
    .sqrt();
    let kmin = 0.max(j2 - j3 - m1).max(j1 - j3 + m2);
    let kmax = (j1 + j2 - j3).min(j1 - m1).min(j2 + m2);
    let mut sum = 0.0;
    for k in kmin..=kmax {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        sum += sign
            / (factorial(k)
                * factorial(j1 + j2 - j3 - k)
                * factorial(j1 - m1 - k)
                * factorial(j2 + m2 - k)
                * factorial(j3 - j2 + m1 + k)
                * factorial(j3 - j1 - m2 + k));
    }
    let phase = if (j1 - j2 - m3).rem_euclid(2) == 0 { 1.0 } else { -1.0 };
    phase * pre * sum
}

/// `|<4, m; 1, q | 5, m + q>|^2` from the 3-j symbol.
pub fn cg_squared_oracle(m: i32, q: i32) -> f64 {
    let w = wigner_3j(4, 1, 5, m, q, -(m + q));
    11.0 * w * w
}

/// Null vector of a 9x9 generator normalized to unit sum, by Gaussian
/// elimination with partial pivoting after replacing the first equation by
/// the normalization condition.
pub fn dense_steady_state(mtx: &[[f64; 9]; 9]) -> [f64; 9] {
    let mut a = [[0.0f64; 10]; 9];
    for i in 0..9 {
        a[i][..9].copy_from_slice(&mtx[i]);
    }
    a[0] = [1.0; 10];
    for col in 0..9 {
        let piv = (col..9)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        a.swap(col, piv);
        let p = a[col][col];
        assert!(p.abs() > 1e-300, "singular generator");
        for row in 0..9 {
            if row != col {
                let f = a[row][col] / p;
                for k in col..10 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let mut x = [0.0; 9];
    for i in 0..9 {
        x[i] = a[i][9] / a[i][i];
    }
    x
}

/// Linear friction rate of the cavity force from `F = -2 eta Gamma_fs hbar k^2 v / kappa`.
pub fn friction_rate_oracle(c: &Constants, eta: f64, gamma_fs: f64, kappa: f64) -> f64 {
    2.0 * eta * gamma_fs * HBAR * c.k * c.k / (c.mass * kappa)
}

/// Equilibrium vertical temperature from a friction / momentum-diffusion balance:
/// each cavity photon kicks z by one recoil, each free-space photon by a
/// recoil projected with second moment `zeta_z`.
pub fn balance_tz(c: &Constants, eta: f64, gamma_fs: f64, kappa: f64, zeta_z: f64) -> f64 {
    let p = HBAR * c.k;
    let heating = gamma_fs * (eta + zeta_z) * p * p / (c.mass * c.mass);
    let beta = friction_rate_oracle(c, eta, gamma_fs, kappa);
    c.mass * heating / (2.0 * beta) / KB
}

/// Standing-wave Doppler temperature along x including saturation: friction from
/// the two counter-propagating beams, heating from absorption plus emission
/// projected with second moment `zeta_x`.
pub fn doppler_balance_tx(c: &Constants, s_single: f64, delta_a: f64, zeta_x: f64) -> f64 {
    let s_total = 2.0 * s_single;
    let x = 2.0 * delta_a / c.gamma;
    let d = 1.0 + s_total + x * x;
    let rate = 0.5 * c.gamma * s_total / d;
    let beta = -8.0 * HBAR * c.k * c.k * s_single * delta_a / (c.mass * c.gamma * d * d);
    let p = HBAR * c.k / c.mass;
    let heating = rate * (1.0 + zeta_x) * p * p;
    c.mass * heating / (2.0 * beta) / KB
}

/// Mean and standard error of the mean.
pub fn mean_sem(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}
