//! Piecewise-smooth discrete maps: the tent-map family on `[0, 2]` and the
//! perturbed Baker's map on `[0, 2π)²`.
//!
//! Every map evaluates to `(value, derivative, branch)` where `branch` encodes
//! the discrete choices taken (which linear piece, which floor value). Two
//! points with different branch codes straddle a kink or discontinuity, which
//! is how [`super::System::jacobian`] detects non-smooth points.

use std::f64::consts::PI;

const TWO_PI: f64 = 2.0 * PI;

#[inline]
fn mix(code: u64, part: u64) -> u64 {
    let h = (code ^ part.wrapping_add(0x9e37_79b9_7f4a_7c15)).wrapping_mul(0xff51_afd7_ed55_8ccd);
    h ^ (h >> 33)
}

/// Tilted tent map: slope `2/(1+s)` up to the peak at `1+s`, then `-2/(1-s)`.
pub fn tent_tilted(x: f64, s: f64) -> (f64, f64, u64) {
    if x < 1.0 + s {
        (2.0 / (1.0 + s) * x, 2.0 / (1.0 + s), 0)
    } else {
        (2.0 / (1.0 - s) * (2.0 - x), -2.0 / (1.0 - s), 1)
    }
}

fn pinched_half(x: f64, s: f64) -> (f64, f64) {
    let q = (1.0 + s) * (1.0 + s) - 4.0 * s * x;
    let root = q.sqrt();
    let den = 1.0 + s + root;
    let value = 4.0 * x / den;
    let slope = 4.0 / den + 8.0 * s * x / (root * den * den);
    (value, slope)
}

/// Pinched tent map: symmetric about `x = 1`, each half a rational-sqrt branch.
pub fn tent_pinched(x: f64, s: f64) -> (f64, f64, u64) {
    if x < 1.0 {
        let (v, d) = pinched_half(x, s);
        (v, d, 0)
    } else {
        let (v, d) = pinched_half(2.0 - x, s);
        (v, -d, 1)
    }
}

fn plucked_f(x: f64, s: f64) -> (f64, f64, u64) {
    let a = 2.0 * x / (1.0 - s);
    let b = 2.0 - 2.0 * (1.0 - x) / (1.0 + s);
    if a <= b {
        (a, 2.0 / (1.0 - s), 0)
    } else {
        (b, 2.0 / (1.0 + s), 1)
    }
}

fn plucked_o(u: f64, s: f64) -> (f64, f64, u64) {
    if u < 0.5 {
        let (f, df, c) = plucked_f(2.0 * u, s);
        (f / 2.0, df, mix(0, c))
    } else {
        let (f, df, c) = plucked_f(2.0 - 2.0 * u, s);
        (2.0 - f / 2.0, df, mix(1, c))
    }
}

fn plucked_lambda(x: f64, s: f64, n: u32) -> (f64, f64, u64) {
    let scale = 2f64.powi(n as i32);
    let y = scale * x;
    let k = y.floor();
    let (o, dodu, c) = plucked_o(y - k, s);
    let value = o / scale + 2.0 * k / scale;
    // d/dx [o(2^n x - k) / 2^n] = o'(u)
    (value, dodu, mix(k as i64 as u64, c))
}

/// Plucked tent map `min(λ(x), λ(2 - x))` with `2^n` dyadic plucks per half.
pub fn tent_plucked(x: f64, s: f64, n: u32) -> (f64, f64, u64) {
    let (l1, d1, c1) = plucked_lambda(x, s, n);
    let (l2, d2, c2) = plucked_lambda(2.0 - x, s, n);
    if l1 <= l2 {
        (l1, d1, mix(mix(0, c1), 7))
    } else {
        (l2, -d2, mix(mix(1, c2), 11))
    }
}

/// Perturbed Baker's map. Returns the image, the 2×2 Jacobian (row-major) and
/// a branch code built from the floor/mod decisions.
pub fn baker(x: f64, y: f64, s: f64) -> ([f64; 2], [f64; 4], u64) {
    let fx = (x / PI).floor();
    let fy = (y / PI).floor();
    let first_pre = 2.0 * x - fy * TWO_PI;
    let second_pre = (y + s * x.sin() * (2.0 * y).sin() + fx * TWO_PI) / 2.0;
    let q1 = (first_pre / TWO_PI).floor();
    let q2 = (second_pre / TWO_PI).floor();
    let value = [first_pre.rem_euclid(TWO_PI), second_pre.rem_euclid(TWO_PI)];
    let jac = [
        2.0,
        0.0,
        s * x.cos() * (2.0 * y).sin() / 2.0,
        (1.0 + 2.0 * s * x.sin() * (2.0 * y).cos()) / 2.0,
    ];
    // q1 + fy is floor(x/π) up to rounding; the y-floor alone is not a discontinuity.
    let code = mix(mix(fx as i64 as u64, (q1 + fy) as i64 as u64), q2 as i64 as u64);
    (value, jac, code)
}
