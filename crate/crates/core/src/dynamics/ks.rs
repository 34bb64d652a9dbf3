//! Modified Kuramoto–Sivashinsky equation
//! `u_t = -(u + c) u_x - u_xx - u_xxxx` on `[0, L]` with `u = u_x = 0` at both
//! ends, discretized by second-order central differences on the interior
//! nodes `x_i = i·dx`, `i = 1..=n`, `dx = L / (n + 1)`.
//!
//! The nonlinear term is differenced in conservative form `(u²/2)_x`; the
//! advective form `u·u_x` blows up in finite time at this resolution.
//!
//! Boundary handling: the Dirichlet condition fixes `u_0 = u_{n+1} = 0`, and
//! the Neumann condition is imposed through mirrored ghost nodes
//! `u_{-1} = u_1`, `u_{n+2} = u_n`.

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::flows::VectorField;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsParams {
    pub c: f64,
    pub length: f64,
    pub nodes: usize,
}

impl Default for KsParams {
    fn default() -> Self {
        Self {
            c: 0.4,
            length: DEFAULT_LENGTH,
            nodes: 127,
        }
    }
}

/// Domain length giving a stable RK4 step at `dt = 0.25` with 127 interior nodes
/// (at `L = 128` the stiffest hyperdiffusive mode sits just outside the RK4
/// stability interval).
pub const DEFAULT_LENGTH: f64 = 136.0;

impl KsParams {
    pub fn dx(&self) -> f64 {
        self.length / (self.nodes as f64 + 1.0)
    }

    /// Gaussian bump centred at `L/2`, scaled to peak height 0.1.
    pub fn initial_condition(&self) -> Vec<f64> {
        let dx = self.dx();
        (1..=self.nodes)
            .map(|i| {
                let x = i as f64 * dx - self.length / 2.0;
                0.1 * (-x * x).exp()
            })
            .collect()
    }
}

/// Value of `u` at padded index `j ∈ [-1, n+2]` (node 0 and n+1 are the walls).
#[inline]
fn padded(u: &[f64], j: isize) -> f64 {
    let n = u.len() as isize;
    let j = if j == -1 {
        1
    } else if j == n + 2 {
        n
    } else {
        j
    };
    if j <= 0 || j >= n + 1 {
        0.0
    } else {
        u[(j - 1) as usize]
    }
}

/// Right-hand side of the semi-discrete KS system.
pub fn ks_rhs(u: &[f64], p: &KsParams) -> Vec<f64> {
    let n = u.len();
    let dx = p.dx();
    let (dx2, dx4) = (dx * dx, dx * dx * dx * dx);
    (1..=n as isize)
        .map(|i| {
            let um2 = padded(u, i - 2);
            let um1 = padded(u, i - 1);
            let u0 = padded(u, i);
            let up1 = padded(u, i + 1);
            let up2 = padded(u, i + 2);
            let ux = (up1 - um1) / (2.0 * dx);
            let half_u2_x = (up1 * up1 - um1 * um1) / (4.0 * dx);
            let uxx = (up1 - 2.0 * u0 + um1) / dx2;
            let uxxxx = (up2 - 4.0 * up1 + 6.0 * u0 - 4.0 * um1 + um2) / dx4;
            -half_u2_x - p.c * ux - uxx - uxxxx
        })
        .collect()
}

/// Jacobian of [`ks_rhs`] as a banded (pentadiagonal) stencil: for row `i`
/// returns coefficients on columns `i-2..=i+2` after ghost folding.
fn ks_row(u: &[f64], p: &KsParams, i: usize) -> [(isize, f64); 7] {
    let n = u.len() as isize;
    let dx = p.dx();
    let (dx2, dx4) = (dx * dx, dx * dx * dx * dx);
    let ii = i as isize + 1;
    let um1 = padded(u, ii - 1);
    let up1 = padded(u, ii + 1);

    // Coefficients on padded indices ii-2..=ii+2.
    let coef = [
        -1.0 / dx4,
        (um1 + p.c) / (2.0 * dx) - 1.0 / dx2 + 4.0 / dx4,
        2.0 / dx2 - 6.0 / dx4,
        -(up1 + p.c) / (2.0 * dx) - 1.0 / dx2 + 4.0 / dx4,
        -1.0 / dx4,
    ];
    let mut out = [(-1isize, 0.0); 7];
    let mut used = 0;
    for (off, c) in (-2..=2).zip(coef) {
        let mut j = ii + off;
        if j == -1 {
            j = 1;
        } else if j == n + 2 {
            j = n;
        }
        if j <= 0 || j >= n + 1 {
            continue;
        }
        let col = j - 1;
        if let Some(slot) = out[..used].iter_mut().find(|(c0, _)| *c0 == col) {
            slot.1 += c;
        } else {
            out[used] = (col, c);
            used += 1;
        }
    }
    out
}

/// Dense Jacobian of the semi-discrete right-hand side.
pub fn ks_rhs_jacobian(u: &[f64], p: &KsParams) -> Array2<f64> {
    let n = u.len();
    let mut j = Array2::zeros((n, n));
    for i in 0..n {
        for (col, c) in ks_row(u, p, i) {
            if col >= 0 {
                j[[i, col as usize]] += c;
            }
        }
    }
    j
}

#[derive(Debug, Clone, Copy)]
pub struct KsField {
    pub params: KsParams,
}

impl VectorField for KsField {
    fn dim(&self) -> usize {
        self.params.nodes
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(&ks_rhs(x, &self.params));
    }

    fn jvp(&self, x: &[f64], w: ArrayView2<f64>) -> Array2<f64> {
        let n = x.len();
        let mut out = Array2::zeros(w.raw_dim());
        for i in 0..n {
            let row = ks_row(x, &self.params, i);
            for c in 0..w.ncols() {
                let mut s = 0.0;
                for &(col, v) in &row {
                    if col >= 0 {
                        s += v * w[[col as usize, c]];
                    }
                }
                out[[i, c]] = s;
            }
        }
        out
    }
}
