//! Vector fields of the ODE systems and the classical RK4 step with exact
//! co-propagation of tangent vectors through all four stages.

use ndarray::{Array2, ArrayView2};

/// A vector field `v(x)` together with its directional derivative.
pub trait VectorField {
    fn dim(&self) -> usize;
    fn eval(&self, x: &[f64], out: &mut [f64]);
    /// `out = Dv(x) · w` for a `d × k` block of tangent vectors.
    fn jvp(&self, x: &[f64], w: ArrayView2<f64>) -> Array2<f64>;
}

#[derive(Debug, Clone, Copy)]
pub struct Lorenz63 {
    pub sigma: f64,
    pub rho: f64,
    pub beta: f64,
}

impl VectorField for Lorenz63 {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = self.sigma * (x[1] - x[0]);
        out[1] = x[0] * (self.rho - x[2]) - x[1];
        out[2] = x[0] * x[1] - self.beta * x[2];
    }

    fn jvp(&self, x: &[f64], w: ArrayView2<f64>) -> Array2<f64> {
        let j = [
            [-self.sigma, self.sigma, 0.0],
            [self.rho - x[2], -1.0, -x[0]],
            [x[1], x[0], -self.beta],
        ];
        dense_jvp3(&j, w)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Rossler {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

impl VectorField for Rossler {
    fn dim(&self) -> usize {
        3
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        out[0] = -x[1] - x[2];
        out[1] = x[0] + self.a * x[1];
        out[2] = self.b + x[2] * (x[0] - self.c);
    }

    fn jvp(&self, x: &[f64], w: ArrayView2<f64>) -> Array2<f64> {
        let j = [
            [0.0, -1.0, -1.0],
            [1.0, self.a, 0.0],
            [x[2], 0.0, x[0] - self.c],
        ];
        dense_jvp3(&j, w)
    }
}

/// Four-dimensional hyperchaotic system with parameters `a, b, c, d`.
#[derive(Debug, Clone, Copy)]
pub struct Hyperchaos {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub d: f64,
}

impl VectorField for Hyperchaos {
    fn dim(&self) -> usize {
        4
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        let (xx, y, z, w) = (x[0], x[1], x[2], x[3]);
        out[0] = self.a * xx + self.d * z - y * z;
        out[1] = xx * z - self.b * y;
        out[2] = self.c * (xx - z) + xx * y;
        out[3] = self.c * (y - w) + xx * z;
    }

    fn jvp(&self, x: &[f64], w: ArrayView2<f64>) -> Array2<f64> {
        let (xx, y, z) = (x[0], x[1], x[2]);
        let j = [
            [self.a, -z, self.d - y, 0.0],
            [z, -self.b, xx, 0.0],
            [self.c + y, xx, -self.c, 0.0],
            [z, self.c, xx, -self.c],
        ];
        let mut out = Array2::zeros(w.raw_dim());
        for r in 0..4 {
            for col in 0..w.ncols() {
                let mut s = 0.0;
                for (k, jj) in j[r].iter().enumerate() {
                    s += jj * w[[k, col]];
                }
                out[[r, col]] = s;
            }
        }
        out
    }
}

/// `dx/dt = A x`.
#[derive(Debug, Clone)]
pub struct LinearField {
    pub a: Array2<f64>,
}

impl VectorField for LinearField {
    fn dim(&self) -> usize {
        self.a.nrows()
    }

    fn eval(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            *o = (0..x.len()).map(|j| self.a[[i, j]] * x[j]).sum();
        }
    }

    fn jvp(&self, _x: &[f64], w: ArrayView2<f64>) -> Array2<f64> {
        self.a.dot(&w)
    }
}

fn dense_jvp3(j: &[[f64; 3]; 3], w: ArrayView2<f64>) -> Array2<f64> {
    let mut out = Array2::zeros(w.raw_dim());
    for c in 0..w.ncols() {
        let (a, b, d) = (w[[0, c]], w[[1, c]], w[[2, c]]);
        for r in 0..3 {
            out[[r, c]] = j[r][0] * a + j[r][1] * b + j[r][2] * d;
        }
    }
    out
}

/// One classical RK4 step of size `h`.
pub fn rk4_step<V: VectorField + ?Sized>(field: &V, x: &[f64], h: f64) -> Vec<f64> {
    let d = x.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut z = vec![0.0; d];
    field.eval(x, &mut k1);
    for i in 0..d {
        z[i] = x[i] + 0.5 * h * k1[i];
    }
    field.eval(&z, &mut k2);
    for i in 0..d {
        z[i] = x[i] + 0.5 * h * k2[i];
    }
    field.eval(&z, &mut k3);
    for i in 0..d {
        z[i] = x[i] + h * k3[i];
    }
    field.eval(&z, &mut k4);
    (0..d)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect()
}

/// RK4 step of the state together with the exact derivative of the step map
/// applied to `frame`: the stages are differentiated by the chain rule, so the
/// returned block equals `dF(x) · frame` for the discrete map `F`.
pub fn rk4_step_tangent<V: VectorField + ?Sized>(
    field: &V,
    x: &[f64],
    frame: ArrayView2<f64>,
    h: f64,
) -> (Vec<f64>, Array2<f64>) {
    let d = x.len();
    let mut k1 = vec![0.0; d];
    let mut k2 = vec![0.0; d];
    let mut k3 = vec![0.0; d];
    let mut k4 = vec![0.0; d];
    let mut z = vec![0.0; d];

    field.eval(x, &mut k1);
    let t1 = field.jvp(x, frame);

    for i in 0..d {
        z[i] = x[i] + 0.5 * h * k1[i];
    }
    field.eval(&z, &mut k2);
    let z2 = &frame + &(&t1 * (0.5 * h));
    let t2 = field.jvp(&z, z2.view());

    for i in 0..d {
        z[i] = x[i] + 0.5 * h * k2[i];
    }
    field.eval(&z, &mut k3);
    let z3 = &frame + &(&t2 * (0.5 * h));
    let t3 = field.jvp(&z, z3.view());

    for i in 0..d {
        z[i] = x[i] + h * k3[i];
    }
    field.eval(&z, &mut k4);
    let z4 = &frame + &(&t3 * h);
    let t4 = field.jvp(&z, z4.view());

    let next = (0..d)
        .map(|i| x[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
        .collect();
    let mut tangent = frame.to_owned();
    tangent.zip_mut_with(&t1, |a, b| *a += h / 6.0 * b);
    tangent.zip_mut_with(&t2, |a, b| *a += h / 3.0 * b);
    tangent.zip_mut_with(&t3, |a, b| *a += h / 3.0 * b);
    tangent.zip_mut_with(&t4, |a, b| *a += h / 6.0 * b);
    (next, tangent)
}
