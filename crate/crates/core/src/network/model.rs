//! A network wrapped into a map `F_nn: R^d → R^d`.
//!
//! The network sees normalized coordinates `z = (x - in_shift) / in_scale` and
//! its raw output `n(z)` is mapped back to `v(x) = out_shift + out_scale ⊙ n(z)`.
//! Depending on [`MapForm`], `v` is the map itself, an explicit Euler vector
//! field `F_nn(x) = x + dt·v(x)`, or a vector field integrated by one RK4 step.

use ndarray::{Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp, ParamGradient, Trace};
use crate::data::Dataset;
use crate::dynamics::TangentMap;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum MapForm {
    Direct,
    Euler { dt: f64 },
    Rk4 { dt: f64 },
}

impl MapForm {
    pub fn dt(&self) -> Option<f64> {
        match *self {
            MapForm::Direct => None,
            MapForm::Euler { dt } | MapForm::Rk4 { dt } => Some(dt),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub in_shift: Vec<f64>,
    pub in_scale: Vec<f64>,
    pub out_shift: Vec<f64>,
    pub out_scale: Vec<f64>,
}

impl Normalization {
    pub fn identity(d: usize) -> Self {
        Self {
            in_shift: vec![0.0; d],
            in_scale: vec![1.0; d],
            out_shift: vec![0.0; d],
            out_scale: vec![1.0; d],
        }
    }

    /// Per-coordinate mean and standard deviation of the inputs and of the
    /// quantity `v` the network regresses (the image for maps, the step
    /// displacement over `dt` otherwise).
    pub fn fit(data: &Dataset, form: MapForm) -> Self {
        let stats = |a: &Array2<f64>| -> (Vec<f64>, Vec<f64>) {
            let mean = a.mean_axis(Axis(0)).expect("non-empty");
            let std = a.std_axis(Axis(0), 0.0);
            let std = std.iter().map(|s| if *s > 1e-12 { *s } else { 1.0 }).collect();
            (mean.to_vec(), std)
        };
        let (in_shift, in_scale) = stats(&data.inputs);
        let v = match form.dt() {
            None => data.targets.clone(),
            Some(dt) => (&data.targets - &data.inputs) / dt,
        };
        let (out_shift, out_scale) = stats(&v);
        Self {
            in_shift,
            in_scale,
            out_shift,
            out_scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub net: Mlp,
    pub form: MapForm,
    pub norm: Normalization,
}

/// Trace of one map application (one network call, or four for RK4).
pub struct MapTrace {
    stages: Vec<Trace>,
}

fn rows_scaled(a: &mut Array2<f64>, scale: &[f64]) {
    for (mut row, s) in a.rows_mut().into_iter().zip(scale) {
        row *= *s;
    }
}

fn rows_divided(a: &mut Array2<f64>, scale: &[f64]) {
    for (mut row, s) in a.rows_mut().into_iter().zip(scale) {
        row /= *s;
    }
}

impl MlpModel {
    pub fn new(net: Mlp, form: MapForm) -> Result<Self> {
        net.validate()?;
        if net.in_dim() != net.out_dim() {
            return Err(Error::ShapeMismatch(format!(
                "map network must be square, got {} → {}",
                net.in_dim(),
                net.out_dim()
            )));
        }
        let d = net.in_dim();
        Ok(Self {
            net,
            form,
            norm: Normalization::identity(d),
        })
    }

    pub fn dim(&self) -> usize {
        self.net.in_dim()
    }

    pub fn activation(&self) -> Activation {
        self.net.activation
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "model expects a {}-vector, got {}",
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// `v` and its tangent on a `d × B` batch.
    fn field(&self, x: ArrayView2<f64>, t: ArrayView2<f64>, m: usize, keep: bool) -> (Array2<f64>, Array2<f64>, Option<Trace>) {
        let n = &self.norm;
        let mut z = x.to_owned();
        for (mut row, (sh, sc)) in z.rows_mut().into_iter().zip(n.in_shift.iter().zip(&n.in_scale)) {
            row.mapv_inplace(|v| (v - sh) / sc);
        }
        let mut zt = t.to_owned();
        rows_divided(&mut zt, &n.in_scale);
        let (mut v, mut vt, trace) = self.net.forward_tangent(z.view(), zt.view(), m, keep);
        for (mut row, (sh, sc)) in v.rows_mut().into_iter().zip(n.out_shift.iter().zip(&n.out_scale)) {
            row.mapv_inplace(|y| sh + sc * y);
        }
        rows_scaled(&mut vt, &n.out_scale);
        (v, vt, trace)
    }

    fn field_backward(&self, trace: &Trace, mut v_bar: Array2<f64>, mut vt_bar: Array2<f64>) -> (ParamGradient, Array2<f64>, Array2<f64>) {
        rows_scaled(&mut v_bar, &self.norm.out_scale);
        rows_scaled(&mut vt_bar, &self.norm.out_scale);
        let (g, mut z_bar, mut zt_bar) = self.net.backward(trace, v_bar, vt_bar);
        rows_divided(&mut z_bar, &self.norm.in_scale);
        rows_divided(&mut zt_bar, &self.norm.in_scale);
        (g, z_bar, zt_bar)
    }

    /// `F_nn` with tangents: returns `F_nn(x)` and `dF_nn(x)·t` for `m`
    /// directions per sample.
    pub fn map_tangent(
        &self,
        x: ArrayView2<f64>,
        t: ArrayView2<f64>,
        m: usize,
        keep: bool,
    ) -> (Array2<f64>, Array2<f64>, Option<MapTrace>) {
        match self.form {
            MapForm::Direct => {
                let (v, vt, tr) = self.field(x, t, m, keep);
                (v, vt, tr.map(|t| MapTrace { stages: vec![t] }))
            }
            MapForm::Euler { dt } => {
                let (v, vt, tr) = self.field(x, t, m, keep);
                let y = &x + &(v * dt);
                let yt = &t + &(vt * dt);
                (y, yt, tr.map(|t| MapTrace { stages: vec![t] }))
            }
            MapForm::Rk4 { dt } => {
                let coeffs = [0.0, 0.5 * dt, 0.5 * dt, dt];
                let weights = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
                let mut y = x.to_owned();
                let mut yt = t.to_owned();
                let mut stages = Vec::with_capacity(4);
                let mut prev: Option<(Array2<f64>, Array2<f64>)> = None;
                for s in 0..4 {
                    let (zs, zst) = match &prev {
                        None => (x.to_owned(), t.to_owned()),
                        Some((k, kt)) => (&x + &(k * coeffs[s]), &t + &(kt * coeffs[s])),
                    };
                    let (k, kt, tr) = self.field(zs.view(), zst.view(), m, keep);
                    y.scaled_add(weights[s], &k);
                    yt.scaled_add(weights[s], &kt);
                    if let Some(tr) = tr {
                        stages.push(tr);
                    }
                    prev = Some((k, kt));
                }
                (y, yt, keep.then_some(MapTrace { stages }))
            }
        }
    }

    /// Reverse pass of [`MlpModel::map_tangent`].
    pub fn map_backward(
        &self,
        trace: &MapTrace,
        y_bar: Array2<f64>,
        yt_bar: Array2<f64>,
    ) -> (ParamGradient, Array2<f64>, Array2<f64>) {
        match self.form {
            MapForm::Direct => self.field_backward(&trace.stages[0], y_bar, yt_bar),
            MapForm::Euler { dt } => {
                let (g, xb, xtb) = self.field_backward(&trace.stages[0], &y_bar * dt, &yt_bar * dt);
                (g, xb + y_bar, xtb + yt_bar)
            }
            MapForm::Rk4 { dt } => {
                let coeffs = [0.0, 0.5 * dt, 0.5 * dt, dt];
                let weights = [dt / 6.0, dt / 3.0, dt / 3.0, dt / 6.0];
                let mut x_bar = y_bar.clone();
                let mut xt_bar = yt_bar.clone();
                // adjoint of stage output k_s, accumulated from y and later stages
                let mut k_bar: Option<(Array2<f64>, Array2<f64>)> = None;
                let mut total = ParamGradient::zeros_like(&self.net);
                for s in (0..4).rev() {
                    let (mut kb, mut ktb) = (&y_bar * weights[s], &yt_bar * weights[s]);
                    if let Some((nb, ntb)) = k_bar.take() {
                        kb += &nb;
                        ktb += &ntb;
                    }
                    let (g, zb, ztb) = self.field_backward(&trace.stages[s], kb, ktb);
                    total.add_assign(&g);
                    x_bar += &zb;
                    xt_bar += &ztb;
                    if s > 0 {
                        k_bar = Some((zb * coeffs[s], ztb * coeffs[s]));
                    }
                }
                (total, x_bar, xt_bar)
            }
        }
    }

    /// `F_nn` on a `d × B` batch.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let empty = Array2::zeros((self.dim(), 0));
        self.map_tangent(x, empty.view(), 0, false).0
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let col = ArrayView2::from_shape((x.len(), 1), x).expect("column");
        Ok(self.forward_batch(col).column(0).to_vec())
    }

    /// Exact `dF_nn(x)` by forward-mode propagation of the `d` unit directions.
    pub fn input_jacobian(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check(x)?;
        let d = self.dim();
        let col = ArrayView2::from_shape((d, 1), x).expect("column");
        let eye = Array2::eye(d);
        Ok(self.map_tangent(col, eye.view(), d, false).1)
    }

    /// Raw network vector field `v(x)` (for flow forms).
    pub fn vector_field(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        let col = ArrayView2::from_shape((x.len(), 1), x).expect("column");
        let empty = Array2::zeros((self.dim(), 0));
        Ok(self.field(col, empty.view(), 0, false).0.column(0).to_vec())
    }
}

impl TangentMap for MlpModel {
    fn dim(&self) -> usize {
        MlpModel::dim(self)
    }

    fn time_per_step(&self) -> f64 {
        self.form.dt().unwrap_or(1.0)
    }

    fn advance(&self, x: &[f64]) -> Result<Vec<f64>> {
        let y = self.forward(x)?;
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: 0 });
        }
        Ok(y)
    }

    fn advance_tangent(&self, x: &[f64], frame: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let mut out = self.advance_tangent_batch(&[x.to_vec()], &[frame.to_owned()]);
        out.pop().expect("one result")
    }

    fn advance_tangent_batch(
        &self,
        xs: &[Vec<f64>],
        frames: &[Array2<f64>],
    ) -> Vec<Result<(Vec<f64>, Array2<f64>)>> {
        let d = self.dim();
        if xs.is_empty() {
            return Vec::new();
        }
        let m = frames[0].ncols();
        if xs.iter().any(|x| x.len() != d) || frames.iter().any(|f| f.dim() != (d, m)) {
            return xs
                .iter()
                .map(|_| Err(Error::ShapeMismatch("batched tangent shapes differ".into())))
                .collect();
        }
        let b = xs.len();
        let mut x = Array2::zeros((d, b));
        let mut t = Array2::zeros((d, b * m));
        for (i, (xi, fi)) in xs.iter().zip(frames).enumerate() {
            x.column_mut(i).assign(&ndarray::ArrayView1::from(&xi[..]));
            for j in 0..m {
                t.column_mut(i * m + j).assign(&fi.column(j));
            }
        }
        let (y, yt, _) = self.map_tangent(x.view(), t.view(), m, false);
        (0..b)
            .map(|i| {
                let yi = y.column(i).to_vec();
                let ti = yt.slice(ndarray::s![.., i * m..(i + 1) * m]).to_owned();
                if yi.iter().chain(ti.iter()).any(|v| !v.is_finite()) {
                    Err(Error::NonFiniteState { step: 0 })
                } else {
                    Ok((yi, ti))
                }
            })
            .collect()
    }

    fn advance_batch(&self, xs: &[Vec<f64>]) -> Vec<Result<Vec<f64>>> {
        let d = self.dim();
        if xs.iter().any(|x| x.len() != d) {
            return xs.iter().map(|x| self.advance(x)).collect();
        }
        let mut x = Array2::zeros((d, xs.len()));
        for (i, xi) in xs.iter().enumerate() {
            x.column_mut(i).assign(&ndarray::ArrayView1::from(&xi[..]));
        }
        let y = self.forward_batch(x.view());
        (0..xs.len())
            .map(|i| {
                let yi = y.column(i).to_vec();
                if yi.iter().any(|v| !v.is_finite()) {
                    Err(Error::NonFiniteState { step: 0 })
                } else {
                    Ok(yi)
                }
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::mlp::Layer;
    use ndarray::{array, Array1};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng, d: usize, form: MapForm, act: Activation, skip: bool) -> MlpModel {
        let net = Mlp::new(d, 6, 3, d, act, skip, rng);
        let mut m = MlpModel::new(net, form).unwrap();
        m.norm = Normalization {
            in_shift: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            in_scale: (0..d).map(|_| rng.gen_range(0.5..2.0)).collect(),
            out_shift: (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            out_scale: (0..d).map(|_| rng.gen_range(0.5..2.0)).collect(),
        };
        m
    }

    #[test]
    fn zero_network_gives_zero() {
        let layers = vec![Layer {
            weight: Array2::zeros((2, 2)),
            bias: Array1::zeros(2),
            activated: true,
            skip: false,
        }, Layer {
            weight: Array2::zeros((2, 2)),
            bias: Array1::zeros(2),
            activated: false,
            skip: false,
        }];
        let m = MlpModel::new(Mlp::from_layers(layers, Activation::Gelu).unwrap(), MapForm::Direct).unwrap();
        assert_eq!(m.forward(&[3.0, -1.0]).unwrap(), vec![0.0, 0.0]);
    }

    #[test]
    fn linear_layer_jacobian_is_weight() {
        let w = array![[1.0, 2.0], [-0.5, 3.0]];
        let layers = vec![Layer {
            weight: w.clone(),
            bias: array![0.1, 0.2],
            activated: false,
            skip: false,
        }];
        let m = MlpModel::new(Mlp::from_layers(layers, Activation::Gelu).unwrap(), MapForm::Direct).unwrap();
        assert_eq!(m.input_jacobian(&[0.3, 9.0]).unwrap(), w);
        assert_eq!(m.input_jacobian(&[-7.0, 1.0]).unwrap(), w);
        let id = MlpModel::new(
            Mlp::from_layers(vec![Layer { weight: Array2::eye(2), bias: Array1::zeros(2), activated: false, skip: false }], Activation::Gelu).unwrap(),
            MapForm::Direct,
        )
        .unwrap();
        assert_eq!(id.forward(&[0.25, -4.0]).unwrap(), vec![0.25, -4.0]);
    }

    #[test]
    fn zero_residual_layer_has_identity_jacobian() {
        let layers = vec![
            Layer { weight: Array2::zeros((3, 3)), bias: Array1::zeros(3), activated: true, skip: true },
            Layer { weight: Array2::eye(3), bias: Array1::zeros(3), activated: false, skip: false },
        ];
        let m = MlpModel::new(Mlp::from_layers(layers, Activation::Relu).unwrap(), MapForm::Direct).unwrap();
        assert_eq!(m.input_jacobian(&[0.5, -0.2, 1.0]).unwrap(), Array2::<f64>::eye(3));
    }

    #[test]
    fn input_jacobian_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for form in [MapForm::Direct, MapForm::Euler { dt: 0.1 }, MapForm::Rk4 { dt: 0.1 }] {
            let m = random_model(&mut rng, 3, form, Activation::Gelu, true);
            let x: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let j = m.input_jacobian(&x).unwrap();
            let h = 1e-5;
            for c in 0..3 {
                let mut p = x.clone();
                let mut q = x.clone();
                p[c] += h;
                q[c] -= h;
                let fp = m.forward(&p).unwrap();
                let fq = m.forward(&q).unwrap();
                for r in 0..3 {
                    let fd = (fp[r] - fq[r]) / (2.0 * h);
                    assert!((fd - j[[r, c]]).abs() < 1e-7 * (1.0 + j[[r, c]].abs()), "{form:?}");
                }
            }
        }
    }

    #[test]
    fn batched_tangent_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = random_model(&mut rng, 2, MapForm::Rk4 { dt: 0.05 }, Activation::Gelu, true);
        let xs: Vec<Vec<f64>> = (0..4).map(|_| vec![rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)]).collect();
        let frames: Vec<Array2<f64>> = (0..4).map(|_| Array2::from_shape_simple_fn((2, 1), || rng.gen_range(-1.0..1.0))).collect();
        let batch = m.advance_tangent_batch(&xs, &frames);
        for ((x, f), out) in xs.iter().zip(&frames).zip(batch) {
            let (y, t) = out.unwrap();
            assert_eq!(y, m.forward(x).unwrap());
            let jt = m.input_jacobian(x).unwrap().dot(f);
            for (a, b) in t.iter().zip(jt.iter()) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn shape_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_model(&mut rng, 2, MapForm::Direct, Activation::Gelu, false);
        assert!(matches!(m.forward(&[1.0]), Err(Error::ShapeMismatch(_))));
        assert!(matches!(m.input_jacobian(&[1.0, 2.0, 3.0]), Err(Error::ShapeMismatch(_))));
    }
}
