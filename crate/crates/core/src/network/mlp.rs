//! Dense feed-forward stack evaluated on column batches.
//!
//! Samples are columns of a `width × B` matrix. Tangent vectors ride along as
//! a `width × (B·m)` matrix holding `m` directions per sample, sample-major
//! (column `b·m + j` is direction `j` of sample `b`). A forward pass with
//! tangents followed by [`Mlp::backward`] differentiates any loss of the
//! outputs *and* of the output tangents, which is what Jacobian-matching
//! training needs.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Gelu,
    Relu,
}

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

impl Activation {
    /// `(σ(a), σ'(a), σ''(a))`.
    #[inline]
    pub fn eval(self, a: f64) -> (f64, f64, f64) {
        match self {
            Activation::Gelu => {
                let cdf = 0.5 * (1.0 + libm::erf(a * INV_SQRT_2));
                let pdf = INV_SQRT_2PI * (-0.5 * a * a).exp();
                (a * cdf, cdf + a * pdf, pdf * (2.0 - a * a))
            }
            Activation::Relu => {
                if a > 0.0 {
                    (a, 1.0, 0.0)
                } else {
                    (0.0, 0.0, 0.0)
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    /// Apply the activation (false for the output layer).
    pub activated: bool,
    /// Residual add of the layer input (requires `in == out`).
    pub skip: bool,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Layer>,
    pub activation: Activation,
}

/// Per-layer quantities kept for the reverse pass.
#[derive(Debug, Clone)]
struct LayerTrace {
    input: Array2<f64>,
    pre: Array2<f64>,
    tangent_in: Array2<f64>,
    tangent_pre: Array2<f64>,
}

#[derive(Debug, Clone)]
pub struct Trace {
    layers: Vec<LayerTrace>,
    directions: usize,
}

/// Gradient with the same layout as the network parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGradient {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl ParamGradient {
    pub fn zeros_like(net: &Mlp) -> Self {
        Self {
            layers: net
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weight.raw_dim()), Array1::zeros(l.bias.raw_dim())))
                .collect(),
        }
    }

    pub fn add_assign(&mut self, other: &ParamGradient) {
        for ((w, b), (ow, ob)) in self.layers.iter_mut().zip(&other.layers) {
            *w += ow;
            *b += ob;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in &mut self.layers {
            *w *= factor;
            *b *= factor;
        }
    }

    pub fn dot(&self, other: &ParamGradient) -> f64 {
        self.layers
            .iter()
            .zip(&other.layers)
            .map(|((w, b), (ow, ob))| (w * ow).sum() + b.dot(ob))
            .sum()
    }

    pub fn norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|(w, b)| w.iter().chain(b.iter()).all(|v| v.is_finite()))
    }
}

/// Multiplies every tangent column of sample `b` by column `b` of `factor`.
fn scale_per_sample(tangent: &mut Array2<f64>, factor: &Array2<f64>, m: usize) {
    if m == 0 {
        return;
    }
    for (mut trow, frow) in tangent.rows_mut().into_iter().zip(factor.rows()) {
        for (chunk, f) in trow
            .as_slice_mut()
            .expect("standard layout")
            .chunks_exact_mut(m)
            .zip(frow.iter())
        {
            for t in chunk {
                *t *= f;
            }
        }
    }
}

/// `Σ_j a[:, b·m + j] ⊙ c[:, b·m + j]` for each sample `b`.
fn sum_per_sample(a: &Array2<f64>, c: &Array2<f64>, m: usize, samples: usize) -> Array2<f64> {
    let mut out = Array2::zeros((a.nrows(), samples));
    if m == 0 {
        return out;
    }
    for ((arow, crow), mut orow) in a.rows().into_iter().zip(c.rows()).zip(out.rows_mut()) {
        let (a_s, c_s) = (arow.to_slice().expect("standard"), crow.to_slice().expect("standard"));
        for (b, o) in orow.iter_mut().enumerate() {
            let mut s = 0.0;
            for j in b * m..(b + 1) * m {
                s += a_s[j] * c_s[j];
            }
            *o = s;
        }
    }
    out
}

impl Mlp {
    /// `depth` activated layers of width `width` (the first maps `in_dim → width`),
    /// followed by a linear output layer. With `skip`, every `width → width`
    /// layer is residual. He-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(
        in_dim: usize,
        width: usize,
        depth: usize,
        out_dim: usize,
        activation: Activation,
        skip: bool,
        rng: &mut R,
    ) -> Self {
        let mut layers = Vec::with_capacity(depth + 1);
        let mut fan_in = in_dim;
        for _ in 0..depth {
            layers.push(Self::he_layer(fan_in, width, true, skip && fan_in == width, rng));
            fan_in = width;
        }
        layers.push(Self::he_layer(fan_in, out_dim, false, false, rng));
        Self { layers, activation }
    }

    fn he_layer<R: Rng + ?Sized>(fan_in: usize, out: usize, activated: bool, skip: bool, rng: &mut R) -> Layer {
        let bound = (6.0 / fan_in as f64).sqrt();
        Layer {
            weight: Array2::from_shape_simple_fn((out, fan_in), || rng.gen_range(-bound..bound)),
            bias: Array1::zeros(out),
            activated,
            skip,
        }
    }

    pub fn from_layers(layers: Vec<Layer>, activation: Activation) -> Result<Self> {
        let net = Self { layers, activation };
        net.validate()?;
        Ok(net)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::ShapeMismatch("network has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.bias.len() != l.out_dim() {
                return Err(Error::ShapeMismatch(format!("layer {i}: bias length {} ≠ {}", l.bias.len(), l.out_dim())));
            }
            if l.skip && l.in_dim() != l.out_dim() {
                return Err(Error::ShapeMismatch(format!("layer {i}: residual layer must be square")));
            }
            if i > 0 && self.layers[i - 1].out_dim() != l.in_dim() {
                return Err(Error::ShapeMismatch(format!("layer {i}: input width {} ≠ previous output", l.in_dim())));
            }
        }
        Ok(())
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty").out_dim()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Outputs for a `in_dim × B` batch.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut h = x.to_owned();
        for l in &self.layers {
            let mut a = l.weight.dot(&h);
            a += &l.bias.view().insert_axis(Axis(1));
            if l.activated {
                let act = self.activation;
                a.mapv_inplace(|v| act.eval(v).0);
                if l.skip {
                    a += &h;
                }
            }
            h = a;
        }
        h
    }

    /// Outputs and output tangents for inputs `x` carrying `m` tangent
    /// directions per sample in `t`. With `keep_trace` the intermediate
    /// quantities are retained for [`Mlp::backward`].
    pub fn forward_tangent(
        &self,
        x: ArrayView2<f64>,
        t: ArrayView2<f64>,
        m: usize,
        keep_trace: bool,
    ) -> (Array2<f64>, Array2<f64>, Option<Trace>) {
        let samples = x.ncols();
        debug_assert_eq!(t.ncols(), samples * m);
        let mut h = x.to_owned();
        let mut ht = t.to_owned();
        let mut trace = keep_trace.then(|| Vec::with_capacity(self.layers.len()));
        for l in &self.layers {
            let mut a = l.weight.dot(&h);
            a += &l.bias.view().insert_axis(Axis(1));
            let at = l.weight.dot(&ht);
            let (out, out_t) = if l.activated {
                let act = self.activation;
                let mut value = a.clone();
                let mut slope = a.clone();
                ndarray::Zip::from(&mut value).and(&mut slope).for_each(|v, s| {
                    let (y, dy, _) = act.eval(*v);
                    *v = y;
                    *s = dy;
                });
                let mut value_t = at.clone();
                scale_per_sample(&mut value_t, &slope, m);
                if l.skip {
                    value += &h;
                    value_t += &ht;
                }
                (value, value_t)
            } else {
                (a.clone(), at.clone())
            };
            if let Some(tr) = trace.as_mut() {
                tr.push(LayerTrace {
                    input: std::mem::replace(&mut h, out),
                    pre: a,
                    tangent_in: std::mem::replace(&mut ht, out_t),
                    tangent_pre: at,
                });
            } else {
                h = out;
                ht = out_t;
            }
        }
        let trace = trace.map(|layers| Trace { layers, directions: m });
        (h, ht, trace)
    }

    /// Reverse pass: given adjoints of the outputs (`y_bar`, `in_dim × B`) and of
    /// the output tangents (`t_bar`, `out × B·m`), returns the parameter gradient
    /// and the adjoints of the inputs and input tangents.
    pub fn backward(
        &self,
        trace: &Trace,
        y_bar: Array2<f64>,
        t_bar: Array2<f64>,
    ) -> (ParamGradient, Array2<f64>, Array2<f64>) {
        let m = trace.directions;
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut h_bar = y_bar;
        let mut ht_bar = t_bar;
        for (l, tr) in self.layers.iter().zip(&trace.layers).rev() {
            let samples = tr.input.ncols();
            let (a_bar, at_bar) = if l.activated {
                let act = self.activation;
                let mut slope = tr.pre.clone();
                let mut curv = tr.pre.clone();
                ndarray::Zip::from(&mut slope).and(&mut curv).for_each(|s, c| {
                    let (_, ds, dds) = act.eval(*s);
                    *s = ds;
                    *c = dds;
                });
                let mut at_bar = ht_bar.clone();
                scale_per_sample(&mut at_bar, &slope, m);
                let mut a_bar = &h_bar * &slope;
                if m > 0 && self.activation == Activation::Gelu {
                    let coupling = sum_per_sample(&ht_bar, &tr.tangent_pre, m, samples);
                    a_bar += &(&coupling * &curv);
                }
                (a_bar, at_bar)
            } else {
                (h_bar.clone(), ht_bar.clone())
            };
            let mut gw = a_bar.dot(&tr.input.t());
            if m > 0 {
                gw += &at_bar.dot(&tr.tangent_in.t());
            }
            let gb = a_bar.sum_axis(Axis(1));
            grads.push((gw, gb));
            let mut next_bar = l.weight.t().dot(&a_bar);
            let mut next_t_bar = l.weight.t().dot(&at_bar);
            if l.skip {
                next_bar += &h_bar;
                next_t_bar += &ht_bar;
            }
            h_bar = next_bar;
            ht_bar = next_t_bar;
        }
        grads.reverse();
        (ParamGradient { layers: grads }, h_bar, ht_bar)
    }

    /// Applies `θ ← θ + step·direction`.
    pub fn axpy(&mut self, step: f64, direction: &ParamGradient) {
        for (l, (w, b)) in self.layers.iter_mut().zip(&direction.layers) {
            l.weight.scaled_add(step, w);
            l.bias.scaled_add(step, b);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Sample-at-a-time evaluator written from the layer definitions.
    fn naive_forward(net: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for l in &net.layers {
            let mut out = vec![0.0; l.out_dim()];
            for (r, o) in out.iter_mut().enumerate() {
                let mut s = l.bias[r];
                for (c, hc) in h.iter().enumerate() {
                    s += l.weight[[r, c]] * hc;
                }
                *o = if l.activated {
                    let cdf = 0.5 * (1.0 + libm::erf(s / 2f64.sqrt()));
                    let v = match net.activation {
                        Activation::Gelu => s * cdf,
                        Activation::Relu => s.max(0.0),
                    };
                    if l.skip {
                        v + h[r]
                    } else {
                        v
                    }
                } else {
                    s
                };
            }
            h = out;
        }
        h
    }

    #[test]
    fn batch_forward_matches_naive() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (act, skip) in [(Activation::Gelu, false), (Activation::Gelu, true), (Activation::Relu, true)] {
            let net = Mlp::new(3, 8, 2, 3, act, skip, &mut rng);
            let x = Array2::from_shape_simple_fn((3, 5), || rng.gen_range(-2.0..2.0));
            let y = net.forward_batch(x.view());
            for b in 0..5 {
                let naive = naive_forward(&net, &x.column(b).to_vec());
                for r in 0..3 {
                    assert!((y[[r, b]] - naive[r]).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn gelu_derivatives_match_finite_differences() {
        let h = 1e-6;
        for a in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let (_, d, dd) = Activation::Gelu.eval(a);
            let fd = (Activation::Gelu.eval(a + h).0 - Activation::Gelu.eval(a - h).0) / (2.0 * h);
            let fdd = (Activation::Gelu.eval(a + h).1 - Activation::Gelu.eval(a - h).1) / (2.0 * h);
            assert!((d - fd).abs() < 1e-8);
            assert!((dd - fdd).abs() < 1e-8);
        }
        assert_eq!(Activation::Relu.eval(0.0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn validate_rejects_bad_chain() {
        let l = |o: usize, i: usize| Layer {
            weight: Array2::zeros((o, i)),
            bias: Array1::zeros(o),
            activated: true,
            skip: false,
        };
        assert!(Mlp::from_layers(vec![l(4, 2), l(2, 3)], Activation::Gelu).is_err());
        let mut bad = l(4, 2);
        bad.skip = true;
        assert!(Mlp::from_layers(vec![bad], Activation::Gelu).is_err());
        assert!(Mlp::from_layers(vec![l(4, 2), l(2, 4)], Activation::Gelu).is_ok());
    }
}
