//! Feed-forward map surrogates with exact Jacobians and exact gradients of
//! state, Jacobian-matching and unrolled losses.

pub mod checkpoint;
mod mlp;
mod model;

use ndarray::{s, Array2};
use rayon::prelude::*;

pub use checkpoint::{Checkpoint, CheckpointMeta};
pub use mlp::{Activation, Layer, Mlp, ParamGradient};
pub use model::{MapForm, MapTrace, MlpModel, Normalization};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::training::LossSpec;

/// Rows per batched evaluation; bounds the memory held by reverse-pass traces.
const CHUNK_ROWS: usize = 1024;

/// Which samples and Jacobian columns enter one loss evaluation.
#[derive(Debug, Clone, Default)]
pub struct LossSelection {
    /// Row indices (sample indices, or window starts for the unrolled loss).
    /// `None` means every row / every admissible window.
    pub rows: Option<Vec<usize>>,
    /// Subset of Jacobian columns to match (rescaled by `d / count`); `None` uses all.
    pub jacobian_columns: Option<Vec<usize>>,
}

fn gather_columns(a: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((a.ncols(), rows.len()));
    for (c, &r) in rows.iter().enumerate() {
        out.column_mut(c).assign(&a.row(r));
    }
    out
}

fn sum_sq(a: &Array2<f64>) -> f64 {
    a.iter().map(|v| v * v).sum()
}

/// One chunk's contribution: `(Σ loss / denom, Σ grad / denom)`.
fn chunk_contribution(
    model: &MlpModel,
    data: &Dataset,
    rows: &[usize],
    loss: &LossSpec,
    columns: &[usize],
    denom: f64,
    want_grad: bool,
) -> (f64, Option<ParamGradient>) {
    let d = model.dim();
    let x = gather_columns(&data.inputs, rows);
    match *loss {
        LossSpec::Mse => {
            let empty = Array2::zeros((d, 0));
            let (y, _, trace) = model.map_tangent(x.view(), empty.view(), 0, want_grad);
            let diff = y - gather_columns(&data.targets, rows);
            let value = sum_sq(&diff) / denom;
            let grad = trace.map(|tr| model.map_backward(&tr, diff * (2.0 / denom), Array2::zeros((d, 0))).0);
            (value, grad)
        }
        LossSpec::Jacobian { lambda } => {
            let jac = data.jacobians.as_ref().expect("checked by caller");
            let c = columns.len();
            let b = rows.len();
            let mut seeds = Array2::zeros((d, b * c));
            for i in 0..b {
                for (j, &col) in columns.iter().enumerate() {
                    seeds[[col, i * c + j]] = 1.0;
                }
            }
            let (y, yt, trace) = model.map_tangent(x.view(), seeds.view(), c, want_grad);
            let diff = y - gather_columns(&data.targets, rows);
            let mut jdiff = yt;
            for (i, &r) in rows.iter().enumerate() {
                for (j, &col) in columns.iter().enumerate() {
                    for k in 0..d {
                        jdiff[[k, i * c + j]] -= jac[[r, k, col]];
                    }
                }
            }
            let weight = lambda * d as f64 / c as f64;
            let value = sum_sq(&diff) / denom + weight * sum_sq(&jdiff) / denom;
            let grad = trace.map(|tr| {
                model
                    .map_backward(&tr, diff * (2.0 / denom), jdiff * (2.0 * weight / denom))
                    .0
            });
            (value, grad)
        }
        LossSpec::Unrolled { k } => {
            let denom = denom * k as f64;
            let empty = Array2::zeros((d, 0));
            let mut state = x;
            let mut traces = Vec::with_capacity(k);
            let mut adjoints = Vec::with_capacity(k);
            let mut value = 0.0;
            for t in 0..k {
                let (y, _, trace) = model.map_tangent(state.view(), empty.view(), 0, want_grad);
                let shifted: Vec<usize> = rows.iter().map(|r| r + t).collect();
                let diff = &y - &gather_columns(&data.targets, &shifted);
                value += sum_sq(&diff) / denom;
                if want_grad {
                    traces.push(trace.expect("kept"));
                    adjoints.push(diff * (2.0 / denom));
                }
                state = y;
            }
            let grad = want_grad.then(|| {
                let mut total = ParamGradient::zeros_like(&model.net);
                let mut bar = adjoints.pop().expect("k ≥ 1");
                for trace in traces.iter().rev() {
                    let (g, xb, _) = model.map_backward(trace, bar, Array2::zeros((d, 0)));
                    total.add_assign(&g);
                    bar = match adjoints.pop() {
                        Some(a) => xb + a,
                        None => xb,
                    };
                }
                total
            });
            (value, grad)
        }
    }
}

fn resolve_rows(data: &Dataset, loss: &LossSpec, selection: &LossSelection) -> Result<Vec<usize>> {
    if data.is_empty() {
        return Err(Error::Empty("dataset"));
    }
    let limit = match loss {
        LossSpec::Unrolled { k } => {
            if !data.contiguous || *k > data.len() {
                return Err(Error::ShapeMismatch(format!(
                    "unrolled loss with k = {k} needs a contiguous dataset of at least k pairs"
                )));
            }
            data.len() + 1 - k
        }
        _ => data.len(),
    };
    if matches!(loss, LossSpec::Jacobian { .. }) && data.jacobians.is_none() {
        return Err(Error::MissingJacobians);
    }
    let rows = match &selection.rows {
        Some(r) => r.clone(),
        None => (0..limit).collect(),
    };
    if rows.is_empty() {
        return Err(Error::Empty("batch"));
    }
    if let Some(bad) = rows.iter().find(|&&r| r >= limit) {
        return Err(Error::ShapeMismatch(format!("row {bad} outside 0..{limit}")));
    }
    Ok(rows)
}

fn evaluate(
    model: &MlpModel,
    data: &Dataset,
    loss: &LossSpec,
    selection: &LossSelection,
    want_grad: bool,
) -> Result<(f64, Option<ParamGradient>)> {
    loss.validate()?;
    if data.dim() != model.dim() {
        return Err(Error::DimensionMismatch(data.dim(), model.dim()));
    }
    let rows = resolve_rows(data, loss, selection)?;
    let d = model.dim();
    let columns: Vec<usize> = selection.jacobian_columns.clone().unwrap_or_else(|| (0..d).collect());
    if columns.is_empty() || columns.iter().any(|&c| c >= d) {
        return Err(Error::ShapeMismatch("jacobian column selection out of range".into()));
    }
    // Same chunking for MSE, Jacobian with all columns, and unrolled k = 1, so
    // that their degenerate cases agree bit for bit.
    let base = (4 * CHUNK_ROWS / (1 + columns.len())).max(16);
    let chunk = match loss {
        LossSpec::Unrolled { k } => (base / k).max(16),
        _ => base,
    };
    let denom = rows.len() as f64;
    let parts: Vec<(f64, Option<ParamGradient>)> = rows
        .par_chunks(chunk)
        .map(|r| chunk_contribution(model, data, r, loss, &columns, denom, want_grad))
        .collect();
    let mut value = 0.0;
    let mut grad = want_grad.then(|| ParamGradient::zeros_like(&model.net));
    for (v, g) in parts {
        value += v;
        if let (Some(total), Some(g)) = (grad.as_mut(), g) {
            total.add_assign(&g);
        }
    }
    if !value.is_finite() || grad.as_ref().is_some_and(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss { epoch: 0 });
    }
    Ok((value, grad))
}

/// Empirical risk over the whole batch and its exact parameter gradient.
pub fn loss_gradient(model: &MlpModel, batch: &Dataset, loss: &LossSpec) -> Result<(f64, ParamGradient)> {
    loss_gradient_selected(model, batch, loss, &LossSelection::default())
}

pub fn loss_gradient_selected(
    model: &MlpModel,
    data: &Dataset,
    loss: &LossSpec,
    selection: &LossSelection,
) -> Result<(f64, ParamGradient)> {
    let (v, g) = evaluate(model, data, loss, selection, true)?;
    Ok((v, g.expect("gradient requested")))
}

/// Empirical risk only.
pub fn loss_value(model: &MlpModel, data: &Dataset, loss: &LossSpec, selection: &LossSelection) -> Result<f64> {
    Ok(evaluate(model, data, loss, selection, false)?.0)
}

/// Per-sample Jacobians `dF_nn(x_i)` of a `m × d` input matrix, as `m × d × d`.
pub fn input_jacobians(model: &MlpModel, inputs: &Array2<f64>) -> ndarray::Array3<f64> {
    let (m, d) = inputs.dim();
    let mut out = ndarray::Array3::zeros((m, d, d));
    let rows: Vec<usize> = (0..m).collect();
    for chunk in rows.chunks(CHUNK_ROWS) {
        let x = gather_columns(inputs, chunk);
        let b = chunk.len();
        let mut seeds = Array2::zeros((d, b * d));
        for i in 0..b {
            for j in 0..d {
                seeds[[j, i * d + j]] = 1.0;
            }
        }
        let (_, yt, _) = model.map_tangent(x.view(), seeds.view(), d, false);
        for (i, &r) in chunk.iter().enumerate() {
            out.slice_mut(s![r, .., ..]).assign(&yt.slice(s![.., i * d..(i + 1) * d]));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy(rng: &mut ChaCha8Rng, d: usize, m: usize) -> Dataset {
        let inputs = Array2::from_shape_simple_fn((m + 1, d), || rng.gen_range(-1.0..1.0));
        let targets = inputs.slice(s![1.., ..]).to_owned();
        let inputs = inputs.slice(s![..m, ..]).to_owned();
        let jac = ndarray::Array3::from_shape_simple_fn((m, d, d), || rng.gen_range(-1.0..1.0));
        Dataset::new(inputs, targets, Some(jac)).unwrap()
    }

    #[test]
    fn zero_lambda_jacobian_gradient_is_mse_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(2, 5, 2, 2, Activation::Gelu, true, &mut rng);
        let model = MlpModel::new(net, MapForm::Euler { dt: 0.1 }).unwrap();
        let data = toy(&mut rng, 2, 7);
        let (a, ga) = loss_gradient(&model, &data, &LossSpec::Mse).unwrap();
        let (b, gb) = loss_gradient(&model, &data, &LossSpec::Jacobian { lambda: 0.0 }).unwrap();
        assert_eq!(a, b);
        assert_eq!(ga, gb);
        let (c, gc) = loss_gradient(&model, &data, &LossSpec::Unrolled { k: 1 }).unwrap();
        assert_eq!(a, c);
        assert_eq!(ga, gc);
    }

    #[test]
    fn missing_jacobians_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = Mlp::new(2, 4, 1, 2, Activation::Gelu, false, &mut rng);
        let model = MlpModel::new(net, MapForm::Direct).unwrap();
        let mut data = toy(&mut rng, 2, 3);
        data.jacobians = None;
        assert_eq!(
            loss_gradient(&model, &data, &LossSpec::Jacobian { lambda: 1.0 }).unwrap_err(),
            Error::MissingJacobians
        );
    }

    fn random_direction(net: &Mlp, rng: &mut ChaCha8Rng) -> ParamGradient {
        let mut g = ParamGradient::zeros_like(net);
        for (w, b) in &mut g.layers {
            w.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
            b.mapv_inplace(|_| rng.gen_range(-1.0..1.0));
        }
        g
    }

    #[test]
    fn gradients_match_directional_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let losses = [LossSpec::Mse, LossSpec::Jacobian { lambda: 3.0 }, LossSpec::Unrolled { k: 3 }];
        for form in [MapForm::Direct, MapForm::Euler { dt: 0.1 }, MapForm::Rk4 { dt: 0.1 }] {
            for loss in losses {
                let net = Mlp::new(2, 5, 2, 2, Activation::Gelu, true, &mut rng);
                let model = MlpModel::new(net, form).unwrap();
                let data = toy(&mut rng, 2, 6);
                let (_, g) = loss_gradient(&model, &data, &loss).unwrap();
                let u = random_direction(&model.net, &mut rng);
                let h = 1e-6;
                let mut plus = model.clone();
                plus.net.axpy(h, &u);
                let mut minus = model.clone();
                minus.net.axpy(-h, &u);
                let sel = LossSelection::default();
                let fd = (loss_value(&plus, &data, &loss, &sel).unwrap() - loss_value(&minus, &data, &loss, &sel).unwrap()) / (2.0 * h);
                let exact = g.dot(&u);
                assert!((fd - exact).abs() <= 1e-6 * exact.abs().max(1e-3), "{form:?} {loss:?}: {fd} vs {exact}");
            }
        }
    }
}
