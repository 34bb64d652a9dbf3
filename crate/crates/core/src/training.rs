//! Losses, empirical risks, AdamW and the training loop.

use ndarray::{Array1, Array2, ArrayView2};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::dynamics::{System, TangentMap};
use crate::error::{Error, Result};
use crate::linalg;
use crate::network::{self, LossSelection, MlpModel, ParamGradient};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossSpec {
    Mse,
    Jacobian { lambda: f64 },
    Unrolled { k: usize },
}

impl LossSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            LossSpec::Jacobian { lambda } if !(lambda >= 0.0 && lambda.is_finite()) => {
                Err(Error::config("loss.lambda", "lambda must be finite and non-negative"))
            }
            LossSpec::Unrolled { k } if k == 0 => Err(Error::config("loss.k", "k must be at least 1")),
            _ => Ok(()),
        }
    }

    pub fn needs_jacobians(&self) -> bool {
        matches!(self, LossSpec::Jacobian { .. })
    }

    pub fn label(&self) -> String {
        match self {
            LossSpec::Mse => "mse".into(),
            LossSpec::Jacobian { lambda } => format!("jac(lambda={lambda})"),
            LossSpec::Unrolled { k } => format!("unrolled(k={k})"),
        }
    }
}

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!("lengths {a} and {b}")));
    }
    Ok(())
}

/// `‖pred − target‖²`.
pub fn loss_mse(pred: &[f64], target: &[f64]) -> Result<f64> {
    check_len(pred.len(), target.len())?;
    Ok(pred.iter().zip(target).map(|(p, t)| (p - t) * (p - t)).sum())
}

/// `‖pred − target‖² + λ‖pred_j − target_j‖²_F`.
pub fn loss_jac(
    pred: &[f64],
    target: &[f64],
    pred_j: ArrayView2<f64>,
    target_j: ArrayView2<f64>,
    lambda: f64,
) -> Result<f64> {
    let d = pred.len();
    if pred_j.dim() != (d, d) || target_j.dim() != (d, d) {
        return Err(Error::ShapeMismatch(format!(
            "jacobians {:?} / {:?} for dimension {d}",
            pred_j.dim(),
            target_j.dim()
        )));
    }
    let state = loss_mse(pred, target)?;
    let jac: f64 = pred_j.iter().zip(target_j.iter()).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(state + lambda * jac)
}

/// `(1/k) Σ_{t=1..k} ‖F_nn^t(x0) − F^t(x0)‖²`.
pub fn loss_unrolled<M: TangentMap + ?Sized>(model: &M, system: &System, x0: &[f64], k: usize) -> Result<f64> {
    if k == 0 {
        return Err(Error::config("k", "k must be at least 1"));
    }
    let mut xm = x0.to_vec();
    let mut xt = x0.to_vec();
    let mut total = 0.0;
    for t in 0..k {
        xm = model.advance(&xm).map_err(|_| Error::NonFiniteLoss { epoch: t })?;
        xt = system.step(&xt)?;
        total += loss_mse(&xm, &xt)?;
    }
    let value = total / k as f64;
    if !value.is_finite() {
        return Err(Error::NonFiniteLoss { epoch: k });
    }
    Ok(value)
}

/// `(1/m) Σ_i ℓ(x_i)` over the dataset (over all length-`k` windows for the unrolled loss).
pub fn empirical_risk(model: &MlpModel, dataset: &Dataset, loss: &LossSpec) -> Result<f64> {
    network::loss_value(model, dataset, loss, &LossSelection::default())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// AdamW with decoupled weight decay applied to every parameter.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub config: AdamWConfig,
    first: ParamGradient,
    second: ParamGradient,
    steps: u64,
}

impl AdamW {
    pub fn new(model: &MlpModel, config: AdamWConfig) -> Self {
        Self {
            config,
            first: ParamGradient::zeros_like(&model.net),
            second: ParamGradient::zeros_like(&model.net),
            steps: 0,
        }
    }

    pub fn step(&mut self, model: &mut MlpModel, grad: &ParamGradient) {
        self.steps += 1;
        let c = self.config;
        let lr = c.learning_rate;
        let shrink = 1.0 - lr * c.weight_decay;
        let bias1 = 1.0 - c.beta1.powi(self.steps as i32);
        let bias2 = 1.0 - c.beta2.powi(self.steps as i32);
        let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
            *p *= shrink;
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *p -= lr * m_hat / (v_hat.sqrt() + c.eps);
        };
        for (((layer, (gw, gb)), (mw, mb)), (vw, vb)) in model
            .net
            .layers
            .iter_mut()
            .zip(&grad.layers)
            .zip(self.first.layers.iter_mut())
            .zip(self.second.layers.iter_mut())
        {
            ndarray::Zip::from(&mut layer.weight)
                .and(gw)
                .and(mw)
                .and(vw)
                .for_each(|p, &g, m, v| update(p, g, m, v));
            ndarray::Zip::from(&mut layer.bias)
                .and(gb)
                .and(mb)
                .and(vb)
                .for_each(|p, &g, m, v| update(p, g, m, v));
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BatchSize {
    Full,
    Size(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Schedule {
    Constant,
    /// Multiply the rate by `factor` after `patience` epochs without a new best
    /// training risk, never going below `min_lr`.
    Plateau { factor: f64, patience: usize, min_lr: f64 },
    /// Multiply the rate by `factor` every `every` epochs.
    Step { factor: f64, every: usize },
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::Plateau {
            factor: 0.5,
            patience: 200,
            min_lr: 1e-6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: BatchSize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub seed: u64,
    #[serde(default)]
    pub schedule: Schedule,
    /// Evaluate the test risk every this many epochs (and at the last epoch).
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
    /// Match only this many randomly chosen Jacobian columns per batch.
    #[serde(default)]
    pub jacobian_columns: Option<usize>,
}

fn default_eval_every() -> usize {
    10
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: BatchSize::Full,
            learning_rate: 1e-3,
            weight_decay: 5e-4,
            seed: 0,
            schedule: Schedule::default(),
            eval_every: default_eval_every(),
            jacobian_columns: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::config("train.learning_rate", "must be finite and non-negative"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::config("train.weight_decay", "must be finite and non-negative"));
        }
        if matches!(self.batch_size, BatchSize::Size(0)) {
            return Err(Error::config("train.batch_size", "must be positive"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("train.eval_every", "must be positive"));
        }
        if let Schedule::Plateau { factor, patience, min_lr } = self.schedule {
            if !(factor > 0.0 && factor < 1.0) || patience == 0 || min_lr < 0.0 {
                return Err(Error::config("train.schedule", "plateau needs 0 < factor < 1, patience ≥ 1, min_lr ≥ 0"));
            }
        }
        if let Schedule::Step { factor, every } = self.schedule {
            if !(factor > 0.0 && factor <= 1.0) || every == 0 {
                return Err(Error::config("train.schedule", "step needs 0 < factor ≤ 1, every ≥ 1"));
            }
        }
        if self.jacobian_columns == Some(0) {
            return Err(Error::config("train.jacobian_columns", "must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_risk: f64,
    pub test_risk: Option<f64>,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub train_risk: f64,
    pub test_risk: f64,
    pub mean_relative_error: f64,
    pub history: Vec<EpochRecord>,
}

impl RiskReport {
    /// `epoch,train_risk,test_risk,learning_rate`; missing test values are empty.
    pub fn history_csv(&self) -> String {
        let mut out = String::from("epoch,train_risk,test_risk,learning_rate\n");
        for r in &self.history {
            let test = r.test_risk.map(|v| v.to_string()).unwrap_or_default();
            out.push_str(&format!("{},{},{},{}\n", r.epoch, r.train_risk, test, r.learning_rate));
        }
        out
    }
}

fn admissible_rows(data: &Dataset, loss: &LossSpec) -> usize {
    match loss {
        LossSpec::Unrolled { k } => (data.len() + 1).saturating_sub(*k),
        _ => data.len(),
    }
}

/// Fits `model` with AdamW; returns the trained model and the risk history.
/// Runs are reproducible from `cfg.seed`.
pub fn train(
    mut model: MlpModel,
    train_set: &Dataset,
    test_set: &Dataset,
    loss: &LossSpec,
    cfg: &TrainConfig,
) -> Result<(MlpModel, RiskReport)> {
    cfg.validate()?;
    loss.validate()?;
    if loss.needs_jacobians() && (train_set.jacobians.is_none() || test_set.jacobians.is_none()) {
        return Err(Error::MissingJacobians);
    }
    let rows = admissible_rows(train_set, loss);
    if rows == 0 {
        return Err(Error::Empty("training set"));
    }
    let d = model.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut opt = AdamW::new(
        &model,
        AdamWConfig {
            learning_rate: cfg.learning_rate,
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        },
    );
    let batch = match cfg.batch_size {
        BatchSize::Full => rows,
        BatchSize::Size(b) => b.min(rows),
    };
    let mut order: Vec<usize> = (0..rows).collect();
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best = f64::INFINITY;
    let mut since_best = 0;

    for epoch in 0..cfg.epochs {
        if batch < rows {
            order.shuffle(&mut rng);
        }
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(batch) {
            let columns = cfg.jacobian_columns.filter(|&c| c < d).map(|c| {
                let mut cols: Vec<usize> = (0..d).collect();
                cols.shuffle(&mut rng);
                cols.truncate(c);
                cols.sort_unstable();
                cols
            });
            let selection = LossSelection {
                rows: Some(chunk.to_vec()),
                jacobian_columns: columns,
            };
            let (value, grad) = network::loss_gradient_selected(&model, train_set, loss, &selection).map_err(|e| match e {
                Error::NonFiniteLoss { .. } => Error::NonFiniteLoss { epoch },
                other => other,
            })?;
            opt.step(&mut model, &grad);
            epoch_loss += value * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_risk = epoch_loss / seen as f64;
        let test_risk = if (epoch + 1) % cfg.eval_every == 0 || epoch + 1 == cfg.epochs {
            Some(empirical_risk(&model, test_set, loss).map_err(|_| Error::NonFiniteLoss { epoch })?)
        } else {
            None
        };
        history.push(EpochRecord {
            epoch,
            train_risk,
            test_risk,
            learning_rate: opt.config.learning_rate,
        });
        if let Schedule::Plateau { factor, patience, min_lr } = cfg.schedule {
            if train_risk < best {
                best = train_risk;
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= patience {
                    opt.config.learning_rate = (opt.config.learning_rate * factor).max(min_lr);
                    since_best = 0;
                }
            }
        }
        if let Schedule::Step { factor, every } = cfg.schedule {
            if (epoch + 1) % every == 0 {
                opt.config.learning_rate *= factor;
            }
        }
    }

    let final_train = empirical_risk(&model, train_set, loss)?;
    let final_test = empirical_risk(&model, test_set, loss)?;
    let rel = relative_error_dataset(&model, test_set)?;
    Ok((
        model,
        RiskReport {
            train_risk: final_train,
            test_risk: final_test,
            mean_relative_error: rel.mean,
            history,
        },
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    pub mean: f64,
    /// Points dropped because the reference displacement vanished.
    pub skipped: usize,
    pub evaluated: usize,
}

/// Threshold on `‖v_F(x)‖` below which a point is skipped.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-12;

fn relative_error_from(inputs: &Array2<f64>, truth: &Array2<f64>, model_out: &Array2<f64>, dt: Option<f64>) -> Result<RelativeError> {
    let mut total = 0.0;
    let mut skipped = 0;
    let mut evaluated = 0;
    for ((x, f), g) in inputs.rows().into_iter().zip(truth.rows()).zip(model_out.rows()) {
        let (vf, vh): (Array1<f64>, Array1<f64>) = match dt {
            Some(dt) => ((&f - &x) / dt, (&g - &x) / dt),
            None => (f.to_owned(), g.to_owned()),
        };
        let denom = linalg::norm(vf.as_slice().expect("contiguous"));
        if denom < RELATIVE_ERROR_FLOOR {
            skipped += 1;
            continue;
        }
        total += linalg::dist(vf.as_slice().expect("contiguous"), vh.as_slice().expect("contiguous")) / denom;
        evaluated += 1;
    }
    if evaluated == 0 {
        return Err(Error::DivisionNearZero { skipped });
    }
    Ok(RelativeError {
        mean: total / evaluated as f64,
        skipped,
        evaluated,
    })
}

/// Mean of `‖v_F(x) − v_h(x)‖ / ‖v_F(x)‖` over the test orbit states, with
/// `v = (F(x) − x)/dt` for flows and `v = F(x)` for maps.
pub fn relative_error<M: TangentMap + ?Sized>(model: &M, system: &System, test_states: &Array2<f64>) -> Result<RelativeError> {
    if test_states.ncols() != system.dim() || model.dim() != system.dim() {
        return Err(Error::DimensionMismatch(test_states.ncols(), system.dim()));
    }
    let xs: Vec<Vec<f64>> = test_states.rows().into_iter().map(|r| r.to_vec()).collect();
    let mut truth = Array2::zeros(test_states.raw_dim());
    let mut pred = Array2::zeros(test_states.raw_dim());
    for (i, (x, y)) in xs.iter().zip(model.advance_batch(&xs)).enumerate() {
        truth.row_mut(i).assign(&Array1::from(system.step(x)?));
        pred.row_mut(i).assign(&Array1::from(y?));
    }
    relative_error_from(test_states, &truth, &pred, system.dt)
}

/// [`relative_error`] on stored `(x, F(x))` pairs; flows are recognized by the
/// model's map form carrying a time step.
pub fn relative_error_dataset(model: &MlpModel, data: &Dataset) -> Result<RelativeError> {
    let pred = model.forward_batch(data.inputs.t()).reversed_axes();
    let pred = pred.as_standard_layout().to_owned();
    relative_error_from(&data.inputs, &data.targets, &pred, model.form.dt())
}
