//! Shadowing audits: given a model orbit (a pseudo-orbit of the true map),
//! find a nearby true orbit by Newton refinement of the orbit equations
//! `G_t(v) = F(x_t + v_t) − x_{t+1} − v_{t+1} = 0`, then ask whether that
//! true orbit is statistically typical.
//!
//! The linearized system `A_t δv_t − δv_{t+1} = −G_t` has `n·d` equations in
//! `(n+1)·d` unknowns; each Newton step takes its least-norm solution
//! `δv = Mᵀ y` with `(M Mᵀ) y = −G`. `M Mᵀ` is block tridiagonal with diagonal
//! blocks `A_t A_tᵀ + I` and off-diagonal blocks `−A_{t+1}ᵀ` (above) and
//! `−A_{t+1}` (below), and is eliminated block by block.

use ndarray::{Array1, Array2, ArrayView1};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::dynamics::{trajectory, Kind, Projected, System, TangentMap};
use crate::ergodic::{wasserstein1, EmpiricalMeasure, W1Method};
use crate::error::{Error, Result};
use crate::linalg::{frobenius, norm, LuComplete};

/// Relative pivot size below which a block solve counts as singular.
pub const SINGULAR_PIVOT: f64 = 1e-14;
/// Relative pivot size below which a solve is flagged as near-singular.
pub const NEAR_SINGULAR_PIVOT: f64 = 1e-8;
/// Slack on the per-run metric check.
pub const TRIANGLE_SLACK: f64 = 1e-9;

/// A model orbit together with its per-step defects against the true map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PseudoOrbit {
    /// `(n + 1) × d`.
    pub states: Array2<f64>,
    /// `‖F(x_t) − x_{t+1}‖`, length `n`.
    pub defects: Vec<f64>,
    /// `‖dF(x_t) − dF_nn(x_t)‖_F`, length `n` (zeros when no model is involved).
    pub jac_defects: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DefectSummary {
    pub max_state: f64,
    pub mean_state: f64,
    pub max_jacobian: f64,
    pub mean_jacobian: f64,
}

fn max_mean(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (0.0, 0.0);
    }
    (v.iter().copied().fold(0.0, f64::max), v.iter().sum::<f64>() / v.len() as f64)
}

impl PseudoOrbit {
    /// Defects of given states; Jacobian defects are measured against `model` if present.
    pub fn from_states(truth: &System, states: Array2<f64>, model: Option<&dyn TangentMap>) -> Result<Self> {
        if states.ncols() != truth.dim() {
            return Err(Error::DimensionMismatch(states.ncols(), truth.dim()));
        }
        if states.nrows() < 2 {
            return Err(Error::Empty("pseudo-orbit with at least one step"));
        }
        let n = states.nrows() - 1;
        let mut defects = Vec::with_capacity(n);
        let mut jac_defects = Vec::with_capacity(n);
        for t in 0..n {
            let x = truth.wrap(&states.row(t).to_vec());
            let next = truth.wrap(&states.row(t + 1).to_vec());
            let image = truth.step(&x).map_err(|e| at_step(e, t))?;
            defects.push(norm(&truth.displacement(&image, &next)));
            jac_defects.push(match model {
                Some(m) => {
                    let diff = truth.jacobian_unchecked(&x)? - m.jacobian_at(&x)?;
                    frobenius(diff.view())
                }
                None => 0.0,
            });
        }
        if defects.iter().chain(&jac_defects).any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: n });
        }
        Ok(Self {
            states,
            defects,
            jac_defects,
        })
    }

    /// True orbit from `x0` with independent `U(−noise, noise)` kicks added to every coordinate after each step.
    pub fn noisy_truth<R: Rng + ?Sized>(truth: &System, x0: &[f64], n: usize, noise: f64, rng: &mut R) -> Result<Self> {
        let d = truth.dim();
        if x0.len() != d {
            return Err(Error::DimensionMismatch(x0.len(), d));
        }
        let mut states = Array2::zeros((n + 1, d));
        let mut x = truth.wrap(x0);
        states.row_mut(0).assign(&ArrayView1::from(&x[..]));
        for t in 0..n {
            let mut next = truth.step(&x).map_err(|e| at_step(e, t))?;
            for v in next.iter_mut() {
                *v += rng.gen_range(-noise..=noise);
            }
            x = truth.wrap(&next);
            states.row_mut(t + 1).assign(&ArrayView1::from(&x[..]));
        }
        Self::from_states(truth, states, None)
    }

    pub fn steps(&self) -> usize {
        self.states.nrows() - 1
    }

    pub fn summary(&self) -> DefectSummary {
        let (max_state, mean_state) = max_mean(&self.defects);
        let (max_jacobian, mean_jacobian) = max_mean(&self.jac_defects);
        DefectSummary {
            max_state,
            mean_state,
            max_jacobian,
            mean_jacobian,
        }
    }
}

fn at_step(e: Error, step: usize) -> Error {
    match e {
        Error::NonFiniteState { .. } => Error::NonFiniteState { step },
        other => other,
    }
}

/// Rolls `model` forward `n` steps from `x0` and measures both defect sequences against `truth`.
pub fn measure_defects(truth: &System, model: &dyn TangentMap, x0: &[f64], n: usize) -> Result<PseudoOrbit> {
    if model.dim() != truth.dim() {
        return Err(Error::DimensionMismatch(model.dim(), truth.dim()));
    }
    let model = &Projected { map: model, system: truth };
    let states = trajectory(model, x0, n, 0)?;
    PseudoOrbit::from_states(truth, states, Some(model))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShadowConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub max_halvings: usize,
}

impl Default for ShadowConfig {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            max_halvings: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowResult {
    /// `v_t`, `(n + 1) × d`.
    pub corrections: Array2<f64>,
    /// `x_t + v_t` (wrapped onto the state space).
    pub shadow: Array2<f64>,
    /// `max_t ‖v_t‖`.
    pub shadow_distance: f64,
    /// `max_t ‖F(x_t + v_t) − (x_{t+1} + v_{t+1})‖`.
    pub residual: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Residual before each Newton step and after the last one.
    pub residual_history: Vec<f64>,
    /// Smallest block-solve pivot relative to the largest, over all iterations.
    pub min_relative_pivot: f64,
    pub near_singular: bool,
    pub halvings: usize,
    pub kink_crossings: usize,
}

struct Iterate {
    points: Vec<Vec<f64>>,
    residuals: Vec<Vec<f64>>,
    max_residual: f64,
    branches: Vec<Option<u64>>,
}

fn evaluate(truth: &System, states: &Array2<f64>, v: &Array2<f64>) -> Result<Iterate> {
    let n = states.nrows() - 1;
    let points: Vec<Vec<f64>> = (0..=n)
        .map(|t| truth.wrap(&(&states.row(t) + &v.row(t)).to_vec()))
        .collect();
    let mut residuals = Vec::with_capacity(n);
    let mut max_residual: f64 = 0.0;
    for t in 0..n {
        let image = truth.step(&points[t]).map_err(|e| at_step(e, t))?;
        let g = truth.displacement(&image, &points[t + 1]);
        max_residual = max_residual.max(norm(&g));
        residuals.push(g);
    }
    let branches = points[..n].iter().map(|p| truth.branch_code(p)).collect();
    Ok(Iterate {
        points,
        residuals,
        max_residual,
        branches,
    })
}

/// Least-norm solution of `A_t δv_t − δv_{t+1} = rhs_t`, plus the smallest
/// relative pivot met.
fn least_norm_step(jacobians: &[Array2<f64>], rhs: &[Vec<f64>]) -> Result<(Array2<f64>, f64)> {
    let n = jacobians.len();
    let d = jacobians[0].nrows();
    let eye = Array2::<f64>::eye(d);
    let mut factors: Vec<LuComplete> = Vec::with_capacity(n);
    let mut reduced_rhs: Vec<Array1<f64>> = Vec::with_capacity(n);
    let mut min_rel = f64::INFINITY;
    for t in 0..n {
        let a = &jacobians[t];
        let mut block = a.dot(&a.t()) + &eye;
        let mut r = Array1::from(rhs[t].clone());
        if t > 0 {
            // D'_t = D_t − A_t D'_{t−1}⁻¹ A_tᵀ,  r'_t = r_t + A_t D'_{t−1}⁻¹ r'_{t−1}
            let prev = &factors[t - 1];
            let inv_at = prev.solve(a.t());
            block = block - a.dot(&inv_at);
            let inv_r = Array1::from(prev.solve_vec(reduced_rhs[t - 1].as_slice().expect("contiguous")));
            r = r + a.dot(&inv_r);
        }
        let lu = LuComplete::new(block.view());
        let rel = lu.min_pivot() / lu.max_pivot().max(f64::MIN_POSITIVE);
        if !rel.is_finite() || rel < SINGULAR_PIVOT {
            return Err(Error::SingularLinearization {
                block: t,
                pivot: lu.min_pivot(),
            });
        }
        min_rel = min_rel.min(rel);
        factors.push(lu);
        reduced_rhs.push(r);
    }
    let mut y: Vec<Array1<f64>> = vec![Array1::zeros(d); n];
    for t in (0..n).rev() {
        let mut r = reduced_rhs[t].clone();
        if t + 1 < n {
            r = r + jacobians[t + 1].t().dot(&y[t + 1]);
        }
        y[t] = Array1::from(factors[t].solve_vec(r.as_slice().expect("contiguous")));
    }
    // (Mᵀ y)_s = A_sᵀ y_s − y_{s−1}
    let mut dv = Array2::zeros((n + 1, d));
    for s in 0..=n {
        let mut row = Array1::zeros(d);
        if s < n {
            row = row + jacobians[s].t().dot(&y[s]);
        }
        if s > 0 {
            row = row - &y[s - 1];
        }
        dv.row_mut(s).assign(&row);
    }
    Ok((dv, min_rel))
}

/// Damped least-norm Newton refinement of `pseudo` into a true orbit of `truth`.
///
/// Trial steps are halved until the residual drops; a trial that moves some
/// iterate onto another smooth piece of a piecewise map must at least halve
/// the residual to be accepted.
pub fn refine_shadow(truth: &System, pseudo: &PseudoOrbit, cfg: &ShadowConfig) -> Result<ShadowResult> {
    let states = &pseudo.states;
    if states.ncols() != truth.dim() {
        return Err(Error::DimensionMismatch(states.ncols(), truth.dim()));
    }
    if states.nrows() < 3 {
        return Err(Error::Empty("pseudo-orbit with at least two steps"));
    }
    if states.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteState { step: 0 });
    }
    let n = states.nrows() - 1;
    let d = states.ncols();
    let mut v = Array2::<f64>::zeros((n + 1, d));
    let mut current = evaluate(truth, states, &v)?;
    let mut history = vec![current.max_residual];
    let mut min_rel = f64::INFINITY;
    let (mut halvings, mut crossings) = (0, 0);
    let mut iterations = 0;

    let finish = |v: &Array2<f64>, it: &Iterate, iterations, history: &Vec<f64>, min_rel: f64, halvings, crossings| {
        let shadow = Array2::from_shape_fn((n + 1, d), |(t, j)| it.points[t][j]);
        let shadow_distance = v.rows().into_iter().map(|r| norm(&r.to_vec())).fold(0.0, f64::max);
        ShadowResult {
            corrections: v.clone(),
            shadow,
            shadow_distance,
            residual: it.max_residual,
            converged: it.max_residual < cfg.tol,
            iterations,
            residual_history: history.clone(),
            min_relative_pivot: min_rel,
            near_singular: min_rel < NEAR_SINGULAR_PIVOT,
            halvings,
            kink_crossings: crossings,
        }
    };

    while current.max_residual >= cfg.tol {
        if iterations == cfg.max_iter {
            let best = finish(&v, &current, iterations, &history, min_rel, halvings, crossings);
            return Err(Error::NoConvergence {
                iterations,
                residual: current.max_residual,
                best: Box::new(best),
            });
        }
        let jacobians: Vec<Array2<f64>> = current.points[..n]
            .iter()
            .map(|p| truth.jacobian_unchecked(p))
            .collect::<Result<_>>()?;
        let rhs: Vec<Vec<f64>> = current.residuals.iter().map(|g| g.iter().map(|x| -x).collect()).collect();
        let (dv, rel) = least_norm_step(&jacobians, &rhs)?;
        min_rel = min_rel.min(rel);

        let mut alpha = 1.0;
        let mut accepted = None;
        for h in 0..=cfg.max_halvings {
            let trial_v = &v + &(&dv * alpha);
            if let Ok(trial) = evaluate(truth, states, &trial_v) {
                let crossed = truth.kind() == Kind::DiscreteMap && trial.branches != current.branches;
                let needed = if crossed { 0.5 * current.max_residual } else { current.max_residual };
                if trial.max_residual.is_finite() && trial.max_residual < needed {
                    halvings += h;
                    crossings += usize::from(crossed);
                    accepted = Some((trial_v, trial));
                    break;
                }
            }
            alpha *= 0.5;
        }
        iterations += 1;
        match accepted {
            Some((nv, it)) => {
                v = nv;
                current = it;
                history.push(current.max_residual);
            }
            None => {
                halvings += cfg.max_halvings;
                let best = finish(&v, &current, iterations, &history, min_rel, halvings, crossings);
                return Err(Error::NoConvergence {
                    iterations,
                    residual: current.max_residual,
                    best: Box::new(best),
                });
            }
        }
    }
    Ok(finish(&v, &current, iterations, &history, min_rel, halvings, crossings))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShadowMeasureReport {
    /// `W¹(μ^sh, μ)`.
    pub w1_shadow_vs_reference: f64,
    /// `W¹(μ^nn, μ)`.
    pub w1_model_vs_reference: f64,
    /// `W¹(μ^sh, μ^nn)`.
    pub w1_shadow_vs_model: f64,
    pub threshold: f64,
    pub typical: bool,
    /// `W¹(μ, μ^nn) ≤ W¹(μ^sh, μ^nn) + W¹(μ, μ^sh) + TRIANGLE_SLACK`.
    pub triangle_holds: bool,
    pub w1_method: W1Method,
}

/// Typicality of the shadow orbit of `pseudo` against `reference`. All three
/// distances use one resolved method so that they are comparable.
pub fn classify_shadow(
    pseudo: &PseudoOrbit,
    result: &ShadowResult,
    reference: &EmpiricalMeasure,
    threshold: f64,
    method: W1Method,
) -> Result<ShadowMeasureReport> {
    if !result.converged {
        return Err(Error::NoConvergence {
            iterations: result.iterations,
            residual: result.residual,
            best: Box::new(result.clone()),
        });
    }
    let shadow = EmpiricalMeasure::new(result.shadow.clone())?;
    let model = EmpiricalMeasure::new(pseudo.states.clone())?;
    let method = method.resolve(reference, &shadow);
    let sh_ref = wasserstein1(&shadow, reference, method)?;
    let nn_ref = wasserstein1(&model, reference, method)?;
    let sh_nn = wasserstein1(&shadow, &model, method)?;
    Ok(ShadowMeasureReport {
        w1_shadow_vs_reference: sh_ref,
        w1_model_vs_reference: nn_ref,
        w1_shadow_vs_model: sh_nn,
        threshold,
        typical: sh_ref < threshold,
        triangle_holds: nn_ref <= sh_nn + sh_ref + TRIANGLE_SLACK,
        w1_method: method,
    })
}

/// `factor ×` the mean `W¹` between `samples` independent truth orbits with
/// `n + 1` points and `reference`.
pub fn typicality_threshold<R: Rng + ?Sized>(
    truth: &System,
    reference: &EmpiricalMeasure,
    n: usize,
    spinup: usize,
    samples: usize,
    factor: f64,
    method: W1Method,
    rng: &mut R,
) -> Result<f64> {
    if samples == 0 {
        return Err(Error::config("shadow.threshold_samples", "need at least one sample"));
    }
    let mut total = 0.0;
    for _ in 0..samples {
        let x0 = truth.sample_initial(rng);
        let orbit = EmpiricalMeasure::new(trajectory(truth, &x0, n, spinup)?)?;
        let m = method.resolve(reference, &orbit);
        total += wasserstein1(&orbit, reference, m)?;
    }
    Ok(factor * total / samples as f64)
}
