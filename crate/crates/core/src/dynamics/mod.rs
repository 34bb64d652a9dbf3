//! Reference chaotic systems as discrete maps `F`, with exact Jacobians.
//!
//! For ODE systems `F` is one fixed-size classical RK4 step of the vector
//! field, and `dF` is the derivative of that step map obtained by pushing
//! tangent vectors through the four stages. For the piecewise maps, `dF` is the
//! branch derivative; asking for it within `KINK_TOL` of a kink is an error.

pub mod flows;
pub mod ks;
pub mod maps;
mod spec;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use flows::{Hyperchaos, LinearField, Lorenz63, Rossler, VectorField};
pub use ks::{ks_rhs, ks_rhs_jacobian, KsParams};
pub use spec::{SystemSpec, SYSTEM_NAMES};

/// Distance to a tent/Baker breakpoint below which `jacobian` refuses to pick a branch.
pub const KINK_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Kind {
    DiscreteMap,
    OdeFlow,
}

/// The closed-form definition of a system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Dynamics {
    TentTilted { s: f64 },
    TentPinched { s: f64 },
    TentPlucked { s: f64, n: u32 },
    Baker { s: f64 },
    Lorenz63 { sigma: f64, rho: f64, beta: f64 },
    Rossler { a: f64, b: f64, c: f64 },
    Hyperchaos { a: f64, b: f64, c: f64, d: f64 },
    KuramotoSivashinsky(KsParams),
    LinearMap { matrix: Array2<f64> },
    LinearFlow { matrix: Array2<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct System {
    pub name: String,
    pub dynamics: Dynamics,
    /// Step size; `Some` exactly for ODE flows.
    pub dt: Option<f64>,
}

/// Anything that can be iterated and linearized along an orbit: ground-truth
/// systems and trained models alike.
pub trait TangentMap: Sync {
    fn dim(&self) -> usize;

    /// Physical time covered by one iterate (`dt` for flows, 1 for maps).
    fn time_per_step(&self) -> f64;

    fn advance(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// `F(x)` together with `dF(x) · frame`.
    fn advance_tangent(&self, x: &[f64], frame: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)>;

    fn jacobian_at(&self, x: &[f64]) -> Result<Array2<f64>> {
        let eye = Array2::eye(self.dim());
        Ok(self.advance_tangent(x, eye.view())?.1)
    }

    /// Lock-step version of [`TangentMap::advance_tangent`] over many states.
    /// Implementors with a batched evaluator override this.
    fn advance_tangent_batch(
        &self,
        xs: &[Vec<f64>],
        frames: &[Array2<f64>],
    ) -> Vec<Result<(Vec<f64>, Array2<f64>)>> {
        xs.iter()
            .zip(frames)
            .map(|(x, f)| self.advance_tangent(x, f.view()))
            .collect()
    }

    /// Lock-step version of [`TangentMap::advance`].
    fn advance_batch(&self, xs: &[Vec<f64>]) -> Vec<Result<Vec<f64>>> {
        xs.iter().map(|x| self.advance(x)).collect()
    }
}

/// Iterates any [`TangentMap`] `spinup` steps from `x0`, then records `n + 1`
/// states as rows.
pub fn trajectory(map: &dyn TangentMap, x0: &[f64], n: usize, spinup: usize) -> Result<Array2<f64>> {
    if x0.len() != map.dim() {
        return Err(Error::DimensionMismatch(x0.len(), map.dim()));
    }
    let mut x = x0.to_vec();
    for t in 0..spinup {
        x = map.advance(&x).map_err(|e| reindex(e, t))?;
    }
    let mut states = Array2::zeros((n + 1, map.dim()));
    states.row_mut(0).assign(&ndarray::ArrayView1::from(&x[..]));
    for t in 0..n {
        x = map.advance(&x).map_err(|e| reindex(e, spinup + t))?;
        if !finite(&x) {
            return Err(Error::NonFiniteState { step: spinup + t });
        }
        states.row_mut(t + 1).assign(&ndarray::ArrayView1::from(&x[..]));
    }
    Ok(states)
}

fn finite(v: &[f64]) -> bool {
    v.iter().all(|x| x.is_finite())
}

impl System {
    pub fn new(name: impl Into<String>, dynamics: Dynamics, dt: Option<f64>) -> Result<Self> {
        let sys = Self {
            name: name.into(),
            dynamics,
            dt,
        };
        sys.validate()?;
        Ok(sys)
    }

    fn validate(&self) -> Result<()> {
        match (self.kind(), self.dt) {
            (Kind::OdeFlow, Some(dt)) if dt > 0.0 && dt.is_finite() => {}
            (Kind::OdeFlow, _) => return Err(Error::config("dt", "flows need a positive finite dt")),
            (Kind::DiscreteMap, None) => {}
            (Kind::DiscreteMap, Some(_)) => {
                return Err(Error::config("dt", "discrete maps take no dt"))
            }
        }
        match &self.dynamics {
            Dynamics::TentTilted { s } | Dynamics::TentPinched { s } | Dynamics::TentPlucked { s, .. } => {
                if !(*s > -1.0 && *s < 1.0) {
                    return Err(Error::config("params.s", "tent maps need -1 < s < 1"));
                }
            }
            Dynamics::KuramotoSivashinsky(p) => {
                if p.nodes < 3 || !(p.length > 0.0) {
                    return Err(Error::config("params", "KS needs >= 3 nodes and L > 0"));
                }
            }
            Dynamics::LinearMap { matrix } | Dynamics::LinearFlow { matrix } => {
                if matrix.nrows() == 0 || matrix.nrows() != matrix.ncols() {
                    return Err(Error::config("params.matrix", "matrix must be square and non-empty"));
                }
            }
            _ => {}
        }
        Ok(())
    }

    pub fn tent_tilted(s: f64) -> Self {
        Self::new("tent_tilted", Dynamics::TentTilted { s }, None).expect("valid s")
    }

    pub fn tent_pinched(s: f64) -> Self {
        Self::new("tent_pinched", Dynamics::TentPinched { s }, None).expect("valid s")
    }

    pub fn tent_plucked(s: f64) -> Self {
        Self::new("tent_plucked", Dynamics::TentPlucked { s, n: 3 }, None).expect("valid s")
    }

    pub fn baker(s: f64) -> Self {
        Self::new("baker", Dynamics::Baker { s }, None).expect("valid baker")
    }

    pub fn lorenz63() -> Self {
        Self::new(
            "lorenz63",
            Dynamics::Lorenz63 {
                sigma: 10.0,
                rho: 28.0,
                beta: 8.0 / 3.0,
            },
            Some(0.01),
        )
        .expect("valid lorenz")
    }

    pub fn rossler() -> Self {
        Self::new(
            "rossler",
            Dynamics::Rossler {
                a: 0.2,
                b: 0.2,
                c: 5.7,
            },
            Some(0.01),
        )
        .expect("valid rossler")
    }

    pub fn hyperchaos() -> Self {
        Self::new(
            "hyperchaos",
            Dynamics::Hyperchaos {
                a: 16.0,
                b: 40.0,
                c: 20.0,
                d: 8.0,
            },
            Some(0.001),
        )
        .expect("valid hyperchaos")
    }

    pub fn kuramoto_sivashinsky(params: KsParams) -> Self {
        Self::new("ks", Dynamics::KuramotoSivashinsky(params), Some(0.25)).expect("valid ks")
    }

    pub fn linear_map(matrix: Array2<f64>) -> Self {
        Self::new("linear_map", Dynamics::LinearMap { matrix }, None).expect("square matrix")
    }

    pub fn linear_flow(matrix: Array2<f64>, dt: f64) -> Self {
        Self::new("linear_flow", Dynamics::LinearFlow { matrix }, Some(dt)).expect("square matrix")
    }

    pub fn kind(&self) -> Kind {
        match self.dynamics {
            Dynamics::Lorenz63 { .. }
            | Dynamics::Rossler { .. }
            | Dynamics::Hyperchaos { .. }
            | Dynamics::KuramotoSivashinsky(_)
            | Dynamics::LinearFlow { .. } => Kind::OdeFlow,
            _ => Kind::DiscreteMap,
        }
    }

    pub fn dim(&self) -> usize {
        match &self.dynamics {
            Dynamics::TentTilted { .. } | Dynamics::TentPinched { .. } | Dynamics::TentPlucked { .. } => 1,
            Dynamics::Baker { .. } => 2,
            Dynamics::Lorenz63 { .. } | Dynamics::Rossler { .. } => 3,
            Dynamics::Hyperchaos { .. } => 4,
            Dynamics::KuramotoSivashinsky(p) => p.nodes,
            Dynamics::LinearMap { matrix } | Dynamics::LinearFlow { matrix } => matrix.nrows(),
        }
    }

    /// The vector field of an ODE system.
    pub fn field(&self) -> Option<Box<dyn VectorField + '_>> {
        Some(match &self.dynamics {
            Dynamics::Lorenz63 { sigma, rho, beta } => Box::new(Lorenz63 {
                sigma: *sigma,
                rho: *rho,
                beta: *beta,
            }),
            Dynamics::Rossler { a, b, c } => Box::new(Rossler { a: *a, b: *b, c: *c }),
            Dynamics::Hyperchaos { a, b, c, d } => Box::new(Hyperchaos {
                a: *a,
                b: *b,
                c: *c,
                d: *d,
            }),
            Dynamics::KuramotoSivashinsky(p) => Box::new(ks::KsField { params: *p }),
            Dynamics::LinearFlow { matrix } => Box::new(LinearField { a: matrix.clone() }),
            _ => return None,
        })
    }

    /// Evaluates the vector field (flows only).
    pub fn vector_field(&self, x: &[f64]) -> Option<Vec<f64>> {
        let f = self.field()?;
        let mut out = vec![0.0; x.len()];
        f.eval(x, &mut out);
        Some(out)
    }

    fn check_dim(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "{} expects a {}-vector, got {}",
                self.name,
                self.dim(),
                x.len()
            )));
        }
        Ok(())
    }

    /// Value, Jacobian (row-major) and branch code of a discrete map.
    fn eval_map(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, u64) {
        match &self.dynamics {
            Dynamics::TentTilted { s } => {
                let (v, d, c) = maps::tent_tilted(x[0], *s);
                (vec![v], vec![d], c)
            }
            Dynamics::TentPinched { s } => {
                let (v, d, c) = maps::tent_pinched(x[0], *s);
                (vec![v], vec![d], c)
            }
            Dynamics::TentPlucked { s, n } => {
                let (v, d, c) = maps::tent_plucked(x[0], *s, *n);
                (vec![v], vec![d], c)
            }
            Dynamics::Baker { s } => {
                let (v, j, c) = maps::baker(x[0], x[1], *s);
                (v.to_vec(), j.to_vec(), c)
            }
            Dynamics::LinearMap { matrix } => {
                let v = matrix.dot(&ndarray::ArrayView1::from(x)).to_vec();
                (v, matrix.iter().copied().collect(), 0)
            }
            _ => unreachable!("eval_map called on a flow"),
        }
    }

    /// `F(x)`.
    pub fn step(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let next = match self.kind() {
            Kind::OdeFlow => {
                let f = self.field().expect("flow has a field");
                flows::rk4_step(f.as_ref(), x, self.dt.expect("flow dt"))
            }
            Kind::DiscreteMap => self.eval_map(x).0,
        };
        if !finite(&next) {
            return Err(Error::NonFiniteState { step: 0 });
        }
        Ok(next)
    }

    /// `dF(x)` of the discrete map (the RK4 step map for flows).
    pub fn jacobian(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        let eye = Array2::eye(self.dim());
        Ok(self.step_tangent(x, eye.view())?.1)
    }

    /// Branch Jacobian without the kink check; used where the caller accepts
    /// one-sided derivatives (Newton refinement of shadows).
    pub fn jacobian_unchecked(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.check_dim(x)?;
        match self.kind() {
            Kind::OdeFlow => self.jacobian(x),
            Kind::DiscreteMap => {
                let d = self.dim();
                let (_, j, _) = self.eval_map(x);
                Ok(Array2::from_shape_vec((d, d), j).expect("d×d"))
            }
        }
    }

    /// Branch code of a discrete map at `x` (`None` for flows). Points with
    /// different codes lie on different smooth pieces.
    pub fn branch_code(&self, x: &[f64]) -> Option<u64> {
        match self.kind() {
            Kind::OdeFlow => None,
            Kind::DiscreteMap => Some(self.eval_map(x).2),
        }
    }

    /// Canonical representative of `x` on the state space (the Baker map lives
    /// on the torus `[0, 2π)²`; everything else is left unchanged).
    pub fn wrap(&self, x: &[f64]) -> Vec<f64> {
        match self.dynamics {
            Dynamics::Baker { .. } => x.iter().map(|v| v.rem_euclid(2.0 * std::f64::consts::PI)).collect(),
            _ => x.to_vec(),
        }
    }

    /// Nearest point of the state space: the torus for the Baker map, `[0, 2]`
    /// for the tent maps, all of R^d otherwise.
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self.dynamics {
            Dynamics::TentTilted { .. } | Dynamics::TentPinched { .. } | Dynamics::TentPlucked { .. } => {
                x.iter().map(|v| v.clamp(0.0, 2.0)).collect()
            }
            _ => self.wrap(x),
        }
    }

    /// `a − b`, taken as the shortest displacement on the torus for the Baker map.
    pub fn displacement(&self, a: &[f64], b: &[f64]) -> Vec<f64> {
        use std::f64::consts::PI;
        match self.dynamics {
            Dynamics::Baker { .. } => a
                .iter()
                .zip(b)
                .map(|(p, q)| (p - q + PI).rem_euclid(2.0 * PI) - PI)
                .collect(),
            _ => a.iter().zip(b).map(|(p, q)| p - q).collect(),
        }
    }

    /// True when `x` is within [`KINK_TOL`] of a breakpoint of a piecewise map.
    pub fn near_kink(&self, x: &[f64]) -> bool {
        if self.kind() == Kind::OdeFlow || matches!(self.dynamics, Dynamics::LinearMap { .. }) {
            return false;
        }
        let (_, _, c0) = self.eval_map(x);
        for i in 0..x.len() {
            for sign in [-1.0, 1.0] {
                let mut y = x.to_vec();
                y[i] += sign * KINK_TOL;
                if self.eval_map(&y).2 != c0 {
                    return true;
                }
            }
        }
        false
    }

    /// `F(x)` and `dF(x) · frame`.
    pub fn step_tangent(&self, x: &[f64], frame: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        self.check_dim(x)?;
        if frame.nrows() != self.dim() {
            return Err(Error::ShapeMismatch(format!(
                "tangent frame has {} rows, system dimension is {}",
                frame.nrows(),
                self.dim()
            )));
        }
        let (next, tangent) = match self.kind() {
            Kind::OdeFlow => {
                let f = self.field().expect("flow has a field");
                flows::rk4_step_tangent(f.as_ref(), x, frame, self.dt.expect("flow dt"))
            }
            Kind::DiscreteMap => {
                if self.near_kink(x) {
                    return Err(Error::NonSmoothPoint {
                        system: self.name.clone(),
                        x: x.to_vec(),
                    });
                }
                let d = self.dim();
                let (v, j, _) = self.eval_map(x);
                let j = Array2::from_shape_vec((d, d), j).expect("d×d");
                (v, j.dot(&frame))
            }
        };
        if !finite(&next) || tangent.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: 0 });
        }
        Ok((next, tangent))
    }

    /// Iterates `spinup` steps from `x0`, then records `n + 1` states.
    pub fn orbit(&self, x0: &[f64], n: usize, spinup: usize) -> Result<Orbit> {
        if n < 1 {
            return Err(Error::config("n", "orbit length must be at least 1"));
        }
        self.check_dim(x0)?;
        let d = self.dim();
        let mut x = x0.to_vec();
        for t in 0..spinup {
            x = self.step(&x).map_err(|e| reindex(e, t))?;
        }
        let mut states = Array2::zeros((n + 1, d));
        states.row_mut(0).assign(&ndarray::ArrayView1::from(&x[..]));
        for t in 0..n {
            x = self.step(&x).map_err(|e| reindex(e, spinup + t))?;
            states.row_mut(t + 1).assign(&ndarray::ArrayView1::from(&x[..]));
        }
        Ok(Orbit {
            states,
            system: self.clone(),
            x0: x0.to_vec(),
        })
    }

    /// A reasonable random initial state inside the domain / basin.
    pub fn sample_initial<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        use std::f64::consts::PI;
        match &self.dynamics {
            Dynamics::TentTilted { .. } | Dynamics::TentPinched { .. } | Dynamics::TentPlucked { .. } => {
                vec![rng.gen_range(0.05..1.95)]
            }
            Dynamics::Baker { .. } => vec![rng.gen_range(0.01..2.0 * PI - 0.01), rng.gen_range(0.01..2.0 * PI - 0.01)],
            Dynamics::Lorenz63 { .. } => vec![
                rng.gen_range(-15.0..15.0),
                rng.gen_range(-20.0..20.0),
                rng.gen_range(5.0..40.0),
            ],
            Dynamics::Rossler { .. } => vec![
                rng.gen_range(-8.0..8.0),
                rng.gen_range(-8.0..8.0),
                rng.gen_range(0.0..1.0),
            ],
            Dynamics::Hyperchaos { .. } => (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            Dynamics::KuramotoSivashinsky(p) => {
                let mut u = p.initial_condition();
                for v in u.iter_mut() {
                    *v += rng.gen_range(-0.01..0.01);
                }
                u
            }
            Dynamics::LinearMap { matrix } | Dynamics::LinearFlow { matrix } => {
                (0..matrix.nrows()).map(|_| rng.gen_range(-1.0..1.0)).collect()
            }
        }
    }
}

fn reindex(e: Error, step: usize) -> Error {
    match e {
        Error::NonFiniteState { .. } => Error::NonFiniteState { step },
        other => other,
    }
}

impl TangentMap for System {
    fn dim(&self) -> usize {
        System::dim(self)
    }

    fn time_per_step(&self) -> f64 {
        self.dt.unwrap_or(1.0)
    }

    fn advance(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.step(x)
    }

    fn advance_tangent(&self, x: &[f64], frame: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        self.step_tangent(x, frame)
    }

    fn jacobian_at(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.jacobian(x)
    }
}

/// `map` followed by the projection onto `system`'s state space, so that model
/// orbits cannot leave a bounded domain. Tangents are passed through unchanged.
pub struct Projected<'a> {
    pub map: &'a dyn TangentMap,
    pub system: &'a System,
}

impl TangentMap for Projected<'_> {
    fn dim(&self) -> usize {
        self.map.dim()
    }

    fn time_per_step(&self) -> f64 {
        self.map.time_per_step()
    }

    fn advance(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.system.project(&self.map.advance(x)?))
    }

    fn advance_tangent(&self, x: &[f64], frame: ArrayView2<f64>) -> Result<(Vec<f64>, Array2<f64>)> {
        let (y, t) = self.map.advance_tangent(x, frame)?;
        Ok((self.system.project(&y), t))
    }

    fn jacobian_at(&self, x: &[f64]) -> Result<Array2<f64>> {
        self.map.jacobian_at(x)
    }

    fn advance_tangent_batch(&self, xs: &[Vec<f64>], frames: &[Array2<f64>]) -> Vec<Result<(Vec<f64>, Array2<f64>)>> {
        self.map
            .advance_tangent_batch(xs, frames)
            .into_iter()
            .map(|r| r.map(|(y, t)| (self.system.project(&y), t)))
            .collect()
    }

    fn advance_batch(&self, xs: &[Vec<f64>]) -> Vec<Result<Vec<f64>>> {
        self.map
            .advance_batch(xs)
            .into_iter()
            .map(|r| r.map(|y| self.system.project(&y)))
            .collect()
    }
}

/// A recorded trajectory: `states[t + 1] = F(states[t])`.
#[derive(Debug, Clone, PartialEq)]
pub struct Orbit {
    /// `(n + 1) × d`, one state per row.
    pub states: Array2<f64>,
    pub system: System,
    pub x0: Vec<f64>,
}

impl Orbit {
    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.states.nrows() == 0
    }

    pub fn state(&self, t: usize) -> Vec<f64> {
        self.states.row(t).to_vec()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn fd_jacobian(sys: &System, x: &[f64], h: f64) -> Array2<f64> {
        let d = x.len();
        let mut j = Array2::zeros((d, d));
        for c in 0..d {
            let mut p = x.to_vec();
            let mut m = x.to_vec();
            p[c] += h;
            m[c] -= h;
            let fp = sys.step(&p).unwrap();
            let fm = sys.step(&m).unwrap();
            for r in 0..d {
                j[[r, c]] = (fp[r] - fm[r]) / (2.0 * h);
            }
        }
        j
    }

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff: f64 = (a - b).iter().map(|v| v * v).sum::<f64>().sqrt();
        let scale: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        diff / scale
    }

    #[test]
    fn lorenz_origin_is_fixed() {
        let sys = System::lorenz63();
        assert_eq!(sys.step(&[0.0, 0.0, 0.0]).unwrap(), vec![0.0, 0.0, 0.0]);
        assert_eq!(sys.vector_field(&[1.0, 1.0, 1.0]).unwrap()[1], 26.0);
    }

    #[test]
    fn tilted_tent_value_and_slope() {
        let sys = System::tent_tilted(0.2);
        assert!((sys.step(&[1.0]).unwrap()[0] - 5.0 / 3.0).abs() < 1e-15);
        for x in [0.1, 0.5, 1.0, 1.19] {
            let j = sys.jacobian(&[x]).unwrap();
            assert!((j[[0, 0]] - 2.0 / 1.2).abs() < 1e-15);
        }
    }

    #[test]
    fn tent_kink_is_reported() {
        let sys = System::tent_tilted(0.2);
        let err = sys.jacobian(&[1.2]).unwrap_err();
        assert!(matches!(err, Error::NonSmoothPoint { .. }));
        assert!(sys.jacobian(&[1.2 + 1e-9]).is_ok());
        let plucked = System::tent_plucked(0.8);
        // f switches pieces at 0.1 (s = 0.8), i.e. x = 0.05 / 8
        assert!(plucked.jacobian(&[0.05 / 8.0]).is_err());
        let baker = System::baker(0.1);
        assert!(baker.jacobian(&[std::f64::consts::PI, 1.0]).is_err());
    }

    #[test]
    fn linear_flow_jacobian_is_step_exponential() {
        let sys = System::linear_flow(array![[-1.0]], 0.1);
        let j = sys.jacobian(&[0.3]).unwrap();
        assert!((j[[0, 0]] - (-0.1f64).exp()).abs() < 1e-7);
        let next = sys.step(&[1.0]).unwrap();
        assert!((next[0] - 0.9048375).abs() < 1e-7);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let systems = vec![
            System::tent_tilted(0.2),
            System::tent_pinched(0.2),
            System::tent_plucked(0.8),
            System::baker(0.1),
            System::lorenz63(),
            System::rossler(),
            System::hyperchaos(),
        ];
        for sys in systems {
            let mut checked = 0;
            while checked < 100 {
                let x = sys.sample_initial(&mut rng);
                let h = 1e-6;
                // stay away from kinks so the stencil sees one branch
                let smooth = (-3..=3).all(|k| {
                    let mut y = x.clone();
                    for v in y.iter_mut() {
                        *v += k as f64 * h;
                    }
                    !sys.near_kink(&y) && sys.eval_is_same_branch(&x, &y)
                });
                if !smooth {
                    continue;
                }
                let j = sys.jacobian(&x).unwrap();
                let fd = fd_jacobian(&sys, &x, h);
                let e = rel_err(&fd, &j);
                assert!(e < 1e-5, "{} at {:?}: rel err {e}", sys.name, x);
                checked += 1;
            }
        }
    }

    impl System {
        fn eval_is_same_branch(&self, x: &[f64], y: &[f64]) -> bool {
            if self.kind() == Kind::OdeFlow {
                return true;
            }
            // a box of perturbations in every coordinate direction
            let (_, _, c0) = self.eval_map(x);
            let d = x.len();
            (0..d).all(|i| {
                [-2e-6, 2e-6].iter().all(|h| {
                    let mut z = y.to_vec();
                    z[i] += h;
                    self.eval_map(&z).2 == c0
                })
            })
        }
    }

    #[test]
    fn ks_step_jacobian_matches_fd() {
        let sys = System::kuramoto_sivashinsky(KsParams::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let x = sys.sample_initial(&mut rng);
        let orbit = sys.orbit(&x, 1, 400).unwrap();
        let x = orbit.state(1);
        let j = sys.jacobian(&x).unwrap();
        let fd = fd_jacobian(&sys, &x, 1e-6);
        assert!(rel_err(&fd, &j) < 1e-6);
    }

    #[test]
    fn maps_stay_in_their_domains() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for s in [0.2, 0.8] {
            for sys in [System::tent_tilted(s), System::tent_pinched(s), System::tent_plucked(s)] {
                for _ in 0..2000 {
                    let x: f64 = rand::Rng::gen_range(&mut rng, 0.0..=2.0);
                    let y = sys.step(&[x]).unwrap()[0];
                    assert!((0.0..=2.0).contains(&y), "{} s={s}: F({x}) = {y}", sys.name);
                }
            }
            let b = System::baker(s);
            for _ in 0..2000 {
                let x = b.sample_initial(&mut rng);
                let y = b.step(&x).unwrap();
                assert!(y.iter().all(|v| (0.0..2.0 * std::f64::consts::PI).contains(v)));
            }
        }
    }

    #[test]
    fn rk4_is_fifth_order_locally() {
        let sys = System::lorenz63();
        let x0 = sys.orbit(&[1.0, 1.0, 20.0], 1, 500).unwrap().state(1);
        let f = sys.field().unwrap();
        // refined reference: 64 substeps
        let reference = |h: f64| {
            let mut x = x0.clone();
            for _ in 0..64 {
                x = flows::rk4_step(f.as_ref(), &x, h / 64.0);
            }
            x
        };
        let err = |h: f64| {
            let one = flows::rk4_step(f.as_ref(), &x0, h);
            crate::linalg::dist(&one, &reference(h))
        };
        let ratio = err(0.02) / err(0.01);
        assert!((24.0..=40.0).contains(&ratio), "ratio {ratio}");
    }

    #[test]
    fn orbit_spinup_composes() {
        let sys = System::lorenz63();
        let x0 = [1.0, 2.0, 3.0];
        let a = sys.orbit(&x0, 50, 20).unwrap();
        let b = sys.orbit(&x0, 70, 0).unwrap();
        for t in 0..=50 {
            assert_eq!(a.state(t), b.state(t + 20));
        }
        let c = sys.orbit(&x0, 70, 0).unwrap();
        assert_eq!(b.states, c.states);
    }

    #[test]
    fn fixed_point_orbit_is_constant() {
        let sys = System::tent_tilted(0.2);
        let o = sys.orbit(&[0.0], 10, 0).unwrap();
        assert!(o.states.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn lorenz_orbit_stays_bounded() {
        let sys = System::lorenz63();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x0 = sys.sample_initial(&mut rng);
        let o = sys.orbit(&x0, 10_000, 0).unwrap();
        assert!(o.states.iter().all(|v| v.is_finite() && v.abs() < 100.0));
    }

    #[test]
    fn blowup_reports_step() {
        let sys = System::linear_map(array![[1e200]]);
        let err = sys.orbit(&[1.0], 5, 0).unwrap_err();
        assert_eq!(err, Error::NonFiniteState { step: 1 });
    }
}
