//! Training triples `(x_t, F(x_t), dF(x_t))` cut from a single orbit.

use ndarray::{s, Array2, Array3, ArrayView2};

use crate::dynamics::{Orbit, System};
use crate::error::{Error, Result};

/// Paper-default split sizes.
pub const DEFAULT_TRAIN: usize = 10_000;
pub const DEFAULT_TEST: usize = 8_000;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `m × d` inputs.
    pub inputs: Array2<f64>,
    /// `m × d` one-step images `F(inputs[i])`.
    pub targets: Array2<f64>,
    /// `m × d × d` Jacobians `dF(inputs[i])`, when recorded.
    pub jacobians: Option<Array3<f64>>,
    /// True when `targets[i] == inputs[i + 1]`, i.e. rows are consecutive
    /// orbit points (needed by the unrolled loss).
    pub contiguous: bool,
}

impl Dataset {
    pub fn new(inputs: Array2<f64>, targets: Array2<f64>, jacobians: Option<Array3<f64>>) -> Result<Self> {
        if inputs.dim() != targets.dim() {
            return Err(Error::ShapeMismatch(format!(
                "inputs {:?} vs targets {:?}",
                inputs.dim(),
                targets.dim()
            )));
        }
        if let Some(j) = &jacobians {
            let (m, d) = inputs.dim();
            if j.dim() != (m, d, d) {
                return Err(Error::ShapeMismatch(format!("jacobians {:?}, expected {:?}", j.dim(), (m, d, d))));
            }
        }
        let m = inputs.nrows();
        let contiguous = m > 0 && (0..m - 1).all(|i| targets.row(i) == inputs.row(i + 1));
        Ok(Self {
            inputs,
            targets,
            jacobians,
            contiguous,
        })
    }

    /// Pairs consecutive rows of `states`; `jacobians` belong to all rows but the last.
    pub fn from_orbit_states(states: &Array2<f64>, jacobians: Option<Array3<f64>>) -> Result<Self> {
        let n = states.nrows();
        if n < 2 {
            return Err(Error::Empty("orbit with fewer than two states"));
        }
        let inputs = states.slice(s![..n - 1, ..]).to_owned();
        let targets = states.slice(s![1.., ..]).to_owned();
        Dataset::new(inputs, targets, jacobians)
    }

    /// The orbit behind a contiguous dataset: every input plus the last target.
    pub fn orbit_states(&self) -> Option<Array2<f64>> {
        if !self.contiguous {
            return None;
        }
        let m = self.len();
        let mut out = Array2::zeros((m + 1, self.dim()));
        out.slice_mut(s![..m, ..]).assign(&self.inputs);
        out.row_mut(m).assign(&self.targets.row(m - 1));
        Some(out)
    }

    pub fn len(&self) -> usize {
        self.inputs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.inputs.ncols()
    }

    pub fn jacobian(&self, i: usize) -> Option<ArrayView2<'_, f64>> {
        self.jacobians.as_ref().map(|j| j.slice(s![i, .., ..]))
    }

    /// Rows `range` as a new dataset.
    pub fn slice(&self, start: usize, end: usize) -> Dataset {
        Dataset {
            inputs: self.inputs.slice(s![start..end, ..]).to_owned(),
            targets: self.targets.slice(s![start..end, ..]).to_owned(),
            jacobians: self.jacobians.as_ref().map(|j| j.slice(s![start..end, .., ..]).to_owned()),
            contiguous: self.contiguous,
        }
    }

    /// Rows picked by index (order preserved); the result is not contiguous.
    pub fn select(&self, idx: &[usize]) -> Dataset {
        let inputs = self.inputs.select(ndarray::Axis(0), idx);
        let targets = self.targets.select(ndarray::Axis(0), idx);
        let jacobians = self.jacobians.as_ref().map(|j| j.select(ndarray::Axis(0), idx));
        Dataset {
            inputs,
            targets,
            jacobians,
            contiguous: false,
        }
    }

    /// First `n_train` pairs for training, the following `n_test` for testing.
    pub fn split(&self, n_train: usize, n_test: usize) -> Result<(Dataset, Dataset)> {
        if n_train + n_test > self.len() {
            return Err(Error::config(
                "split",
                format!("{n_train} + {n_test} pairs requested, dataset has {}", self.len()),
            ));
        }
        Ok((self.slice(0, n_train), self.slice(n_train, n_train + n_test)))
    }

    /// Concatenates a dataset with another of the same dimension.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch(self.dim(), other.dim()));
        }
        let inputs = ndarray::concatenate![ndarray::Axis(0), self.inputs, other.inputs];
        let targets = ndarray::concatenate![ndarray::Axis(0), self.targets, other.targets];
        let jacobians = match (&self.jacobians, &other.jacobians) {
            (Some(a), Some(b)) => Some(ndarray::concatenate![ndarray::Axis(0), *a, *b]),
            _ => None,
        };
        let mut out = Dataset::new(inputs, targets, jacobians)?;
        out.contiguous = self.contiguous && other.contiguous && out.contiguous;
        Ok(out)
    }
}

/// Pairs consecutive orbit states; with `with_jacobians` also stores `dF(x_t)`.
pub fn make_dataset(system: &System, orbit: &Orbit, with_jacobians: bool) -> Result<Dataset> {
    let n = orbit.len();
    if n < 2 {
        return Err(Error::Empty("orbit with fewer than two states"));
    }
    if orbit.states.ncols() != system.dim() {
        return Err(Error::DimensionMismatch(orbit.states.ncols(), system.dim()));
    }
    let d = system.dim();
    let inputs = orbit.states.slice(s![..n - 1, ..]).to_owned();
    let targets = orbit.states.slice(s![1.., ..]).to_owned();
    let jacobians = if with_jacobians {
        let mut j = Array3::zeros((n - 1, d, d));
        for t in 0..n - 1 {
            let jt = system.jacobian(&orbit.state(t))?;
            j.slice_mut(s![t, .., ..]).assign(&jt);
        }
        Some(j)
    } else {
        None
    };
    Dataset::new(inputs, targets, jacobians)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn three_states_give_two_pairs() {
        let sys = System::lorenz63();
        let o = sys.orbit(&[1.0, 1.0, 1.0], 2, 0).unwrap();
        let ds = make_dataset(&sys, &o, false).unwrap();
        assert_eq!(Dataset::from_orbit_states(&ds.orbit_states().unwrap(), None).unwrap(), ds);
        assert_eq!(ds.len(), 2);
        assert!(ds.contiguous);
        for i in 0..2 {
            assert_eq!(ds.targets.row(i).to_vec(), sys.step(&ds.inputs.row(i).to_vec()).unwrap());
        }
    }

    #[test]
    fn tent_jacobians_are_branch_slopes() {
        let sys = System::tent_tilted(0.2);
        let o = sys.orbit(&[0.123], 500, 0).unwrap();
        let ds = make_dataset(&sys, &o, true).unwrap();
        for i in 0..ds.len() {
            let x = ds.inputs[[i, 0]];
            let expected = if x < 1.2 { 2.0 / 1.2 } else { -2.0 / 0.8 };
            assert_eq!(ds.jacobian(i).unwrap()[[0, 0]], expected);
        }
    }

    #[test]
    fn split_keeps_order() {
        let sys = System::tent_tilted(0.2);
        let o = sys.orbit(&[0.3], 30, 0).unwrap();
        let ds = make_dataset(&sys, &o, false).unwrap();
        let (tr, te) = ds.split(20, 10).unwrap();
        assert_eq!(tr.len(), 20);
        assert_eq!(te.inputs.row(0), ds.inputs.row(20));
        assert!(ds.split(25, 10).is_err());
    }
}
