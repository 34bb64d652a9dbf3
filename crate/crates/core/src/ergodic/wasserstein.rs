//! Wasserstein-1 distances between equal-weight point clouds.

use ndarray::{Array1, Array2, ArrayView2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest cloud for which [`W1Method::Auto`] solves the assignment problem exactly.
pub const AUTO_ASSIGNMENT_LIMIT: usize = 2000;
pub const AUTO_PROJECTIONS: usize = 100;

/// An equal-weight sample `points` (`n × d`, one point per row).
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    pub points: Array2<f64>,
}

impl EmpiricalMeasure {
    pub fn new(points: Array2<f64>) -> Result<Self> {
        if points.nrows() == 0 || points.ncols() == 0 {
            return Err(Error::Empty("empirical measure"));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: 0 });
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.nrows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.ncols()
    }

    /// Every `stride`-th point.
    pub fn thinned(&self, stride: usize) -> Self {
        let stride = stride.max(1);
        let idx: Vec<usize> = (0..self.len()).step_by(stride).collect();
        Self {
            points: self.points.select(ndarray::Axis(0), &idx),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum W1Method {
    Exact1D,
    Assignment,
    Sliced { projections: usize, seed: u64 },
    /// `Exact1D` for `d = 1`; `Assignment` for equal counts up to
    /// [`AUTO_ASSIGNMENT_LIMIT`]; otherwise sliced with [`AUTO_PROJECTIONS`].
    Auto,
}

impl W1Method {
    /// The concrete method [`W1Method::Auto`] picks for these clouds.
    pub fn resolve(self, a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> W1Method {
        match self {
            W1Method::Auto if a.dim() == 1 => W1Method::Exact1D,
            W1Method::Auto if a.len() == b.len() && a.len() <= AUTO_ASSIGNMENT_LIMIT => W1Method::Assignment,
            W1Method::Auto => W1Method::Sliced {
                projections: AUTO_PROJECTIONS,
                seed: 0,
            },
            other => other,
        }
    }
}

/// `∫ |F_a − F_b|` for two 1-D samples; for equal sizes this reduces to the
/// mean absolute difference of the sorted samples, which is used directly.
pub fn wasserstein1_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Empty("sample"));
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let total: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(total / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut total = 0.0;
    let mut prev = a[0].min(b[0]);
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        total += (i as f64 / na - j as f64 / nb).abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

fn euclidean(a: ndarray::ArrayView1<f64>, b: ndarray::ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Minimum-cost perfect matching for a square cost matrix by shortest
/// augmenting paths with dual potentials; returns `(total cost, row → column)`.
pub fn solve_assignment(cost: ArrayView2<f64>) -> (f64, Vec<usize>) {
    let n = cost.nrows();
    assert_eq!(n, cost.ncols(), "assignment needs a square cost matrix");
    // 1-based bookkeeping: column 0 is a virtual start node
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut matched_row = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for row in 1..=n {
        matched_row[0] = row;
        let mut j0 = 0;
        let mut min_to = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = matched_row[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if !used[j] {
                    let reduced = cost[[i0 - 1, j - 1]] - u[i0] - v[j];
                    if reduced < min_to[j] {
                        min_to[j] = reduced;
                        way[j] = j0;
                    }
                    if min_to[j] < delta {
                        delta = min_to[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[matched_row[j]] += delta;
                    v[j] -= delta;
                } else {
                    min_to[j] -= delta;
                }
            }
            j0 = j1;
            if matched_row[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            matched_row[j0] = matched_row[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        assignment[matched_row[j] - 1] = j - 1;
    }
    let total = assignment.iter().enumerate().map(|(i, &j)| cost[[i, j]]).sum();
    (total, assignment)
}

fn assignment_w1(a: &EmpiricalMeasure, b: &EmpiricalMeasure) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::UnequalCounts(a.len(), b.len()));
    }
    let n = a.len();
    let mut cost = Array2::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            cost[[i, j]] = euclidean(a.points.row(i), b.points.row(j));
        }
    }
    // summing the matched costs in sorted order makes the result exactly symmetric
    let (_, perm) = solve_assignment(cost.view());
    let mut matched: Vec<f64> = perm.iter().enumerate().map(|(i, &j)| cost[[i, j]]).collect();
    matched.sort_by(f64::total_cmp);
    Ok(matched.iter().sum::<f64>() / n as f64)
}

fn random_direction(rng: &mut ChaCha8Rng, d: usize) -> Array1<f64> {
    loop {
        let v: Array1<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.dot(&v).sqrt();
        if norm > 1e-12 {
            return v / norm;
        }
    }
}

fn sliced_w1(a: &EmpiricalMeasure, b: &EmpiricalMeasure, projections: usize, seed: u64) -> Result<f64> {
    if projections == 0 {
        return Err(Error::config("w1.projections", "need at least one projection"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirs: Vec<Array1<f64>> = (0..projections).map(|_| random_direction(&mut rng, a.dim())).collect();
    let values: Vec<Result<f64>> = dirs
        .par_iter()
        .map(|dir| {
            let pa = a.points.dot(dir);
            let pb = b.points.dot(dir);
            wasserstein1_1d(pa.as_slice().expect("contiguous"), pb.as_slice().expect("contiguous"))
        })
        .collect();
    let mut total = 0.0;
    for v in values {
        total += v?;
    }
    Ok(total / projections as f64)
}

pub fn wasserstein1(a: &EmpiricalMeasure, b: &EmpiricalMeasure, method: W1Method) -> Result<f64> {
    if a.dim() != b.dim() {
        return Err(Error::DimensionMismatch(a.dim(), b.dim()));
    }
    match method.resolve(a, b) {
        W1Method::Exact1D => {
            if a.dim() != 1 {
                return Err(Error::DimensionMismatch(a.dim(), 1));
            }
            wasserstein1_1d(a.points.column(0).to_vec().as_slice(), b.points.column(0).to_vec().as_slice())
        }
        W1Method::Assignment => assignment_w1(a, b),
        W1Method::Sliced { projections, seed } => sliced_w1(a, b, projections, seed),
        W1Method::Auto => unreachable!("resolved above"),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn cloud(a: Array2<f64>) -> EmpiricalMeasure {
        EmpiricalMeasure::new(a).unwrap()
    }

    #[test]
    fn simple_1d_cases() {
        assert_eq!(wasserstein1_1d(&[0.0], &[1.0]).unwrap(), 1.0);
        assert_eq!(wasserstein1_1d(&[0.0, 2.0], &[1.0, 3.0]).unwrap(), 1.0);
        // unequal counts: {0} vs {0, 1}: half the mass moves by 1
        assert!((wasserstein1_1d(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn identical_clouds_are_at_zero() {
        let a = cloud(array![[0.0, 1.0], [2.0, -1.0], [0.5, 0.5]]);
        for m in [
            W1Method::Assignment,
            W1Method::Sliced { projections: 10, seed: 1 },
            W1Method::Auto,
        ] {
            assert_eq!(wasserstein1(&a, &a, m).unwrap(), 0.0);
        }
    }

    #[test]
    fn errors() {
        let a = cloud(array![[0.0, 1.0]]);
        let b = cloud(array![[0.0], [1.0]]);
        assert_eq!(wasserstein1(&a, &b, W1Method::Auto).unwrap_err(), Error::DimensionMismatch(2, 1));
        let c = cloud(array![[0.0, 1.0], [1.0, 1.0]]);
        assert_eq!(wasserstein1(&a, &c, W1Method::Assignment).unwrap_err(), Error::UnequalCounts(1, 2));
    }

    #[test]
    fn assignment_small_known() {
        let cost = array![[4.0, 1.0, 3.0], [2.0, 0.0, 5.0], [3.0, 2.0, 2.0]];
        let (total, perm) = solve_assignment(cost.view());
        assert_eq!(total, 5.0);
        assert_eq!(perm, vec![1, 0, 2]);
    }
}
