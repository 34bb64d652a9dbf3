//! Time averages and fixed-bin histograms of recorded orbits.

use ndarray::{ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 100;

/// Uniform bins on `[lo, hi]`; samples outside land in the under/overflow counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<u64>,
    pub underflow: u64,
    pub overflow: u64,
}

impl Histogram {
    pub fn new(lo: f64, hi: f64, bins: usize) -> Result<Self> {
        if bins == 0 {
            return Err(Error::config("bins", "need at least one bin"));
        }
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::config("bins.range", format!("invalid range [{lo}, {hi}]")));
        }
        Ok(Self {
            lo,
            hi,
            counts: vec![0; bins],
            underflow: 0,
            overflow: 0,
        })
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins() as f64
    }

    pub fn add(&mut self, v: f64) {
        if v < self.lo {
            self.underflow += 1;
        } else if v > self.hi {
            self.overflow += 1;
        } else if self.hi == self.lo {
            self.counts[0] += 1;
        } else {
            let b = ((v - self.lo) / self.width()) as usize;
            let last = self.bins() - 1;
            self.counts[b.min(last)] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.underflow + self.overflow
    }

    pub fn edges(&self, b: usize) -> (f64, f64) {
        let w = self.width();
        (self.lo + b as f64 * w, self.lo + (b + 1) as f64 * w)
    }

    /// Probability density per bin, normalized by all samples (including out-of-range ones).
    pub fn density(&self) -> Vec<f64> {
        let total = self.total().max(1) as f64;
        let w = if self.width() > 0.0 { self.width() } else { 1.0 };
        self.counts.iter().map(|&c| c as f64 / (total * w)).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OrbitStatistics {
    pub mean: Vec<f64>,
    /// Componentwise population variance.
    pub variance: Vec<f64>,
    pub histograms: Vec<Histogram>,
}

/// Per-coordinate `(min, max)` over the rows of `states`.
pub fn coordinate_ranges(states: ArrayView2<f64>) -> Vec<(f64, f64)> {
    states
        .axis_iter(Axis(1))
        .map(|col| {
            col.iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)))
        })
        .collect()
}

/// Mean, variance and histograms of the rows of `states`. Bins default to
/// each coordinate's own range when `ranges` is `None`.
pub fn orbit_statistics(states: ArrayView2<f64>, bins: usize, ranges: Option<&[(f64, f64)]>) -> Result<OrbitStatistics> {
    let (n, d) = states.dim();
    if n < 2 {
        return Err(Error::Empty("orbit with at least two states"));
    }
    let own;
    let ranges = match ranges {
        Some(r) if r.len() != d => return Err(Error::DimensionMismatch(r.len(), d)),
        Some(r) => r,
        None => {
            own = coordinate_ranges(states);
            &own[..]
        }
    };
    let mut mean = Vec::with_capacity(d);
    let mut variance = Vec::with_capacity(d);
    let mut histograms = Vec::with_capacity(d);
    for (j, col) in states.axis_iter(Axis(1)).enumerate() {
        let m = col.iter().sum::<f64>() / n as f64;
        let var = col.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        let mut h = Histogram::new(ranges[j].0, ranges[j].1, bins)?;
        col.iter().for_each(|&v| h.add(v));
        mean.push(m);
        variance.push(var);
        histograms.push(h);
    }
    Ok(OrbitStatistics {
        mean,
        variance,
        histograms,
    })
}

/// Plot-ready CSV for one coordinate: bin edges and the density of every
/// labelled histogram (all must share the same bins).
pub fn histogram_csv(labels: &[&str], histograms: &[&Histogram]) -> Result<String> {
    let first = histograms.first().ok_or(Error::Empty("histograms"))?;
    if labels.len() != histograms.len() {
        return Err(Error::DimensionMismatch(labels.len(), histograms.len()));
    }
    if histograms
        .iter()
        .any(|h| h.bins() != first.bins() || h.lo != first.lo || h.hi != first.hi)
    {
        return Err(Error::ShapeMismatch("histograms do not share bins".into()));
    }
    let densities: Vec<Vec<f64>> = histograms.iter().map(|h| h.density()).collect();
    let mut out = String::from("bin_left,bin_right");
    for l in labels {
        out.push(',');
        out.push_str(l);
    }
    out.push('\n');
    for b in 0..first.bins() {
        let (lo, hi) = first.edges(b);
        out.push_str(&format!("{lo},{hi}"));
        for d in &densities {
            out.push_str(&format!(",{}", d[b]));
        }
        out.push('\n');
    }
    Ok(out)
}
