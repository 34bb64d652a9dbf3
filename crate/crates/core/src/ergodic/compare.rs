//! Side-by-side statistics of a ground-truth system and learned models.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lyapunov::{ensemble_lyapunov, LyapunovConfig, LyapunovSpectrum};
use super::statistics::{coordinate_ranges, orbit_statistics, OrbitStatistics, DEFAULT_BINS};
use super::wasserstein::{wasserstein1, EmpiricalMeasure, W1Method};
use crate::dynamics::{trajectory, Projected, System, TangentMap};
use crate::error::{Error, Result};

/// Default averaging window in time units.
pub const DEFAULT_HORIZON: f64 = 500.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CompareConfig {
    /// Orbit length in time units (iterates for maps).
    pub horizon: f64,
    /// Steps discarded before recording the truth orbit.
    pub spinup: usize,
    pub lyapunov: LyapunovConfig,
    pub ensemble: usize,
    pub w1: W1Method,
    /// Keep every `w1_stride`-th orbit point when building measures.
    pub w1_stride: usize,
    pub bins: usize,
    pub seed: u64,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            spinup: 1_000,
            lyapunov: LyapunovConfig::default(),
            ensemble: 20,
            w1: W1Method::Auto,
            w1_stride: 1,
            bins: DEFAULT_BINS,
            seed: 0,
        }
    }
}

impl CompareConfig {
    pub fn horizon_steps(&self, time_per_step: f64) -> usize {
        (self.horizon / time_per_step).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0 && self.horizon.is_finite()) {
            return Err(Error::config("compare.horizon", "must be positive"));
        }
        if self.ensemble == 0 {
            return Err(Error::config("compare.ensemble", "must be at least 1"));
        }
        Ok(())
    }
}

/// Everything about the truth needed to score models against it.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthReference {
    pub system: System,
    /// Long truth orbit; its first row is the shared model start.
    pub orbit: Array2<f64>,
    pub stats: OrbitStatistics,
    pub ranges: Vec<(f64, f64)>,
    pub spectrum: LyapunovSpectrum,
    /// Initial states of the Lyapunov ensemble, reused for models.
    pub ensemble_starts: Vec<Vec<f64>>,
}

impl TruthReference {
    pub fn measure(&self, stride: usize) -> Result<EmpiricalMeasure> {
        Ok(EmpiricalMeasure::new(self.orbit.clone())?.thinned(stride))
    }
}

pub fn truth_reference(system: &System, x0: &[f64], cfg: &CompareConfig) -> Result<TruthReference> {
    cfg.validate()?;
    let n = cfg.horizon_steps(system.dt.unwrap_or(1.0));
    let orbit = trajectory(system, x0, n, cfg.spinup)?;
    let ranges = coordinate_ranges(orbit.view());
    let stats = orbit_statistics(orbit.view(), cfg.bins, Some(&ranges))?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut idx: Vec<usize> = (0..orbit.nrows()).collect();
    idx.shuffle(&mut rng);
    let ensemble_starts: Vec<Vec<f64>> = idx.iter().take(cfg.ensemble).map(|&i| orbit.row(i).to_vec()).collect();
    let spectrum = ensemble_lyapunov(system, &ensemble_starts, &cfg.lyapunov)?;
    Ok(TruthReference {
        system: system.clone(),
        orbit,
        stats,
        ranges,
        spectrum,
        ensemble_starts,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub loss: String,
    #[serde(rename = "W1")]
    pub w1: f64,
    #[serde(rename = "LE_diff")]
    pub le_diff: f64,
    pub mean_diff: f64,
    pub w1_method: W1Method,
    pub spectrum: LyapunovSpectrum,
    pub stats: OrbitStatistics,
}

/// Scores `model` against `truth`: the model orbit starts from the truth
/// orbit's first state, and its spectrum uses the model's own Jacobian along
/// its own orbits from the truth ensemble's starts. Model iterates are
/// projected onto the truth's state space.
pub fn compare_model(
    truth: &TruthReference,
    name: &str,
    loss: &str,
    model: &dyn TangentMap,
    cfg: &CompareConfig,
) -> Result<ComparisonRow> {
    if model.dim() != truth.orbit.ncols() {
        return Err(Error::DimensionMismatch(model.dim(), truth.orbit.ncols()));
    }
    let model = &Projected {
        map: model,
        system: &truth.system,
    };
    let n = truth.orbit.nrows() - 1;
    let x0 = truth.orbit.row(0).to_vec();
    let orbit = trajectory(model, &x0, n, 0)?;
    let stats = orbit_statistics(orbit.view(), cfg.bins, Some(&truth.ranges))?;

    let a = truth.measure(cfg.w1_stride)?;
    let b = EmpiricalMeasure::new(orbit)?.thinned(cfg.w1_stride);
    let method = cfg.w1.resolve(&a, &b);
    let w1 = wasserstein1(&a, &b, method)?;

    let spectrum = ensemble_lyapunov(model, &truth.ensemble_starts, &cfg.lyapunov)?;
    let mean_diff = truth
        .stats
        .mean
        .iter()
        .zip(&stats.mean)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    Ok(ComparisonRow {
        model: name.to_string(),
        loss: loss.to_string(),
        w1,
        le_diff: truth.spectrum.distance(&spectrum),
        mean_diff,
        w1_method: method,
        spectrum,
        stats,
    })
}

/// `model,loss,W1,LE_diff,mean_diff`.
pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = String::from("model,loss,W1,LE_diff,mean_diff\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{},{}\n", r.model, r.loss, r.w1, r.le_diff, r.mean_diff));
    }
    out
}
