//! Statistical fidelity: Lyapunov spectra, invariant-measure distances and
//! long-orbit averages.

pub mod compare;
pub mod lyapunov;
pub mod statistics;
pub mod wasserstein;

pub use compare::{compare_model, comparison_csv, truth_reference, CompareConfig, ComparisonRow, TruthReference};
pub use lyapunov::{ensemble_lyapunov, lyapunov_spectrum, LyapunovConfig, LyapunovSpectrum};
pub use statistics::{orbit_statistics, Histogram, OrbitStatistics};
pub use wasserstein::{wasserstein1, wasserstein1_1d, EmpiricalMeasure, W1Method};
