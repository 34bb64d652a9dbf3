//! Learning chaotic maps from orbit data and auditing whether the learned maps
//! reproduce the statistics of the true dynamics.
//!
//! Pipeline: [`dynamics`] produces ground-truth orbits and Jacobians, [`network`]
//! and [`training`] fit neural surrogates under state or Jacobian-matching
//! losses, [`ergodic`] compares Lyapunov spectra and invariant measures, and
//! [`shadowing`] searches for true orbits near a model orbit.

pub mod data;
pub mod dynamics;
pub mod ergodic;
pub mod error;
pub mod experiment;
pub mod io;
pub mod linalg;
pub mod network;
pub mod shadowing;
pub mod training;

pub use data::{make_dataset, Dataset};
pub use dynamics::{Kind, Orbit, System, SystemSpec, TangentMap};
pub use error::{Error, Result};
