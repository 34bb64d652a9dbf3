//! Lyapunov spectra by repeated QR re-orthonormalization of a tangent frame.

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::dynamics::TangentMap;
use crate::error::{Error, Result};
use crate::linalg::qr_thin;

/// `|R_ii|` below this (or non-finite) counts as a collapsed frame.
pub const DEGENERATE_DIAGONAL: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LyapunovConfig {
    pub steps: usize,
    /// Number of exponents (leading tangent directions).
    pub exponents: usize,
    pub spinup: usize,
    pub reorth_every: usize,
}

impl Default for LyapunovConfig {
    fn default() -> Self {
        Self {
            steps: 30_000,
            exponents: 3,
            spinup: 1_000,
            reorth_every: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LyapunovSpectrum {
    /// Descending; per unit time (per iterate for maps).
    pub exponents: Vec<f64>,
    /// Population standard deviation across ensemble members.
    pub ensemble_std: Vec<f64>,
    pub steps: usize,
    pub ensemble_size: usize,
    /// Members that failed, as `(index, error message)`.
    #[serde(default)]
    pub failures: Vec<(usize, String)>,
}

impl LyapunovSpectrum {
    /// Euclidean distance over the shared leading exponents.
    pub fn distance(&self, other: &LyapunovSpectrum) -> f64 {
        self.exponents
            .iter()
            .zip(&other.exponents)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }

    pub fn sum(&self) -> f64 {
        self.exponents.iter().sum()
    }

    pub fn positive_count(&self) -> usize {
        self.exponents.iter().filter(|&&v| v > 0.0).count()
    }
}

fn validate(map: &dyn TangentMap, cfg: &LyapunovConfig) -> Result<()> {
    if cfg.exponents == 0 || cfg.exponents > map.dim() {
        return Err(Error::config(
            "lyapunov.exponents",
            format!("need 1 ≤ k ≤ d = {}, got {}", map.dim(), cfg.exponents),
        ));
    }
    if cfg.steps == 0 || cfg.reorth_every == 0 {
        return Err(Error::config("lyapunov", "steps and reorth_every must be positive"));
    }
    Ok(())
}

struct Member {
    state: Vec<f64>,
    frame: Array2<f64>,
    log_sums: Vec<f64>,
}

fn reorthonormalize(member: &mut Member, step: usize) -> Result<()> {
    let (q, r) = qr_thin(member.frame.view());
    for (i, sum) in member.log_sums.iter_mut().enumerate() {
        let v = r[[i, i]].abs();
        if !v.is_finite() || v < DEGENERATE_DIAGONAL {
            return Err(Error::DegenerateFrame { step, value: v });
        }
        *sum += v.ln();
    }
    member.frame = q;
    Ok(())
}

/// Spectrum from a single initial state.
pub fn lyapunov_spectrum(map: &dyn TangentMap, x0: &[f64], cfg: &LyapunovConfig) -> Result<LyapunovSpectrum> {
    let (mut spectra, mut errors) = run_members(map, &[x0.to_vec()], cfg)?;
    if let Some(e) = errors.pop().flatten() {
        return Err(e);
    }
    let exponents = spectra.pop().flatten().expect("member succeeded");
    Ok(LyapunovSpectrum {
        ensemble_std: vec![0.0; exponents.len()],
        exponents,
        steps: cfg.steps,
        ensemble_size: 1,
        failures: Vec::new(),
    })
}

/// Runs every initial state in lock step (so batched models evaluate all members
/// in one call per step) and averages the resulting spectra. Members that fail
/// are recorded in `failures`; the call fails only when all of them fail.
pub fn ensemble_lyapunov(map: &dyn TangentMap, x0s: &[Vec<f64>], cfg: &LyapunovConfig) -> Result<LyapunovSpectrum> {
    let (spectra, errors) = run_members(map, x0s, cfg)?;
    let k = cfg.exponents;
    let spectra: Vec<Vec<f64>> = spectra.into_iter().flatten().collect();
    let failures: Vec<(usize, String)> = errors
        .iter()
        .enumerate()
        .filter_map(|(i, e)| e.as_ref().map(|e| (i, e.to_string())))
        .collect();
    if spectra.is_empty() {
        return Err(Error::EnsembleFailed {
            members: x0s.len(),
            first: failures.first().map(|f| f.1.clone()).unwrap_or_default(),
        });
    }
    let n = spectra.len() as f64;
    let mean: Vec<f64> = (0..k).map(|j| spectra.iter().map(|s| s[j]).sum::<f64>() / n).collect();
    let std: Vec<f64> = (0..k)
        .map(|j| (spectra.iter().map(|s| (s[j] - mean[j]).powi(2)).sum::<f64>() / n).sqrt())
        .collect();
    Ok(LyapunovSpectrum {
        exponents: mean,
        ensemble_std: std,
        steps: cfg.steps,
        ensemble_size: spectra.len(),
        failures,
    })
}

/// Per-member spectra (sorted descending) or the member's first error.
#[allow(clippy::type_complexity)]
fn run_members(map: &dyn TangentMap, x0s: &[Vec<f64>], cfg: &LyapunovConfig) -> Result<(Vec<Option<Vec<f64>>>, Vec<Option<Error>>)> {
    validate(map, cfg)?;
    if x0s.is_empty() {
        return Err(Error::Empty("ensemble"));
    }
    let d = map.dim();
    let k = cfg.exponents;
    let eye = Array2::<f64>::eye(d).slice(s![.., ..k]).to_owned();
    let mut members: Vec<Option<Member>> = Vec::with_capacity(x0s.len());
    let mut first_error: Vec<Option<Error>> = vec![None; x0s.len()];
    for (i, x0) in x0s.iter().enumerate() {
        if x0.len() != d {
            first_error[i] = Some(Error::DimensionMismatch(x0.len(), d));
            members.push(None);
        } else {
            members.push(Some(Member {
                state: x0.clone(),
                frame: eye.clone(),
                log_sums: vec![0.0; k],
            }));
        }
    }

    let active = |members: &Vec<Option<Member>>| -> Vec<usize> {
        members.iter().enumerate().filter(|(_, m)| m.is_some()).map(|(i, _)| i).collect()
    };

    for t in 0..cfg.spinup {
        let idx = active(&members);
        if idx.is_empty() {
            break;
        }
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| members[i].as_ref().expect("active").state.clone()).collect();
        for (&i, res) in idx.iter().zip(map.advance_batch(&xs)) {
            match res {
                Ok(x) => members[i].as_mut().expect("active").state = x,
                Err(e) => {
                    first_error[i] = Some(reindex(e, t));
                    members[i] = None;
                }
            }
        }
    }

    for t in 0..cfg.steps {
        let idx = active(&members);
        if idx.is_empty() {
            break;
        }
        let xs: Vec<Vec<f64>> = idx.iter().map(|&i| members[i].as_ref().expect("active").state.clone()).collect();
        let frames: Vec<Array2<f64>> = idx.iter().map(|&i| members[i].as_ref().expect("active").frame.clone()).collect();
        let results = map.advance_tangent_batch(&xs, &frames);
        let reorth = (t + 1) % cfg.reorth_every == 0 || t + 1 == cfg.steps;
        for (&i, res) in idx.iter().zip(results) {
            let outcome = res.map_err(|e| reindex(e, cfg.spinup + t)).and_then(|(x, frame)| {
                let m = members[i].as_mut().expect("active");
                m.state = x;
                m.frame = frame;
                if reorth {
                    reorthonormalize(m, t)?;
                }
                Ok(())
            });
            if let Err(e) = outcome {
                first_error[i] = Some(e);
                members[i] = None;
            }
        }
    }

    let time = cfg.steps as f64 * map.time_per_step();
    let spectra = members
        .iter()
        .map(|m| {
            m.as_ref().map(|m| {
                let mut ex: Vec<f64> = m.log_sums.iter().map(|s| s / time).collect();
                ex.sort_by(|a, b| b.total_cmp(a));
                ex
            })
        })
        .collect();
    Ok((spectra, first_error))
}

fn reindex(e: Error, step: usize) -> Error {
    match e {
        Error::NonFiniteState { .. } => Error::NonFiniteState { step },
        other => other,
    }
}
