//! Config-file description of a system: `system = "lorenz63"` plus an optional
//! `[params]` table overriding the defaults.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{Dynamics, KsParams, System};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    #[serde(alias = "name")]
    pub system: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
}

pub const SYSTEM_NAMES: &[&str] = &[
    "tent_tilted",
    "tent_pinched",
    "tent_plucked",
    "baker",
    "lorenz63",
    "rossler",
    "hyperchaos",
    "ks",
];

impl SystemSpec {
    pub fn named(system: &str) -> Self {
        Self {
            system: system.to_string(),
            params: BTreeMap::new(),
            dt: None,
        }
    }

    pub fn with_param(mut self, key: &str, value: f64) -> Self {
        self.params.insert(key.to_string(), value);
        self
    }

    fn take(&self, allowed: &[&str]) -> Result<()> {
        for key in self.params.keys() {
            if !allowed.contains(&key.as_str()) {
                return Err(Error::config(
                    format!("params.{key}"),
                    format!("unknown parameter for {} (expected one of {:?})", self.system, allowed),
                ));
            }
        }
        Ok(())
    }

    fn get(&self, key: &str, default: f64) -> f64 {
        self.params.get(key).copied().unwrap_or(default)
    }

    /// Default Jacobian-loss weight for this system.
    pub fn default_lambda(&self) -> f64 {
        match self.system.as_str() {
            "baker" => 100.0,
            "ks" => 1.0,
            _ => 500.0,
        }
    }

    pub fn build(&self) -> Result<System> {
        let base = match self.system.as_str() {
            "tent_tilted" | "tent_pinched" | "tent_plucked" => {
                let allowed: &[&str] = if self.system == "tent_plucked" { &["s", "n"] } else { &["s"] };
                self.take(allowed)?;
                let s = self.get("s", 0.2);
                let dynamics = match self.system.as_str() {
                    "tent_tilted" => Dynamics::TentTilted { s },
                    "tent_pinched" => Dynamics::TentPinched { s },
                    _ => {
                        let n = self.get("n", 3.0);
                        if n < 0.0 || n.fract() != 0.0 || n > 30.0 {
                            return Err(Error::config("params.n", "n must be an integer in 0..=30"));
                        }
                        Dynamics::TentPlucked { s, n: n as u32 }
                    }
                };
                (dynamics, None)
            }
            "baker" => {
                self.take(&["s"])?;
                (Dynamics::Baker { s: self.get("s", 0.1) }, None)
            }
            "lorenz63" => {
                self.take(&["sigma", "rho", "beta"])?;
                (
                    Dynamics::Lorenz63 {
                        sigma: self.get("sigma", 10.0),
                        rho: self.get("rho", 28.0),
                        beta: self.get("beta", 8.0 / 3.0),
                    },
                    Some(0.01),
                )
            }
            "rossler" => {
                self.take(&["a", "b", "c"])?;
                (
                    Dynamics::Rossler {
                        a: self.get("a", 0.2),
                        b: self.get("b", 0.2),
                        c: self.get("c", 5.7),
                    },
                    Some(0.01),
                )
            }
            "hyperchaos" => {
                self.take(&["a", "b", "c", "d"])?;
                (
                    Dynamics::Hyperchaos {
                        a: self.get("a", 16.0),
                        b: self.get("b", 40.0),
                        c: self.get("c", 20.0),
                        d: self.get("d", 8.0),
                    },
                    Some(0.001),
                )
            }
            "ks" => {
                self.take(&["c", "length", "nodes"])?;
                let d = KsParams::default();
                let nodes = self.get("nodes", d.nodes as f64);
                if nodes < 3.0 || nodes.fract() != 0.0 {
                    return Err(Error::config("params.nodes", "nodes must be an integer >= 3"));
                }
                (
                    Dynamics::KuramotoSivashinsky(KsParams {
                        c: self.get("c", d.c),
                        length: self.get("length", d.length),
                        nodes: nodes as usize,
                    }),
                    Some(0.25),
                )
            }
            other => {
                return Err(Error::config(
                    "system",
                    format!("unknown system {other:?} (expected one of {SYSTEM_NAMES:?})"),
                ))
            }
        };
        let (dynamics, default_dt) = base;
        let dt = match (default_dt, self.dt) {
            (Some(_), Some(dt)) => Some(dt),
            (Some(d), None) => Some(d),
            (None, Some(_)) => return Err(Error::config("dt", format!("{} is a discrete map and takes no dt", self.system))),
            (None, None) => None,
        };
        System::new(self.system.clone(), dynamics, dt)
    }
}
