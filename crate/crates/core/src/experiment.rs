//! Per-system defaults tying data generation, model construction and training together.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_dataset, Dataset, DEFAULT_TEST, DEFAULT_TRAIN};
use crate::dynamics::{Dynamics, Kind, Orbit, System};
use crate::error::{Error, Result};
use crate::network::{Activation, MapForm, Mlp, MlpModel, Normalization};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormChoice {
    /// `Direct` for maps, `Euler` at the system step for flows.
    Auto,
    Direct,
    Euler,
    Rk4,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub width: usize,
    pub depth: usize,
    pub activation: Activation,
    pub skip: bool,
    #[serde(default = "auto")]
    pub form: FormChoice,
}

fn auto() -> FormChoice {
    FormChoice::Auto
}

impl ModelSpec {
    /// Width and depth per system; residual ReLU networks except for KS.
    pub fn for_system(system: &System) -> Self {
        let resnet = |width, depth| ModelSpec {
            width,
            depth,
            activation: Activation::Relu,
            skip: true,
            form: FormChoice::Auto,
        };
        match system.dynamics {
            Dynamics::TentTilted { .. } | Dynamics::TentPinched { .. } | Dynamics::TentPlucked { .. } => resnet(256, 2),
            Dynamics::Lorenz63 { .. } => resnet(512, 5),
            Dynamics::KuramotoSivashinsky(_) => ModelSpec {
                width: 512,
                depth: 3,
                activation: Activation::Gelu,
                skip: false,
                form: FormChoice::Auto,
            },
            _ => resnet(512, 3),
        }
    }

    pub fn map_form(&self, system: &System) -> Result<MapForm> {
        let dt = system.dt;
        Ok(match (self.form, dt) {
            (FormChoice::Auto, None) | (FormChoice::Direct, _) => MapForm::Direct,
            (FormChoice::Auto, Some(dt)) | (FormChoice::Euler, Some(dt)) => MapForm::Euler { dt },
            (FormChoice::Rk4, Some(dt)) => MapForm::Rk4 { dt },
            (FormChoice::Euler | FormChoice::Rk4, None) => {
                return Err(Error::config("model.form", "vector-field forms need a flow with a time step"))
            }
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.depth == 0 {
            return Err(Error::config("model", "width and depth must be positive"));
        }
        Ok(())
    }
}

/// A freshly initialized model for `system` with normalization fitted on `train`.
pub fn build_model(system: &System, spec: &ModelSpec, train: &Dataset, seed: u64) -> Result<MlpModel> {
    spec.validate()?;
    let d = system.dim();
    if train.dim() != d {
        return Err(Error::DimensionMismatch(train.dim(), d));
    }
    let form = spec.map_form(system)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let net = Mlp::new(d, spec.width, spec.depth, d, spec.activation, spec.skip, &mut rng);
    let mut model = MlpModel::new(net, form)?;
    model.norm = Normalization::fit(train, form);
    Ok(model)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSpec {
    pub n_train: usize,
    pub n_test: usize,
    pub spinup: usize,
    pub seed: u64,
    /// Initial state; drawn from `sample_initial` with `seed` when absent.
    pub x0: Option<Vec<f64>>,
    pub jacobians: bool,
}

impl Default for DataSpec {
    fn default() -> Self {
        Self {
            n_train: DEFAULT_TRAIN,
            n_test: DEFAULT_TEST,
            spinup: 1_000,
            seed: 0,
            x0: None,
            jacobians: true,
        }
    }
}

/// One orbit of `n_train + n_test` steps, split into consecutive train and test sets.
pub fn simulate(system: &System, spec: &DataSpec) -> Result<(Orbit, Dataset, Dataset)> {
    let x0 = match &spec.x0 {
        Some(x) => x.clone(),
        None => system.sample_initial(&mut ChaCha8Rng::seed_from_u64(spec.seed)),
    };
    let total = spec.n_train + spec.n_test;
    if spec.n_train == 0 {
        return Err(Error::config("data.n_train", "must be positive"));
    }
    // an orbit hitting a kink has no Jacobian there; nudge the start and retry
    let mut x = x0;
    for _ in 0..100 {
        let orbit = system.orbit(&x, total, spec.spinup)?;
        match make_dataset(system, &orbit, spec.jacobians) {
            Ok(data) => {
                let (train, test) = data.split(spec.n_train, spec.n_test)?;
                return Ok((orbit, train, test));
            }
            Err(Error::NonSmoothPoint { .. }) if system.kind() == Kind::DiscreteMap => {
                x.iter_mut().for_each(|v| *v += 1e-9);
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::NonSmoothPoint {
        system: system.name.clone(),
        x,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes_and_dimension() {
        let sys = System::tent_tilted(0.2);
        let spec = DataSpec {
            n_train: 100,
            n_test: 80,
            ..DataSpec::default()
        };
        let (orbit, train, test) = simulate(&sys, &spec).unwrap();
        assert_eq!((train.len(), test.len(), train.dim()), (100, 80, 1));
        assert_eq!(orbit.len(), 181);
        assert_eq!(simulate(&sys, &spec).unwrap().1, train);
    }

    #[test]
    fn forms_follow_system_kind() {
        let lorenz = System::lorenz63();
        let spec = ModelSpec::for_system(&lorenz);
        assert_eq!(spec.map_form(&lorenz).unwrap(), MapForm::Euler { dt: 0.01 });
        let tent = System::tent_tilted(0.2);
        let bad = ModelSpec {
            form: FormChoice::Rk4,
            ..ModelSpec::for_system(&tent)
        };
        assert!(bad.map_form(&tent).is_err());
    }
}
