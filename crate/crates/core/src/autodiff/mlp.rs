//! Fully connected classifier used as the reference model.
//!
//! Parameters live in a [`ParamSet`] with two modules per layer:
//! `layer{i}.weight` (`in × out`, row-major) and `layer{i}.bias` (`out`).
//! The penultimate activations are the feature extractor output.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::tape::{Tape, Var};
use crate::error::{Error, Result};
use crate::vector::{Module, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
        })
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(Error::Config(format!("unknown activation `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    /// `[input, hidden..., classes]`.
    pub widths: Vec<usize>,
    pub activation: Activation,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let spec = Self { widths, activation };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::Config(
                "an MLP needs at least one hidden layer".into(),
            ));
        }
        if self.widths.contains(&0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn num_classes(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Width of the penultimate layer.
    pub fn feature_dim(&self) -> usize {
        self.widths[self.widths.len() - 2]
    }

    pub fn num_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Module names and lengths in storage order.
    pub fn layout(&self) -> Vec<(String, usize)> {
        let mut out = Vec::new();
        for (i, w) in self.widths.windows(2).enumerate() {
            out.push((format!("layer{i}.weight"), w[0] * w[1]));
            out.push((format!("layer{i}.bias"), w[1]));
        }
        out
    }

    /// Gaussian weights scaled by `1/√fan_in`, zero biases.
    pub fn init<R: Rng>(&self, rng: &mut R) -> ParamSet {
        let mut modules = Vec::new();
        for (i, w) in self.widths.windows(2).enumerate() {
            let std = 1.0 / (w[0] as f64).sqrt();
            let weights = (0..w[0] * w[1])
                .map(|_| std * rng.sample::<f64, _>(StandardNormal))
                .collect();
            modules.push(Module::new(format!("layer{i}.weight"), weights));
            modules.push(Module::new(format!("layer{i}.bias"), vec![0.0; w[1]]));
        }
        ParamSet::new(modules).expect("layout is valid")
    }

    /// Checks that `params` has exactly this network's layout.
    pub fn check_params(&self, params: &ParamSet) -> Result<()> {
        let layout = self.layout();
        if layout.len() != params.num_modules() {
            return Err(Error::ModuleCount {
                expected: layout.len(),
                found: params.num_modules(),
            });
        }
        for (position, ((name, len), m)) in layout.iter().zip(params.modules()).enumerate() {
            if &m.name != name {
                return Err(Error::ModuleMismatch {
                    position,
                    expected: name.clone(),
                    found: m.name.clone(),
                });
            }
            if m.len() != *len {
                return Err(Error::ShapeMismatch {
                    module: name.clone(),
                    expected: *len,
                    found: m.len(),
                });
            }
        }
        Ok(())
    }

    /// Returns `(features, logits)` for one input.
    pub fn forward_with_features(&self, params: &ParamSet, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mods = params.modules();
        let last = self.num_layers() - 1;
        let mut h = x.to_vec();
        let mut features = Vec::new();
        for (l, w) in self.widths.windows(2).enumerate() {
            let (inp, out) = (w[0], w[1]);
            let weight = &mods[2 * l].values;
            let bias = &mods[2 * l + 1].values;
            let mut z = bias.clone();
            for (i, &hi) in h.iter().enumerate().take(inp) {
                if hi == 0.0 {
                    continue;
                }
                for (zj, wj) in z.iter_mut().zip(&weight[i * out..(i + 1) * out]) {
                    *zj += hi * wj;
                }
            }
            if l < last {
                z.iter_mut().for_each(|v| *v = self.activation.apply(*v));
                if l + 1 == last {
                    features = z.clone();
                }
            }
            h = z;
        }
        (features, h)
    }

    pub fn forward(&self, params: &ParamSet, x: &[f64]) -> Vec<f64> {
        self.forward_with_features(params, x).1
    }

    /// Penultimate activations (input to the final linear layer).
    pub fn features(&self, params: &ParamSet, x: &[f64]) -> Vec<f64> {
        self.forward_with_features(params, x).0
    }

    pub fn predict(&self, params: &ParamSet, x: &[f64]) -> usize {
        argmax(&self.forward(params, x))
    }

    /// Batched forward on a tape. `modules` holds one variable per parameter
    /// module in layout order; `x` is a `B × d` matrix.
    pub fn forward_tape(&self, tape: &mut Tape, modules: &[Var], x: Var) -> Var {
        let last = self.num_layers() - 1;
        let mut h = x;
        for (l, w) in self.widths.windows(2).enumerate() {
            let weight = tape.reshape(modules[2 * l], w[0], w[1]);
            let z = tape.matmul(h, weight);
            let z = tape.add_row(z, modules[2 * l + 1]);
            h = if l < last {
                match self.activation {
                    Activation::Tanh => tape.tanh(z),
                    Activation::Relu => tape.relu(z),
                }
            } else {
                z
            };
        }
        h
    }
}

/// Index of the largest entry; ties resolve to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}
