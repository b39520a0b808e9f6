//! Supervised training of the reference model and accuracy evaluation.

use rand::Rng;

use crate::autodiff::mlp::MlpSpec;
use crate::autodiff::tape::Tape;
use crate::error::{Error, Result};
use crate::harness::synth::Dataset;
use crate::optim::Adam;
use crate::vector::{Module, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    Sgd,
    #[default]
    Adam,
}

impl std::str::FromStr for Optimizer {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd" => Ok(Optimizer::Sgd),
            "adam" => Ok(Optimizer::Adam),
            other => Err(Error::Config(format!("unknown optimizer `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr: f64,
    pub optimizer: Optimizer,
}

/// Mean cross-entropy of a batch and its gradient per module.
pub fn cross_entropy_grad(
    spec: &MlpSpec,
    params: &ParamSet,
    x: &[&[f64]],
    y: &[usize],
) -> Result<(f64, Vec<Vec<f64>>)> {
    let mut tape = Tape::new();
    let leaves: Vec<_> = params
        .modules()
        .iter()
        .map(|m| tape.leaf(m.values.clone()))
        .collect();
    let d = spec.input_dim();
    let flat: Vec<f64> = x.iter().flat_map(|r| r.iter().copied()).collect();
    let xv = tape.matrix_constant(flat, x.len(), d);
    let logits = spec.forward_tape(&mut tape, &leaves, xv);
    let logp = tape.log_softmax_rows(logits);
    let c = spec.num_classes();
    let mut onehot = vec![0.0; x.len() * c];
    for (i, &yi) in y.iter().enumerate() {
        if yi >= c {
            return Err(Error::Domain(format!(
                "label {yi} out of range for {c} classes"
            )));
        }
        onehot[i * c + yi] = 1.0;
    }
    let oh = tape.matrix_constant(onehot, x.len(), c);
    let picked = tape.mul(logp, oh);
    let s = tape.sum(picked);
    let loss = tape.scale(s, -1.0 / x.len() as f64);
    let grads = tape.backward(loss)?;
    let g = leaves
        .iter()
        .zip(params.modules())
        .map(|(&v, m)| grads.wrt(v, m.len()))
        .collect::<Result<Vec<_>>>()?;
    Ok((tape.scalar(loss), g))
}

/// SGD or Adam on cross-entropy over minibatches sampled with replacement.
/// `steps = 0` or `lr = 0` leaves the parameters unchanged.
pub fn fit<R: Rng>(
    spec: &MlpSpec,
    init: &ParamSet,
    data: &Dataset,
    cfg: &FitConfig,
    rng: &mut R,
) -> Result<ParamSet> {
    spec.check_params(init)?;
    if data.is_empty() {
        return Err(Error::Config("cannot fit on an empty dataset".into()));
    }
    let mut flat: Vec<f64> = init
        .modules()
        .iter()
        .flat_map(|m| m.values.iter().copied())
        .collect();
    let mut adam = Adam::new(flat.len());
    let lr = vec![cfg.lr; flat.len()];
    let mut params = init.clone();
    for _ in 0..cfg.steps {
        let idx: Vec<usize> = (0..cfg.batch.min(data.len()).max(1))
            .map(|_| rng.random_range(0..data.len()))
            .collect();
        let xs: Vec<&[f64]> = idx.iter().map(|&i| data.x[i].as_slice()).collect();
        let ys: Vec<usize> = idx.iter().map(|&i| data.label[i]).collect();
        let (loss, g) = cross_entropy_grad(spec, &params, &xs, &ys)?;
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: 0,
                snapshot: format!("cross-entropy {loss}"),
            });
        }
        let g: Vec<f64> = g.into_iter().flatten().collect();
        match cfg.optimizer {
            Optimizer::Adam => adam.step(&mut flat, &g, &lr),
            Optimizer::Sgd => flat.iter_mut().zip(&g).for_each(|(p, g)| *p -= cfg.lr * g),
        }
        params = unflatten(init, &flat);
    }
    Ok(params)
}

fn unflatten(layout: &ParamSet, flat: &[f64]) -> ParamSet {
    let mut off = 0;
    let modules = layout
        .modules()
        .iter()
        .map(|m| {
            let v = flat[off..off + m.len()].to_vec();
            off += m.len();
            Module::new(m.name.clone(), v)
        })
        .collect();
    ParamSet::new(modules).expect("layout is valid")
}

/// Fraction of correctly classified examples.
pub fn accuracy(spec: &MlpSpec, params: &ParamSet, data: &Dataset) -> f64 {
    if data.is_empty() {
        return 0.0;
    }
    let hits = data
        .x
        .iter()
        .zip(&data.label)
        .filter(|(x, &y)| spec.predict(params, x) == y)
        .count();
    hits as f64 / data.len() as f64
}
