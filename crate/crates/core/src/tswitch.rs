//! Rule-based task switches: magnitude pulse masks, sign binarization and
//! the mask/polarity/knob triple.

use crate::error::{Error, Result};
use crate::vector::{sign_quantile, Module, ParamSet, Sign, TaskVector};

/// Keeps elements above the positive α-quantile or below the negative one.
///
/// Zeros are never kept. Each sign class retains `m − ⌊α·m⌋` elements
/// (more only when magnitudes tie at the cut).
pub fn pulse_mask(values: &[f64], alpha: f64) -> Result<Vec<bool>> {
    let gp = sign_quantile(values, alpha, Sign::Pos)?;
    let gn = sign_quantile(values, alpha, Sign::Neg)?;
    Ok(values
        .iter()
        .map(|&x| gp.is_some_and(|g| x > g) || gn.is_some_and(|g| x < g))
        .collect())
}

/// `+1` for strictly positive entries, `-1` otherwise (zero maps to `-1`).
pub fn sign_vector(values: &[f64]) -> Vec<i8> {
    values
        .iter()
        .map(|&x| if x > 0.0 { 1 } else { -1 })
        .collect()
}

/// One module's switch: activation mask, polarity and knob `β`.
#[derive(Debug, Clone, PartialEq)]
pub struct SwitchModule {
    pub name: String,
    pub mask: Vec<bool>,
    pub polarity: Vec<i8>,
    pub knob: f64,
}

impl SwitchModule {
    pub fn len(&self) -> usize {
        self.mask.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mask.is_empty()
    }

    pub fn nnz(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// `β·A⊙P`.
    pub fn reconstruct(&self) -> Vec<f64> {
        self.mask
            .iter()
            .zip(&self.polarity)
            .map(|(&m, &p)| if m { self.knob * f64::from(p) } else { 0.0 })
            .collect()
    }

    /// Raw storage of the triple: two bit-vectors plus a 32-bit knob.
    pub fn storage_bits(&self) -> usize {
        2 * self.len() + 32
    }
}

/// Builds the switch for one module at pruning rate `alpha`.
///
/// `β = ‖τ⊙A‖₂ / √nnz(A)`, so the reconstruction has exactly the norm of the
/// masked task vector. An empty mask yields `β = 0`.
pub fn build_switch(name: impl Into<String>, values: &[f64], alpha: f64) -> Result<SwitchModule> {
    let mask = pulse_mask(values, alpha)?;
    let polarity = sign_vector(values);
    let (sq, nnz) = values
        .iter()
        .zip(&mask)
        .filter(|(_, &m)| m)
        .fold((0.0, 0usize), |(s, c), (x, _)| (s + x * x, c + 1));
    let knob = if nnz == 0 {
        0.0
    } else {
        sq.sqrt() / (nnz as f64).sqrt()
    };
    Ok(SwitchModule {
        name: name.into(),
        mask,
        polarity,
        knob,
    })
}

/// `θ + weight·β·(A⊙P)`.
pub fn apply_switch(theta: &[f64], switch: &SwitchModule, weight: f64) -> Result<Vec<f64>> {
    if theta.len() != switch.len() {
        return Err(Error::ShapeMismatch {
            module: switch.name.clone(),
            expected: switch.len(),
            found: theta.len(),
        });
    }
    let scale = weight * switch.knob;
    Ok(theta
        .iter()
        .zip(switch.mask.iter().zip(&switch.polarity))
        .map(|(&t, (&m, &p))| if m { t + scale * f64::from(p) } else { t })
        .collect())
}

/// A full task's switch set.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskSwitch {
    pub task_id: String,
    pub modules: Vec<SwitchModule>,
}

impl TaskSwitch {
    pub fn build(tv: &TaskVector, alpha: f64) -> Result<Self> {
        let modules = tv
            .modules()
            .iter()
            .map(|m| build_switch(m.name.clone(), &m.values, alpha))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            task_id: tv.task_id.clone(),
            modules,
        })
    }

    /// Dense reconstruction `{β·A⊙P}` as an ordinary task vector.
    pub fn to_task_vector(&self) -> TaskVector {
        let modules = self
            .modules
            .iter()
            .map(|m| Module::new(m.name.clone(), m.reconstruct()))
            .collect();
        TaskVector {
            task_id: self.task_id.clone(),
            params: ParamSet::new(modules).expect("switch modules are non-empty and unique"),
        }
    }

    pub fn scale_knobs(&mut self, eta: f64) {
        for m in &mut self.modules {
            m.knob *= eta;
        }
    }
}
