//! Flattened per-module weight vectors and the statistics the compressors
//! are defined over.
//!
//! Every model is viewed as an ordered list of named modules, each a 1-D
//! `f64` vector. Task vectors are element-wise differences between a
//! fine-tuned and a base [`ParamSet`].

use std::collections::HashSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};

/// One named, flattened weight vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Module {
    pub name: String,
    pub values: Vec<f64>,
}

impl Module {
    pub fn new(name: impl Into<String>, values: Vec<f64>) -> Self {
        Self {
            name: name.into(),
            values,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Ordered collection of uniquely named, non-empty modules.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    modules: Vec<Module>,
}

impl ParamSet {
    pub fn new(modules: Vec<Module>) -> Result<Self> {
        let mut seen = HashSet::new();
        for m in &modules {
            if m.values.is_empty() {
                return Err(Error::InvalidParams(format!(
                    "module `{}` is empty",
                    m.name
                )));
            }
            if !seen.insert(m.name.as_str()) {
                return Err(Error::InvalidParams(format!(
                    "duplicate module `{}`",
                    m.name
                )));
            }
        }
        Ok(Self { modules })
    }

    /// A set with the same layout as `self` and every value zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            modules: self
                .modules
                .iter()
                .map(|m| Module::new(m.name.clone(), vec![0.0; m.len()]))
                .collect(),
        }
    }

    pub fn modules(&self) -> &[Module] {
        &self.modules
    }

    pub fn modules_mut(&mut self) -> &mut [Module] {
        &mut self.modules
    }

    pub fn into_modules(self) -> Vec<Module> {
        self.modules
    }

    pub fn get(&self, name: &str) -> Option<&Module> {
        self.modules.iter().find(|m| m.name == name)
    }

    pub fn num_modules(&self) -> usize {
        self.modules.len()
    }

    /// Total parameter count `n = Σ n_l`.
    pub fn total_len(&self) -> usize {
        self.modules.iter().map(Module::len).sum()
    }

    /// Checks that `other` has the same module names, order and lengths.
    pub fn check_aligned(&self, other: &ParamSet) -> Result<()> {
        if self.modules.len() != other.modules.len() {
            return Err(Error::ModuleCount {
                expected: self.modules.len(),
                found: other.modules.len(),
            });
        }
        for (position, (a, b)) in self.modules.iter().zip(&other.modules).enumerate() {
            if a.name != b.name {
                return Err(Error::ModuleMismatch {
                    position,
                    expected: a.name.clone(),
                    found: b.name.clone(),
                });
            }
            if a.len() != b.len() {
                return Err(Error::ShapeMismatch {
                    module: a.name.clone(),
                    expected: a.len(),
                    found: b.len(),
                });
            }
        }
        Ok(())
    }

    /// `self + scale * delta`, module by module.
    pub fn add_scaled(&self, delta: &ParamSet, scale: f64) -> Result<ParamSet> {
        self.check_aligned(delta)?;
        let modules = self
            .modules
            .iter()
            .zip(&delta.modules)
            .map(|(a, d)| {
                let values = a
                    .values
                    .iter()
                    .zip(&d.values)
                    .map(|(x, y)| x + scale * y)
                    .collect();
                Module::new(a.name.clone(), values)
            })
            .collect();
        Ok(ParamSet { modules })
    }

    /// Debug text dump: one `module <name> <len>` line followed by one line of
    /// whitespace-separated values per module.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for m in &self.modules {
            let _ = writeln!(out, "module {} {}", m.name, m.len());
            let line: Vec<String> = m.values.iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", line.join(" "));
        }
        out
    }

    pub fn from_text(text: &str) -> Result<ParamSet> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let mut modules = Vec::new();
        while let Some(head) = lines.next() {
            let parts: Vec<&str> = head.split_whitespace().collect();
            if parts.len() != 3 || parts[0] != "module" {
                return Err(Error::InvalidParams(format!("bad module line `{head}`")));
            }
            let len: usize = parts[2]
                .parse()
                .map_err(|_| Error::InvalidParams(format!("bad length in `{head}`")))?;
            let body = lines.next().ok_or_else(|| {
                Error::InvalidParams(format!("missing values for `{}`", parts[1]))
            })?;
            let values = body
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| Error::InvalidParams(format!("bad value `{t}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            if values.len() != len {
                return Err(Error::ShapeMismatch {
                    module: parts[1].to_string(),
                    expected: len,
                    found: values.len(),
                });
            }
            modules.push(Module::new(parts[1], values));
        }
        ParamSet::new(modules)
    }
}

/// Per-module weight increments `θ_k − θ` for one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskVector {
    pub task_id: String,
    pub params: ParamSet,
}

impl TaskVector {
    pub fn modules(&self) -> &[Module] {
        self.params.modules()
    }
}

/// Element-wise `fine_tuned − base`.
pub fn diff(
    task_id: impl Into<String>,
    fine_tuned: &ParamSet,
    base: &ParamSet,
) -> Result<TaskVector> {
    base.check_aligned(fine_tuned)?;
    let modules = fine_tuned
        .modules()
        .iter()
        .zip(base.modules())
        .map(|(ft, b)| {
            let values = ft
                .values
                .iter()
                .zip(&b.values)
                .map(|(x, y)| x - y)
                .collect();
            Module::new(ft.name.clone(), values)
        })
        .collect();
    Ok(TaskVector {
        task_id: task_id.into(),
        params: ParamSet { modules },
    })
}

/// Magnitude ranges of the strictly positive and strictly negative elements.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SignedBounds {
    pub v_min_pos: f64,
    pub v_max_pos: f64,
    pub v_min_neg: f64,
    pub v_max_neg: f64,
    pub has_pos: bool,
    pub has_neg: bool,
}

impl SignedBounds {
    /// `(v_min, v_max)` of the requested sign class, if it is non-empty.
    pub fn class(&self, sign: Sign) -> Option<(f64, f64)> {
        match sign {
            Sign::Pos if self.has_pos => Some((self.v_min_pos, self.v_max_pos)),
            Sign::Neg if self.has_neg => Some((self.v_min_neg, self.v_max_neg)),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sign {
    Pos,
    Neg,
}

pub fn signed_bounds(values: &[f64]) -> SignedBounds {
    let mut b = SignedBounds {
        v_min_pos: f64::INFINITY,
        v_min_neg: f64::INFINITY,
        ..Default::default()
    };
    for &x in values {
        if x > 0.0 {
            b.has_pos = true;
            b.v_min_pos = b.v_min_pos.min(x);
            b.v_max_pos = b.v_max_pos.max(x);
        } else if x < 0.0 {
            b.has_neg = true;
            b.v_min_neg = b.v_min_neg.min(-x);
            b.v_max_neg = b.v_max_neg.max(-x);
        }
    }
    if !b.has_pos {
        b.v_min_pos = 0.0;
    }
    if !b.has_neg {
        b.v_min_neg = 0.0;
    }
    b
}

/// Number of elements pruned from a sign class of size `m` at rate `alpha`.
pub(crate) fn pruned_count(alpha: f64, m: usize) -> usize {
    // alpha * m can land a hair under an integer (0.29 * 100)
    ((alpha * m as f64 + 1e-9).floor() as usize).min(m)
}

/// Nearest-rank α-quantile of one sign class.
///
/// For [`Sign::Pos`] the result `γ` satisfies: the `⌊α·m⌋` smallest positives
/// are `≤ γ`, retention is `x > γ`. For [`Sign::Neg`] the result is negative
/// (or zero) and retention is `x < γ`. Returns `Ok(None)` when the class is
/// empty, i.e. nothing of that sign is retained or pruned.
pub fn sign_quantile(values: &[f64], alpha: f64, sign: Sign) -> Result<Option<f64>> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Domain(format!(
            "quantile rate {alpha} outside [0, 1]"
        )));
    }
    let mut mags: Vec<f64> = match sign {
        Sign::Pos => values.iter().copied().filter(|&x| x > 0.0).collect(),
        Sign::Neg => values.iter().filter(|&&x| x < 0.0).map(|x| -x).collect(),
    };
    if mags.is_empty() {
        return Ok(None);
    }
    mags.sort_by(f64::total_cmp);
    let k = pruned_count(alpha, mags.len());
    let mag = if k == 0 { 0.0 } else { mags[k - 1] };
    Ok(Some(match sign {
        Sign::Pos => mag,
        Sign::Neg => -mag,
    }))
}

pub fn l2_norm(values: &[f64]) -> f64 {
    values.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn set(vals: &[(&str, Vec<f64>)]) -> ParamSet {
        ParamSet::new(
            vals.iter()
                .map(|(n, v)| Module::new(*n, v.clone()))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn diff_subtracts_per_module() {
        let ft = set(&[("a", vec![1.5, 0.0])]);
        let base = set(&[("a", vec![1.0, 0.5])]);
        let tv = diff("t", &ft, &base).unwrap();
        assert_eq!(tv.modules()[0].values, vec![0.5, -0.5]);
        let zero = diff("t", &base, &base).unwrap();
        assert!(zero.modules()[0].values.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn diff_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.random_range(-1.0..1.0)).collect();
        let tv = diff("t", &set(&[("m", a.clone())]), &set(&[("m", b.clone())])).unwrap();
        let got = &tv.modules()[0].values;
        for i in 0..1000 {
            assert_eq!(got[i], a[i] - b[i]);
        }
        // reconstruction
        let back = set(&[("m", b)]).add_scaled(&tv.params, 1.0).unwrap();
        assert_eq!(back.modules()[0].values, a);
    }

    #[test]
    fn diff_names_offending_module() {
        let a = set(&[("x", vec![1.0]), ("y", vec![1.0, 2.0])]);
        let b = set(&[("x", vec![1.0]), ("y", vec![1.0])]);
        match diff("t", &a, &b) {
            Err(Error::ShapeMismatch { module, .. }) => assert_eq!(module, "y"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn param_set_rejects_duplicates_and_empty() {
        assert!(ParamSet::new(vec![
            Module::new("a", vec![1.0]),
            Module::new("a", vec![2.0])
        ])
        .is_err());
        assert!(ParamSet::new(vec![Module::new("a", vec![])]).is_err());
    }

    #[test]
    fn bounds_examples() {
        let b = signed_bounds(&[0.5, -0.2, 0.1, -0.9]);
        assert_eq!((b.v_min_pos, b.v_max_pos), (0.1, 0.5));
        assert_eq!((b.v_min_neg, b.v_max_neg), (0.2, 0.9));
        assert!(!signed_bounds(&[1.0, 2.0]).has_neg);
        let z = signed_bounds(&[0.0, 0.0]);
        assert!(!z.has_pos && !z.has_neg);
    }

    #[test]
    fn quantile_examples() {
        let v = [0.5, -0.2, 0.1, -0.9];
        assert_eq!(sign_quantile(&v, 0.5, Sign::Pos).unwrap(), Some(0.1));
        assert_eq!(sign_quantile(&v, 0.5, Sign::Neg).unwrap(), Some(-0.2));
        assert_eq!(sign_quantile(&v, 0.0, Sign::Pos).unwrap(), Some(0.0));
        assert_eq!(sign_quantile(&v, 1.0, Sign::Pos).unwrap(), Some(0.5));
        assert_eq!(sign_quantile(&[1.0], 0.5, Sign::Neg).unwrap(), None);
        assert!(sign_quantile(&v, 1.5, Sign::Pos).is_err());
        assert!(sign_quantile(&v, -0.1, Sign::Pos).is_err());
    }

    #[test]
    fn norm_examples() {
        assert_eq!(l2_norm(&[3.0, 4.0]), 5.0);
        assert_eq!(l2_norm(&[]), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let v: Vec<f64> = (0..100).map(|_| rng.random_range(-3.0..3.0)).collect();
        let mut acc = 0.0;
        for x in &v {
            acc += x * x;
        }
        let oracle = acc.sqrt();
        assert!((l2_norm(&v) - oracle).abs() <= 1e-12 * oracle);
    }

    #[test]
    fn text_dump_round_trips() {
        let p = set(&[
            ("a.w", vec![0.1, -2.5e-7, 3.0]),
            ("b", vec![f64::MIN_POSITIVE]),
        ]);
        assert_eq!(ParamSet::from_text(&p.to_text()).unwrap(), p);
    }

    proptest::proptest! {
        #[test]
        fn quantile_extremes_prune_all_or_none(v in proptest::collection::vec(-5.0f64..5.0, 1..64)) {
            let pos = v.iter().filter(|&&x| x > 0.0).count();
            if let Some(g) = sign_quantile(&v, 1.0, Sign::Pos).unwrap() {
                proptest::prop_assert_eq!(v.iter().filter(|&&x| x > g).count(), 0);
            }
            if let Some(g) = sign_quantile(&v, 0.0, Sign::Pos).unwrap() {
                proptest::prop_assert_eq!(v.iter().filter(|&&x| x > g).count(), pos);
            }
            let neg = v.iter().filter(|&&x| x < 0.0).count();
            if let Some(g) = sign_quantile(&v, 0.0, Sign::Neg).unwrap() {
                proptest::prop_assert_eq!(v.iter().filter(|&&x| x < g).count(), neg);
            }
        }

        #[test]
        fn bounds_partition_classes(v in proptest::collection::vec(-5.0f64..5.0, 0..64)) {
            let b = signed_bounds(&v);
            proptest::prop_assert_eq!(b.has_pos, v.iter().any(|&x| x > 0.0));
            proptest::prop_assert_eq!(b.has_neg, v.iter().any(|&x| x < 0.0));
            if b.has_pos { proptest::prop_assert!(b.v_min_pos <= b.v_max_pos); }
            if b.has_neg { proptest::prop_assert!(b.v_min_neg <= b.v_max_neg); }
        }
    }
}
