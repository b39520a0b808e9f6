//! Joint optimization of learnable gates and bit-widths for one task vector.
//!
//! Each module carries seven learnables: two threshold logits, a scale logit
//! and four bit-width logits. The objective is
//! `sparsity(M) + Σw̄/(L·8) + λ·L_per`, where `L_per` aligns the outputs of
//! `θ + softplus(κ)·M ⊙ Q_M(τ)` with the fine-tuned model's outputs on a
//! sampled batch of unlabeled exemplars.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::align::{OutputBatch, PerfLoss};
use crate::autodiff::mlp::MlpSpec;
use crate::autodiff::tape::{Tape, Var};
use crate::bas::{
    mean_bitwidth, mean_bitwidth_on_tape, mixed_quantize, mixed_quantize_on_tape,
    probabilities_on_tape, select_bitwidth, BitLogits, QuantSpec, QuantStack, MAX_BITS,
};
use crate::codec::container::{StoredModule, StoredTask};
use crate::codec::sass::{ModuleData, QuantizedModule};
use crate::error::{Error, Result};
use crate::lgs::{
    harden, soft_gate_on_tape, soft_gate_with_bounds, temperature_schedule, GateParams, GateVars,
};
use crate::optim::{clip_global_norm, Adam};
use crate::vector::{diff, signed_bounds, Module, ParamSet, SignedBounds, TaskVector};

/// Learnables per module, in flat order: `s_pos, s_neg, κ, w₁, w₂, w₄, w₈`.
pub const LEAVES_PER_MODULE: usize = 7;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch: usize,
    pub lr_lgs: f64,
    pub lr_bas: f64,
    pub ppl: PerfLoss,
    pub lambda: f64,
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 500,
            batch: 32,
            lr_lgs: 0.05,
            lr_bas: 0.1,
            ppl: PerfLoss::Kl {
                temp: PerfLoss::KL_TEMP,
            },
            lambda: 0.3,
            clip_norm: 10.0,
            seed: 0,
        }
    }
}

/// Gate and bit logits of one module.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ModuleState {
    pub gate: GateParams,
    pub bits: BitLogits,
}

/// All learnables of one task.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub modules: Vec<ModuleState>,
}

impl TrainState {
    pub fn init(num_modules: usize) -> Self {
        Self {
            modules: vec![ModuleState::default(); num_modules],
        }
    }

    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.modules.len() * LEAVES_PER_MODULE);
        for m in &self.modules {
            out.extend([m.gate.s_pos, m.gate.s_neg, m.gate.kappa]);
            out.extend(m.bits.w);
        }
        out
    }

    pub fn from_flat(flat: &[f64]) -> Self {
        assert_eq!(flat.len() % LEAVES_PER_MODULE, 0);
        let modules = flat
            .chunks(LEAVES_PER_MODULE)
            .map(|c| ModuleState {
                gate: GateParams {
                    s_pos: c[0],
                    s_neg: c[1],
                    kappa: c[2],
                },
                bits: BitLogits {
                    w: [c[3], c[4], c[5], c[6]],
                },
            })
            .collect();
        Self { modules }
    }
}

/// The three objective terms and their weighted total.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Components {
    pub sparsity: f64,
    pub bits: f64,
    pub perf: f64,
    pub total: f64,
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub rho: f64,
    pub omega: f64,
    pub sparsity_loss: f64,
    pub bit_loss: f64,
    pub perf_loss: f64,
    pub total: f64,
    /// Fraction of elements the hard mask would drop at this step.
    pub soft_sparsity: f64,
    pub grad_norm: f64,
}

impl LogRow {
    pub const HEADER: [&'static str; 9] = [
        "step",
        "rho",
        "omega",
        "sparsity_loss",
        "bit_loss",
        "perf_loss",
        "total",
        "soft_sparsity",
        "grad_norm",
    ];

    pub fn fields(&self) -> [String; 9] {
        [
            self.step.to_string(),
            self.rho.to_string(),
            self.omega.to_string(),
            self.sparsity_loss.to_string(),
            self.bit_loss.to_string(),
            self.perf_loss.to_string(),
            self.total.to_string(),
            self.soft_sparsity.to_string(),
            self.grad_norm.to_string(),
        ]
    }
}

/// Fixed inputs of one compression run.
#[derive(Debug, Clone)]
pub struct Problem<'a> {
    pub spec: &'a MlpSpec,
    pub base: &'a ParamSet,
    pub task: TaskVector,
    pub exemplars: &'a [Vec<f64>],
    bounds: Vec<SignedBounds>,
    stacks: Vec<QuantStack>,
    /// Fine-tuned logits per exemplar, computed once.
    reference: Vec<Vec<f64>>,
}

impl<'a> Problem<'a> {
    pub fn new(
        spec: &'a MlpSpec,
        base: &'a ParamSet,
        fine_tuned: &ParamSet,
        exemplars: &'a [Vec<f64>],
        task_id: &str,
    ) -> Result<Self> {
        spec.check_params(base)?;
        let task = diff(task_id, fine_tuned, base)?;
        if exemplars.is_empty() {
            return Err(Error::Config("at least one exemplar is required".into()));
        }
        if let Some(x) = exemplars.iter().find(|x| x.len() != spec.input_dim()) {
            return Err(Error::ShapeMismatch {
                module: "exemplar".into(),
                expected: spec.input_dim(),
                found: x.len(),
            });
        }
        let bounds: Vec<SignedBounds> = task
            .modules()
            .iter()
            .map(|m| signed_bounds(&m.values))
            .collect();
        let stacks = task
            .modules()
            .iter()
            .zip(&bounds)
            .map(|(m, b)| QuantStack::new(&m.values, b))
            .collect::<Result<Vec<_>>>()?;
        let reference = exemplars
            .iter()
            .map(|x| spec.forward(fine_tuned, x))
            .collect();
        Ok(Self {
            spec,
            base,
            task,
            exemplars,
            bounds,
            stacks,
            reference,
        })
    }

    pub fn num_modules(&self) -> usize {
        self.bounds.len()
    }

    fn reference_batch(&self, batch: &[usize]) -> Result<OutputBatch> {
        OutputBatch::from_rows(
            &batch
                .iter()
                .map(|&i| self.reference[i].clone())
                .collect::<Vec<_>>(),
        )
    }

    /// Weights `θ + softplus(κ)·M ⊙ Q_M(τ)` at the given temperatures.
    pub fn soft_weights(
        &self,
        state: &TrainState,
        rho: f64,
        omega: f64,
    ) -> Result<(ParamSet, Vec<Vec<f64>>)> {
        let mut modules = Vec::with_capacity(self.num_modules());
        let mut masks = Vec::with_capacity(self.num_modules());
        for (i, ((tm, bm), st)) in self
            .task
            .modules()
            .iter()
            .zip(self.base.modules())
            .zip(&state.modules)
            .enumerate()
        {
            let gate = soft_gate_with_bounds(&tm.values, &self.bounds[i], &st.gate, rho)?;
            let q = mixed_quantize(&tm.values, &self.bounds[i], &st.bits, omega)?;
            let values = bm
                .values
                .iter()
                .zip(gate.scaled_mask.iter().zip(&q))
                .map(|(t, (m, q))| t + m * q)
                .collect();
            modules.push(Module::new(bm.name.clone(), values));
            masks.push(gate.soft_mask);
        }
        Ok((ParamSet::new(modules)?, masks))
    }

    /// Objective evaluated with plain (non-tape) arithmetic.
    pub fn objective(
        &self,
        state: &TrainState,
        batch: &[usize],
        step: usize,
        cfg: &TrainConfig,
    ) -> Result<Components> {
        let t = temperature_schedule(step);
        let (weights, masks) = self.soft_weights(state, t, t)?;
        let sparsity = crate::lgs::sparsity_loss(&masks);
        let bits = state
            .modules
            .iter()
            .map(|m| mean_bitwidth(&m.bits, t))
            .sum::<f64>()
            / (self.num_modules() as f64 * MAX_BITS);
        let rows: Vec<Vec<f64>> = batch
            .iter()
            .map(|&i| self.spec.forward(&weights, &self.exemplars[i]))
            .collect();
        let perf = cfg.ppl.eval(
            &self.reference_batch(batch)?,
            &OutputBatch::from_rows(&rows)?,
        )?;
        Ok(Components {
            sparsity,
            bits,
            perf,
            total: sparsity + bits + cfg.lambda * perf,
        })
    }

    /// Objective and its gradient with respect to the flat learnables.
    pub fn objective_with_grad(
        &self,
        state: &TrainState,
        batch: &[usize],
        step: usize,
        cfg: &TrainConfig,
    ) -> Result<(Components, Vec<f64>, f64)> {
        let t = temperature_schedule(step);
        let mut tape = Tape::new();
        let mut leaves: Vec<(GateVars, Var)> = Vec::new();
        let mut weights = Vec::new();
        let mut mask_sum: Option<Var> = None;
        let mut bit_sum: Option<Var> = None;
        let mut hard_kept = 0usize;
        for (i, ((tm, bm), st)) in self
            .task
            .modules()
            .iter()
            .zip(self.base.modules())
            .zip(&state.modules)
            .enumerate()
        {
            let gv = GateVars::new(&mut tape, &st.gate);
            let w = tape.leaf(st.bits.w.to_vec());
            leaves.push((gv, w));
            let tau = tape.constant(tm.values.clone());
            let (mask, scaled) = soft_gate_on_tape(&mut tape, tau, &self.bounds[i], &gv, t);
            hard_kept += tape.value(mask).iter().filter(|&&m| m > 0.5).count();
            let probs = probabilities_on_tape(&mut tape, w, t);
            let q = mixed_quantize_on_tape(&mut tape, &self.stacks[i], probs);
            let tilde = tape.mul(scaled, q);
            let base = tape.constant(bm.values.clone());
            weights.push(tape.add(base, tilde));
            let ms = tape.sum(mask);
            mask_sum = Some(match mask_sum {
                Some(s) => tape.add(s, ms),
                None => ms,
            });
            let wb = mean_bitwidth_on_tape(&mut tape, probs);
            bit_sum = Some(match bit_sum {
                Some(s) => tape.add(s, wb),
                None => wb,
            });
        }
        let total_len = self.task.params.total_len();
        let sparsity = tape.scale(
            mask_sum.expect("at least one module"),
            1.0 / total_len as f64,
        );
        let bits = tape.scale(
            bit_sum.expect("at least one module"),
            1.0 / (self.num_modules() as f64 * MAX_BITS),
        );
        let d = self.spec.input_dim();
        let x: Vec<f64> = batch
            .iter()
            .flat_map(|&i| self.exemplars[i].iter().copied())
            .collect();
        let x = tape.matrix_constant(x, batch.len(), d);
        let logits = self.spec.forward_tape(&mut tape, &weights, x);
        let perf = cfg
            .ppl
            .on_tape(&mut tape, &self.reference_batch(batch)?, logits);
        let weighted = tape.scale(perf, cfg.lambda);
        let total = tape.add(sparsity, bits);
        let total = tape.add(total, weighted);
        let comps = Components {
            sparsity: tape.scalar(sparsity),
            bits: tape.scalar(bits),
            perf: tape.scalar(perf),
            total: tape.scalar(total),
        };
        let grads = tape.backward(total)?;
        let mut flat = Vec::with_capacity(self.num_modules() * LEAVES_PER_MODULE);
        for (gv, w) in &leaves {
            flat.extend(grads.wrt(gv.s_pos, 1)?);
            flat.extend(grads.wrt(gv.s_neg, 1)?);
            flat.extend(grads.wrt(gv.kappa, 1)?);
            flat.extend(grads.wrt(*w, 4)?);
        }
        let soft_sparsity = 1.0 - hard_kept as f64 / total_len as f64;
        Ok((comps, flat, soft_sparsity))
    }

    /// Hardens masks, selects bit-widths and emits the stored vector.
    ///
    /// Ranges and scale are rounded to `f32` before bins are assigned, so the
    /// returned modules decode to exactly the values used in memory.
    pub fn finalize(&self, state: &TrainState, final_step: usize) -> Result<StoredTask> {
        let rho = temperature_schedule(final_step);
        let mut modules = Vec::with_capacity(self.num_modules());
        for (i, (tm, st)) in self.task.modules().iter().zip(&state.modules).enumerate() {
            let gate = soft_gate_with_bounds(&tm.values, &self.bounds[i], &st.gate, rho)?;
            let hard = harden(&gate.soft_mask);
            let bits = select_bitwidth(&st.bits);
            let range_neg = self.bounds[i].v_max_neg as f32;
            let range_pos = self.bounds[i].v_max_pos as f32;
            let spec = QuantSpec::new(bits, f64::from(range_neg), f64::from(range_pos))?;
            let survivors = tm
                .values
                .iter()
                .zip(&hard)
                .enumerate()
                .filter(|(_, (_, &h))| h)
                .map(|(j, (&x, _))| (j as u32, spec.index(x)))
                .collect();
            modules.push(StoredModule {
                name: tm.name.clone(),
                data: ModuleData::Quantized(QuantizedModule {
                    n: tm.len(),
                    bits,
                    range_neg,
                    range_pos,
                    scale: st.gate.scale() as f32,
                    survivors,
                }),
            });
        }
        Ok(StoredTask {
            task_id: self.task.task_id.clone(),
            metadata: Vec::new(),
            modules,
        })
    }
}

/// Result of a compression run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub compressed: StoredTask,
    pub state: TrainState,
    pub log: Vec<LogRow>,
}

/// Runs the optimization loop and finalizes the compressed vector.
pub fn train(problem: &Problem<'_>, cfg: &TrainConfig) -> Result<TrainOutcome> {
    if cfg.steps == 0 {
        return Err(Error::Config("steps must be at least 1".into()));
    }
    if cfg.batch == 0 {
        return Err(Error::Config("batch must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = TrainState::init(problem.num_modules());
    let mut flat = state.to_flat();
    let lr: Vec<f64> = (0..flat.len())
        .map(|i| {
            if i % LEAVES_PER_MODULE < 3 {
                cfg.lr_lgs
            } else {
                cfg.lr_bas
            }
        })
        .collect();
    let mut adam = Adam::new(flat.len());
    let mut log = Vec::with_capacity(cfg.steps);
    let n = problem.exemplars.len();
    let mut batch = vec![0usize; cfg.batch];
    for step in 0..cfg.steps {
        batch.iter_mut().for_each(|b| *b = rng.random_range(0..n));
        let (comps, mut grads, soft_sparsity) =
            problem.objective_with_grad(&state, &batch, step, cfg)?;
        if !comps.total.is_finite() || grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::Diverged {
                step,
                snapshot: format!("{comps:?} state={:?}", state.to_flat()),
            });
        }
        let grad_norm = clip_global_norm(&mut grads, cfg.clip_norm);
        let t = temperature_schedule(step);
        log.push(LogRow {
            step,
            rho: t,
            omega: t,
            sparsity_loss: comps.sparsity,
            bit_loss: comps.bits,
            perf_loss: comps.perf,
            total: comps.total,
            soft_sparsity,
            grad_norm,
        });
        adam.step(&mut flat, &grads, &lr);
        state = TrainState::from_flat(&flat);
    }
    let mut compressed = problem.finalize(&state, cfg.steps - 1)?;
    compressed.set_meta("kind", "flexswitch");
    compressed.set_meta("ppl", cfg.ppl.name());
    compressed.set_meta("lambda", cfg.lambda);
    compressed.set_meta("steps", cfg.steps);
    compressed.set_meta("seed", cfg.seed);
    Ok(TrainOutcome {
        compressed,
        state,
        log,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::fd::fd_check;
    use crate::autodiff::mlp::Activation;

    fn setup(seed: u64) -> (MlpSpec, ParamSet, ParamSet, Vec<Vec<f64>>) {
        let spec = MlpSpec::new(vec![3, 5, 2], Activation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let base = spec.init(&mut rng);
        let ft_mods = base
            .modules()
            .iter()
            .map(|m| {
                Module::new(
                    m.name.clone(),
                    m.values
                        .iter()
                        .map(|v| v + rng.random_range(-0.5..0.5))
                        .collect(),
                )
            })
            .collect();
        let ft = ParamSet::new(ft_mods).unwrap();
        let ex = (0..10)
            .map(|_| (0..3).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        (spec, base, ft, ex)
    }

    #[test]
    fn initial_bit_term_is_uniform_mean() {
        let (spec, base, ft, ex) = setup(1);
        let p = Problem::new(&spec, &base, &ft, &ex, "t").unwrap();
        let cfg = TrainConfig::default();
        let st = TrainState::init(p.num_modules());
        let c = p.objective(&st, &[0, 1, 2], 0, &cfg).unwrap();
        assert_eq!(c.bits, 3.75 / 8.0);
        assert!(c.sparsity > 0.0 && c.sparsity < 2.0);
        assert_eq!(c.total, c.sparsity + c.bits + cfg.lambda * c.perf);
        let (g, _, _) = p.objective_with_grad(&st, &[0, 1, 2], 0, &cfg).unwrap();
        assert!((g.total - c.total).abs() < 1e-12);
    }

    #[test]
    fn tape_gradient_matches_finite_differences() {
        for (seed, ppl) in [
            (2, PerfLoss::Kl { temp: 4.0 }),
            (3, PerfLoss::Mse),
            (4, PerfLoss::Cka),
        ] {
            let (spec, base, ft, ex) = setup(seed);
            let p = Problem::new(&spec, &base, &ft, &ex, "t").unwrap();
            let cfg = TrainConfig {
                ppl,
                ..Default::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let flat: Vec<f64> = (0..p.num_modules() * LEAVES_PER_MODULE)
                .map(|_| rng.random_range(-1.0..1.0))
                .collect();
            let st = TrainState::from_flat(&flat);
            let batch = [0, 3, 5, 7];
            let (_, g, _) = p.objective_with_grad(&st, &batch, 15, &cfg).unwrap();
            let f = |l: &[Vec<f64>]| {
                p.objective(&TrainState::from_flat(&l[0]), &batch, 15, &cfg)
                    .unwrap()
                    .total
            };
            let r = fd_check(f, &[flat], &[g], 1e-5, 1e-8);
            assert!(r.fraction_within(1e-4) >= 0.95, "{ppl:?}: {}", r.max_rel);
        }
    }

    #[test]
    fn training_is_deterministic_and_finalizes_valid_modules() {
        let (spec, base, ft, ex) = setup(5);
        let p = Problem::new(&spec, &base, &ft, &ex, "t").unwrap();
        let cfg = TrainConfig {
            steps: 30,
            batch: 4,
            ..Default::default()
        };
        let a = train(&p, &cfg).unwrap();
        let b = train(&p, &cfg).unwrap();
        assert_eq!(a.compressed, b.compressed);
        assert_eq!(a.log, b.log);
        for m in &a.compressed.modules {
            let ModuleData::Quantized(q) = &m.data else {
                panic!()
            };
            q.validate().unwrap();
            assert!([1, 2, 4, 8].contains(&q.bits));
            let spec = q.spec();
            for &(_, bin) in &q.survivors {
                assert_eq!(spec.index(spec.center(bin)), bin);
            }
        }
    }

    #[test]
    fn zero_lambda_drives_masks_to_class_extremes() {
        let (spec, base, ft, ex) = setup(6);
        let p = Problem::new(&spec, &base, &ft, &ex, "t").unwrap();
        let cfg = TrainConfig {
            steps: 300,
            batch: 4,
            lambda: 0.0,
            ..Default::default()
        };
        let out = train(&p, &cfg).unwrap();
        // thresholds stay strictly below the class maximum, so at most the
        // extreme element of each sign class survives
        for (m, tm) in out.compressed.modules.iter().zip(p.task.modules()) {
            let b = signed_bounds(&tm.values);
            let classes = usize::from(b.has_pos) + usize::from(b.has_neg);
            assert!(m.data.nnz() <= classes, "{}: {}", m.name, m.data.nnz());
        }
    }

    #[test]
    fn bad_config_is_rejected() {
        let (spec, base, ft, ex) = setup(7);
        let p = Problem::new(&spec, &base, &ft, &ex, "t").unwrap();
        let cfg = TrainConfig {
            steps: 0,
            ..Default::default()
        };
        assert!(train(&p, &cfg).is_err());
        assert!(Problem::new(&spec, &base, &ft, &[], "t").is_err());
    }
}
