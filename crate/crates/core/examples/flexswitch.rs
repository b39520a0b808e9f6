//! Learned compression of one fine-tuned model on the default synthetic
//! setup, compared against the rule-based switch.

use taskswitch::codec::container::EncodedTask;
use taskswitch::codec::{FormatPolicy, StoredTask};
use taskswitch::harness::{HarnessConfig, Workbench};
use taskswitch::trainer::{train, Problem, TrainConfig};
use taskswitch::tswitch::TaskSwitch;

fn main() -> taskswitch::Result<()> {
    let wb = Workbench::build(&HarnessConfig::default())?;
    let vectors = wb.task_vectors()?;
    for (k, tv) in vectors.iter().enumerate() {
        let ft = wb.test_accuracy(&wb.fine_tuned[k], k);
        let ex = wb.exemplars(k);
        let problem = Problem::new(&wb.spec, &wb.base, &wb.fine_tuned[k], &ex, &tv.task_id)?;
        let out = train(&problem, &TrainConfig::default())?;
        let last = out.log.last().expect("non-empty log");
        let flex = &out.compressed;
        let flex_bits = EncodedTask::encode(flex, FormatPolicy::Auto)?.formula_bits();
        let ts = StoredTask::from_switch(&TaskSwitch::build(tv, 0.9)?);
        let ts_bits = EncodedTask::encode(&ts, FormatPolicy::Auto)?.formula_bits();
        println!(
            "{}: fine-tuned {ft:.3} | flexswitch {:.3} sparsity {:.3} {} bits | tswitch {:.3} sparsity {:.3} {} bits | dense {} bits | final loss {:.4}",
            tv.task_id,
            wb.accuracy_with(&flex.to_task_vector()?, k)?,
            flex.sparsity(),
            flex_bits,
            wb.accuracy_with(&ts.to_task_vector()?, k)?,
            ts.sparsity(),
            ts_bits,
            32 * flex.total_len(),
            last.total
        );
    }
    Ok(())
}
