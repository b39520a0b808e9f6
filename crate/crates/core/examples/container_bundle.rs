//! Writing task switches to a container, reading them back and printing the
//! per-module storage report.

use taskswitch::codec::container::{load, save_tasks};
use taskswitch::codec::{FormatPolicy, ModuleReport, StoredTask};
use taskswitch::tswitch::TaskSwitch;
use taskswitch::{Module, ParamSet, TaskVector};

fn main() -> taskswitch::Result<()> {
    let tasks: Vec<StoredTask> = (0..2)
        .map(|k| {
            let values = |n: usize, s: usize| -> Vec<f64> {
                (0..n)
                    .map(|i| (((i * 7919 + s * 104729 + k * 31) % 1000) as f64 - 500.0) / 1000.0)
                    .collect()
            };
            let tv = TaskVector {
                task_id: format!("task{k}"),
                params: ParamSet::new(vec![
                    Module::new("w", values(1024, 1)),
                    Module::new("b", values(16, 2)),
                ])?,
            };
            let mut t = StoredTask::from_switch(&TaskSwitch::build(&tv, 0.9)?);
            t.set_meta("alpha", 0.9);
            Ok(t)
        })
        .collect::<taskswitch::Result<_>>()?;
    let path = std::env::temp_dir().join("container_bundle_example.tswc");
    save_tasks(&path, &tasks, FormatPolicy::Auto)?;
    println!("{} bytes on disk", std::fs::metadata(&path)?.len());
    for t in load(&path)? {
        for (name, m) in &t.modules {
            let r = ModuleReport::new(&t.task_id, name, m)?;
            println!(
                "{} {}: {} n={} nnz={} b={} c={} formula bits {} (expected {:.0})",
                r.task_id,
                r.module,
                r.format.name(),
                r.n,
                r.nnz,
                r.bits,
                r.group,
                r.formula_bits,
                r.expected_bits.unwrap_or(f64::NAN)
            );
        }
    }
    std::fs::remove_file(path)?;
    Ok(())
}
