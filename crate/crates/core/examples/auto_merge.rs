//! Dynamic merging: retrieve task votes from exemplar features and merge
//! compressed vectors per input; static merges for comparison.

use taskswitch::harness::baselines::{static_merge, StaticMerge, LAMBDA_GRID};
use taskswitch::harness::pipeline::{compress_task, merge_accuracy, ModelFile};
use taskswitch::harness::{HarnessConfig, Workbench};
use taskswitch::merge::{Merger, MetricConfig, QueryIndex};
use taskswitch::trainer::TrainConfig;

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn main() -> taskswitch::Result<()> {
    let cfg = HarnessConfig::default();
    let wb = Workbench::build(&cfg)?;
    let models = ModelFile::from_workbench(&wb)?;
    let ids = models.task_ids();
    let k_n = ids.len();
    let compressed = (0..k_n)
        .map(|k| {
            compress_task(
                &models,
                &wb.tasks,
                k,
                cfg.exemplars,
                cfg.seed(),
                &TrainConfig::default(),
            )?
            .compressed
            .to_task_vector()
        })
        .collect::<taskswitch::Result<Vec<_>>>()?;
    let raw = models.task_vectors()?;

    let eval_static =
        |p: &taskswitch::ParamSet| (0..k_n).map(|k| wb.test_accuracy(p, k)).collect::<Vec<_>>();
    let ft: Vec<f64> = (0..k_n)
        .map(|k| wb.test_accuracy(&models.tasks[k].1, k))
        .collect();
    println!("fine-tuned       {:.4}", mean(&ft));
    let wa = static_merge(&models.base, &raw, StaticMerge::WeightAverage)?;
    println!("weight average   {:.4}", mean(&eval_static(&wa)));
    let (best_l, best_ta) = LAMBDA_GRID
        .iter()
        .map(|&lambda| {
            let m = static_merge(&models.base, &raw, StaticMerge::TaskArithmetic { lambda })?;
            Ok((lambda, mean(&eval_static(&m))))
        })
        .collect::<taskswitch::Result<Vec<_>>>()?
        .into_iter()
        .fold((0.0, f64::MIN), |a, b| if b.1 > a.1 { b } else { a });
    println!("task arithmetic  {best_ta:.4} (lambda {best_l})");

    let sets = models.query_sets(&wb.tasks, cfg.exemplars, cfg.seed())?;
    let plain = QueryIndex::from_queries(&ids, &sets)?;
    let mut learned = QueryIndex::from_centers(&ids, &sets, 20, cfg.seed())?;
    let history = learned.train_metric(&sets, &MetricConfig::default())?;
    println!(
        "metric loss {:.5} -> {:.5}",
        history[0],
        history[history.len() - 1]
    );
    for (name, index, vectors) in [
        ("auto-switch", &plain, &raw),
        ("auto-flexswitch", &learned, &compressed),
    ] {
        let merger = Merger::new(&models.spec, &models.base, vectors, index, 10)?;
        let accs = wb
            .tasks
            .iter()
            .map(|t| merge_accuracy(&merger, &t.test))
            .collect::<taskswitch::Result<Vec<_>>>()?;
        println!("{name:<16} {:.4} {accs:.3?}", mean(&accs));
    }
    Ok(())
}
