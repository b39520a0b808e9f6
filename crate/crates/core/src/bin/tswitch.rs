//! Command-line front end for the desk-scale pipeline.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use taskswitch::codec::container::{load, load_tasks, save_tasks};
use taskswitch::codec::{FormatPolicy, ModuleReport, StoredTask};
use taskswitch::harness::baselines::{static_merge, StaticMerge, LAMBDA_GRID};
use taskswitch::harness::pipeline::{
    bundle_vectors, compress_task, merge_accuracy, merger, write_report, ModelFile,
};
use taskswitch::harness::probes::{
    best_eta, eta_grid, probe_precision, probe_scale, probe_sparsity, ProbeRow, ScaleRow,
};
use taskswitch::harness::synth::{read_tasks, write_tasks, Dataset, SyntheticTask};
use taskswitch::harness::{accuracy, gen_tasks, Config, Workbench};
use taskswitch::merge::QueryIndex;
use taskswitch::trainer::LogRow;
use taskswitch::tswitch::TaskSwitch;
use taskswitch::{Error, Result, TaskVector};

#[derive(Parser)]
#[command(
    name = "tswitch",
    version,
    about = "Compress, store and merge task vectors"
)]
struct Cli {
    /// Flat `key = value` file; command-line flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic train/test CSVs per task.
    GenTasks(GenTasks),
    /// Pretrain a base model and fine-tune it on every task.
    FineTune(FineTune),
    /// Rule-based sparsify and binarize every task vector.
    Tswitch(TswitchCmd),
    /// Learn a sparse, mixed-precision encoding of task vectors.
    Compress(Compress),
    /// Print per-module storage statistics of a container.
    Inspect(Inspect),
    /// Sensitivity probes.
    Probe(Probe),
    /// Build a retrieval index from exemplar features.
    BuildIndex(BuildIndex),
    /// Learn the low-rank retrieval metric of an index.
    TrainMetric(TrainMetric),
    /// Evaluate dynamic merging with an index and a bundle.
    MergeEval(MergeEval),
    /// Evaluate static merges.
    Baseline(Baseline),
    /// Rewrite a bundle with raw `f32` modules.
    Decompress(Decompress),
    /// Per-task accuracy of `base + τ` for each vector in a bundle.
    Evaluate(Evaluate),
}

#[derive(Args)]
struct GenTasks {
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    tasks: Option<usize>,
    #[arg(long)]
    dim: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    task_sep: Option<f64>,
    #[arg(long)]
    class_sep: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct FineTune {
    /// Directory written by `gen-tasks`.
    #[arg(long)]
    data: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    activation: Option<String>,
    #[arg(long)]
    pretrain_steps: Option<usize>,
    #[arg(long)]
    finetune_steps: Option<usize>,
    #[arg(long)]
    finetune_lr: Option<f64>,
    #[arg(long)]
    finetune_optimizer: Option<String>,
    /// Optional CSV with base and fine-tuned test accuracy.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct TswitchCmd {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct Compress {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Task ids to compress (all when omitted).
    #[arg(long)]
    task: Vec<String>,
    #[arg(long)]
    ppl: Option<String>,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long = "temp-T")]
    temp_t: Option<f64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    exemplars: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
    /// Training log CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct Inspect {
    file: PathBuf,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProbeKind {
    Sparsity,
    Precision,
    Scale,
}

#[derive(Args)]
struct Probe {
    kind: ProbeKind,
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BuildIndex {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Centers per task; 0 keeps every exemplar.
    #[arg(long)]
    centers: Option<usize>,
    #[arg(long)]
    exemplars: Option<usize>,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainMetric {
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    exemplars: Option<usize>,
    /// Output index (defaults to overwriting `--index`).
    #[arg(short, long)]
    out: Option<PathBuf>,
    /// Loss history CSV.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Args)]
struct MergeEval {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    models: PathBuf,
    /// A `gen-tasks` directory (test splits) or labelled CSV files.
    #[arg(long, required = true)]
    data: Vec<PathBuf>,
    #[arg(long)]
    neighbors: Option<usize>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineMode {
    WeightAverage,
    TaskArithmetic,
}

#[derive(Args)]
struct Baseline {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum)]
    mode: BaselineMode,
    /// Task-arithmetic coefficient; the grid is searched when omitted.
    #[arg(long)]
    lambda: Option<f64>,
    /// Merge the vectors of this bundle instead of the raw ones.
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct Decompress {
    bundle: PathBuf,
    #[arg(short, long)]
    out: PathBuf,
}

#[derive(Args)]
struct Evaluate {
    #[arg(long)]
    models: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Vectors to evaluate (the fine-tuned models when omitted).
    #[arg(long)]
    bundle: Option<PathBuf>,
    #[arg(short, long)]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    cfg.set_opt("seed", cli.seed)?;
    match cli.command {
        Command::GenTasks(a) => gen(cfg, a),
        Command::FineTune(a) => fine_tune(cfg, a),
        Command::Tswitch(a) => tswitch(cfg, a),
        Command::Compress(a) => compress(cfg, a),
        Command::Inspect(a) => inspect(a),
        Command::Probe(a) => probe(cfg, a),
        Command::BuildIndex(a) => build_index(cfg, a),
        Command::TrainMetric(a) => train_metric(cfg, a),
        Command::MergeEval(a) => merge_eval(cfg, a),
        Command::Baseline(a) => baseline(a),
        Command::Decompress(a) => decompress(a),
        Command::Evaluate(a) => evaluate(a),
    }
}

fn fmt(x: f64) -> String {
    x.to_string()
}

fn gen(mut cfg: Config, a: GenTasks) -> Result<()> {
    cfg.set_opt("tasks", a.tasks)?;
    cfg.set_opt("dim", a.dim)?;
    cfg.set_opt("classes", a.classes)?;
    cfg.set_opt("train_size", a.train_size)?;
    cfg.set_opt("test_size", a.test_size)?;
    cfg.set_opt("task_sep", a.task_sep)?;
    cfg.set_opt("class_sep", a.class_sep)?;
    cfg.set_opt("noise", a.noise)?;
    let spec = cfg.harness()?.data;
    let tasks = gen_tasks(&spec)?;
    write_tasks(&a.out, &tasks)?;
    // record the effective data settings, defaults included
    cfg.set("seed", spec.seed)?;
    cfg.set("tasks", spec.tasks)?;
    cfg.set("dim", spec.dim)?;
    cfg.set("classes", spec.classes)?;
    cfg.set("train_size", spec.train)?;
    cfg.set("test_size", spec.test)?;
    cfg.set("task_sep", spec.task_sep)?;
    cfg.set("class_sep", spec.class_sep)?;
    cfg.set("noise", spec.noise)?;
    std::fs::write(a.out.join("config.txt"), cfg.to_text())?;
    eprintln!("wrote {} tasks to {}", tasks.len(), a.out.display());
    Ok(())
}

fn fine_tune(mut cfg: Config, a: FineTune) -> Result<()> {
    cfg.set_opt("hidden", a.hidden)?;
    cfg.set_opt("activation", a.activation)?;
    cfg.set_opt("pretrain_steps", a.pretrain_steps)?;
    cfg.set_opt("finetune_steps", a.finetune_steps)?;
    cfg.set_opt("finetune_lr", a.finetune_lr)?;
    cfg.set_opt("finetune_optimizer", a.finetune_optimizer)?;
    let tasks = read_tasks(&a.data)?;
    let mut harness = cfg.harness()?;
    harness.data.dim = tasks[0].train.x[0].len();
    harness.data.classes = tasks
        .iter()
        .flat_map(|t| t.train.label.iter().chain(&t.train.pretext))
        .max()
        .map_or(0, |m| m + 1);
    let wb = Workbench::from_tasks(&harness, tasks)?;
    let models = ModelFile::from_workbench(&wb)?;
    models.save(&a.out)?;
    let rows = models.tasks.iter().zip(&wb.tasks).map(|((id, p), t)| {
        vec![
            id.clone(),
            fmt(accuracy(&models.spec, &models.base, &t.test)),
            fmt(accuracy(&models.spec, p, &t.test)),
        ]
    });
    write_report(
        a.report.as_deref(),
        &["task", "base_accuracy", "fine_tuned_accuracy"],
        rows,
    )
}

fn tswitch(cfg: Config, a: TswitchCmd) -> Result<()> {
    let alpha = a.alpha.map_or_else(|| cfg.get_or("alpha", 0.9), Ok)?;
    let models = ModelFile::load(&a.models)?;
    let stored = models
        .task_vectors()?
        .iter()
        .map(|tv| {
            let mut t = StoredTask::from_switch(&TaskSwitch::build(tv, alpha)?);
            t.set_meta("kind", "tswitch");
            t.set_meta("alpha", alpha);
            Ok(t)
        })
        .collect::<Result<Vec<_>>>()?;
    save_tasks(&a.out, &stored, FormatPolicy::Auto)?;
    eprintln!("wrote {} switches to {}", stored.len(), a.out.display());
    Ok(())
}

fn compress(mut cfg: Config, a: Compress) -> Result<()> {
    cfg.set_opt("ppl", a.ppl)?;
    cfg.set_opt("lambda", a.lambda)?;
    cfg.set_opt("temp_T", a.temp_t)?;
    cfg.set_opt("steps", a.steps)?;
    cfg.set_opt("batch", a.batch)?;
    cfg.set_opt("exemplars", a.exemplars)?;
    let train_cfg = cfg.train()?;
    let harness = cfg.harness()?;
    let (exemplars, harness_seed) = (harness.exemplars, harness.seed());
    let models = ModelFile::load(&a.models)?;
    let data = read_tasks(&a.data)?;
    let selected: Vec<usize> = if a.task.is_empty() {
        (0..models.tasks.len()).collect()
    } else {
        a.task
            .iter()
            .map(|id| models.position(id))
            .collect::<Result<_>>()?
    };
    // one thread per task; each run is internally sequential and seeded
    let outcomes = std::thread::scope(|s| {
        let handles: Vec<_> = selected
            .iter()
            .map(|&k| {
                let (models, data, train_cfg) = (&models, &data, &train_cfg);
                s.spawn(move || compress_task(models, data, k, exemplars, harness_seed, train_cfg))
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("compression thread panicked"))
            .collect::<Result<Vec<_>>>()
    })?;
    let stored: Vec<StoredTask> = outcomes.iter().map(|o| o.compressed.clone()).collect();
    let encoded = save_tasks(&a.out, &stored, FormatPolicy::Auto)?;
    for (t, e) in stored.iter().zip(&encoded) {
        eprintln!(
            "{}: sparsity {:.4}, {} bits ({:.4} of dense f32)",
            t.task_id,
            t.sparsity(),
            e.formula_bits(),
            e.formula_bits() as f64 / (32 * t.total_len()) as f64
        );
    }
    if let Some(path) = a.log {
        let mut header = vec!["task"];
        header.extend(LogRow::HEADER);
        let rows = stored.iter().zip(&outcomes).flat_map(|(t, o)| {
            o.log.iter().map(|r| {
                let mut row = vec![t.task_id.clone()];
                row.extend(r.fields());
                row
            })
        });
        write_report(Some(&path), &header, rows)?;
    }
    Ok(())
}

const INSPECT_HEADER: [&str; 12] = [
    "task",
    "module",
    "format",
    "n",
    "nnz",
    "sparsity",
    "bits",
    "group",
    "payload_bits",
    "formula_bits",
    "file_bits",
    "expected_bits",
];

fn inspect(a: Inspect) -> Result<()> {
    let tasks = load(&a.file)?;
    let mut rows = Vec::new();
    for t in &tasks {
        for (name, m) in &t.modules {
            let r = ModuleReport::new(&t.task_id, name, m)?;
            rows.push(vec![
                r.task_id,
                r.module,
                r.format.name().to_string(),
                r.n.to_string(),
                r.nnz.to_string(),
                fmt(r.sparsity),
                r.bits.to_string(),
                r.group.to_string(),
                r.payload_bits.to_string(),
                r.formula_bits.to_string(),
                r.file_bits.to_string(),
                r.expected_bits.map(fmt).unwrap_or_default(),
            ]);
        }
    }
    write_report(a.out.as_deref(), &INSPECT_HEADER, rows)
}

fn task_data<'a>(data: &'a [SyntheticTask], id: &str) -> Result<&'a SyntheticTask> {
    data.iter()
        .find(|t| t.id == id)
        .ok_or_else(|| Error::Config(format!("no data for task `{id}`")))
}

fn probe(cfg: Config, a: Probe) -> Result<()> {
    let alpha = a.alpha.map_or_else(|| cfg.get_or("alpha", 0.9), Ok)?;
    let models = ModelFile::load(&a.models)?;
    let data = read_tasks(&a.data)?;
    let vectors = models.task_vectors()?;
    let mut rows: Vec<Vec<String>> = Vec::new();
    for tv in &vectors {
        let test = &task_data(&data, &tv.task_id)?.test;
        let eval = |t: &TaskVector| models.accuracy_with(t, test);
        let probe_rows = |r: Vec<ProbeRow>| {
            r.into_iter()
                .map(|r| vec![r.task, r.unit, fmt(r.accuracy), fmt(r.drop)])
                .collect::<Vec<_>>()
        };
        match a.kind {
            ProbeKind::Sparsity => rows.extend(probe_rows(probe_sparsity(tv, alpha, eval)?)),
            ProbeKind::Precision => rows.extend(probe_rows(probe_precision(tv, eval)?)),
            ProbeKind::Scale => {
                let curve: Vec<ScaleRow> = probe_scale(tv, &eta_grid(), eval)?;
                if let Some(eta) = best_eta(&curve) {
                    eprintln!("{}: best eta {eta}", tv.task_id);
                }
                rows.extend(
                    curve
                        .into_iter()
                        .map(|r| vec![r.task, fmt(r.eta), fmt(r.accuracy), fmt(r.drop)]),
                );
            }
        }
    }
    let header: &[&str] = match a.kind {
        ProbeKind::Scale => &ScaleRow::HEADER,
        _ => &ProbeRow::HEADER,
    };
    write_report(a.out.as_deref(), header, rows)
}

fn build_index(mut cfg: Config, a: BuildIndex) -> Result<()> {
    cfg.set_opt("centers", a.centers)?;
    cfg.set_opt("exemplars", a.exemplars)?;
    let harness = cfg.harness()?;
    let centers = cfg.get_or("centers", 20usize)?;
    let models = ModelFile::load(&a.models)?;
    let sets = models.query_sets(&read_tasks(&a.data)?, harness.exemplars, harness.seed())?;
    let index = if centers == 0 {
        QueryIndex::from_queries(&models.task_ids(), &sets)?
    } else {
        QueryIndex::from_centers(&models.task_ids(), &sets, centers, cfg.seed()?)?
    };
    index.save(&a.out)?;
    eprintln!(
        "index: {} tasks x {} references, dim {}",
        index.num_tasks(),
        index.per_task,
        index.dim
    );
    Ok(())
}

fn train_metric(mut cfg: Config, a: TrainMetric) -> Result<()> {
    cfg.set_opt("rank", a.rank)?;
    cfg.set_opt("neighbors", a.neighbors)?;
    cfg.set_opt("metric_epochs", a.epochs)?;
    cfg.set_opt("metric_lr", a.lr)?;
    cfg.set_opt("exemplars", a.exemplars)?;
    let harness = cfg.harness()?;
    let metric = cfg.metric()?;
    let models = ModelFile::load(&a.models)?;
    let mut index = QueryIndex::load(&a.index)?;
    if index.task_ids != models.task_ids() {
        return Err(Error::Config(
            "index and models list different tasks".into(),
        ));
    }
    let sets = models.query_sets(&read_tasks(&a.data)?, harness.exemplars, harness.seed())?;
    let history = index.train_metric(&sets, &metric)?;
    index.save(a.out.as_ref().unwrap_or(&a.index))?;
    eprintln!(
        "metric loss {:.6} -> {:.6}",
        history[0],
        history[history.len() - 1]
    );
    if let Some(path) = a.log {
        let rows = history
            .iter()
            .enumerate()
            .map(|(e, l)| vec![e.to_string(), fmt(*l)]);
        write_report(Some(&path), &["epoch", "loss"], rows)?;
    }
    Ok(())
}

/// `(name, labelled dataset)` pairs from directories (test splits) and CSVs.
fn eval_sets(paths: &[PathBuf]) -> Result<Vec<(String, Dataset)>> {
    let mut out = Vec::new();
    for p in paths {
        if p.is_dir() {
            out.extend(read_tasks(p)?.into_iter().map(|t| (t.id, t.test)));
        } else {
            let name = p
                .file_stem()
                .and_then(|s| s.to_str())
                .unwrap_or("data")
                .to_string();
            out.push((name, Dataset::read_csv(p)?));
        }
    }
    Ok(out)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn merge_eval(mut cfg: Config, a: MergeEval) -> Result<()> {
    cfg.set_opt("neighbors", a.neighbors)?;
    let neighbors = cfg.metric()?.neighbors;
    let models = ModelFile::load(&a.models)?;
    let index = QueryIndex::load(&a.index)?;
    let vectors = bundle_vectors(&load_tasks(&a.bundle)?, &index.task_ids)?;
    let m = merger(&models, &vectors, &index, neighbors)?;
    let mut rows = Vec::new();
    let mut accs = Vec::new();
    for (name, ds) in eval_sets(&a.data)? {
        let acc = merge_accuracy(&m, &ds)?;
        accs.push(acc);
        rows.push(vec![name, ds.len().to_string(), fmt(acc)]);
    }
    rows.push(vec!["mean".into(), String::new(), fmt(mean(&accs))]);
    write_report(a.out.as_deref(), &["dataset", "samples", "accuracy"], rows)
}

fn load_vectors(models: &ModelFile, bundle: Option<&Path>) -> Result<Vec<TaskVector>> {
    match bundle {
        Some(p) => bundle_vectors(&load_tasks(p)?, &models.task_ids()),
        None => models.task_vectors(),
    }
}

fn baseline(a: Baseline) -> Result<()> {
    let models = ModelFile::load(&a.models)?;
    let data = read_tasks(&a.data)?;
    let vectors = load_vectors(&models, a.bundle.as_deref())?;
    let modes: Vec<StaticMerge> = match (a.mode, a.lambda) {
        (BaselineMode::WeightAverage, _) => vec![StaticMerge::WeightAverage],
        (BaselineMode::TaskArithmetic, Some(lambda)) => {
            vec![StaticMerge::TaskArithmetic { lambda }]
        }
        (BaselineMode::TaskArithmetic, None) => LAMBDA_GRID
            .iter()
            .map(|&lambda| StaticMerge::TaskArithmetic { lambda })
            .collect(),
    };
    let mut rows = Vec::new();
    for mode in modes {
        let merged = static_merge(&models.base, &vectors, mode)?;
        let lambda = match mode {
            StaticMerge::WeightAverage => String::new(),
            StaticMerge::TaskArithmetic { lambda } => fmt(lambda),
        };
        let mut accs = Vec::new();
        for id in models.task_ids() {
            let acc = accuracy(&models.spec, &merged, &task_data(&data, &id)?.test);
            accs.push(acc);
            rows.push(vec![mode.name(), lambda.clone(), id, fmt(acc)]);
        }
        rows.push(vec![mode.name(), lambda, "mean".into(), fmt(mean(&accs))]);
    }
    write_report(
        a.out.as_deref(),
        &["method", "lambda", "task", "accuracy"],
        rows,
    )
}

fn decompress(a: Decompress) -> Result<()> {
    let raw: Vec<StoredTask> = load_tasks(&a.bundle)?
        .iter()
        .map(|t| {
            let mut r = StoredTask::from_params(t.task_id.clone(), &t.to_params()?);
            r.metadata = t.metadata.clone();
            Ok(r)
        })
        .collect::<Result<_>>()?;
    save_tasks(&a.out, &raw, FormatPolicy::Auto)?;
    Ok(())
}

fn evaluate(a: Evaluate) -> Result<()> {
    let models = ModelFile::load(&a.models)?;
    let data = read_tasks(&a.data)?;
    let vectors = load_vectors(&models, a.bundle.as_deref())?;
    let mut rows = Vec::new();
    for tv in &vectors {
        let acc = models.accuracy_with(tv, &task_data(&data, &tv.task_id)?.test)?;
        rows.push(vec![tv.task_id.clone(), fmt(acc)]);
    }
    write_report(a.out.as_deref(), &["task", "accuracy"], rows)
}
