//! `reps`: sample, score, train and evaluate point cloud samplers.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 numerical failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use reps_core::geometry::{farthest_point_sample, random_sample, seeded_start, voxel_sample, voxel_sample_to_count};
use reps_core::io::{
    ablation_csv, eval_csv, eval_summary, load_dataset_dir, load_model, read_cloud, save_model, score_csv,
    write_cloud, SavedModel,
};
use reps_core::tasks::{
    eval_samplers, run_ablation, synthetic_split, AblationConfig, ClassifierConfig, LabeledCloud,
    PointNetClassifier, RepsClassifier, Sampler, Split, CLASS_NAMES,
};
use reps_core::training::{train, Model, TrainConfig};
use reps_core::Error;

#[derive(Debug, Parser)]
#[command(name = "reps", version, about = "Reconstruction-scored point cloud sampling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Downsample one cloud.
    Sample(SampleArgs),
    /// Write the per-point score table of one cloud as CSV.
    Score(ScoreArgs),
    /// Train a classifier and save its weights.
    Train(TrainArgs),
    /// Compare samplers under a frozen task network.
    Eval(EvalArgs),
    /// Rewrite a cloud in the format implied by the output extension.
    Convert(ConvertArgs),
    /// Run the neighbourhood-size and blend-weight sweeps.
    Ablate(AblateArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Method {
    Random,
    Fps,
    Voxel,
    Reps,
}

#[derive(Debug, Args)]
struct SampleArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_enum)]
    method: Method,
    /// Number of points to keep.
    #[arg(long)]
    m: Option<usize>,
    /// Sampling ratio N/M; used when --m is absent.
    #[arg(long)]
    ratio: Option<f64>,
    /// Fixed voxel edge for --method voxel; otherwise the size is searched to hit M.
    #[arg(long)]
    voxel_size: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Farthest-point prefilter to 2M before scoring.
    #[arg(long)]
    prefilter: bool,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    weights: PathBuf,
    #[arg(long)]
    output: PathBuf,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModelKind {
    Reps,
    Pointnet,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Width {
    /// 64-wide hidden layers.
    Full,
    /// 16/32-wide hidden layers for quick CPU runs.
    Desk,
}

#[derive(Debug, Args)]
struct DataArgs {
    /// `synthetic` or a directory holding `train/` and `test/` class folders.
    #[arg(long)]
    dataset: String,
    /// Synthetic training clouds per class.
    #[arg(long, default_value_t = 200)]
    per_class: usize,
    /// Synthetic test clouds per class.
    #[arg(long, default_value_t = 50)]
    test_per_class: usize,
    /// Points per synthetic cloud.
    #[arg(long, default_value_t = 512)]
    points: usize,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out_weights: PathBuf,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, value_enum, default_value_t = ModelKind::Reps)]
    model: ModelKind,
    #[arg(long, value_enum, default_value_t = Width::Full)]
    width: Width,
    /// Skip the per-epoch test-set accuracy.
    #[arg(long)]
    no_validate: bool,
    /// Per-epoch JSON lines; printed to stdout when absent.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    task_weights: PathBuf,
    /// Trained classifier whose scorer drives the `reps` sampler.
    #[arg(long)]
    sampler_weights: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_values_t = [512, 256, 128, 64, 32])]
    sizes: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = ["random".to_string(), "fps".into(), "voxel".into(), "reps".into()])]
    samplers: Vec<String>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    output: PathBuf,
    /// JSON summary; defaults to the CSV path with a `.json` extension.
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ConvertArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
}

#[derive(Debug, Args)]
struct AblateArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    output: PathBuf,
    #[arg(long, value_delimiter = ',', default_values_t = [4, 8, 16, 32])]
    ks: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.2, 0.4, 0.6, 0.8, 1.0])]
    alphas: Vec<f64>,
    /// Neighbourhood size of the model reused by the blend-weight sweep.
    #[arg(long, default_value_t = 16)]
    base_k: usize,
    #[arg(long, default_value_t = 10)]
    epochs: usize,
    #[arg(long, default_value_t = 1e-3)]
    lr: f64,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value_t = Width::Full)]
    width: Width,
}

enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn usage<T>(msg: impl Into<String>) -> CliResult<T> {
    Err(CliError::Usage(msg.into()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let result = configure_threads().and_then(|()| run(cli.command));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Core(e)) => {
            eprintln!("error: {e}");
            match e {
                Error::InvalidState(_) => ExitCode::from(3),
                _ => ExitCode::from(2),
            }
        }
    }
}

/// `REPS_THREADS` caps the worker pool; 0 or unset means one per core.
fn configure_threads() -> CliResult<()> {
    let Ok(raw) = std::env::var("REPS_THREADS") else {
        return Ok(());
    };
    let Ok(n) = raw.trim().parse::<usize>() else {
        return usage(format!("REPS_THREADS must be a non-negative integer, got {raw:?}"));
    };
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure {n} threads: {e}")))?;
    }
    Ok(())
}

fn run(command: Command) -> CliResult<()> {
    match command {
        Command::Sample(a) => cmd_sample(a),
        Command::Score(a) => cmd_score(a),
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Convert(a) => cmd_convert(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

fn check_alpha(alpha: Option<f64>) -> CliResult<Option<f64>> {
    match alpha {
        Some(a) if !(0.0..=1.0).contains(&a) => usage(format!("--alpha must lie in [0, 1], got {a}")),
        other => Ok(other),
    }
}

fn load_reps(path: &Path, k: Option<usize>) -> CliResult<RepsClassifier> {
    let (model, _) = load_model(path)?;
    let SavedModel::Reps(model) = model else {
        return usage(format!("{} holds a {} model, not a reps model", path.display(), model.kind()));
    };
    if let Some(k) = k {
        if k != model.config.k {
            return usage(format!("--k {k} does not match the weights, which were trained with k = {}", model.config.k));
        }
    }
    Ok(model)
}

fn sample_size(a: &SampleArgs, n: usize) -> CliResult<Option<usize>> {
    let m = match (a.m, a.ratio) {
        (Some(m), _) => m,
        (None, Some(r)) if r >= 1.0 && r.is_finite() => ((n as f64 / r).round() as usize).max(1),
        (None, Some(r)) => return usage(format!("--ratio must be a finite number >= 1, got {r}")),
        (None, None) if matches!(a.method, Method::Voxel) && a.voxel_size.is_some() => return Ok(None),
        (None, None) => return usage("one of --m or --ratio is required"),
    };
    Ok(Some(m))
}

fn cmd_sample(a: SampleArgs) -> CliResult<()> {
    let alpha = check_alpha(a.alpha)?;
    if matches!(a.method, Method::Reps) && a.weights.is_none() {
        return usage("--method reps needs --weights");
    }
    let cloud = read_cloud(&a.input, None)?;
    let m = sample_size(&a, cloud.len())?;
    let picked = match (a.method, m) {
        (Method::Random, Some(m)) => random_sample(&cloud, m, a.seed)?,
        (Method::Fps, Some(m)) => farthest_point_sample(&cloud, m, seeded_start(&cloud, a.seed))?,
        (Method::Voxel, _) if a.voxel_size.is_some() => {
            let picked = voxel_sample(&cloud, a.voxel_size.unwrap_or_default())?;
            match m {
                Some(m) if picked.m() > m => farthest_point_sample(&cloud.subset(&picked.indices), m, 0)?
                    .lift(&picked.indices, cloud.len()),
                _ => picked,
            }
        }
        (Method::Voxel, Some(m)) => voxel_sample_to_count(&cloud, m)?,
        (Method::Reps, Some(m)) => {
            let model = load_reps(a.weights.as_deref().unwrap_or(Path::new("")), a.k)?;
            let alpha = alpha.unwrap_or(model.config.alpha);
            model.sampler().sample(&cloud, m, alpha, a.seed, a.prefilter)?
        }
        (_, None) => return usage("one of --m or --ratio is required"),
    };
    write_cloud(&a.output, &cloud.subset(&picked.indices), None)?;
    Ok(())
}

fn cmd_score(a: ScoreArgs) -> CliResult<()> {
    let alpha = check_alpha(a.alpha)?;
    let model = load_reps(&a.weights, a.k)?;
    let cloud = read_cloud(&a.input, None)?;
    let details = model.sampler().scores(&cloud, alpha.unwrap_or(model.config.alpha), a.seed)?;
    std::fs::write(&a.output, score_csv(&cloud, &details.table)?).map_err(Error::from)?;
    Ok(())
}

struct Data {
    train: Vec<LabeledCloud>,
    test: Vec<LabeledCloud>,
    classes: Vec<String>,
}

/// Synthetic splits come from independent streams of `seed`; directory
/// datasets need `train/` and, when `need_test`, `test/`.
fn load_data(d: &DataArgs, seed: u64, need_train: bool, need_test: bool) -> CliResult<Data> {
    if d.dataset == "synthetic" {
        let train = if need_train { synthetic_split(Split::Train, d.per_class, d.points, seed)? } else { vec![] };
        let test = if need_test { synthetic_split(Split::Test, d.test_per_class, d.points, seed)? } else { vec![] };
        return Ok(Data { train, test, classes: CLASS_NAMES.iter().map(|s| s.to_string()).collect() });
    }
    let root = Path::new(&d.dataset);
    if !root.is_dir() {
        return usage(format!("--dataset must be `synthetic` or a directory, got {:?}", d.dataset));
    }
    let mut classes = None;
    let mut split = |name: &str, needed: bool| -> CliResult<Vec<LabeledCloud>> {
        if !needed {
            return Ok(vec![]);
        }
        let ds = load_dataset_dir(root, name)?;
        match &classes {
            Some(c) if c != &ds.classes => {
                return Err(CliError::Core(Error::InvalidArgument(format!(
                    "class folders of {name}/ differ from those of the other split"
                ))))
            }
            Some(_) => {}
            None => classes = Some(ds.classes),
        }
        Ok(ds.clouds)
    };
    let train = split("train", need_train)?;
    let test = split("test", need_test)?;
    Ok(Data { train, test, classes: classes.unwrap_or_default() })
}

fn classifier_config(width: Width, num_classes: usize, k: Option<usize>, alpha: Option<f64>) -> ClassifierConfig {
    let base = match width {
        Width::Full => ClassifierConfig::default(),
        Width::Desk => ClassifierConfig::desk(),
    };
    ClassifierConfig {
        num_classes,
        k: k.unwrap_or(base.k),
        alpha: alpha.unwrap_or(base.alpha),
        ..base
    }
}

fn cmd_train(a: TrainArgs) -> CliResult<()> {
    let alpha = check_alpha(a.alpha)?;
    let has_test = a.data.dataset == "synthetic" || Path::new(&a.data.dataset).join("test").is_dir();
    let data = load_data(&a.data, a.seed, true, has_test && !a.no_validate)?;
    let num_classes = data.classes.len().max(data.train.iter().map(|c| c.label + 1).max().unwrap_or(0));
    let base = classifier_config(a.width, num_classes, a.k, alpha);
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        lr: a.lr,
        seed: a.seed,
        alpha: base.alpha,
        k: base.k,
        ..TrainConfig::default()
    };
    let (model, report) = match a.model {
        ModelKind::Reps => {
            let mut m = RepsClassifier::new(base, a.seed)?;
            let report = train(&mut m, &data.train, &data.test, &cfg)?;
            (SavedModel::Reps(m), report)
        }
        ModelKind::Pointnet => {
            let mut m = PointNetClassifier::new(num_classes, a.seed)?;
            let report = train(&mut m, &data.train, &data.test, &cfg)?;
            (SavedModel::PointNet(m), report)
        }
    };
    save_model(&a.out_weights, &model, &data.classes)?;
    let lines = report.to_json_lines()?;
    match a.report {
        Some(path) => std::fs::write(path, lines).map_err(Error::from)?,
        None => print!("{lines}"),
    }
    Ok(())
}

fn eval_with<M: Model>(task: &M, a: &EvalArgs, data: &Data) -> CliResult<Vec<reps_core::tasks::EvalRow>> {
    let reps_model = match &a.sampler_weights {
        Some(p) => Some(load_reps(p, None)?),
        None => None,
    };
    let alpha = check_alpha(a.alpha)?;
    let mut samplers = Vec::new();
    for name in &a.samplers {
        samplers.push(match name.as_str() {
            "identity" => Sampler::Identity,
            "random" => Sampler::Random,
            "fps" => Sampler::Fps,
            "voxel" => Sampler::Voxel,
            "reps" => match &reps_model {
                Some(m) => Sampler::Reps { sampler: m.sampler(), alpha: alpha.unwrap_or(m.config.alpha) },
                None => return usage("the reps sampler needs --sampler-weights"),
            },
            other => return usage(format!("unknown sampler {other:?}")),
        });
    }
    Ok(eval_samplers(&data.test, task, &samplers, &a.sizes, a.seed)?)
}

fn cmd_eval(a: EvalArgs) -> CliResult<()> {
    let data = load_data(&a.data, a.seed, false, true)?;
    let (task, _) = load_model(&a.task_weights)?;
    let rows = match &task {
        SavedModel::Reps(m) => eval_with(m, &a, &data)?,
        SavedModel::PointNet(m) => eval_with(m, &a, &data)?,
    };
    std::fs::write(&a.output, eval_csv(&rows)).map_err(Error::from)?;
    let summary_path = a.summary.clone().unwrap_or_else(|| a.output.with_extension("json"));
    let mut json = serde_json::to_string_pretty(&eval_summary(&rows)).map_err(Error::from)?;
    json.push('\n');
    std::fs::write(summary_path, json).map_err(Error::from)?;
    Ok(())
}

fn cmd_convert(a: ConvertArgs) -> CliResult<()> {
    let cloud = read_cloud(&a.input, None)?;
    write_cloud(&a.output, &cloud, None)?;
    Ok(())
}

fn cmd_ablate(a: AblateArgs) -> CliResult<()> {
    for &alpha in &a.alphas {
        check_alpha(Some(alpha))?;
    }
    let data = load_data(&a.data, a.seed, true, true)?;
    let num_classes = data.classes.len();
    let cfg = AblationConfig {
        ks: a.ks.clone(),
        alphas: a.alphas.clone(),
        base: classifier_config(a.width, num_classes, Some(a.base_k), None),
        train: TrainConfig {
            epochs: a.epochs,
            batch_size: a.batch_size,
            lr: a.lr,
            seed: a.seed,
            ..TrainConfig::default()
        },
        model_seed: a.seed,
    };
    let rows = run_ablation(&data.train, &data.test, &cfg)?;
    std::fs::write(&a.output, ablation_csv(&rows)).map_err(Error::from)?;
    Ok(())
}
