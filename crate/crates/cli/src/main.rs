//! `scanscribe`: generate phantoms, train and run ROI models, prescribe and
//! verify fields of view, and render overlays.

mod config;
mod render;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use scanscribe::alias::verify_prescription;
use scanscribe::data::{Dataset, DatasetRecord, PhantomSpec, ShiftSets, Split};
use scanscribe::fov::prescribe_stack;
use scanscribe::masking::{ThresholdMode, ThresholdPolicy};
use scanscribe::models::{predict_roi, ArchitectureConfig, ArchitectureKind, BoxAxis, Model};
use scanscribe::nn::optim::AdamConfig;
use scanscribe::stats::{evaluate, t_test, train, LrSchedule, TTestVariant, TrainConfig};
use scanscribe::{BBox, PhaseAxis};

use config::{require, resolve};
use render::BoxSpec;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] scanscribe::Error),
}

impl CliError {
    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Core(e) => e.code(),
        }
    }

    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Core(e) if e.is_numeric() => 4,
            CliError::Core(_) => 3,
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Core(e.into())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Parser)]
#[command(name = "scanscribe", version, about = "ROI prediction and alias-free FOV prescription for MRI localizers")]
struct Cli {
    /// JSON file supplying defaults; flags take precedence.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic phantom dataset.
    GenData(GenDataArgs),
    /// Train one boundary-pair model.
    Train(TrainArgs),
    /// Predict the ROI of one stack.
    Predict(PredictArgs),
    /// Prescribe the smallest alias-free FOV for one stack.
    Prescribe(PrescribeArgs),
    /// Score a model pair on a dataset split, optionally against a baseline pair.
    Evaluate(EvaluateArgs),
    /// Check an FOV against an object and ROI by brute-force folding.
    Verify(VerifyArgs),
    /// Write one PPM overlay per slice.
    Render(RenderArgs),
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct GenDataArgs {
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    /// Defaults to SCANSCRIBE_SEED, then 0.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    size: Option<usize>,
    #[arg(long)]
    max_slices: Option<usize>,
    #[arg(long)]
    min_slices: Option<usize>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct TrainArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// stacked2d, conv3d or attention.
    #[arg(long)]
    kind: Option<String>,
    /// lr or tb.
    #[arg(long)]
    axis: Option<String>,
    /// Weights file to write.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Loss-history CSV; defaults to `<out>.history.csv`.
    #[arg(long)]
    history: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    no_flip: bool,
    #[arg(long)]
    no_shift: bool,
    /// Keeps the learning rate fixed instead of cosine decay.
    #[arg(long)]
    constant_lr: bool,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct StackRef {
    /// Dataset directory holding the stack.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Stack id within the dataset.
    #[arg(long)]
    stack: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct PredictArgs {
    #[command(flatten)]
    #[serde(flatten)]
    stack: StackRef,
    #[arg(long)]
    weights_lr: Option<PathBuf>,
    #[arg(long)]
    weights_tb: Option<PathBuf>,
    /// Expected architecture; checked against both weight files.
    #[arg(long)]
    kind: Option<String>,
    /// Output JSON; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct PrescribeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    stack: StackRef,
    /// ROI as t,b,l,r; otherwise predicted with --weights-lr/--weights-tb.
    #[arg(long)]
    roi: Option<String>,
    #[arg(long)]
    weights_lr: Option<PathBuf>,
    #[arg(long)]
    weights_tb: Option<PathBuf>,
    /// relative or absolute.
    #[arg(long)]
    threshold_mode: Option<String>,
    #[arg(long)]
    threshold: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct EvaluateArgs {
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// train, val or test.
    #[arg(long)]
    split: Option<String>,
    #[arg(long)]
    weights_lr: Option<PathBuf>,
    #[arg(long)]
    weights_tb: Option<PathBuf>,
    #[arg(long)]
    baseline_lr: Option<PathBuf>,
    #[arg(long)]
    baseline_tb: Option<PathBuf>,
    /// pooled or welch.
    #[arg(long)]
    variant: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct VerifyArgs {
    /// Object mask as t,b,l,r.
    #[arg(long)]
    object: Option<String>,
    #[arg(long)]
    roi: Option<String>,
    #[arg(long)]
    fov: Option<String>,
    /// rows or columns.
    #[arg(long)]
    phase_axis: Option<String>,
}

#[derive(Args, Debug, Default, Serialize, Deserialize)]
#[serde(default)]
struct RenderArgs {
    #[command(flatten)]
    #[serde(flatten)]
    stack: StackRef,
    /// Repeatable: name=color:t,b,l,r.
    #[arg(long, num_args = 1..)]
    boxes: Vec<String>,
    /// Files are written as `<out>_<slice>.ppm`.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse<T: std::str::FromStr>(s: &str, what: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    s.parse().map_err(|e| CliError::Usage(format!("--{what}: {e}")))
}

fn seed_or_env(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var("SCANSCRIBE_SEED") {
        Ok(v) => parse(&v, "seed (SCANSCRIBE_SEED)"),
        Err(_) => Ok(0),
    }
}

fn envelope(command: &str, config: &Value, result: Value) -> Value {
    json!({
        "tool": "scanscribe",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config": config,
        "result": result,
    })
}

fn write_json(path: Option<&Path>, v: &Value) -> Result<()> {
    let mut text = serde_json::to_string_pretty(v)?;
    text.push('\n');
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn load_record(r: &StackRef) -> Result<(Dataset, String)> {
    let dir = require(&r.dataset, "dataset")?;
    let id = require(&r.stack, "stack")?;
    let ds = Dataset::load(&dir)?;
    if ds.get(&id).is_none() {
        return Err(CliError::Core(scanscribe::Error::MalformedManifest(format!(
            "no stack {id} in {}",
            dir.display()
        ))));
    }
    Ok((ds, id))
}

fn record<'a>(ds: &'a Dataset, id: &str) -> &'a DatasetRecord {
    ds.get(id).expect("checked by load_record")
}

fn load_pair(lr: &Path, tb: &Path, kind: Option<ArchitectureKind>) -> Result<(Model, Model)> {
    Ok(match kind {
        Some(k) => (
            Model::load_expecting(lr, k, BoxAxis::LeftRight)?,
            Model::load_expecting(tb, k, BoxAxis::TopBottom)?,
        ),
        None => (Model::load(lr)?, Model::load(tb)?),
    })
}

fn cmd_gen_data(flags: &GenDataArgs, cfg: Option<&Value>) -> Result<()> {
    let (a, eff) = resolve(flags, cfg, "gen-data")?;
    let out = require(&a.out, "out")?;
    let count = a.count.unwrap_or(100);
    let size = a.size.unwrap_or(64);
    let max_slices = a.max_slices.unwrap_or(8);
    let seed = seed_or_env(a.seed)?;
    if count == 0 || size == 0 || max_slices == 0 {
        return Err(CliError::Usage("count, size and max-slices must be positive".into()));
    }
    let mut spec = PhantomSpec::new(size, max_slices, seed);
    if let Some(m) = a.min_slices {
        spec.min_slices = m;
    }
    spec.validate()?;
    let mut ds = Dataset::generate(&spec, count)?;
    let mut eff = eff;
    eff["seed"] = json!(seed);
    ds.run = Some(envelope("gen-data", &eff, Value::Null));
    ds.save(&out)?;
    let n = |s| ds.split(s).len();
    println!(
        "wrote {count} stacks to {} (train {}, val {}, test {})",
        out.display(),
        n(Split::Train),
        n(Split::Val),
        n(Split::Test)
    );
    Ok(())
}

fn cmd_train(flags: &TrainArgs, cfg: Option<&Value>) -> Result<()> {
    let (a, mut eff) = resolve(flags, cfg, "train")?;
    let dir = require(&a.dataset, "dataset")?;
    let out = require(&a.out, "out")?;
    let axis: BoxAxis = parse(&require(&a.axis, "axis")?, "axis")?;
    let kind: ArchitectureKind = parse(a.kind.as_deref().unwrap_or("attention"), "kind")?;
    let seed = seed_or_env(a.seed)?;
    eff["seed"] = json!(seed);
    let ds = Dataset::load(&dir)?;
    let first = ds
        .records
        .first()
        .ok_or_else(|| scanscribe::Error::EmptySplit("dataset".into()))?;
    let size = first.stack.height();
    let max_slices = ds
        .generator
        .as_ref()
        .map(|g| g.max_slices)
        .unwrap_or_else(|| ds.records.iter().map(|r| r.stack.len()).max().unwrap_or(1));
    let arch = ArchitectureConfig::new(kind, size, max_slices);
    let tc = TrainConfig {
        epochs: a.epochs.unwrap_or(20),
        batch_size: a.batch_size.unwrap_or(8),
        adam: AdamConfig {
            lr: a.lr.unwrap_or(1e-3),
            ..AdamConfig::default()
        },
        seed,
        flip: !a.no_flip,
        shifts: (!a.no_shift).then(|| ShiftSets::scaled(size)),
        max_steps: a.max_steps,
        schedule: if a.constant_lr {
            LrSchedule::Constant
        } else {
            LrSchedule::default()
        },
        ..TrainConfig::default()
    };
    let outcome = train(&arch, axis, &ds.split(Split::Train), &ds.split(Split::Val), &tc)?;
    outcome.model.save(&out)?;
    let history = a
        .history
        .clone()
        .unwrap_or_else(|| PathBuf::from(format!("{}.history.csv", out.display())));
    std::fs::write(&history, outcome.history_csv())?;
    let result = json!({
        "weights": out,
        "history": history,
        "architecture": arch,
        "axis": axis,
        "parameters": outcome.model.parameter_count(),
        "best_epoch": outcome.best_epoch,
        "rejected_shifts": outcome.rejected_shifts,
        "epochs": outcome.epochs,
    });
    write_json(Some(&PathBuf::from(format!("{}.json", out.display()))), &envelope("train", &eff, result))?;
    let last = outcome.epochs.last();
    println!(
        "trained {kind}/{axis}: best epoch {}, final train loss {:.6}",
        outcome.best_epoch,
        last.map(|e| e.train_loss).unwrap_or(f64::NAN)
    );
    Ok(())
}

fn cmd_predict(flags: &PredictArgs, cfg: Option<&Value>) -> Result<()> {
    let (a, eff) = resolve(flags, cfg, "predict")?;
    let (ds, id) = load_record(&a.stack)?;
    let kind = a.kind.as_deref().map(|k| parse(k, "kind")).transpose()?;
    let (lr, tb) = load_pair(&require(&a.weights_lr, "weights-lr")?, &require(&a.weights_tb, "weights-tb")?, kind)?;
    let p = predict_roi(&record(&ds, &id).stack, &lr, &tb)?;
    let result = json!({
        "stack": id,
        "kind": lr.kind(),
        "roi": {"top": p.roi.top, "bottom": p.roi.bottom, "left": p.roi.left, "right": p.roi.right},
        "swapped_lr": p.swapped_lr,
        "swapped_tb": p.swapped_tb,
        "raw_lr": p.raw_lr,
        "raw_tb": p.raw_tb,
    });
    write_json(a.out.as_deref(), &envelope("predict", &eff, result))
}

fn cmd_prescribe(flags: &PrescribeArgs, cfg: Option<&Value>) -> Result<()> {
    let (a, eff) = resolve(flags, cfg, "prescribe")?;
    let (ds, id) = load_record(&a.stack)?;
    let stack = &record(&ds, &id).stack;
    let roi: BBox = match (&a.roi, &a.weights_lr, &a.weights_tb) {
        (Some(r), _, _) => parse(r, "roi")?,
        (None, Some(lr), Some(tb)) => {
            let (lr, tb) = load_pair(lr, tb, None)?;
            predict_roi(stack, &lr, &tb)?.roi
        }
        _ => return Err(CliError::Usage("give --roi or both --weights-lr and --weights-tb".into())),
    };
    let mode: ThresholdMode = parse(a.threshold_mode.as_deref().unwrap_or("relative"), "threshold-mode")?;
    let policy = ThresholdPolicy::new(mode, a.threshold.unwrap_or(ThresholdPolicy::default().value))?;
    let report = prescribe_stack(stack, &roi, &policy)?;
    let result = json!({
        "stack": id,
        "all_verdicts_pass": report.all_verdicts_pass(),
        "skipped_slices": report.skipped(),
        "report": report,
    });
    write_json(a.out.as_deref(), &envelope("prescribe", &eff, result))
}

fn cmd_evaluate(flags: &EvaluateArgs, cfg: Option<&Value>) -> Result<()> {
    let (a, eff) = resolve(flags, cfg, "evaluate")?;
    let ds = Dataset::load(&require(&a.dataset, "dataset")?)?;
    let out = require(&a.out, "out")?;
    let split: Split = parse(a.split.as_deref().unwrap_or("test"), "split")?;
    let variant = match a.variant.as_deref().unwrap_or("pooled") {
        "pooled" => TTestVariant::Pooled,
        "welch" => TTestVariant::Welch,
        other => return Err(CliError::Usage(format!("--variant: unknown {other:?}"))),
    };
    let records = ds.split(split);
    let (lr, tb) = load_pair(&require(&a.weights_lr, "weights-lr")?, &require(&a.weights_tb, "weights-tb")?, None)?;
    let table = evaluate(&lr, &tb, &records)?;
    std::fs::create_dir_all(&out)?;
    std::fs::write(out.join("metrics.csv"), table.to_csv())?;
    println!("{} on {split}: IoU {}  boundary error {} px", lr.kind(), table.iou, table.boundary_error);
    let mut result = json!({
        "split": split,
        "kind": lr.kind(),
        "cases": table.cases.len(),
        "iou": table.iou,
        "boundary_error": table.boundary_error,
    });
    match (&a.baseline_lr, &a.baseline_tb) {
        (Some(blr), Some(btb)) => {
            let (blr, btb) = load_pair(blr, btb, None)?;
            let base = evaluate(&blr, &btb, &records)?;
            std::fs::write(out.join("baseline_metrics.csv"), base.to_csv())?;
            let t_iou = t_test(&table.ious(), &base.ious(), variant)?;
            let t_err = t_test(&table.boundary_errors(), &base.boundary_errors(), variant)?;
            println!("baseline {}: IoU {}  boundary error {} px", blr.kind(), base.iou, base.boundary_error);
            println!("t-test IoU: {t_iou}");
            println!("t-test boundary error: {t_err}");
            result["baseline"] = json!({
                "kind": blr.kind(),
                "iou": base.iou,
                "boundary_error": base.boundary_error,
            });
            result["t_test"] = json!({"variant": variant, "iou": t_iou, "boundary_error": t_err});
        }
        (None, None) => {}
        _ => return Err(CliError::Usage("--baseline-lr and --baseline-tb go together".into())),
    }
    write_json(Some(&out.join("summary.json")), &envelope("evaluate", &eff, result))
}

fn cmd_verify(flags: &VerifyArgs, cfg: Option<&Value>) -> Result<()> {
    let (a, eff) = resolve(flags, cfg, "verify")?;
    let object: BBox = parse(&require(&a.object, "object")?, "object")?;
    let roi: BBox = parse(&require(&a.roi, "roi")?, "roi")?;
    let fov: BBox = parse(&require(&a.fov, "fov")?, "fov")?;
    let axis: PhaseAxis = parse(a.phase_axis.as_deref().unwrap_or("rows"), "phase-axis")?;
    let v = verify_prescription(&object, &roi, &fov, axis)?;
    write_json(None, &envelope("verify", &eff, serde_json::to_value(v)?))
}

fn cmd_render(flags: &RenderArgs, cfg: Option<&Value>) -> Result<()> {
    let (a, _) = resolve(flags, cfg, "render")?;
    let out = require(&a.out, "out")?;
    let boxes: Vec<BoxSpec> = a.boxes.iter().map(|s| s.parse()).collect::<Result<_>>()?;
    let (ds, id) = load_record(&a.stack)?;
    let stack = &record(&ds, &id).stack;
    for (k, slice) in stack.slices().iter().enumerate() {
        let img = render::render(slice, stack.height(), stack.width(), &boxes);
        let path = PathBuf::from(format!("{}_{k}.ppm", out.display()));
        img.write(&path)?;
    }
    println!("wrote {} overlays with prefix {}", stack.len(), out.display());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let cfg = cli.config.as_deref().map(config::read_config).transpose()?;
    let cfg = cfg.as_ref();
    match &cli.command {
        Command::GenData(a) => cmd_gen_data(a, cfg),
        Command::Train(a) => cmd_train(a, cfg),
        Command::Predict(a) => cmd_predict(a, cfg),
        Command::Prescribe(a) => cmd_prescribe(a, cfg),
        Command::Evaluate(a) => cmd_evaluate(a, cfg),
        Command::Verify(a) => cmd_verify(a, cfg),
        Command::Render(a) => cmd_render(a, cfg),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace('"', "'");
            eprintln!("error: kind={} message=\"{msg}\"", e.kind());
            ExitCode::from(e.exit_code())
        }
    }
}
