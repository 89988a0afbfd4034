//! The `gated-ssl` command line.
//!
//! Subcommands: `prepare`, `train`, `eval`, `report`, `selftest` and
//! `dump-transforms`. Exit status is 0 on success, 2 for usage,
//! configuration or data problems and 3 for numeric failures.

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use image::{Rgb, RgbImage};
use serde::Serialize;

use crate::datasets::{load_dataset, write_index_file, DatasetName, DatasetSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::checkpoint::Checkpoint;
use crate::model::BackboneName;
use crate::oracles::{enumerate_outcomes, run_suite, Implementations};
use crate::report::{build_table, collect_runs, write_csv};
use crate::training::{build_index, evaluate, evaluate_ssl, latest_checkpoint, prepare_data, run, RunOptions, TrainConfig};
use crate::transforms::{parse_task_list, ImageTensor, TaskKind};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "gated-ssl", version, about = "Gated self-supervised learning for long-tailed image classification")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a long-tailed subsample index for a dataset.
    Prepare(PrepareArgs),
    /// Train a model into a run directory.
    Train(TrainArgs),
    /// Evaluate the newest (or a given) checkpoint of a run.
    Eval(EvalArgs),
    /// Tabulate final accuracies of several runs.
    Report(ReportArgs),
    /// Run the reference-implementation checks.
    Selftest,
    /// Write PNG grids of every transform outcome for one image.
    DumpTransforms(DumpArgs),
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// cifar10, cifar100, tiny-imagenet or synthetic.
    #[arg(long)]
    pub dataset: Option<DatasetName>,
    /// Directory holding the dataset files.
    #[arg(long = "data-root", env = "DATA_ROOT")]
    pub data_root: Option<PathBuf>,
}

impl DataArgs {
    fn spec(&self, default: DatasetName) -> DatasetSpec {
        DatasetSpec {
            name: self.dataset.unwrap_or(default),
            root: self.data_root.clone(),
            synthetic: SyntheticSpec::default(),
        }
    }
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Imbalance ratio n_min / n_max in (0, 1].
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Output directory for the index file.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training configuration; the dataset preset is used otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Index file written by `prepare`; replaces --ratio.
    #[arg(long)]
    pub index: Option<PathBuf>,
    /// Comma-separated pretext tasks: lorot_e, flip, shuffle.
    #[arg(long)]
    pub tasks: Option<String>,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// resnet32-cifar, resnet18 or tinycnn.
    #[arg(long)]
    pub backbone: Option<BackboneName>,
    /// Keep the task heads out of the objective (baseline rows).
    #[arg(long = "no-ssl")]
    pub no_ssl: bool,
    /// Run directory; derived from the configuration when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Continue from the newest checkpoint in the run directory.
    #[arg(long)]
    pub resume: bool,
    /// Stop after this many completed epochs.
    #[arg(long = "stop-after")]
    pub stop_after: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Run directory.
    #[arg(long)]
    pub out: PathBuf,
    /// A specific checkpoint instead of the newest one.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long = "data-root", env = "DATA_ROOT")]
    pub data_root: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Run directories, or directories whose subdirectories are runs.
    pub runs: Vec<PathBuf>,
    /// Also write report.md and report.csv here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct DumpArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Index of the training image to transform.
    #[arg(long, default_value_t = 0)]
    pub index: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Pixel magnification of each tile.
    #[arg(long, default_value_t = 8)]
    pub scale: u32,
    #[arg(long, default_value = "transforms")]
    pub out: PathBuf,
}

/// Exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numeric(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit status.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn execute(command: Command) -> Result<i32> {
    match command {
        Command::Prepare(a) => prepare(&a).map(|_| EXIT_OK),
        Command::Train(a) => train(&a).map(|_| EXIT_OK),
        Command::Eval(a) => eval(&a).map(|_| EXIT_OK),
        Command::Report(a) => report(&a).map(|_| EXIT_OK),
        Command::Selftest => Ok(selftest()),
        Command::DumpTransforms(a) => dump_transforms(&a).map(|_| EXIT_OK),
    }
}

fn check_ratio(ratio: f64) -> Result<()> {
    if ratio > 0.0 && ratio <= 1.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("--ratio must lie in (0, 1], got {ratio}")))
    }
}

/// Name of the index file `prepare` writes.
pub fn index_file_name(dataset: DatasetName, ratio: f64, seed: u64) -> String {
    format!("{dataset}-ratio{ratio}-seed{seed}.idx")
}

fn prepare(a: &PrepareArgs) -> Result<PathBuf> {
    check_ratio(a.ratio)?;
    let spec = a.data.spec(DatasetName::Cifar10);
    let ds = load_dataset(&spec, a.seed)?;
    let file = build_index(&ds.train, ds.name, a.ratio, a.seed)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    let path = a.out.join(index_file_name(ds.name, a.ratio, a.seed));
    write_index_file(&path, &file)?;
    println!("{}", path.display());
    println!("counts {:?} ({} images)", file.header.counts, file.indices.len());
    Ok(path)
}

/// Resolves the configuration a `train` invocation describes.
pub fn resolve_train_config(a: &TrainArgs) -> Result<TrainConfig> {
    let mut config = match &a.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?
        }
        None => TrainConfig::preset(a.data.dataset.unwrap_or(DatasetName::Synthetic)),
    };
    if let Some(name) = a.data.dataset {
        config.dataset.name = name;
    }
    if a.data.data_root.is_some() {
        config.dataset.root = a.data.data_root.clone();
    }
    if let Some(r) = a.ratio {
        check_ratio(r)?;
        config.imbalance_ratio = Some(r);
    }
    if a.index.is_some() {
        config.index_file = a.index.clone();
    }
    if let Some(t) = &a.tasks {
        config.tasks = parse_task_list(t)?;
    }
    if let Some(l) = a.lambda {
        config.lambda = l;
    }
    if let Some(e) = a.epochs {
        for (m, _) in config.set_epochs(e) {
            log::warn!("dropping learning-rate milestone at epoch {m}, beyond {e} epochs");
        }
    }
    if let Some(b) = a.batch_size {
        config.batch_size = b;
    }
    if let Some(s) = a.seed {
        config.seed = s;
    }
    if let Some(b) = a.backbone {
        config.backbone = b;
    }
    if a.no_ssl {
        config.ssl_detached = true;
    }
    config.validate()?;
    Ok(config)
}

/// Default run directory for a configuration.
pub fn default_run_dir(config: &TrainConfig) -> PathBuf {
    let tasks = if config.ssl_detached {
        "baseline".to_owned()
    } else {
        config.tasks.iter().map(|t| t.name()).collect::<Vec<_>>().join("+")
    };
    let ratio = config.imbalance_ratio.map_or_else(|| "full".to_owned(), |r| format!("ratio{r}"));
    PathBuf::from("runs").join(format!("{}-{ratio}-{tasks}-seed{}", config.dataset.name, config.seed))
}

fn train(a: &TrainArgs) -> Result<PathBuf> {
    let config = resolve_train_config(a)?;
    let dir = a.out.clone().unwrap_or_else(|| default_run_dir(&config));
    let summary = run(
        &config,
        &dir,
        &RunOptions {
            resume: a.resume,
            stop_after_epoch: a.stop_after,
        },
    )?;
    if let Some(m) = summary.last() {
        println!("epoch {}: test accuracy {:.2}%", m.epoch, 100.0 * m.test_acc);
    }
    println!("{}", dir.display());
    Ok(dir)
}

#[derive(Debug, Serialize)]
struct EvalReport {
    checkpoint: PathBuf,
    epoch: usize,
    test_acc: f64,
    ssl_test_acc: Vec<(TaskKind, f64)>,
}

fn eval(a: &EvalArgs) -> Result<()> {
    let config_path = a.out.join("config.json");
    let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
    let mut config: TrainConfig = serde_json::from_str(&text)?;
    if a.data_root.is_some() {
        config.dataset.root = a.data_root.clone();
    }
    let path = match &a.checkpoint {
        Some(p) => p.clone(),
        None => latest_checkpoint(&a.out)?
            .map(|(_, p)| p)
            .ok_or_else(|| Error::Checkpoint(format!("no checkpoints under {}", a.out.display())))?,
    };
    let ckpt = Checkpoint::load(&path)?;
    let mut model = ckpt.restore_model()?;
    let data = prepare_data(&config)?;
    let norm = ckpt.manifest.normalization.unwrap_or(data.normalization);
    let test_acc = evaluate(&mut model, &data.test, &norm, config.eval_batch_size)?;
    let ssl = evaluate_ssl(&mut model, &data.test, &norm, config.eval_batch_size, config.seed)?;
    let report = EvalReport {
        checkpoint: path,
        epoch: ckpt.manifest.epoch,
        test_acc,
        ssl_test_acc: model.tasks().iter().copied().zip(ssl).collect(),
    };
    println!("{}", serde_json::to_string_pretty(&report)?);
    Ok(())
}

/// Expands report arguments: a directory without `metrics.jsonl` or
/// `config.json` stands for its sorted subdirectories.
pub fn expand_run_dirs(args: &[PathBuf]) -> Vec<PathBuf> {
    let mut out = Vec::new();
    for dir in args {
        let is_run = dir.join("metrics.jsonl").exists() || dir.join("config.json").exists();
        let children = if is_run {
            None
        } else {
            fs::read_dir(dir).ok().map(|entries| {
                let mut c: Vec<PathBuf> = entries
                    .filter_map(|e| e.ok().map(|e| e.path()))
                    .filter(|p| p.is_dir())
                    .collect();
                c.sort();
                c
            })
        };
        match children {
            Some(c) if !c.is_empty() => out.extend(c),
            _ => out.push(dir.clone()),
        }
    }
    out
}

fn report(a: &ReportArgs) -> Result<String> {
    let dirs = expand_run_dirs(&a.runs);
    let (runs, warnings) = collect_runs(&dirs);
    for w in &warnings {
        eprintln!("warning: {w}");
    }
    let markdown = build_table(&runs).to_markdown();
    print!("{markdown}");
    if let Some(out) = &a.out {
        fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
        let md = out.join("report.md");
        fs::write(&md, &markdown).map_err(|e| Error::io(&md, e))?;
        write_csv(&out.join("report.csv"), &runs)?;
    }
    Ok(markdown)
}

fn selftest() -> i32 {
    let results = run_suite(&Implementations::default());
    let mut stdout = std::io::stdout().lock();
    for r in &results {
        let _ = writeln!(stdout, "{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    let _ = writeln!(stdout, "{} checks, {failed} failed", results.len());
    if failed == 0 {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    }
}

const GAP: u32 = 2;

/// Lays `tiles` out `cols` per row, each magnified `scale` times, on a
/// white background.
pub fn tile_grid(tiles: &[ImageTensor], cols: usize, scale: u32) -> RgbImage {
    let Some(first) = tiles.first() else {
        return RgbImage::new(0, 0);
    };
    let (h, w) = (first.height() as u32 * scale, first.width() as u32 * scale);
    let cols = cols.clamp(1, tiles.len()) as u32;
    let rows = (tiles.len() as u32).div_ceil(cols);
    let mut canvas = RgbImage::from_pixel(cols * (w + GAP) + GAP, rows * (h + GAP) + GAP, Rgb([255, 255, 255]));
    for (i, tile) in tiles.iter().enumerate() {
        let (x0, y0) = (GAP + (i as u32 % cols) * (w + GAP), GAP + (i as u32 / cols) * (h + GAP));
        let a = tile.as_array();
        for y in 0..h {
            for x in 0..w {
                let (sy, sx) = ((y / scale) as usize, (x / scale) as usize);
                let px = |c: usize| (a[[c, sy, sx]].clamp(0.0, 1.0) * 255.0).round() as u8;
                canvas.put_pixel(x0 + x, y0 + y, Rgb([px(0), px(1), px(2)]));
            }
        }
    }
    canvas
}

/// Writes `original.png` and one `<task>.png` grid per task, outcomes in
/// label order. Returns the written paths.
pub fn write_transform_grids(img: &ImageTensor, dir: &Path, scale: u32) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let original = dir.join("original.png");
    tile_grid(std::slice::from_ref(img), 1, scale).save(&original)?;
    written.push(original);
    for task in TaskKind::ALL {
        let tiles: Vec<ImageTensor> = enumerate_outcomes(task, img).into_iter().map(|(t, _)| t).collect();
        let cols = match task {
            TaskKind::LorotE => 4,
            TaskKind::Flip => 2,
            TaskKind::Shuffle => 3,
        };
        let path = dir.join(format!("{}.png", task.name()));
        tile_grid(&tiles, cols, scale).save(&path)?;
        written.push(path);
    }
    Ok(written)
}

fn dump_transforms(a: &DumpArgs) -> Result<()> {
    let ds = load_dataset(&a.data.spec(DatasetName::Synthetic), a.seed)?;
    if a.index >= ds.train.len() {
        return Err(Error::Config(format!(
            "--index {} is outside the {} training images",
            a.index,
            ds.train.len()
        )));
    }
    if a.scale == 0 {
        return Err(Error::Config("--scale must be at least 1".into()));
    }
    for path in write_transform_grids(&ds.train.image(a.index), &a.out, a.scale)? {
        println!("{}", path.display());
    }
    Ok(())
}
