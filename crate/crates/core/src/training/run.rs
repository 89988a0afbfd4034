use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{
    build_batch, evaluate, evaluate_ssl, method_label, normalize_images, train_step, EpochMetrics, LossContext,
    TaskMetrics, TrainConfig,
};
use crate::datasets::{
    exponential_profile, load_dataset, per_class_counts, read_index_file, subsample_indices, DatasetName, IndexFile,
    IndexHeader, Normalization, Split,
};
use crate::error::{Error, Result};
use crate::model::checkpoint::{Checkpoint, CheckpointManifest};
use crate::model::GatedModel;
use crate::nn::Sgd;
use crate::seeds;

const STREAM_SHUFFLE: u64 = 1;
const STREAM_AUGMENT: u64 = 2;
const STREAM_EVAL: u64 = 3;

/// Training and test splits ready for a run.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub name: DatasetName,
    pub num_classes: usize,
    pub train: Split,
    pub test: Split,
    /// Per-class counts of `train`.
    pub counts: Vec<usize>,
    pub normalization: Normalization,
}

/// Draws a long-tailed subsample of `train`, taking `n_max` as the largest
/// class count present.
pub fn build_index(train: &Split, dataset: DatasetName, ratio: f64, seed: u64) -> Result<IndexFile> {
    let k = train.num_classes();
    let all: Vec<usize> = (0..train.len()).collect();
    let n_max = per_class_counts(train.labels(), &all, k).into_iter().max().unwrap_or(0);
    let profile = exponential_profile(k, n_max, ratio)?;
    let indices = subsample_indices(train.labels(), &profile, seed)?;
    Ok(IndexFile {
        header: IndexHeader {
            dataset: dataset.as_str().to_owned(),
            ratio,
            seed,
            counts: per_class_counts(train.labels(), &indices, k),
        },
        indices,
    })
}

/// Loads the dataset and applies the configured subsample.
pub fn prepare_data(config: &TrainConfig) -> Result<PreparedData> {
    let ds = load_dataset(&config.dataset, config.seed)?;
    let train = if let Some(path) = &config.index_file {
        let file = read_index_file(path)?;
        if file.header.dataset != ds.name.as_str() {
            return Err(Error::Config(format!(
                "index file {path:?} was built for {}, not {}",
                file.header.dataset, ds.name
            )));
        }
        if let Some(&bad) = file.indices.iter().find(|&&i| i >= ds.train.len()) {
            return Err(Error::Data(format!("index {bad} in {path:?} is outside the training split")));
        }
        ds.train.subset(&file.indices)
    } else if let Some(ratio) = config.imbalance_ratio {
        ds.train.subset(&build_index(&ds.train, ds.name, ratio, config.seed)?.indices)
    } else {
        ds.train
    };
    if train.is_empty() {
        return Err(Error::Data(format!("the {} training split is empty", ds.name)));
    }
    let all: Vec<usize> = (0..train.len()).collect();
    let counts = per_class_counts(train.labels(), &all, ds.num_classes);
    let normalization = if config.normalize {
        Normalization::from_split(&train)
    } else {
        Normalization::identity()
    };
    Ok(PreparedData {
        name: ds.name,
        num_classes: ds.num_classes,
        train,
        test: ds.test,
        counts,
        normalization,
    })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    /// Continue from the newest checkpoint in the run directory.
    pub resume: bool,
    /// Stop once this many epochs are complete, leaving a checkpoint behind.
    pub stop_after_epoch: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub dir: PathBuf,
    pub epochs_completed: usize,
    /// Every epoch recorded in `metrics.jsonl`, including earlier sessions.
    pub metrics: Vec<EpochMetrics>,
    pub checkpoint: Option<PathBuf>,
}

impl RunSummary {
    pub fn last(&self) -> Option<&EpochMetrics> {
        self.metrics.last()
    }
}

fn checkpoint_path(dir: &Path, epoch: usize) -> PathBuf {
    dir.join("checkpoints").join(format!("epoch_{epoch}.ckpt"))
}

/// The newest `checkpoints/epoch_N.ckpt` under `dir`, as `(N, path)`.
pub fn latest_checkpoint(dir: &Path) -> Result<Option<(usize, PathBuf)>> {
    let ckpt_dir = dir.join("checkpoints");
    if !ckpt_dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(usize, PathBuf)> = None;
    for entry in fs::read_dir(&ckpt_dir).map_err(|e| Error::io(&ckpt_dir, e))? {
        let path = entry.map_err(|e| Error::io(&ckpt_dir, e))?.path();
        let epoch = path
            .file_name()
            .and_then(|n| n.to_str())
            .and_then(|n| n.strip_prefix("epoch_")?.strip_suffix(".ckpt")?.parse::<usize>().ok());
        if let Some(epoch) = epoch {
            if best.as_ref().is_none_or(|(b, _)| epoch > *b) {
                best = Some((epoch, path));
            }
        }
    }
    Ok(best)
}

/// Reads `metrics.jsonl`; a missing file reads as no epochs.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut offset = 0u64;
    let mut out = Vec::new();
    for line in text.split_inclusive('\n') {
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(line).map_err(|e| Error::Format {
                path: path.to_owned(),
                offset,
                message: e.to_string(),
            })?);
        }
        offset += line.len() as u64;
    }
    Ok(out)
}

/// Cuts `metrics.jsonl` back to the epochs before `start`, keeping the
/// surviving lines byte for byte.
fn truncate_metrics(path: &Path, start: usize) -> Result<Vec<EpochMetrics>> {
    let kept: Vec<(String, EpochMetrics)> = if path.exists() {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let parsed = read_metrics(path)?;
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .map(str::to_owned)
            .zip(parsed)
            .filter(|(_, m)| m.epoch < start)
            .collect()
    } else {
        Vec::new()
    };
    let text: String = kept.iter().map(|(l, _)| format!("{l}\n")).collect();
    fs::write(path, text).map_err(|e| Error::io(path, e))?;
    Ok(kept.into_iter().map(|(_, m)| m).collect())
}

fn append_metrics(path: &Path, m: &EpochMetrics) -> Result<()> {
    let mut file = fs::OpenOptions::new()
        .append(true)
        .create(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    writeln!(file, "{}", serde_json::to_string(m)?).map_err(|e| Error::io(path, e))
}

struct Trainer<'a> {
    config: &'a TrainConfig,
    data: &'a PreparedData,
    ctx: LossContext,
    model: GatedModel,
    optimizer: Sgd,
}

impl Trainer<'_> {
    fn epoch(&mut self, epoch: usize) -> Result<EpochMetrics> {
        let config = self.config;
        let tasks = config.tasks.clone();
        let mut order: Vec<usize> = (0..self.data.train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(config.seed, &[STREAM_SHUFFLE, epoch as u64]));
        order.shuffle(&mut rng);
        let lr = config.schedule.lr_at(epoch);

        let (mut l_c, mut l_tot, mut steps, mut seen, mut class_correct) = (0.0, 0.0, 0usize, 0usize, 0usize);
        let (mut l_tot_first, mut l_tot_last) = (f64::NAN, f64::NAN);
        let mut gated = vec![0.0; tasks.len()];
        let mut gate_sum = vec![0.0; tasks.len()];
        let mut ssl_correct = vec![0usize; tasks.len()];
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let examples: Vec<_> = chunk.iter().map(|&i| self.data.train.example(i)).collect();
            let mut aug = ChaCha8Rng::seed_from_u64(seeds::derive(
                config.seed,
                &[STREAM_AUGMENT, epoch as u64, b as u64],
            ));
            let mut batch = build_batch(&examples, &tasks, &mut aug)?;
            normalize_images(&mut batch.images, &self.data.normalization);
            let out = train_step(&mut self.model, &mut self.optimizer, &batch, epoch, lr, &self.ctx)?;
            l_c += out.breakdown.l_c;
            l_tot += out.breakdown.l_tot;
            if b == 0 {
                l_tot_first = out.breakdown.l_tot;
            }
            l_tot_last = out.breakdown.l_tot;
            for n in 0..tasks.len() {
                gated[n] += out.breakdown.per_task_gated[n];
                gate_sum[n] += out.gate_sum[n];
                ssl_correct[n] += out.ssl_correct[n];
            }
            class_correct += out.class_correct;
            seen += out.batch_size;
            steps += 1;
        }
        let test_acc = evaluate(&mut self.model, &self.data.test, &self.data.normalization, config.eval_batch_size)?;
        let ssl_test = evaluate_ssl(
            &mut self.model,
            &self.data.test,
            &self.data.normalization,
            config.eval_batch_size,
            seeds::derive(config.seed, &[STREAM_EVAL]),
        )?;
        let per_step = |v: f64| v / steps.max(1) as f64;
        let per_seen = |v: f64| v / seen.max(1) as f64;
        Ok(EpochMetrics {
            epoch,
            lr,
            steps,
            drw: self.ctx.weights_at(epoch).is_some(),
            l_c: per_step(l_c),
            l_tot: per_step(l_tot),
            l_tot_first,
            l_tot_last,
            tasks: tasks
                .iter()
                .enumerate()
                .map(|(n, &task)| TaskMetrics {
                    task,
                    gated_loss: per_step(gated[n]),
                    gate_mean: per_seen(gate_sum[n]),
                    ssl_train_acc: per_seen(ssl_correct[n] as f64),
                    ssl_test_acc: ssl_test[n],
                })
                .collect(),
            train_acc: per_seen(class_correct as f64),
            test_acc,
        })
    }

    fn checkpoint(&mut self, completed: usize) -> Checkpoint {
        let manifest = CheckpointManifest {
            model: self.model.config().clone(),
            seed: self.config.seed,
            epoch: completed,
            normalization: Some(self.data.normalization),
        };
        Checkpoint::capture(&mut self.model, Some(&self.optimizer), manifest)
    }
}

/// Trains `config` into `dir`.
///
/// The directory receives `config.json`, one `metrics.jsonl` line per
/// epoch, `checkpoints/epoch_N.ckpt` after `N` completed epochs and, once
/// every epoch is done, `report.md`. With `resume`, training restarts from
/// the newest checkpoint and any metrics past it are dropped; the result is
/// identical to an uninterrupted run.
pub fn run(config: &TrainConfig, dir: &Path, options: &RunOptions) -> Result<RunSummary> {
    config.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let config_path = dir.join("config.json");
    let metrics_path = dir.join("metrics.jsonl");
    if options.resume && config_path.exists() {
        let text = fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let saved: TrainConfig = serde_json::from_str(&text)?;
        if saved != *config {
            return Err(Error::Config(format!(
                "configuration differs from the one saved in {config_path:?}"
            )));
        }
    } else if !options.resume && metrics_path.exists() {
        return Err(Error::Config(format!(
            "{dir:?} already holds a run; resume it or choose another output directory"
        )));
    }
    fs::write(&config_path, serde_json::to_string_pretty(config)?).map_err(|e| Error::io(&config_path, e))?;

    let data = prepare_data(config)?;
    log::info!(
        "{}: {} training / {} test images, class counts {:?}",
        data.name,
        data.train.len(),
        data.test.len(),
        data.counts
    );
    let mut trainer = Trainer {
        config,
        ctx: LossContext::new(&data.counts, config)?,
        model: GatedModel::assemble(config.model_config(data.num_classes), config.seed)?,
        optimizer: Sgd::new(config.momentum as f32, config.weight_decay as f32),
        data: &data,
    };

    let mut start = 0;
    let mut last_checkpoint = None;
    if options.resume {
        if let Some((_, path)) = latest_checkpoint(dir)? {
            let ckpt = Checkpoint::load(&path)?;
            if ckpt.manifest.model != *trainer.model.config() {
                return Err(Error::Checkpoint(format!("{path:?} holds a different model")));
            }
            ckpt.load_into(&mut trainer.model)?;
            trainer.optimizer.set_velocity(ckpt.velocity());
            start = ckpt.manifest.epoch;
            last_checkpoint = Some(path);
            log::info!("resuming after epoch {start}");
        }
    }
    let mut history = truncate_metrics(&metrics_path, if options.resume { start } else { 0 })?;

    let end = options.stop_after_epoch.map_or(config.epochs, |s| s.min(config.epochs));
    for epoch in start..end {
        let m = trainer.epoch(epoch)?;
        log::info!(
            "epoch {epoch}: lr {:.4} l_c {:.4} l_tot {:.4} train {:.3} test {:.3} gate {:?}",
            m.lr,
            m.l_c,
            m.l_tot,
            m.train_acc,
            m.test_acc,
            m.gate_means()
        );
        append_metrics(&metrics_path, &m)?;
        history.push(m);
        let completed = epoch + 1;
        if completed == end || config.checkpoint_every.is_some_and(|k| completed % k == 0) {
            let path = checkpoint_path(dir, completed);
            trainer.checkpoint(completed).save(&path)?;
            last_checkpoint = Some(path);
        }
    }
    let completed = end.max(start);
    if completed == config.epochs {
        let report = dir.join("report.md");
        fs::write(&report, run_report(config, &data, &history)).map_err(|e| Error::io(&report, e))?;
    }
    Ok(RunSummary {
        dir: dir.to_owned(),
        epochs_completed: completed,
        metrics: history,
        checkpoint: last_checkpoint,
    })
}

fn run_report(config: &TrainConfig, data: &PreparedData, history: &[EpochMetrics]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "# {} on {}\n", method_label(config), data.name.display_name());
    let ratio = config
        .imbalance_ratio
        .map_or_else(|| "none".to_owned(), |r| format!("{r}"));
    let _ = writeln!(
        s,
        "Backbone {}, imbalance ratio {ratio}, lambda {}, {} epochs, seed {}.\n",
        config.backbone, config.lambda, config.epochs, config.seed
    );
    let Some(last) = history.last() else {
        return s;
    };
    let _ = writeln!(s, "Final test accuracy: {:.2}%\n", 100.0 * last.test_acc);
    let _ = writeln!(s, "| Task | Mean gate | Gated loss | Head accuracy (test) |");
    let _ = writeln!(s, "|---|---|---|---|");
    for t in &last.tasks {
        let _ = writeln!(
            s,
            "| {} | {:.3} | {:.4} | {:.2}% |",
            t.task.display_name(),
            t.gate_mean,
            t.gated_loss,
            100.0 * t.ssl_test_acc
        );
    }
    s
}
