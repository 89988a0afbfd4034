//! Training harness: batch construction with pretext transforms, one SGD
//! step on the gated objective, evaluation, metrics and the run driver.
//!
//! A step is
//!
//! ```text
//! transform batch -> forward -> gate softmax -> LDAM (+ DRW) on class logits
//!                 -> cross-entropy per task head -> gated total -> backward -> SGD
//! ```
//!
//! Every random choice comes from a stream derived from the run seed and
//! the (epoch, batch) position, so a resumed run replays exactly.

mod config;
mod run;

use ndarray::{Array4, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use config::{LrSchedule, TrainConfig};
pub use run::{build_index, latest_checkpoint, prepare_data, read_metrics, run, PreparedData, RunOptions, RunSummary};

use crate::datasets::{LabeledExample, Normalization, Split};
use crate::error::{Error, Result};
use crate::losses::{gated_objective, ClassMargins, ClassWeights, LossBreakdown, Objective, ObjectiveInputs};
use crate::losses::{drw_weights, ldam_margins};
use crate::model::{ForwardOutput, GatedModel, HeadGrads};
use crate::nn::Sgd;
use crate::transforms::{apply_composed, sample_outcome, TaskKind};

/// Network input for one step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub images: Array4<f32>,
    /// The original supervised labels.
    pub class_targets: Vec<usize>,
    /// One target list per task, in task order.
    pub ssl_targets: Vec<Vec<usize>>,
}

fn stack<'a>(images: impl ExactSizeIterator<Item = &'a ndarray::Array3<f32>>, h: usize, w: usize) -> Array4<f32> {
    let mut out = Array4::zeros((images.len(), 3, h, w));
    for (mut slot, img) in out.axis_iter_mut(Axis(0)).zip(images) {
        slot.assign(img);
    }
    out
}

/// Transforms every example with independently sampled outcomes, one per
/// task, and stacks the results.
pub fn build_batch<R: Rng + ?Sized>(examples: &[LabeledExample], tasks: &[TaskKind], rng: &mut R) -> Result<Batch> {
    if tasks.is_empty() {
        return Err(Error::Config("at least one pretext task is required".into()));
    }
    let first = examples
        .first()
        .ok_or_else(|| Error::Shape("cannot build an empty batch".into()))?;
    let (h, w) = (first.image.height(), first.image.width());
    let mut transformed = Vec::with_capacity(examples.len());
    let mut ssl_targets = vec![Vec::with_capacity(examples.len()); tasks.len()];
    for ex in examples {
        let outcomes: Vec<_> = tasks.iter().map(|&t| sample_outcome(t, rng)).collect();
        let (img, labels) = apply_composed(&ex.image, &outcomes)?;
        for (targets, label) in ssl_targets.iter_mut().zip(labels) {
            targets.push(label);
        }
        transformed.push(img.into_array());
    }
    Ok(Batch {
        images: stack(transformed.iter(), h, w),
        class_targets: examples.iter().map(|e| e.class_label).collect(),
        ssl_targets,
    })
}

/// Standardizes a `(B, 3, H, W)` batch in place.
pub fn normalize_images(images: &mut Array4<f32>, norm: &Normalization) {
    for (c, mut plane) in images.axis_iter_mut(Axis(1)).enumerate() {
        let (mean, std) = (norm.mean[c] as f32, norm.std[c] as f32);
        plane.mapv_inplace(|v| (v - mean) / std);
    }
}

/// Loss settings derived once per run from the training class counts.
#[derive(Debug, Clone, PartialEq)]
pub struct LossContext {
    pub margins: ClassMargins,
    pub weights: ClassWeights,
    pub drw_epoch: Option<usize>,
    pub lambda: f64,
    pub ssl_detached: bool,
}

impl LossContext {
    pub fn new(counts: &[usize], config: &TrainConfig) -> Result<Self> {
        Ok(Self {
            margins: ldam_margins(counts, config.max_margin)?.with_scale(config.logit_scale),
            weights: drw_weights(counts, config.drw_beta)?,
            drw_epoch: config.drw_epoch,
            lambda: config.lambda,
            ssl_detached: config.ssl_detached,
        })
    }

    /// Class weights in force at `epoch`.
    pub fn weights_at(&self, epoch: usize) -> Option<&ClassWeights> {
        self.drw_epoch.filter(|&d| epoch >= d).map(|_| &self.weights)
    }

    fn objective(&self, out: &ForwardOutput, batch: &Batch, epoch: usize) -> Result<Objective> {
        gated_objective(ObjectiveInputs {
            class_logits: out.class_logits.view(),
            class_targets: &batch.class_targets,
            ssl_logits: &out.ssl_logits,
            ssl_targets: &batch.ssl_targets,
            gate_logits: out.gate_logits.view(),
            margins: &self.margins,
            weights: self.weights_at(epoch),
            lambda: if self.ssl_detached { 0.0 } else { self.lambda },
        })
    }
}

/// What one step observed.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    pub breakdown: LossBreakdown,
    /// Column sums of the gate over the batch.
    pub gate_sum: Vec<f64>,
    pub ssl_correct: Vec<usize>,
    pub class_correct: usize,
    pub batch_size: usize,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: ArrayView1<'_, f64>) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

fn count_correct(logits: ArrayView2<'_, f64>, labels: &[usize]) -> usize {
    logits
        .axis_iter(Axis(0))
        .zip(labels)
        .filter(|(row, &l)| argmax(row.view()) == l)
        .count()
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy_from_logits(logits: ArrayView2<'_, f64>, labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    count_correct(logits, labels) as f64 / labels.len() as f64
}

/// Forward, gated objective, backward and one SGD update.
pub fn train_step(
    model: &mut GatedModel,
    optimizer: &mut Sgd,
    batch: &Batch,
    epoch: usize,
    lr: f64,
    ctx: &LossContext,
) -> Result<StepOutput> {
    model.zero_grad();
    let out = model.forward(&batch.images, true)?;
    let obj = ctx.objective(&out, batch, epoch)?;
    let (ssl, gate) = if ctx.ssl_detached {
        (None, None)
    } else {
        (Some(obj.ssl_grads.clone()), Some(obj.gate_grad.clone()))
    };
    model.backward(&HeadGrads {
        class_logits: obj.class_grad.clone(),
        ssl_logits: ssl,
        gate_logits: gate,
    })?;
    optimizer.step(model, lr as f32);
    Ok(StepOutput {
        gate_sum: obj.gate.sum_axis(Axis(0)).to_vec(),
        ssl_correct: out
            .ssl_logits
            .iter()
            .zip(&batch.ssl_targets)
            .map(|(l, t)| count_correct(l.view(), t))
            .collect(),
        class_correct: count_correct(out.class_logits.view(), &batch.class_targets),
        batch_size: batch.class_targets.len(),
        breakdown: obj.breakdown,
    })
}

/// The objective on a batch in evaluation mode, without touching any state.
pub fn batch_loss(model: &mut GatedModel, batch: &Batch, epoch: usize, ctx: &LossContext) -> Result<LossBreakdown> {
    let out = model.forward(&batch.images, false)?;
    Ok(ctx.objective(&out, batch, epoch)?.breakdown)
}

/// Top-1 accuracy on untransformed images.
pub fn evaluate(model: &mut GatedModel, split: &Split, norm: &Normalization, batch_size: usize) -> Result<f64> {
    if split.is_empty() {
        return Ok(0.0);
    }
    let mut correct = 0;
    let indices: Vec<usize> = (0..split.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let examples: Vec<_> = chunk.iter().map(|&i| split.example(i)).collect();
        let mut images = stack(examples.iter().map(|e| e.image.as_array()), split.height(), split.width());
        normalize_images(&mut images, norm);
        let out = model.forward(&images, false)?;
        let labels: Vec<usize> = examples.iter().map(|e| e.class_label).collect();
        correct += count_correct(out.class_logits.view(), &labels);
    }
    Ok(correct as f64 / split.len() as f64)
}

/// Accuracy of each task head on transformed copies of `split`, with the
/// transforms drawn from a stream seeded by `seed`.
pub fn evaluate_ssl(
    model: &mut GatedModel,
    split: &Split,
    norm: &Normalization,
    batch_size: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    use rand::SeedableRng;
    let tasks = model.tasks().to_vec();
    let mut correct = vec![0usize; tasks.len()];
    if split.is_empty() {
        return Ok(vec![0.0; tasks.len()]);
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let indices: Vec<usize> = (0..split.len()).collect();
    for chunk in indices.chunks(batch_size.max(1)) {
        let examples: Vec<_> = chunk.iter().map(|&i| split.example(i)).collect();
        let mut batch = build_batch(&examples, &tasks, &mut rng)?;
        normalize_images(&mut batch.images, norm);
        let out = model.forward(&batch.images, false)?;
        for (n, (logits, targets)) in out.ssl_logits.iter().zip(&batch.ssl_targets).enumerate() {
            correct[n] += count_correct(logits.view(), targets);
        }
    }
    Ok(correct.iter().map(|&c| c as f64 / split.len() as f64).collect())
}

/// Per-task part of [`EpochMetrics`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskMetrics {
    pub task: TaskKind,
    /// Mean over steps of `(1/B) Σ_i G[i, n] L_n[i]`.
    pub gated_loss: f64,
    /// Mean gate weight over every training sample of the epoch.
    pub gate_mean: f64,
    pub ssl_train_acc: f64,
    pub ssl_test_acc: f64,
}

/// One line of `metrics.jsonl`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    /// Whether class re-weighting was active.
    pub drw: bool,
    /// Means over the epoch's steps.
    pub l_c: f64,
    pub l_tot: f64,
    /// `l_tot` of the epoch's first and last step.
    pub l_tot_first: f64,
    pub l_tot_last: f64,
    pub tasks: Vec<TaskMetrics>,
    pub train_acc: f64,
    pub test_acc: f64,
}

impl EpochMetrics {
    pub fn gate_means(&self) -> Vec<f64> {
        self.tasks.iter().map(|t| t.gate_mean).collect()
    }
}

/// Table row label for a run: `+LoRot-E` for a single task,
/// `+MoE(LoRot-E+ShuffleChannel)` for gated combinations, and the baseline
/// name when the task heads are detached.
pub fn method_label(config: &TrainConfig) -> String {
    if config.ssl_detached {
        return match (config.drw_epoch, config.backbone) {
            (Some(_), _) => "LDAM-DRW".to_owned(),
            (None, b) => b.display_name().to_owned(),
        };
    }
    let names: Vec<&str> = config.tasks.iter().map(|t| t.display_name()).collect();
    if names.len() == 1 {
        format!("+{}", names[0])
    } else {
        format!("+MoE({})", names.join("+"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datasets::{synthetic_dataset, DatasetName};
    use crate::model::{BackboneName, ClassifierKind, ModelConfig};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn examples(n: usize) -> Vec<LabeledExample> {
        let (train, _) = synthetic_dataset(4, 8, 8, 3).unwrap();
        (0..n).map(|i| train.example(i)).collect()
    }

    #[test]
    fn batch_contract() {
        let ex = examples(4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let b = build_batch(&ex, &[TaskKind::LorotE], &mut rng).unwrap();
        assert_eq!(b.images.dim(), (4, 3, 8, 8));
        assert_eq!(b.ssl_targets.len(), 1);
        assert!(b.ssl_targets[0].iter().all(|&l| l < 16));
        assert_eq!(b.class_targets, ex.iter().map(|e| e.class_label).collect::<Vec<_>>());
        assert!(matches!(build_batch(&ex, &[], &mut rng), Err(Error::Config(_))));

        let mut a = ChaCha8Rng::seed_from_u64(9);
        let mut c = ChaCha8Rng::seed_from_u64(9);
        let tasks = [TaskKind::Shuffle, TaskKind::LorotE];
        assert_eq!(build_batch(&ex, &tasks, &mut a).unwrap(), build_batch(&ex, &tasks, &mut c).unwrap());
    }

    #[test]
    fn argmax_ties_and_accuracy() {
        assert_eq!(argmax(array![1.0, 3.0, 3.0].view()), 1);
        let constant = ndarray::Array2::<f64>::zeros((20, 10));
        let labels: Vec<usize> = (0..20).map(|i| i % 10).collect();
        assert_eq!(accuracy_from_logits(constant.view(), &labels), 0.1);
        let mut oracle = ndarray::Array2::<f64>::zeros((20, 10));
        for (i, &l) in labels.iter().enumerate() {
            oracle[[i, l]] = 1.0;
        }
        assert_eq!(accuracy_from_logits(oracle.view(), &labels), 1.0);
    }

    #[test]
    fn evaluation_does_not_depend_on_batch_size() {
        let (train, test) = synthetic_dataset(4, 16, 8, 0).unwrap();
        let mut model = GatedModel::assemble(
            ModelConfig {
                backbone: BackboneName::TinyCnn,
                num_classes: 4,
                tasks: vec![TaskKind::Flip],
                classifier: ClassifierKind::Cosine,
                detach_gate_input: false,
            },
            0,
        )
        .unwrap();
        let norm = Normalization::from_split(&train);
        let a = evaluate(&mut model, &test, &norm, 7).unwrap();
        let b = evaluate(&mut model, &test, &norm, 64).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn drw_switches_at_its_epoch() {
        let mut cfg = TrainConfig::preset(DatasetName::Synthetic);
        cfg.drw_epoch = Some(3);
        let ctx = LossContext::new(&[64, 32, 8, 4], &cfg).unwrap();
        assert!(ctx.weights_at(0).is_none());
        assert!(ctx.weights_at(2).is_none());
        assert!(ctx.weights_at(3).is_some());
    }

    #[test]
    fn method_labels() {
        let mut cfg = TrainConfig::preset(DatasetName::Cifar10);
        cfg.tasks = vec![TaskKind::LorotE, TaskKind::Shuffle];
        assert_eq!(method_label(&cfg), "+MoE(LoRot-E+ShuffleChannel)");
        cfg.tasks = vec![TaskKind::LorotE];
        assert_eq!(method_label(&cfg), "+LoRot-E");
        cfg.ssl_detached = true;
        assert_eq!(method_label(&cfg), "LDAM-DRW");
        let mut tiny = TrainConfig::preset(DatasetName::TinyImagenet);
        tiny.ssl_detached = true;
        assert_eq!(method_label(&tiny), "ResNet 18");
    }
}
