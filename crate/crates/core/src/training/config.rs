use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::datasets::{DatasetName, DatasetSpec, SyntheticSpec};
use crate::error::{Error, Result};
use crate::losses::{DEFAULT_BETA, DEFAULT_MAX_MARGIN, DEFAULT_SCALE};
use crate::model::{BackboneName, ClassifierKind, ModelConfig};
use crate::transforms::{check_unique, TaskKind};

/// Piecewise-constant learning rate: `initial` times the product of every
/// factor whose milestone epoch has been reached.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LrSchedule {
    pub initial: f64,
    pub milestones: Vec<(usize, f64)>,
}

impl LrSchedule {
    pub fn constant(initial: f64) -> Self {
        Self {
            initial,
            milestones: Vec::new(),
        }
    }

    /// Two successive 0.01 drops at epochs 160 and 180.
    pub fn cifar() -> Self {
        Self {
            initial: 0.1,
            milestones: vec![(160, 0.01), (180, 0.01)],
        }
    }

    /// A drop by `factor` every `every` epochs before `epochs`.
    pub fn step(initial: f64, every: usize, factor: f64, epochs: usize) -> Self {
        Self {
            initial,
            milestones: (1..)
                .map(|k| k * every)
                .take_while(|&e| e < epochs)
                .map(|e| (e, factor))
                .collect(),
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.milestones
            .iter()
            .filter(|(m, _)| *m <= epoch)
            .fold(self.initial, |lr, (_, f)| lr * f)
    }

    fn validate(&self, epochs: usize) -> Result<()> {
        if !(self.initial > 0.0 && self.initial.is_finite()) {
            return Err(Error::Config(format!("initial learning rate {} must be positive", self.initial)));
        }
        if self.milestones.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("lr milestones must be strictly increasing".into()));
        }
        for &(epoch, factor) in &self.milestones {
            if epoch >= epochs.max(1) {
                return Err(Error::Config(format!("lr milestone {epoch} is not below {epochs} epochs")));
            }
            if !(factor > 0.0 && factor <= 1.0) {
                return Err(Error::Config(format!("lr factor {factor} must lie in (0, 1]")));
            }
        }
        Ok(())
    }
}

/// A fully resolved training configuration, frozen into `config.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub dataset: DatasetSpec,
    /// Long-tail ratio `n_min / n_max`; `None` trains on the full split.
    pub imbalance_ratio: Option<f64>,
    /// A subsample written by `prepare`; overrides `imbalance_ratio`.
    #[serde(default)]
    pub index_file: Option<PathBuf>,
    pub tasks: Vec<TaskKind>,
    pub lambda: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub schedule: LrSchedule,
    pub momentum: f64,
    pub weight_decay: f64,
    /// First epoch with class re-weighting, if any.
    pub drw_epoch: Option<usize>,
    pub seed: u64,
    pub backbone: BackboneName,
    #[serde(default)]
    pub classifier: ClassifierKind,
    #[serde(default)]
    pub detach_gate_input: bool,
    /// Train the supervised loss only, keeping the task heads out of the
    /// objective. Used for baseline rows.
    #[serde(default)]
    pub ssl_detached: bool,
    #[serde(default = "default_max_margin")]
    pub max_margin: f64,
    #[serde(default = "default_scale")]
    pub logit_scale: f64,
    #[serde(default = "default_beta")]
    pub drw_beta: f64,
    /// Standardize inputs with training-split channel statistics.
    #[serde(default = "default_true")]
    pub normalize: bool,
    /// Save a checkpoint every this many epochs (and always at the end).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    #[serde(default = "default_eval_batch")]
    pub eval_batch_size: usize,
}

fn default_max_margin() -> f64 {
    DEFAULT_MAX_MARGIN
}
fn default_scale() -> f64 {
    DEFAULT_SCALE
}
fn default_beta() -> f64 {
    DEFAULT_BETA
}
fn default_true() -> bool {
    true
}
fn default_eval_batch() -> usize {
    256
}

impl TrainConfig {
    /// Settings for `name`: CIFAR runs use ResNet-32, batch 128, 300 epochs,
    /// SGD(0.9, 2e-4) and DRW from epoch 160; Tiny-ImageNet uses ResNet-18,
    /// batch 256 and a 0.1 decay every 75 epochs; the synthetic preset is a
    /// desk-scale smoke run.
    pub fn preset(name: DatasetName) -> Self {
        let base = Self {
            dataset: DatasetSpec {
                name,
                root: None,
                synthetic: SyntheticSpec::default(),
            },
            imbalance_ratio: Some(0.01),
            index_file: None,
            tasks: vec![TaskKind::LorotE, TaskKind::Shuffle],
            lambda: 0.1,
            epochs: 300,
            batch_size: 128,
            schedule: LrSchedule::cifar(),
            momentum: 0.9,
            weight_decay: 2e-4,
            drw_epoch: Some(160),
            seed: 0,
            backbone: BackboneName::Resnet32Cifar,
            classifier: ClassifierKind::Cosine,
            detach_gate_input: false,
            ssl_detached: false,
            max_margin: DEFAULT_MAX_MARGIN,
            logit_scale: DEFAULT_SCALE,
            drw_beta: DEFAULT_BETA,
            normalize: true,
            checkpoint_every: Some(10),
            eval_batch_size: 256,
        };
        match name {
            DatasetName::Cifar10 | DatasetName::Cifar100 => base,
            DatasetName::TinyImagenet => Self {
                imbalance_ratio: None,
                batch_size: 256,
                schedule: LrSchedule::step(0.1, 75, 0.1, 300),
                drw_epoch: None,
                backbone: BackboneName::Resnet18,
                ..base
            },
            DatasetName::Synthetic => Self {
                imbalance_ratio: None,
                tasks: vec![TaskKind::LorotE, TaskKind::Flip, TaskKind::Shuffle],
                epochs: 25,
                batch_size: 32,
                schedule: LrSchedule::constant(0.05),
                drw_epoch: None,
                backbone: BackboneName::TinyCnn,
                checkpoint_every: None,
                ..base
            },
        }
    }

    /// Changes the epoch budget, dropping learning-rate milestones that no
    /// longer fall inside it. Returns the dropped milestones.
    pub fn set_epochs(&mut self, epochs: usize) -> Vec<(usize, f64)> {
        self.epochs = epochs;
        let (kept, dropped) = self.schedule.milestones.iter().partition(|(m, _)| *m < epochs);
        self.schedule.milestones = kept;
        dropped
    }

    /// The model this configuration trains, given the class count.
    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            backbone: self.backbone,
            num_classes,
            tasks: self.tasks.clone(),
            classifier: self.classifier,
            detach_gate_input: self.detach_gate_input,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tasks.is_empty() {
            return Err(Error::Config("at least one pretext task is required".into()));
        }
        check_unique(&self.tasks)?;
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be non-negative, got {}", self.lambda)));
        }
        if self.batch_size == 0 || self.eval_batch_size == 0 {
            return Err(Error::Config("batch sizes must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be at least 1".into()));
        }
        if let Some(r) = self.imbalance_ratio {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Config(format!("imbalance ratio must lie in (0, 1], got {r}")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1) and weight decay be non-negative".into()));
        }
        if self.checkpoint_every == Some(0) {
            return Err(Error::Config("checkpoint_every must be at least 1".into()));
        }
        self.schedule.validate(self.epochs)
    }
}
