//! The multi-head model: a shared backbone feeding a supervised classifier,
//! one linear head per pretext task, and a gating head whose softmax output
//! weighs the per-task losses.
//!
//! ```text
//!                    ┌─> classifier ─────> class logits (B, K)
//! images ─> backbone ┼─> ssl head (task n) > ssl logits (B, C_n)   n = 1..t
//!           (B, D)   └─> gate ───────────> gate logits (B, t) ─ softmax ─> G
//! ```

mod backbone;
pub mod checkpoint;

use ndarray::{Array2, Array4, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

pub use backbone::{Backbone, BackboneName};

use crate::error::{Error, Result};
use crate::nn::{self, join, CosineLinear, Linear, Module, Visitor};
use crate::transforms::{check_unique, TaskKind};

/// How class logits are produced from pooled features.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassifierKind {
    /// Cosine similarity between normalized features and class weights,
    /// giving logits in `[-1, 1]` for the scaled margin loss.
    #[default]
    Cosine,
    /// Plain affine map.
    Affine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub backbone: BackboneName,
    pub num_classes: usize,
    pub tasks: Vec<TaskKind>,
    #[serde(default)]
    pub classifier: ClassifierKind,
    /// Stop the gate's gradient from reaching the backbone.
    #[serde(default)]
    pub detach_gate_input: bool,
}

#[derive(Debug, Clone)]
enum Classifier {
    Cosine(CosineLinear),
    Affine(Linear),
}

impl Classifier {
    fn forward(&mut self, x: &Array2<f32>, train: bool) -> Array2<f32> {
        match self {
            Classifier::Cosine(c) => c.forward(x, train),
            Classifier::Affine(l) => l.forward(x, train),
        }
    }

    fn backward(&mut self, g: &Array2<f32>) -> Array2<f32> {
        match self {
            Classifier::Cosine(c) => c.backward(g),
            Classifier::Affine(l) => l.backward(g),
        }
    }

    fn out_features(&self) -> usize {
        match self {
            Classifier::Cosine(c) => c.out_features(),
            Classifier::Affine(l) => l.out_features(),
        }
    }
}

/// Outputs of one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    /// Pooled backbone features, the gate's input.
    pub features: Array2<f32>,
    pub class_logits: Array2<f64>,
    /// One block per task, in the model's task order.
    pub ssl_logits: Vec<Array2<f64>>,
    pub gate_logits: Array2<f64>,
}

/// Loss gradients with respect to the logit blocks. A `None` branch is
/// treated as detached: its heads receive no gradient and contribute
/// nothing to the backbone.
#[derive(Debug, Clone)]
pub struct HeadGrads {
    pub class_logits: Array2<f64>,
    pub ssl_logits: Option<Vec<Array2<f64>>>,
    pub gate_logits: Option<Array2<f64>>,
}

#[derive(Debug, Clone)]
pub struct GatedModel {
    config: ModelConfig,
    backbone: Backbone,
    classifier: Classifier,
    ssl_heads: Vec<Linear>,
    gate: Linear,
}

fn to_f64(a: Array2<f32>) -> Array2<f64> {
    a.mapv(f64::from)
}

fn to_f32(a: &Array2<f64>) -> Array2<f32> {
    a.mapv(|v| v as f32)
}

impl GatedModel {
    /// Builds and initializes the model. Initialization depends only on
    /// `seed` and parameter names.
    pub fn assemble(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.tasks.is_empty() {
            return Err(Error::Config("at least one pretext task is required".into()));
        }
        check_unique(&config.tasks)?;
        if config.num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {}",
                config.num_classes
            )));
        }
        let backbone = Backbone::new(config.backbone);
        let d = backbone.feature_dim();
        let classifier = match config.classifier {
            ClassifierKind::Cosine => Classifier::Cosine(CosineLinear::new(d, config.num_classes)),
            ClassifierKind::Affine => Classifier::Affine(Linear::new(d, config.num_classes)),
        };
        let ssl_heads = config
            .tasks
            .iter()
            .map(|t| Linear::new(d, t.label_cardinality()))
            .collect();
        let gate = Linear::new(d, config.tasks.len());
        let mut model = Self {
            config,
            backbone,
            classifier,
            ssl_heads,
            gate,
        };
        nn::initialize(&mut model, seed);
        Ok(model)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn tasks(&self) -> &[TaskKind] {
        &self.config.tasks
    }

    pub fn feature_dim(&self) -> usize {
        self.backbone.feature_dim()
    }

    /// (in, out) widths of the classifier, each task head, and the gate.
    pub fn head_shapes(&self) -> (usize, Vec<(TaskKind, usize)>, usize) {
        (
            self.classifier.out_features(),
            self.config
                .tasks
                .iter()
                .zip(&self.ssl_heads)
                .map(|(t, h)| (*t, h.out_features()))
                .collect(),
            self.gate.out_features(),
        )
    }

    pub fn forward(&mut self, batch: &Array4<f32>, train: bool) -> Result<ForwardOutput> {
        let (b, c, h, w) = batch.dim();
        if c != 3 || b == 0 || h < 2 || w < 2 {
            return Err(Error::Shape(format!(
                "expected a non-empty (B, 3, H>=2, W>=2) batch, got ({b}, {c}, {h}, {w})"
            )));
        }
        let features = self.backbone.forward(batch, train);
        let class_logits = to_f64(self.classifier.forward(&features, train));
        let ssl_logits = self
            .ssl_heads
            .iter_mut()
            .map(|head| to_f64(head.forward(&features, train)))
            .collect();
        let gate_logits = to_f64(self.gate.forward(&features, train));
        Ok(ForwardOutput {
            features,
            class_logits,
            ssl_logits,
            gate_logits,
        })
    }

    /// Back-propagates head gradients through the heads and the backbone,
    /// accumulating into parameter gradients. Must follow a training-mode
    /// [`GatedModel::forward`].
    pub fn backward(&mut self, grads: &HeadGrads) -> Result<()> {
        let b = grads.class_logits.nrows();
        let mut d_features = self.classifier.backward(&to_f32(&grads.class_logits));
        match &grads.ssl_logits {
            Some(blocks) => {
                if blocks.len() != self.ssl_heads.len() {
                    return Err(Error::Shape(format!(
                        "{} ssl gradient blocks for {} heads",
                        blocks.len(),
                        self.ssl_heads.len()
                    )));
                }
                for (head, g) in self.ssl_heads.iter_mut().zip(blocks) {
                    if g.nrows() != b {
                        return Err(Error::Shape("ssl gradient batch size mismatch".into()));
                    }
                    d_features += &head.backward(&to_f32(g));
                }
            }
            None => self.ssl_heads.iter_mut().for_each(Linear::clear_cache),
        }
        match &grads.gate_logits {
            Some(g) => {
                let d_gate = self.gate.backward(&to_f32(g));
                if !self.config.detach_gate_input {
                    d_features += &d_gate;
                }
            }
            None => self.gate.clear_cache(),
        }
        self.backbone.backward(&d_features);
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        nn::zero_grad(self);
    }
}

impl Module for GatedModel {
    fn visit(&mut self, prefix: &str, v: &mut dyn Visitor) {
        self.backbone.visit(&join(prefix, "backbone"), v);
        match &mut self.classifier {
            Classifier::Cosine(c) => c.visit(&join(prefix, "classifier"), v),
            Classifier::Affine(l) => l.visit(&join(prefix, "classifier"), v),
        }
        for (task, head) in self.config.tasks.iter().zip(&mut self.ssl_heads) {
            head.visit(&join(prefix, &format!("ssl_heads.{}", task.name())), v);
        }
        self.gate.visit(&join(prefix, "gate"), v);
    }
}

/// Row-wise softmax of gate logits with max subtraction.
pub fn gate_distribution(gate_logits: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    if let Some(bad) = gate_logits.iter().find(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite gate logit {bad}")));
    }
    let mut out = gate_logits.to_owned();
    for mut row in out.axis_iter_mut(Axis(0)) {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::for_each_param;
    use ndarray::array;
    use proptest::prelude::*;

    fn config(backbone: BackboneName, k: usize, tasks: &[TaskKind]) -> ModelConfig {
        ModelConfig {
            backbone,
            num_classes: k,
            tasks: tasks.to_vec(),
            classifier: ClassifierKind::Cosine,
            detach_gate_input: false,
        }
    }

    #[test]
    fn head_sizing() {
        let m = GatedModel::assemble(config(BackboneName::Resnet32Cifar, 10, &[TaskKind::LorotE]), 0).unwrap();
        assert_eq!(m.feature_dim(), 64);
        assert_eq!(m.head_shapes(), (10, vec![(TaskKind::LorotE, 16)], 1));

        let all = [TaskKind::LorotE, TaskKind::Flip, TaskKind::Shuffle];
        let m = GatedModel::assemble(config(BackboneName::Resnet18, 200, &all), 0).unwrap();
        assert_eq!(m.feature_dim(), 512);
        assert_eq!(
            m.head_shapes(),
            (200, vec![(TaskKind::LorotE, 16), (TaskKind::Flip, 2), (TaskKind::Shuffle, 6)], 3)
        );
    }

    #[test]
    fn assembly_errors() {
        assert!(matches!(
            GatedModel::assemble(config(BackboneName::TinyCnn, 4, &[]), 0),
            Err(Error::Config(_))
        ));
        assert!(matches!(
            GatedModel::assemble(config(BackboneName::TinyCnn, 4, &[TaskKind::Flip, TaskKind::Flip]), 0),
            Err(Error::Config(_))
        ));
    }

    fn params(m: &mut GatedModel) -> Vec<(String, Vec<f32>)> {
        let mut out = Vec::new();
        for_each_param(m, |n, p| out.push((n.to_owned(), p.value.clone())));
        out
    }

    #[test]
    fn same_seed_same_parameters() {
        let cfg = config(BackboneName::TinyCnn, 4, &[TaskKind::LorotE, TaskKind::Shuffle]);
        let mut a = GatedModel::assemble(cfg.clone(), 5).unwrap();
        let mut b = GatedModel::assemble(cfg.clone(), 5).unwrap();
        let mut c = GatedModel::assemble(cfg, 6).unwrap();
        assert_eq!(params(&mut a), params(&mut b));
        assert_ne!(params(&mut a), params(&mut c));
    }

    #[test]
    fn shared_parameters_do_not_depend_on_task_set() {
        let mut a = GatedModel::assemble(config(BackboneName::TinyCnn, 4, &[TaskKind::LorotE]), 9).unwrap();
        let mut b = GatedModel::assemble(
            config(BackboneName::TinyCnn, 4, &[TaskKind::Shuffle, TaskKind::LorotE]),
            9,
        )
        .unwrap();
        let pa = params(&mut a);
        let pb = params(&mut b);
        let mut shared = 0;
        for (name, value) in pa.iter().filter(|(n, _)| !n.starts_with("gate.")) {
            if let Some((_, other)) = pb.iter().find(|(n, _)| n == name) {
                assert_eq!(value, other, "{name}");
                shared += 1;
            }
        }
        assert!(shared >= 5, "{shared}");
    }

    #[test]
    fn zero_image_gives_finite_outputs() {
        let all = [TaskKind::LorotE, TaskKind::Flip, TaskKind::Shuffle];
        let mut m = GatedModel::assemble(config(BackboneName::TinyCnn, 4, &all), 1).unwrap();
        let out = m.forward(&Array4::zeros((1, 3, 8, 8)), false).unwrap();
        assert!(out.class_logits.iter().all(|v| v.is_finite()));
        assert!(out.ssl_logits.iter().flatten().all(|v| v.is_finite()));
        assert_eq!(out.gate_logits.dim(), (1, 3));
    }

    #[test]
    fn duplicated_sample_duplicates_rows_in_eval() {
        let mut m = GatedModel::assemble(config(BackboneName::TinyCnn, 4, &[TaskKind::Flip]), 2).unwrap();
        let x = crate::nn::testing::random4((2, 3, 8, 8), 3).mapv(f32::abs);
        let mut dup = Array4::zeros((3, 3, 8, 8));
        dup.slice_mut(ndarray::s![0..2, .., .., ..]).assign(&x);
        dup.slice_mut(ndarray::s![2, .., .., ..]).assign(&x.slice(ndarray::s![0, .., .., ..]));
        let out = m.forward(&dup, false).unwrap();
        assert_eq!(out.class_logits.row(0), out.class_logits.row(2));
        assert_eq!(out.gate_logits.row(0), out.gate_logits.row(2));
        assert_eq!(out.ssl_logits[0].row(0), out.ssl_logits[0].row(2));
    }

    #[test]
    fn forward_rejects_wrong_channels() {
        let mut m = GatedModel::assemble(config(BackboneName::TinyCnn, 4, &[TaskKind::Flip]), 2).unwrap();
        assert!(matches!(m.forward(&Array4::zeros((1, 1, 8, 8)), false), Err(Error::Shape(_))));
    }

    #[test]
    fn gate_softmax_cases() {
        let g = gate_distribution(Array2::zeros((2, 3)).view()).unwrap();
        assert!(g.iter().all(|&v| v == 1.0 / 3.0));
        let g = gate_distribution(array![[5.0], [-3.0]].view()).unwrap();
        assert!(g.iter().all(|&v| v == 1.0));
        let g = gate_distribution(array![[2f64.ln(), 0.0]].view()).unwrap();
        assert!((g[[0, 0]] - 2.0 / 3.0).abs() < 1e-9);
        assert!((g[[0, 1]] - 1.0 / 3.0).abs() < 1e-9);
        assert!(matches!(
            gate_distribution(array![[f64::NAN, 0.0]].view()),
            Err(Error::Numeric(_))
        ));
        // huge logits stay finite thanks to max subtraction
        let g = gate_distribution(array![[1000.0, 999.0]].view()).unwrap();
        assert!(g.iter().all(|v| v.is_finite()));
    }

    proptest! {
        #[test]
        fn gate_rows_are_shift_invariant_distributions(
            rows in prop::collection::vec(prop::collection::vec(-50.0f64..50.0, 3), 1..6),
            shift in -100.0f64..100.0,
        ) {
            let b = rows.len();
            let logits = Array2::from_shape_vec((b, 3), rows.concat()).unwrap();
            let g = gate_distribution(logits.view()).unwrap();
            let shifted = gate_distribution((&logits + shift).view()).unwrap();
            for row in g.axis_iter(Axis(0)) {
                prop_assert!((row.sum() - 1.0).abs() < 1e-12);
                prop_assert!(row.iter().all(|&v| (0.0..=1.0).contains(&v)));
            }
            for (a, s) in g.iter().zip(&shifted) {
                prop_assert!((a - s).abs() < 1e-9);
            }
        }
    }
}
