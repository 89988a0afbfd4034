//! Supervised and self-supervised objectives.
//!
//! * LDAM: cross-entropy over `s * z'` where the target logit is lowered by a
//!   per-class margin `delta_j ∝ n_j^(-1/4)`.
//! * DRW: effective-number class weights `(1 - β) / (1 - β^n_j)`, normalized
//!   to mean one and switched on late in training.
//! * The gated total loss
//!
//! ```text
//! L_tot = L_C + λ · Σ_n (1/B) Σ_i G[i, n] · L_n[i]
//! ```
//!
//! where `G` is the per-sample softmax over tasks produced by the gating head
//! and `L_n[i]` the cross-entropy of task `n` on sample `i`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::gate_distribution;

pub const DEFAULT_MAX_MARGIN: f64 = 0.5;
pub const DEFAULT_SCALE: f64 = 30.0;
pub const DEFAULT_BETA: f64 = 0.9999;

#[derive(Debug, Clone, PartialEq)]
pub struct ClassMargins {
    pub deltas: Vec<f64>,
    pub max_margin: f64,
    /// Logit scale `s`.
    pub scale: f64,
}

impl ClassMargins {
    /// Margins of zero with the given scale, which turns [`ldam_loss`] into
    /// plain (scaled) cross-entropy.
    pub fn zero(num_classes: usize, scale: f64) -> Self {
        Self {
            deltas: vec![0.0; num_classes],
            max_margin: 0.0,
            scale,
        }
    }

    pub fn with_scale(mut self, scale: f64) -> Self {
        self.scale = scale;
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    pub beta: f64,
}

/// Per-sample and reduced values of one loss term.
#[derive(Debug, Clone, PartialEq)]
pub struct LossValue {
    pub per_sample: Array1<f64>,
    pub mean: f64,
    /// Gradient of `mean` with respect to the logits.
    pub grad: Array2<f64>,
}

/// Decomposition of the total objective for one batch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_c: f64,
    pub per_task_gated: Vec<f64>,
    pub l_tot: f64,
    /// Whether class re-weighting was applied to `l_c`.
    #[serde(default)]
    pub reweighted: bool,
}

fn check_counts(counts: &[usize]) -> Result<()> {
    if counts.is_empty() {
        return Err(Error::Domain("class counts are empty".into()));
    }
    if let Some(j) = counts.iter().position(|&n| n == 0) {
        return Err(Error::Domain(format!("class {j} has a zero count")));
    }
    Ok(())
}

/// `delta_j = max_margin · n_j^(-1/4) / max_k n_k^(-1/4)`, scale set to
/// [`DEFAULT_SCALE`].
pub fn ldam_margins(counts: &[usize], max_margin: f64) -> Result<ClassMargins> {
    check_counts(counts)?;
    if !(max_margin > 0.0 && max_margin.is_finite()) {
        return Err(Error::Domain(format!("max margin must be positive, got {max_margin}")));
    }
    let raw: Vec<f64> = counts.iter().map(|&n| (n as f64).powf(-0.25)).collect();
    let top = raw.iter().copied().fold(f64::MIN, f64::max);
    Ok(ClassMargins {
        deltas: raw.iter().map(|r| max_margin * r / top).collect(),
        max_margin,
        scale: DEFAULT_SCALE,
    })
}

/// Unnormalized effective-number weights `(1 - β) / (1 - β^n_j)`.
pub fn drw_raw_weights(counts: &[usize], beta: f64) -> Result<Vec<f64>> {
    check_counts(counts)?;
    if !(beta > 0.0 && beta < 1.0) {
        return Err(Error::Domain(format!("beta must lie in (0, 1), got {beta}")));
    }
    // 1 - β^n via expm1/ln_1p keeps precision for β close to 1
    let ln_beta = (-(1.0 - beta)).ln_1p();
    Ok(counts
        .iter()
        .map(|&n| (1.0 - beta) / -(n as f64 * ln_beta).exp_m1())
        .collect())
}

/// Effective-number weights normalized to mean one.
pub fn drw_weights(counts: &[usize], beta: f64) -> Result<ClassWeights> {
    let raw = drw_raw_weights(counts, beta)?;
    let mean = raw.iter().sum::<f64>() / raw.len() as f64;
    let weights = if raw.iter().all(|&r| r == raw[0]) {
        vec![1.0; raw.len()]
    } else {
        raw.iter().map(|r| r / mean).collect()
    };
    Ok(ClassWeights { weights, beta })
}

fn check_logits(logits: ArrayView2<'_, f64>, targets: &[usize], what: &str) -> Result<()> {
    if logits.nrows() != targets.len() {
        return Err(Error::Shape(format!(
            "{what}: {} rows of logits for {} targets",
            logits.nrows(),
            targets.len()
        )));
    }
    if logits.iter().any(|v| v.is_nan()) {
        return Err(Error::Numeric(format!("{what}: NaN logit")));
    }
    if let Some(&bad) = targets.iter().find(|&&t| t >= logits.ncols()) {
        return Err(Error::Domain(format!(
            "{what}: label {bad} out of range for {} classes",
            logits.ncols()
        )));
    }
    Ok(())
}

/// Cross-entropy of one row and the softmax of that row.
fn row_ce(row: ArrayView1<'_, f64>, target: usize) -> (f64, Array1<f64>) {
    let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let shifted = row.mapv(|v| v - max);
    let exp = shifted.mapv(f64::exp);
    let sum = exp.sum();
    (sum.ln() - shifted[target], exp / sum)
}

/// Per-sample cross-entropy with a stable log-sum-exp.
pub fn task_ce(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<Array1<f64>> {
    check_logits(logits, labels, "task_ce")?;
    Ok(logits
        .axis_iter(Axis(0))
        .zip(labels)
        .map(|(row, &t)| row_ce(row, t).0)
        .collect())
}

/// Per-sample cross-entropy together with `d CE_i / d logits[i, ·]`
/// (one row per sample, not divided by the batch size).
pub fn task_ce_with_grad(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<(Array1<f64>, Array2<f64>)> {
    check_logits(logits, labels, "task_ce")?;
    let mut losses = Array1::zeros(labels.len());
    let mut grad = Array2::zeros(logits.raw_dim());
    for (i, (row, &t)) in logits.axis_iter(Axis(0)).zip(labels).enumerate() {
        let (l, mut p) = row_ce(row, t);
        p[t] -= 1.0;
        losses[i] = l;
        grad.row_mut(i).assign(&p);
    }
    Ok((losses, grad))
}

/// LDAM loss. Per-sample values include the class weight when one is given;
/// `mean` divides by the sum of the applied weights.
pub fn ldam_loss(
    class_logits: ArrayView2<'_, f64>,
    targets: &[usize],
    margins: &ClassMargins,
    weights: Option<&ClassWeights>,
) -> Result<LossValue> {
    check_logits(class_logits, targets, "ldam_loss")?;
    let k = class_logits.ncols();
    if margins.deltas.len() != k || weights.is_some_and(|w| w.weights.len() != k) {
        return Err(Error::Shape(format!("ldam_loss: margins or weights do not cover {k} classes")));
    }
    let s = margins.scale;
    let b = targets.len();
    let mut per_sample = Array1::zeros(b);
    let mut grad = Array2::zeros((b, k));
    let mut total_weight = 0.0;
    for (i, (row, &t)) in class_logits.axis_iter(Axis(0)).zip(targets).enumerate() {
        let mut z = row.mapv(|v| s * v);
        z[t] -= s * margins.deltas[t];
        let (ce, mut p) = row_ce(z.view(), t);
        let w = weights.map_or(1.0, |w| w.weights[t]);
        p[t] -= 1.0;
        per_sample[i] = w * ce;
        grad.row_mut(i).assign(&(p * (w * s)));
        total_weight += w;
    }
    if b == 0 {
        return Ok(LossValue { per_sample, mean: 0.0, grad });
    }
    grad /= total_weight;
    Ok(LossValue {
        mean: per_sample.sum() / total_weight,
        per_sample,
        grad,
    })
}

fn check_gate(gate: ArrayView2<'_, f64>, task_losses: &[Array1<f64>], lambda: f64) -> Result<()> {
    if gate.ncols() != task_losses.len() {
        return Err(Error::Shape(format!(
            "gate has {} columns for {} tasks",
            gate.ncols(),
            task_losses.len()
        )));
    }
    if let Some(l) = task_losses.iter().find(|l| l.len() != gate.nrows()) {
        return Err(Error::Shape(format!(
            "task loss vector of length {} for a batch of {}",
            l.len(),
            gate.nrows()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Domain(format!("lambda must be finite and non-negative, got {lambda}")));
    }
    Ok(())
}

/// `per_task_gated[n] = (1/B) Σ_i gate[i, n] · task_losses[n][i]` and
/// `l_tot = l_c + λ · Σ_n per_task_gated[n]`.
pub fn gated_total_loss(
    l_c: f64,
    gate: ArrayView2<'_, f64>,
    task_losses: &[Array1<f64>],
    lambda: f64,
) -> Result<LossBreakdown> {
    check_gate(gate, task_losses, lambda)?;
    let b = gate.nrows().max(1) as f64;
    let per_task_gated: Vec<f64> = task_losses
        .iter()
        .enumerate()
        .map(|(n, l)| gate.column(n).dot(l) / b)
        .collect();
    let l_tot = if lambda == 0.0 {
        l_c
    } else {
        l_c + lambda * per_task_gated.iter().sum::<f64>()
    };
    Ok(LossBreakdown {
        l_c,
        per_task_gated,
        l_tot,
        reweighted: false,
    })
}

/// Everything the full objective needs for one batch.
#[derive(Debug, Clone, Copy)]
pub struct ObjectiveInputs<'a> {
    pub class_logits: ArrayView2<'a, f64>,
    pub class_targets: &'a [usize],
    pub ssl_logits: &'a [Array2<f64>],
    pub ssl_targets: &'a [Vec<usize>],
    pub gate_logits: ArrayView2<'a, f64>,
    pub margins: &'a ClassMargins,
    pub weights: Option<&'a ClassWeights>,
    pub lambda: f64,
}

/// Value and logit gradients of the full objective.
#[derive(Debug, Clone, PartialEq)]
pub struct Objective {
    pub breakdown: LossBreakdown,
    /// Softmax gate, one row per sample.
    pub gate: Array2<f64>,
    /// Per-task, per-sample cross-entropies.
    pub task_losses: Vec<Array1<f64>>,
    pub class_grad: Array2<f64>,
    pub ssl_grads: Vec<Array2<f64>>,
    pub gate_grad: Array2<f64>,
}

/// Evaluates `L_tot` and its gradients with respect to the class, task and
/// gate logits.
///
/// With `g = λ/B`, the task and gate gradients are
///
/// ```text
/// dL/dssl_n[i]   = g · G[i,n] · (softmax(ssl_n[i]) - onehot)
/// dL/dgate[i,m]  = g · G[i,m] · (L_m[i] - Σ_n G[i,n] L_n[i])
/// ```
pub fn gated_objective(inputs: ObjectiveInputs<'_>) -> Result<Objective> {
    let t = inputs.ssl_logits.len();
    if inputs.ssl_targets.len() != t || inputs.gate_logits.ncols() != t {
        return Err(Error::Shape(format!(
            "{t} task logit blocks, {} target lists, {} gate columns",
            inputs.ssl_targets.len(),
            inputs.gate_logits.ncols()
        )));
    }
    let b = inputs.class_targets.len();
    if inputs.gate_logits.nrows() != b {
        return Err(Error::Shape("gate logits batch size mismatch".into()));
    }
    let supervised = ldam_loss(inputs.class_logits, inputs.class_targets, inputs.margins, inputs.weights)?;
    let gate = gate_distribution(inputs.gate_logits)?;
    let mut task_losses = Vec::with_capacity(t);
    let mut ce_grads = Vec::with_capacity(t);
    for (logits, targets) in inputs.ssl_logits.iter().zip(inputs.ssl_targets) {
        let (l, g) = task_ce_with_grad(logits.view(), targets)?;
        task_losses.push(l);
        ce_grads.push(g);
    }
    let mut breakdown = gated_total_loss(supervised.mean, gate.view(), &task_losses, inputs.lambda)?;
    breakdown.reweighted = inputs.weights.is_some();
    if !breakdown.l_tot.is_finite() {
        return Err(Error::Numeric(format!("non-finite total loss {}", breakdown.l_tot)));
    }

    let scale = inputs.lambda / b.max(1) as f64;
    let ssl_grads = ce_grads
        .into_iter()
        .enumerate()
        .map(|(n, mut g)| {
            for (mut row, &w) in g.axis_iter_mut(Axis(0)).zip(gate.column(n)) {
                row *= scale * w;
            }
            g
        })
        .collect();
    let mut gate_grad = Array2::zeros((b, t));
    for i in 0..b {
        let expected: f64 = (0..t).map(|n| gate[[i, n]] * task_losses[n][i]).sum();
        for m in 0..t {
            gate_grad[[i, m]] = scale * gate[[i, m]] * (task_losses[m][i] - expected);
        }
    }
    Ok(Objective {
        breakdown,
        gate,
        task_losses,
        class_grad: supervised.grad,
        ssl_grads,
        gate_grad,
    })
}
