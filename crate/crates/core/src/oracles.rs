//! Brute-force reference implementations and the self-check suite.
//!
//! Nothing here calls into the code it checks: cross-entropy is evaluated
//! directly from its definition, gradients by central differences, and the
//! pretext transforms by rotating pixel coordinates about the quadrant
//! center.

use std::fmt;

use ndarray::{Array1, Array2, Array3, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datasets::{self, CifarRecord, ImbalanceProfile};
use crate::error::Result;
use crate::losses::{self, ClassMargins, ClassWeights, LossValue, Objective, ObjectiveInputs};
use crate::model;
use crate::transforms::{self, ImageTensor, TaskKind, TransformOutcome};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-4;
/// Relative-error tolerance for loss-level gradient checks.
pub const FD_TOLERANCE: f64 = 1e-4;
/// Gradients smaller than this are compared in absolute terms.
const FD_FLOOR: f64 = 1e-6;

/// `-ln(softmax(logits)[target])` straight from the definition, with a
/// compensated sum of the exponentials.
pub fn ce_oracle(logits: &[f64], target: usize) -> f64 {
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &z in logits {
        let e = z.exp();
        let t = sum + e;
        comp += if sum.abs() >= e.abs() { (sum - t) + e } else { (e - t) + sum };
        sum = t;
    }
    -(logits[target].exp() / (sum + comp)).ln()
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub block: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
}

impl fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}: max rel err {:.3e} (tol {:.0e}) {}",
            self.block,
            self.max_rel_error,
            self.tolerance,
            if self.passed { "ok" } else { "FAIL" }
        )
    }
}

/// Compares `analytic` against central differences of `f` at `x`.
///
/// The per-coordinate error is `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn fd_gradient(
    block: &str,
    f: impl Fn(&[f64]) -> f64,
    x: &[f64],
    analytic: &[f64],
    step: f64,
    tolerance: f64,
) -> GradCheckReport {
    let mut worst = 0.0f64;
    let mut probe = x.to_vec();
    for i in 0..x.len() {
        probe[i] = x[i] + step;
        let plus = f(&probe);
        probe[i] = x[i] - step;
        let minus = f(&probe);
        probe[i] = x[i];
        let numeric = (plus - minus) / (2.0 * step);
        let err = if numeric.is_finite() && analytic.get(i).is_some_and(|a| a.is_finite()) {
            let a = analytic[i];
            (a - numeric).abs() / a.abs().max(numeric.abs()).max(FD_FLOOR)
        } else {
            f64::INFINITY
        };
        worst = worst.max(err);
    }
    if analytic.len() != x.len() {
        worst = f64::INFINITY;
    }
    GradCheckReport {
        block: block.to_owned(),
        max_rel_error: worst,
        tolerance,
        passed: worst < tolerance,
    }
}

/// Lexicographic permutations of (0, 1, 2), found by scanning base-3 digit
/// triples in increasing order.
fn permutations() -> Vec<[usize; 3]> {
    (0..27)
        .map(|n| [n / 9, (n / 3) % 3, n % 3])
        .filter(|p| p[0] != p[1] && p[1] != p[2] && p[0] != p[2])
        .collect()
}

fn quadrant_origin(q: usize, h: usize, w: usize) -> (usize, usize, usize, usize) {
    let (top, left) = (h / 2, w / 2);
    let (r0, rows) = if q < 2 { (0, top) } else { (top, h - top) };
    let (c0, cols) = if q.is_multiple_of(2) { (0, left) } else { (left, w - left) };
    (r0, c0, rows, cols)
}

/// The image produced by `task` with self-label `label` (and, for flip and
/// shuffle, in quadrant `quadrant`), computed from coordinates.
pub fn oracle_apply(task: TaskKind, quadrant: usize, label: usize, img: &Array3<f32>) -> Array3<f32> {
    let (_, h, w) = img.dim();
    let mut out = img.clone();
    match task {
        TaskKind::LorotE => {
            let (r0, c0, n, _) = quadrant_origin(label / 4, h, w);
            let turns = label % 4;
            let (cos, sin) = [(1i64, 0i64), (0, 1), (-1, 0), (0, -1)][turns];
            let span = n as i64 - 1;
            for ch in 0..3 {
                for i in 0..n {
                    for j in 0..n {
                        // doubled coordinates about the center, y pointing up
                        let (u, v) = (2 * j as i64 - span, span - 2 * i as i64);
                        let (su, sv) = (cos * u + sin * v, -sin * u + cos * v);
                        let (si, sj) = ((span - sv) / 2, (su + span) / 2);
                        out[[ch, r0 + i, c0 + j]] = img[[ch, r0 + si as usize, c0 + sj as usize]];
                    }
                }
            }
        }
        TaskKind::Flip => {
            let (r0, c0, rows, cols) = quadrant_origin(quadrant, h, w);
            if label == 1 {
                for ch in 0..3 {
                    for i in 0..rows {
                        for j in 0..cols {
                            out[[ch, r0 + i, c0 + j]] = img[[ch, r0 + i, c0 + cols - 1 - j]];
                        }
                    }
                }
            }
        }
        TaskKind::Shuffle => {
            let (r0, c0, rows, cols) = quadrant_origin(quadrant, h, w);
            let perm = permutations()[label];
            for (ch, &src) in perm.iter().enumerate() {
                for i in r0..r0 + rows {
                    for j in c0..c0 + cols {
                        out[[ch, i, j]] = img[[src, i, j]];
                    }
                }
            }
        }
    }
    out
}

/// Every (output, label) pair of a task on one image; flip and shuffle act
/// on the top-left quadrant.
pub fn enumerate_outcomes(task: TaskKind, img: &ImageTensor) -> Vec<(ImageTensor, usize)> {
    let n = match task {
        TaskKind::LorotE => 16,
        TaskKind::Flip => 2,
        TaskKind::Shuffle => 6,
    };
    (0..n)
        .map(|label| {
            let out = oracle_apply(task, 0, label, img.as_array());
            (ImageTensor::new(out).expect("a pixel permutation stays in range"), label)
        })
        .collect()
}

/// A random image whose pixel values are pairwise distinct.
pub fn distinct_pixel_image(h: usize, w: usize, seed: u64) -> ImageTensor {
    let n = 3 * h * w;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let values = order.iter().map(|&k| (k as f32 + 0.5) / n as f32).collect();
    ImageTensor::from_vec(h, w, values).expect("values in (0, 1)")
}

/// What [`check_label_space`] found for one task.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelSpace {
    pub labels: usize,
    pub distinct_images: usize,
    /// Labels whose output equals the input image.
    pub identity_labels: Vec<usize>,
}

/// Enumerates a task on `img` and checks its label space: labels are
/// `0..C`, every non-identity output is unique, and the identity outputs
/// are exactly the zero-parameter labels (one per quadrant for LoRot-E,
/// since a zero rotation of any quadrant leaves the image unchanged; label
/// 0 for flip and shuffle).
pub fn check_label_space(task: TaskKind, img: &ImageTensor) -> std::result::Result<LabelSpace, String> {
    let outcomes = enumerate_outcomes(task, img);
    let mut labels: Vec<usize> = outcomes.iter().map(|(_, l)| *l).collect();
    labels.sort_unstable();
    if labels != (0..outcomes.len()).collect::<Vec<_>>() {
        return Err(format!("{task}: labels {labels:?} are not 0..{}", outcomes.len()));
    }
    let identity_labels: Vec<usize> = outcomes
        .iter()
        .filter(|(out, _)| out == img)
        .map(|(_, l)| *l)
        .collect();
    let expected_identity: Vec<usize> = match task {
        TaskKind::LorotE => vec![0, 4, 8, 12],
        TaskKind::Flip | TaskKind::Shuffle => vec![0],
    };
    if identity_labels != expected_identity {
        return Err(format!("{task}: labels {identity_labels:?} leave the image unchanged"));
    }
    for a in 0..outcomes.len() {
        for b in a + 1..outcomes.len() {
            let both_identity = identity_labels.contains(&a) && identity_labels.contains(&b);
            if !both_identity && outcomes[a].0 == outcomes[b].0 {
                return Err(format!("{task}: labels {a} and {b} give the same image"));
            }
        }
    }
    Ok(LabelSpace {
        labels: outcomes.len(),
        distinct_images: outcomes.len() + 1 - identity_labels.len(),
        identity_labels,
    })
}

/// Function table the suite checks; replace an entry to test the harness.
#[derive(Clone, Copy)]
pub struct Implementations {
    pub ldam_margins: fn(&[usize], f64) -> Result<ClassMargins>,
    pub drw_raw_weights: fn(&[usize], f64) -> Result<Vec<f64>>,
    pub drw_weights: fn(&[usize], f64) -> Result<ClassWeights>,
    pub task_ce: fn(ArrayView2<'_, f64>, &[usize]) -> Result<Array1<f64>>,
    pub ldam_loss: fn(ArrayView2<'_, f64>, &[usize], &ClassMargins, Option<&ClassWeights>) -> Result<LossValue>,
    pub gate_distribution: fn(ArrayView2<'_, f64>) -> Result<Array2<f64>>,
    pub gated_objective: fn(ObjectiveInputs<'_>) -> Result<Objective>,
    pub exponential_profile: fn(usize, usize, f64) -> Result<ImbalanceProfile>,
    pub apply_outcome: fn(&ImageTensor, &TransformOutcome) -> Result<ImageTensor>,
}

impl Default for Implementations {
    fn default() -> Self {
        Self {
            ldam_margins: losses::ldam_margins,
            drw_raw_weights: losses::drw_raw_weights,
            drw_weights: losses::drw_weights,
            task_ce: losses::task_ce,
            ldam_loss: losses::ldam_loss,
            gate_distribution: model::gate_distribution,
            gated_objective: losses::gated_objective,
            exponential_profile: datasets::exponential_profile,
            apply_outcome: transforms::apply_outcome,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for CheckResult {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let status = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{status} {:<22} {}", self.name, self.detail)
    }
}

type Outcome = std::result::Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64, what: &str) -> std::result::Result<(), String> {
    ensure((a - b).abs() <= tol, || format!("{what}: got {a}, expected {b} (tol {tol:e})"))
}

fn random_matrix(rng: &mut ChaCha8Rng, b: usize, c: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((b, c), |_| rng.random_range(-scale..scale))
}

fn check_margins(imp: &Implementations) -> Outcome {
    let m = (imp.ldam_margins)(&[1000, 16], 0.5).map_err(|e| e.to_string())?;
    close(m.deltas[0], 0.1778279410038923, 1e-9, "delta for 1000 samples")?;
    close(m.deltas[1], 0.5, 1e-12, "delta for 16 samples")?;
    let m = (imp.ldam_margins)(&[40; 5], 0.5).map_err(|e| e.to_string())?;
    ensure(m.deltas.iter().all(|&d| (d - 0.5).abs() < 1e-12), || "balanced margins differ".into())?;
    let counts = [5000, 1077, 387, 83, 50];
    let m = (imp.ldam_margins)(&counts, 0.5).map_err(|e| e.to_string())?;
    for (j, &n) in counts.iter().enumerate() {
        let expected = 0.5 * (50.0 / n as f64).sqrt().sqrt();
        close(m.deltas[j], expected, 1e-12, &format!("delta[{j}]"))?;
    }
    Ok("deltas(1000,16) = (0.17783, 0.5)".into())
}

fn check_drw(imp: &Implementations) -> Outcome {
    let raw = (imp.drw_raw_weights)(&[5000, 50], 0.9999).map_err(|e| e.to_string())?;
    // (1 - β^5000) / (1 - β^50) with β^n = exp(n ln β), evaluated directly
    let head = 1.0 - (5000.0 * 0.9999f64.ln()).exp();
    let tail = 1.0 - (50.0 * 0.9999f64.ln()).exp();
    let ratio = raw[1] / raw[0];
    close(ratio, head / tail, 1e-6, "tail/head weight ratio")?;
    close(ratio, 78.88987217661752, 1e-6, "tail/head weight ratio")?;
    let w = (imp.drw_weights)(&[300; 4], 0.9999).map_err(|e| e.to_string())?;
    ensure(w.weights.iter().all(|&x| x == 1.0), || format!("balanced weights {:?}", w.weights))?;
    Ok(format!("ratio {ratio:.4}"))
}

fn check_task_ce(imp: &Implementations) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xce);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let c = 2 + case % 15;
        let logits = random_matrix(&mut rng, 8, c, 6.0);
        let labels: Vec<usize> = (0..8).map(|_| rng.random_range(0..c)).collect();
        let got = (imp.task_ce)(logits.view(), &labels).map_err(|e| e.to_string())?;
        for (i, &t) in labels.iter().enumerate() {
            let row = logits.row(i).to_vec();
            worst = worst.max((got[i] - ce_oracle(&row, t)).abs());
        }
    }
    ensure(worst < 1e-10, || format!("max deviation from the direct formula {worst:e}"))?;
    let uniform = (imp.task_ce)(Array2::zeros((1, 6)).view(), &[3]).map_err(|e| e.to_string())?;
    close(uniform[0], 6f64.ln(), 1e-12, "uniform 6-way loss")?;
    Ok(format!("max |Δ| {worst:.1e} over 100 cases"))
}

fn check_ldam_loss(imp: &Implementations) -> Outcome {
    let m = ClassMargins {
        deltas: vec![0.5, 0.0],
        max_margin: 0.5,
        scale: 1.0,
    };
    let out = (imp.ldam_loss)(ndarray::array![[0.0, 0.0]].view(), &[0], &m, None).map_err(|e| e.to_string())?;
    close(out.mean, (1.0 + 0.5f64.exp()).ln(), 1e-12, "binary margin example")?;

    let mut rng = ChaCha8Rng::seed_from_u64(0x1da);
    let counts = [900, 300, 60, 12];
    let margins = losses::ldam_margins(&counts, 0.5).map_err(|e| e.to_string())?.with_scale(1.0);
    let logits = random_matrix(&mut rng, 6, 4, 3.0);
    let targets: Vec<usize> = (0..6).map(|i| i % 4).collect();
    let out = (imp.ldam_loss)(logits.view(), &targets, &margins, None).map_err(|e| e.to_string())?;
    for (i, &t) in targets.iter().enumerate() {
        let mut shifted = logits.row(i).to_vec();
        shifted[t] -= margins.deltas[t];
        close(out.per_sample[i], ce_oracle(&shifted, t), 1e-10, &format!("sample {i}"))?;
    }
    Ok("ln(1+e^0.5) and shifted-logit agreement".into())
}

fn check_gate(imp: &Implementations) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x9a7e);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let t = rng.random_range(1..6);
        let logits = random_matrix(&mut rng, 4, t, 20.0);
        let g = (imp.gate_distribution)(logits.view()).map_err(|e| e.to_string())?;
        for row in g.rows() {
            worst = worst.max((row.sum() - 1.0).abs());
            ensure(row.iter().all(|&v| (0.0..=1.0).contains(&v)), || "entry outside [0, 1]".into())?;
        }
    }
    ensure(worst < 1e-6, || format!("row sums off by {worst:e}"))?;
    let g = (imp.gate_distribution)(Array2::zeros((2, 3)).view()).map_err(|e| e.to_string())?;
    ensure(g.iter().all(|&v| v == 1.0 / 3.0), || format!("zero logits gave {g}"))?;
    Ok(format!("max |row sum - 1| {worst:.1e}"))
}

struct Instance {
    class_logits: Array2<f64>,
    class_targets: Vec<usize>,
    ssl_logits: Vec<Array2<f64>>,
    ssl_targets: Vec<Vec<usize>>,
    gate_logits: Array2<f64>,
    margins: ClassMargins,
    weights: Option<ClassWeights>,
    lambda: f64,
}

impl Instance {
    fn random(seed: u64, b: usize, k: usize, tasks: &[usize], weighted: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let counts: Vec<usize> = (0..k).map(|j| 500 / (j + 1)).collect();
        Self {
            class_logits: random_matrix(&mut rng, b, k, 1.0),
            class_targets: (0..b).map(|_| rng.random_range(0..k)).collect(),
            ssl_logits: tasks.iter().map(|&c| random_matrix(&mut rng, b, c, 2.0)).collect(),
            ssl_targets: tasks.iter().map(|&c| (0..b).map(|_| rng.random_range(0..c)).collect()).collect(),
            gate_logits: random_matrix(&mut rng, b, tasks.len(), 2.0),
            margins: losses::ldam_margins(&counts, 0.5).expect("positive counts"),
            weights: weighted.then(|| losses::drw_weights(&counts, 0.9999).expect("valid beta")),
            lambda: 0.7,
        }
    }

    fn inputs(&self) -> ObjectiveInputs<'_> {
        ObjectiveInputs {
            class_logits: self.class_logits.view(),
            class_targets: &self.class_targets,
            ssl_logits: &self.ssl_logits,
            ssl_targets: &self.ssl_targets,
            gate_logits: self.gate_logits.view(),
            margins: &self.margins,
            weights: self.weights.as_ref(),
            lambda: self.lambda,
        }
    }
}

fn check_composition(imp: &Implementations) -> Outcome {
    let g = ndarray::array![[0.5, 0.5]];
    let b = losses::gated_total_loss(1.0, g.view(), &[ndarray::array![2.0], ndarray::array![4.0]], 0.1)
        .map_err(|e| e.to_string())?;
    close(b.l_tot, 1.3, 1e-12, "hand example")?;
    let mut worst = 0.0f64;
    for seed in 0..50 {
        let mut inst = Instance::random(seed, 4, 5, &[16, 2, 6], seed % 2 == 0);
        let obj = (imp.gated_objective)(inst.inputs()).map_err(|e| e.to_string())?;
        let bd = &obj.breakdown;
        worst = worst.max((bd.l_tot - bd.l_c - inst.lambda * bd.per_task_gated.iter().sum::<f64>()).abs());
        // the gated term against a direct double loop
        for (n, gated) in bd.per_task_gated.iter().enumerate() {
            let direct: f64 = (0..4)
                .map(|i| {
                    let row: Vec<f64> = inst.gate_logits.row(i).to_vec();
                    let denom: f64 = row.iter().map(|v| v.exp()).sum();
                    let ce = ce_oracle(&inst.ssl_logits[n].row(i).to_vec(), inst.ssl_targets[n][i]);
                    row[n].exp() / denom * ce
                })
                .sum::<f64>()
                / 4.0;
            close(*gated, direct, 1e-10, &format!("gated term {n}"))?;
        }
        inst.lambda = 0.0;
        let obj = (imp.gated_objective)(inst.inputs()).map_err(|e| e.to_string())?;
        ensure(obj.breakdown.l_tot.to_bits() == obj.breakdown.l_c.to_bits(), || {
            "lambda = 0 does not reduce to the supervised loss".into()
        })?;
    }
    ensure(worst < 1e-9, || format!("composition residual {worst:e}"))?;
    Ok(format!("residual {worst:.1e}; lambda=0 exact"))
}

fn flatten(blocks: &[Array2<f64>]) -> Vec<f64> {
    blocks.iter().flat_map(|b| b.iter().copied()).collect()
}

/// Gradient checks of the full objective per logit block.
pub fn objective_grad_checks(imp: &Implementations, seed: u64) -> Vec<GradCheckReport> {
    let base = Instance::random(seed, 4, 5, &[16, 2, 6], true);
    let obj = match (imp.gated_objective)(base.inputs()) {
        Ok(o) => o,
        Err(e) => {
            return vec![GradCheckReport {
                block: format!("objective ({e})"),
                max_rel_error: f64::INFINITY,
                tolerance: FD_TOLERANCE,
                passed: false,
            }]
        }
    };
    let eval = |inst: &Instance| {
        (imp.gated_objective)(inst.inputs()).map_or(f64::NAN, |o| o.breakdown.l_tot)
    };

    let class = {
        let x: Vec<f64> = base.class_logits.iter().copied().collect();
        let f = |v: &[f64]| {
            let mut inst = Instance::random(seed, 4, 5, &[16, 2, 6], true);
            inst.class_logits = Array2::from_shape_vec(base.class_logits.raw_dim(), v.to_vec()).expect("same shape");
            eval(&inst)
        };
        let analytic: Vec<f64> = obj.class_grad.iter().copied().collect();
        fd_gradient("ldam_loss wrt class logits", f, &x, &analytic, FD_STEP, FD_TOLERANCE)
    };
    let ssl = {
        let x = flatten(&base.ssl_logits);
        let f = |v: &[f64]| {
            let mut inst = Instance::random(seed, 4, 5, &[16, 2, 6], true);
            let mut offset = 0;
            for block in &mut inst.ssl_logits {
                let n = block.len();
                *block = Array2::from_shape_vec(block.raw_dim(), v[offset..offset + n].to_vec()).expect("same shape");
                offset += n;
            }
            eval(&inst)
        };
        fd_gradient("task_ce wrt ssl logits", f, &x, &flatten(&obj.ssl_grads), FD_STEP, FD_TOLERANCE)
    };
    let gate = {
        let x: Vec<f64> = base.gate_logits.iter().copied().collect();
        let f = |v: &[f64]| {
            let mut inst = Instance::random(seed, 4, 5, &[16, 2, 6], true);
            inst.gate_logits = Array2::from_shape_vec(base.gate_logits.raw_dim(), v.to_vec()).expect("same shape");
            eval(&inst)
        };
        let analytic: Vec<f64> = obj.gate_grad.iter().copied().collect();
        fd_gradient("gated_total_loss wrt gate logits", f, &x, &analytic, FD_STEP, FD_TOLERANCE)
    };
    vec![class, ssl, gate]
}

fn check_gradients(imp: &Implementations) -> Outcome {
    let quad = fd_gradient(
        "quadratic",
        |v| v.iter().enumerate().map(|(i, x)| (i + 1) as f64 * x * x).sum(),
        &[0.3, -1.2, 2.0],
        &[0.6, -4.8, 12.0],
        FD_STEP,
        1e-8,
    );
    let mut reports = vec![quad];
    for seed in 0..3 {
        reports.extend(objective_grad_checks(imp, seed));
    }
    let worst = reports.iter().skip(1).map(|r| r.max_rel_error).fold(0.0, f64::max);
    match reports.iter().find(|r| !r.passed) {
        Some(r) => Err(r.to_string()),
        None => Ok(format!("max rel err {worst:.1e} over {} blocks", reports.len() - 1)),
    }
}

fn check_profiles(imp: &Implementations) -> Outcome {
    for (ratio, tail) in [(0.01, 50), (0.02, 100), (0.05, 250)] {
        let p = (imp.exponential_profile)(10, 5000, ratio).map_err(|e| e.to_string())?;
        ensure(p.counts[0] == 5000 && p.counts[9] == tail, || {
            format!("ratio {ratio}: endpoints ({}, {})", p.counts[0], p.counts[9])
        })?;
        ensure(p.counts.windows(2).all(|w| w[0] >= w[1]), || format!("ratio {ratio}: not monotone"))?;
    }
    let p = (imp.exponential_profile)(10, 5000, 0.01).map_err(|e| e.to_string())?;
    let expected = [5000, 2997, 1796, 1077, 645, 387, 232, 139, 83, 50];
    ensure(p.counts == expected, || format!("ratio 0.01 counts {:?}", p.counts))?;
    Ok("endpoints (5000,50) (5000,100) (5000,250)".into())
}

fn check_transforms(imp: &Implementations) -> Outcome {
    let img = distinct_pixel_image(8, 8, 3);
    let mut sizes = Vec::new();
    for task in [TaskKind::LorotE, TaskKind::Flip, TaskKind::Shuffle] {
        let space = check_label_space(task, &img)?;
        sizes.push((space.labels, space.distinct_images));
        for q in 0..4u8 {
            let mut rng = ChaCha8Rng::seed_from_u64(q as u64);
            for _ in 0..32 {
                let mut outcome = transforms::sample_outcome(task, &mut rng);
                if task == TaskKind::LorotE {
                    // keep the sampled rotation, pin the quadrant
                    outcome = TransformOutcome::new(transforms::QuadrantId::new(q).expect("q < 4"), outcome.params);
                }
                let got = (imp.apply_outcome)(&img, &outcome).map_err(|e| e.to_string())?;
                let expected = oracle_apply(task, outcome.quadrant.value() as usize, outcome.label, img.as_array());
                ensure(*got.as_array() == expected, || {
                    format!("{task} quadrant {} label {} differs from the coordinate oracle", outcome.quadrant.value(), outcome.label)
                })?;
            }
        }
    }
    ensure(sizes == [(16, 13), (2, 2), (6, 6)], || format!("label spaces {sizes:?}"))?;
    Ok("labels 16/2/6 (13/2/6 distinct images), outputs match coordinate oracle".into())
}

fn check_cifar() -> Outcome {
    let record = CifarRecord {
        coarse_label: None,
        label: 7,
        pixels: vec![255; 3072],
    };
    let bytes = datasets::encode_cifar10_records(std::slice::from_ref(&record));
    ensure(bytes.len() == 3073 && bytes[0] == 7, || "cifar-10 encoding".into())?;
    let parsed = datasets::parse_cifar10(&bytes, "selftest".as_ref()).map_err(|e| e.to_string())?;
    ensure(parsed == [record], || "cifar-10 round trip".into())?;
    let mut raw = vec![3u8, 42];
    raw.extend((0..3072).map(|i| (i % 256) as u8));
    let parsed = datasets::parse_cifar100(&raw, "selftest".as_ref()).map_err(|e| e.to_string())?;
    ensure(parsed[0].label == 42 && parsed[0].coarse_label == Some(3), || "cifar-100 labels".into())?;
    ensure(datasets::encode_cifar100_records(&parsed) == raw, || "cifar-100 round trip".into())?;
    Ok("crafted records round-trip".into())
}

/// Runs every check against `imp`.
pub fn run_suite(imp: &Implementations) -> Vec<CheckResult> {
    let checks: [(&'static str, Box<dyn Fn() -> Outcome + '_>); 10] = [
        ("ldam_margins", Box::new(|| check_margins(imp))),
        ("drw_weights", Box::new(|| check_drw(imp))),
        ("task_ce", Box::new(|| check_task_ce(imp))),
        ("ldam_loss", Box::new(|| check_ldam_loss(imp))),
        ("gate_distribution", Box::new(|| check_gate(imp))),
        ("gated_total_loss", Box::new(|| check_composition(imp))),
        ("gradients", Box::new(|| check_gradients(imp))),
        ("exponential_profile", Box::new(|| check_profiles(imp))),
        ("transforms", Box::new(|| check_transforms(imp))),
        ("cifar_codec", Box::new(check_cifar)),
    ];
    checks
        .into_iter()
        .map(|(name, check)| {
            let (passed, detail) = match check() {
                Ok(d) => (true, d),
                Err(d) => (false, d),
            };
            CheckResult { name, passed, detail }
        })
        .collect()
}
