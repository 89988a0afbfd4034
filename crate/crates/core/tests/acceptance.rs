//! Acceptance suite: one test per criterion, each writing a single
//! `PASS`/`FAIL` line to stderr (visible even when output is captured).

use std::io::Write as _;
use std::path::Path;
use std::sync::OnceLock;

use gated_ssl::datasets::{
    encode_cifar100_records, encode_cifar10_records, exponential_profile, load_cifar10, parse_cifar10,
    parse_cifar100, CifarRecord, DatasetName,
};
use gated_ssl::losses::{
    drw_raw_weights, drw_weights, gated_total_loss, ldam_margins, task_ce, DEFAULT_BETA, DEFAULT_MAX_MARGIN,
};
use gated_ssl::model::gate_distribution;
use gated_ssl::oracles::{check_label_space, distinct_pixel_image, objective_grad_checks, Implementations};
use gated_ssl::report::{build_table, collect_runs, TABLE_TITLE};
use gated_ssl::training::{run, RunOptions, RunSummary, TrainConfig};
use gated_ssl::transforms::TaskKind;
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn line(criterion: u32, passed: bool, text: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    let mut err = std::io::stderr().lock();
    let _ = writeln!(err, "[acceptance] {status} {criterion:>2} {text}");
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

#[test]
fn criterion_01_label_space_cardinality() {
    let img = distinct_pixel_image(8, 8, 11);
    let spaces: Vec<_> = TaskKind::ALL
        .iter()
        .map(|&t| check_label_space(t, &img).map(|s| (t, s)))
        .collect::<Result<_, _>>()
        .expect("label space check");
    let summary: Vec<String> = spaces
        .iter()
        .map(|(t, s)| format!("{t} {} labels / {} distinct images", s.labels, s.distinct_images))
        .collect();
    let counts: Vec<(usize, usize)> = spaces.iter().map(|(_, s)| (s.labels, s.distinct_images)).collect();
    let ok = counts == [(16, 13), (2, 2), (6, 6)] && spaces[0].1.identity_labels == [0, 4, 8, 12];
    line(
        1,
        ok,
        &format!(
            "label space (amended): {}; LoRot-E labels 0/4/8/12 are zero rotations and all return the input",
            summary.join(", ")
        ),
    );
    assert!(ok, "{counts:?}");
}

#[test]
fn criterion_02_gate_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let rows = rng.random_range(1..9);
        let t = rng.random_range(1..5);
        let g = gate_distribution(random_matrix(&mut rng, rows, t, 50.0).view()).unwrap();
        for row in g.rows() {
            worst = worst.max((row.sum() - 1.0).abs());
        }
    }
    let uniform = gate_distribution(Array2::zeros((5, 3)).view()).unwrap();
    let exact = uniform.iter().all(|&v| v == 1.0 / 3.0);
    let ok = worst <= 1e-6 && exact;
    line(2, ok, &format!("gate rows sum to 1 (worst {worst:.1e} over 1000 matrices); zero logits give exactly 1/t"));
    assert!(ok);
}

#[test]
fn criterion_03_total_loss_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut bit_exact = true;
    for _ in 0..200 {
        let b = rng.random_range(1..7);
        let t = rng.random_range(1..4);
        let gate = gate_distribution(random_matrix(&mut rng, b, t, 3.0).view()).unwrap();
        let losses: Vec<Array1<f64>> = (0..t)
            .map(|_| Array1::from_shape_fn(b, |_| rng.random_range(0.0..5.0)))
            .collect();
        let l_c = rng.random_range(0.0..4.0);
        let lambda = rng.random_range(0.0..2.0);
        let out = gated_total_loss(l_c, gate.view(), &losses, lambda).unwrap();
        let manual: f64 = (0..t)
            .map(|n| (0..b).map(|i| gate[[i, n]] * losses[n][i]).sum::<f64>() / b as f64)
            .sum();
        worst = worst.max((out.l_tot - (l_c + lambda * manual)).abs());
        let zero = gated_total_loss(l_c, gate.view(), &losses, 0.0).unwrap();
        bit_exact &= zero.l_tot.to_bits() == l_c.to_bits();
    }
    let ok = worst <= 1e-9 && bit_exact;
    line(3, ok, &format!("l_tot = l_c + lambda * sum of gated terms (worst {worst:.1e}); lambda = 0 returns l_c bit for bit"));
    assert!(ok);
}

#[test]
fn criterion_04_ldam_margin_law() {
    let m = ldam_margins(&[1000, 16], DEFAULT_MAX_MARGIN).unwrap();
    let expected = [0.17783, 0.5];
    let close = m.deltas.iter().zip(expected).all(|(a, b)| (a - b).abs() < 1e-4);
    let balanced = ldam_margins(&[250; 6], DEFAULT_MAX_MARGIN).unwrap();
    let equal = balanced.deltas.iter().all(|&d| d == balanced.deltas[0]);
    let ok = close && equal;
    line(4, ok, &format!("margins for [1000, 16] = {:?}; balanced counts give equal margins", m.deltas));
    assert!(ok);
}

#[test]
fn criterion_05_drw_weights() {
    let balanced = drw_weights(&[500; 10], DEFAULT_BETA).unwrap();
    let ones = balanced.weights.iter().all(|&w| w == 1.0);
    let raw = drw_raw_weights(&[5000, 50], DEFAULT_BETA).unwrap();
    let ratio = raw[1] / raw[0];
    let ok = ones && (ratio - 78.89).abs() < 0.1;
    line(5, ok, &format!("balanced weights exactly 1; raw ratio for [5000, 50] = {ratio:.4}"));
    assert!(ok);
}

#[test]
fn criterion_06_gradient_checks() {
    let mut reports = Vec::new();
    for seed in 0..3 {
        reports.extend(objective_grad_checks(&Implementations::default(), seed));
    }
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let ok = reports.iter().all(|r| r.passed && r.max_rel_error < 1e-4);
    let blocks: Vec<&str> = reports.iter().take(3).map(|r| r.block.as_str()).collect();
    line(
        6,
        ok,
        &format!("finite differences agree on {} (worst rel err {worst:.1e}, B = 4)", blocks.join(", ")),
    );
    assert!(ok, "{reports:?}");
    // task_ce on its own against a direct evaluation
    let logits = Array2::from_shape_vec((2, 3), vec![0.1, -0.4, 2.0, 1.0, 1.0, 1.0]).unwrap();
    let ce = task_ce(logits.view(), &[2, 0]).unwrap();
    assert!((ce[1] - 3f64.ln()).abs() < 1e-12);
}

#[test]
fn criterion_07_imbalance_profiles() {
    let mut ok = true;
    let mut parts = Vec::new();
    for (ratio, tail) in [(0.01, 50), (0.02, 100), (0.05, 250)] {
        let p = exponential_profile(10, 5000, ratio).unwrap();
        ok &= p.counts[0] == 5000 && p.counts[9] == tail && p.counts.windows(2).all(|w| w[0] >= w[1]);
        parts.push(format!("{ratio}: ({}, {})", p.counts[0], p.counts[9]));
    }
    line(7, ok, &format!("profile endpoints {}; counts non-increasing", parts.join(", ")));
    assert!(ok);
}

fn crafted_records(n: usize, cifar100: bool) -> Vec<CifarRecord> {
    (0..n)
        .map(|i| CifarRecord {
            coarse_label: cifar100.then_some((i % 20) as u8),
            label: (i * 7 % if cifar100 { 100 } else { 10 }) as u8,
            pixels: (0..3072).map(|p| ((p * 31 + i * 17) % 256) as u8).collect(),
        })
        .collect()
}

fn write_cifar10_tree(root: &Path, per_batch: usize) {
    for i in 1..=5 {
        std::fs::write(root.join(format!("data_batch_{i}.bin")), encode_cifar10_records(&crafted_records(per_batch, false)))
            .unwrap();
    }
    std::fs::write(root.join("test_batch.bin"), encode_cifar10_records(&crafted_records(per_batch, false))).unwrap();
}

#[test]
fn criterion_08_loader_bit_exactness() {
    let path = Path::new("crafted.bin");
    let r10 = crafted_records(5, false);
    let bytes10 = encode_cifar10_records(&r10);
    let parsed10 = parse_cifar10(&bytes10, path).unwrap();
    let r100 = crafted_records(5, true);
    let bytes100 = encode_cifar100_records(&r100);
    let parsed100 = parse_cifar100(&bytes100, path).unwrap();
    let round_trip = encode_cifar10_records(&parsed10) == bytes10 && encode_cifar100_records(&parsed100) == bytes100;

    let dir = tempfile::tempdir().unwrap();
    write_cifar10_tree(dir.path(), 3);
    let (train, test) = load_cifar10(dir.path()).unwrap();
    let img = train.image(1);
    let pixels_match = (0..3).all(|c| {
        (0..32).all(|y| (0..32).all(|x| img.as_array()[[c, y, x]] == r10[1].pixels[c * 1024 + y * 32 + x] as f32 / 255.0))
    });
    let ok = parsed10 == r10
        && parsed100 == r100
        && round_trip
        && pixels_match
        && train.len() == 15
        && test.len() == 3
        && train.labels()[1] == 7;
    line(8, ok, "crafted CIFAR-10/100 records parse to their labels and pixels and re-encode byte for byte");
    assert!(ok);
}

fn short_synthetic(epochs: usize) -> TrainConfig {
    let mut c = TrainConfig::preset(DatasetName::Synthetic);
    c.set_epochs(epochs);
    c.checkpoint_every = Some(1);
    c
}

#[test]
fn criterion_09_determinism_and_resume() {
    let config = short_synthetic(4);
    let dir = tempfile::tempdir().unwrap();
    let full = run(&config, &dir.path().join("full"), &RunOptions::default()).unwrap();
    let again = run(&config, &dir.path().join("again"), &RunOptions::default()).unwrap();
    let read = |p: &Path| std::fs::read_to_string(p.join("metrics.jsonl")).unwrap();
    let first_line = |s: &str| s.lines().next().unwrap_or_default().to_owned();
    let same_epoch0 = first_line(&read(&full.dir)) == first_line(&read(&again.dir));

    let split = dir.path().join("split");
    run(
        &config,
        &split,
        &RunOptions {
            resume: false,
            stop_after_epoch: Some(2),
        },
    )
    .unwrap();
    let resumed = run(
        &config,
        &split,
        &RunOptions {
            resume: true,
            stop_after_epoch: None,
        },
    )
    .unwrap();
    let same_metrics = read(&full.dir) == read(&split);
    let ckpt = |s: &RunSummary| std::fs::read(s.checkpoint.as_ref().unwrap()).unwrap();
    let same_weights = ckpt(&full) == ckpt(&resumed);
    let ok = same_epoch0 && same_metrics && same_weights;
    line(
        9,
        ok,
        "identical seeds give identical epoch-0 metrics; stop after 2 epochs + resume matches an uninterrupted 4-epoch run (metrics and checkpoint bytes)",
    );
    assert!(ok);
}

/// The 200-step synthetic run shared by criteria 10 and 11: K = 4, 8x8
/// images, 256 training samples, tinycnn, all three tasks, lambda 0.1,
/// batch 32 for 25 epochs.
fn smoke_run() -> &'static RunSummary {
    static RUN: OnceLock<(tempfile::TempDir, RunSummary)> = OnceLock::new();
    &RUN.get_or_init(|| {
        let config = TrainConfig::preset(DatasetName::Synthetic);
        assert_eq!(config.tasks, TaskKind::ALL);
        assert_eq!((config.lambda, config.batch_size, config.epochs), (0.1, 32, 25));
        let dir = tempfile::tempdir().unwrap();
        let summary = run(&config, &dir.path().join("smoke"), &RunOptions::default()).unwrap();
        (dir, summary)
    })
    .1
}

#[test]
fn criterion_10_smoke_training() {
    let summary = smoke_run();
    let steps: usize = summary.metrics.iter().map(|m| m.steps).sum();
    let first = summary.metrics.first().unwrap();
    let last = summary.metrics.last().unwrap();
    let classifier_ok = last.test_acc > 0.9;
    let loss_ok = last.l_tot_last < first.l_tot_first;
    let mut heads_ok = true;
    let heads: Vec<String> = last
        .tasks
        .iter()
        .map(|t| {
            let need = match t.task {
                TaskKind::LorotE => 0.125,
                TaskKind::Flip => 0.6,
                TaskKind::Shuffle => 1.0 / 3.0,
            };
            let pass = t.ssl_test_acc > need;
            heads_ok &= pass;
            format!(
                "{} {:.3} (need > {need:.3}, mean gate {:.3}) {}",
                t.task,
                t.ssl_test_acc,
                t.gate_mean,
                if pass { "ok" } else { "below" }
            )
        })
        .collect();
    line(
        10,
        classifier_ok && loss_ok && heads_ok,
        &format!(
            "smoke run, {steps} steps: classifier {:.3} (need > 0.9); l_tot {:.3} -> {:.3}; heads: {}",
            last.test_acc,
            first.l_tot_first,
            last.l_tot_last,
            heads.join("; ")
        ),
    );
    assert_eq!(steps, 200);
    assert!(classifier_ok, "classifier accuracy {}", last.test_acc);
    assert!(loss_ok, "l_tot {} -> {}", first.l_tot_first, last.l_tot_last);
}

#[test]
fn criterion_11_mean_gate_observability() {
    let summary = smoke_run();
    let text = std::fs::read_to_string(summary.dir.join("metrics.jsonl")).unwrap();
    let logged = text.lines().count() == summary.metrics.len()
        && text.lines().all(|l| l.contains("\"gate_mean\"") && l.contains("\"lorot_e\""));
    let worst = summary
        .metrics
        .iter()
        .map(|m| (m.gate_means().iter().sum::<f64>() - 1.0).abs())
        .fold(0.0, f64::max);
    let last = summary.metrics.last().unwrap();
    let ok = logged && worst <= 1e-6 && last.tasks.len() == 3;
    line(
        11,
        ok,
        &format!(
            "per-epoch mean gate logged per task, sums to 1 (worst {worst:.1e}); final {:?}",
            last.tasks.iter().map(|t| (t.task.name(), (t.gate_mean * 1000.0).round() / 1000.0)).collect::<Vec<_>>()
        ),
    );
    assert!(ok);
}

#[test]
fn criterion_12_report_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    let setups: [(&str, Vec<TaskKind>, bool); 3] = [
        ("baseline", vec![TaskKind::LorotE], true),
        ("lorot", vec![TaskKind::LorotE], false),
        ("moe", vec![TaskKind::LorotE, TaskKind::Shuffle], false),
    ];
    for (name, tasks, detached) in setups {
        let mut c = short_synthetic(1);
        c.imbalance_ratio = Some(0.5);
        c.drw_epoch = Some(0);
        c.tasks = tasks;
        c.ssl_detached = detached;
        let d = dir.path().join(name);
        run(&c, &d, &RunOptions::default()).unwrap();
        dirs.push(d);
    }
    let (runs, warnings) = collect_runs(&dirs);
    let table = build_table(&runs);
    let md = table.to_markdown();
    let labels: Vec<&str> = table.rows.iter().map(|(l, _)| l.as_str()).collect();
    let best = table.column_best()[0].unwrap();
    let bold_ok = table.rows.iter().all(|(l, cells)| {
        let bolded = md.contains(&format!("| {l} | **"));
        bolded == (format!("{:.2}", cells[0].unwrap()) == format!("{best:.2}"))
    });
    let ok = warnings.is_empty()
        && md.starts_with(TABLE_TITLE)
        && md.contains("| Dataset | Synthetic |")
        && md.contains("| Imbalance Ratio | 0.5 |")
        && labels == ["LDAM-DRW", "+LoRot-E", "+MoE(LoRot-E+ShuffleChannel)"]
        && md.contains("**")
        && bold_ok;
    line(12, ok, &format!("report rows {labels:?} under \"{TABLE_TITLE}\", best per column in bold"));
    assert!(ok, "{md}");
}
