//! Exponential long-tail profiles and seed-deterministic subsampling.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeds;

/// Retained sample count per class of a long-tailed subsample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImbalanceProfile {
    pub num_classes: usize,
    pub counts: Vec<usize>,
    pub ratio: f64,
}

/// `n_j = floor(n_max * ratio^(j / (K - 1)))`, clamped to at least one.
pub fn exponential_profile(num_classes: usize, n_max: usize, ratio: f64) -> Result<ImbalanceProfile> {
    if num_classes < 2 {
        return Err(Error::Domain(format!(
            "an imbalance profile needs at least 2 classes, got {num_classes}"
        )));
    }
    if n_max < 1 {
        return Err(Error::Domain("n_max must be at least 1".into()));
    }
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Domain(format!("imbalance ratio {ratio} outside (0, 1]")));
    }
    let last = (num_classes - 1) as f64;
    let counts = (0..num_classes)
        .map(|j| {
            let exact = n_max as f64 * ratio.powf(j as f64 / last);
            // absorb representation error of decimal ratios such as 0.03
            let n = (exact * (1.0 + 1e-12)).floor() as usize;
            n.clamp(1, n_max)
        })
        .collect();
    Ok(ImbalanceProfile {
        num_classes,
        counts,
        ratio,
    })
}

/// Keeps the first `n_j` indices of a seeded shuffle of each class's
/// indices. The result is sorted ascending.
pub fn subsample_indices(class_labels: &[usize], profile: &ImbalanceProfile, seed: u64) -> Result<Vec<usize>> {
    let mut buckets = vec![Vec::new(); profile.num_classes];
    for (i, &label) in class_labels.iter().enumerate() {
        let bucket = buckets.get_mut(label).ok_or_else(|| {
            Error::Data(format!(
                "label {label} at index {i} outside [0, {})",
                profile.num_classes
            ))
        })?;
        bucket.push(i);
    }
    let mut kept = Vec::with_capacity(profile.counts.iter().sum());
    for (class, (mut bucket, &want)) in buckets.into_iter().zip(&profile.counts).enumerate() {
        if bucket.len() < want {
            return Err(Error::Data(format!(
                "class {class} has {} samples but the profile keeps {want}",
                bucket.len()
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seeds::derive(seed, &[class as u64]));
        bucket.shuffle(&mut rng);
        kept.extend_from_slice(&bucket[..want]);
    }
    kept.sort_unstable();
    Ok(kept)
}

pub fn per_class_counts(class_labels: &[usize], indices: &[usize], num_classes: usize) -> Vec<usize> {
    let mut counts = vec![0; num_classes];
    for &i in indices {
        counts[class_labels[i]] += 1;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IndexHeader {
    pub dataset: String,
    pub ratio: f64,
    pub seed: u64,
    pub counts: Vec<usize>,
}

/// A persisted subsample: one JSON header line, then one index per line.
#[derive(Debug, Clone, PartialEq)]
pub struct IndexFile {
    pub header: IndexHeader,
    pub indices: Vec<usize>,
}

pub fn write_index_file(path: &Path, file: &IndexFile) -> Result<()> {
    let mut out = serde_json::to_vec(&file.header)?;
    out.push(b'\n');
    for i in &file.indices {
        writeln!(out, "{i}").expect("writing to a Vec cannot fail");
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_index_file(path: &Path) -> Result<IndexFile> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header: IndexHeader = serde_json::from_str(
        lines
            .next()
            .ok_or_else(|| Error::Data(format!("{path:?} is empty")))?,
    )?;
    let indices = lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(n, l)| {
            l.trim().parse::<usize>().map_err(|e| {
                Error::Data(format!("{path:?} line {}: {e}", n + 2))
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(IndexFile { header, indices })
}
