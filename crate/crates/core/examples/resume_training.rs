//! Stops a run halfway, resumes it from its checkpoint and compares the
//! result with an uninterrupted run of the same configuration.
//!
//! ```text
//! cargo run --example resume_training
//! ```

use gated_ssl::datasets::DatasetName;
use gated_ssl::training::{run, RunOptions, TrainConfig};

fn main() -> gated_ssl::Result<()> {
    let mut config = TrainConfig::preset(DatasetName::Synthetic);
    config.set_epochs(6);
    config.checkpoint_every = Some(1);
    let root = std::env::temp_dir().join(format!("gated-ssl-resume-{}", std::process::id()));

    let straight = run(&config, &root.join("straight"), &RunOptions::default())?;
    let split = root.join("split");
    let first = run(
        &config,
        &split,
        &RunOptions {
            resume: false,
            stop_after_epoch: Some(3),
        },
    )?;
    println!("stopped after {} epochs", first.epochs_completed);
    let resumed = run(
        &config,
        &split,
        &RunOptions {
            resume: true,
            stop_after_epoch: None,
        },
    )?;

    let read = |p: &std::path::Path| std::fs::read(p).map_err(|e| gated_ssl::Error::Io {
        path: p.to_owned(),
        source: e,
    });
    let same_metrics = read(&straight.dir.join("metrics.jsonl"))? == read(&split.join("metrics.jsonl"))?;
    let same_weights = match (&straight.checkpoint, &resumed.checkpoint) {
        (Some(a), Some(b)) => read(a)? == read(b)?,
        _ => false,
    };
    println!("metrics identical: {same_metrics}, final checkpoint identical: {same_weights}");
    println!("runs under {}", root.display());
    Ok(())
}
