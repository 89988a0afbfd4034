//! Trains the gated model on the synthetic fixture and prints the per-epoch
//! losses, gate means and head accuracies.
//!
//! ```text
//! cargo run --example smoke_train -- [epochs]
//! ```

use gated_ssl::datasets::DatasetName;
use gated_ssl::training::{run, RunOptions, TrainConfig};

fn main() -> gated_ssl::Result<()> {
    let mut config = TrainConfig::preset(DatasetName::Synthetic);
    if let Some(epochs) = std::env::args().nth(1).and_then(|a| a.parse().ok()) {
        config.epochs = epochs;
    }
    let dir = std::env::temp_dir().join(format!("gated-ssl-smoke-{}", std::process::id()));
    let summary = run(&config, &dir, &RunOptions::default())?;
    for m in &summary.metrics {
        let heads: Vec<String> = m
            .tasks
            .iter()
            .map(|t| format!("{} gate {:.2} acc {:.2}", t.task, t.gate_mean, t.ssl_test_acc))
            .collect();
        println!(
            "epoch {:>2}  l_tot {:.4}  l_c {:.4}  test {:.3}  {}",
            m.epoch,
            m.l_tot,
            m.l_c,
            m.test_acc,
            heads.join("  ")
        );
    }
    println!("run directory: {}", summary.dir.display());
    Ok(())
}
