//! Trains a baseline and two gated variants for a few epochs on an
//! imbalanced synthetic split, then prints the markdown result table.
//!
//! ```text
//! cargo run --example report_table
//! ```

use gated_ssl::datasets::DatasetName;
use gated_ssl::report::{build_table, collect_runs};
use gated_ssl::training::{run, RunOptions, TrainConfig};
use gated_ssl::transforms::TaskKind;

fn main() -> gated_ssl::Result<()> {
    let root = std::env::temp_dir().join(format!("gated-ssl-report-{}", std::process::id()));
    let mut base = TrainConfig::preset(DatasetName::Synthetic);
    base.set_epochs(4);
    base.imbalance_ratio = Some(0.25);
    base.drw_epoch = Some(2);

    let variants = [
        ("baseline", true, vec![TaskKind::LorotE]),
        ("lorot", false, vec![TaskKind::LorotE]),
        ("moe", false, vec![TaskKind::LorotE, TaskKind::Shuffle]),
    ];
    let mut dirs = Vec::new();
    for (name, detached, tasks) in variants {
        let config = TrainConfig {
            ssl_detached: detached,
            tasks,
            ..base.clone()
        };
        let dir = root.join(name);
        run(&config, &dir, &RunOptions::default())?;
        dirs.push(dir);
    }
    let (runs, warnings) = collect_runs(&dirs);
    for w in warnings {
        eprintln!("warning: {w}");
    }
    print!("{}", build_table(&runs).to_markdown());
    Ok(())
}
