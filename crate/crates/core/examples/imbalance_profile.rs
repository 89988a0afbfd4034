//! Exponential long-tail profiles and the subsample index `prepare` writes.
//!
//! ```text
//! cargo run --example imbalance_profile -- [ratio]
//! ```

use gated_ssl::datasets::{exponential_profile, load_dataset, read_index_file, write_index_file, DatasetSpec, DatasetName};
use gated_ssl::training::build_index;

fn main() -> gated_ssl::Result<()> {
    let ratio: f64 = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(0.01);
    for (name, k) in [("CIFAR-10", 10), ("CIFAR-100", 100)] {
        let p = exponential_profile(k, 50_000 / k, ratio)?;
        let total: usize = p.counts.iter().sum();
        let head: Vec<_> = p.counts.iter().take(5).collect();
        println!("{name:<9} ratio {ratio}: {total} images, head {head:?}, tail {}", p.counts[k - 1]);
    }

    let spec = DatasetSpec {
        name: DatasetName::Synthetic,
        root: None,
        synthetic: Default::default(),
    };
    let ds = load_dataset(&spec, 0)?;
    let index = build_index(&ds.train, ds.name, ratio.max(0.1), 0)?;
    let path = std::env::temp_dir().join(format!("gated-ssl-index-{}.idx", std::process::id()));
    write_index_file(&path, &index)?;
    let back = read_index_file(&path)?;
    println!(
        "synthetic subsample: counts {:?}, {} indices, written to {}",
        back.header.counts,
        back.indices.len(),
        path.display()
    );
    Ok(())
}
