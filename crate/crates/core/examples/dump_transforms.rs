//! Renders every outcome of each pretext task for one synthetic image as
//! PNG grids.
//!
//! ```text
//! cargo run --example dump_transforms -- [out_dir]
//! ```

use std::path::PathBuf;

use gated_ssl::cli::write_transform_grids;
use gated_ssl::datasets::synthetic_dataset;

fn main() -> gated_ssl::Result<()> {
    let out = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("gated-ssl-transforms"));
    let (train, _) = synthetic_dataset(4, 8, 16, 0)?;
    for path in write_transform_grids(&train.image(0), &out, 12)? {
        println!("{}", path.display());
    }
    Ok(())
}
