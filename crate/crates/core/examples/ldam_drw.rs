//! Class margins and deferred re-weighting for a long-tailed class count
//! vector, and what they do to the supervised loss of one batch.
//!
//! ```text
//! cargo run --example ldam_drw
//! ```

use gated_ssl::datasets::exponential_profile;
use gated_ssl::losses::{drw_weights, ldam_loss, ldam_margins, DEFAULT_BETA, DEFAULT_MAX_MARGIN};
use ndarray::Array2;

fn main() -> gated_ssl::Result<()> {
    let counts = exponential_profile(10, 5000, 0.01)?.counts;
    let margins = ldam_margins(&counts, DEFAULT_MAX_MARGIN)?;
    let weights = drw_weights(&counts, DEFAULT_BETA)?;
    println!("{:>5} {:>6} {:>7} {:>7}", "class", "count", "margin", "weight");
    for (j, n) in counts.iter().enumerate() {
        println!("{j:>5} {n:>6} {:>7.4} {:>7.4}", margins.deltas[j], weights.weights[j]);
    }

    // Cosine logits that mildly favor the right class.
    let targets: Vec<usize> = (0..10).collect();
    let logits = Array2::from_shape_fn((10, 10), |(i, j)| if i == j { 0.3 } else { 0.0 });
    let plain = ldam_loss(logits.view(), &targets, &margins, None)?;
    let reweighted = ldam_loss(logits.view(), &targets, &margins, Some(&weights))?;
    println!("LDAM loss {:.4}, after re-weighting {:.4}", plain.mean, reweighted.mean);
    Ok(())
}
