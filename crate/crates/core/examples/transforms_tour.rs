//! Walks through the three quadrant-localized pretext tasks on a tiny image
//! whose pixels are all distinct, printing each task's label space and one
//! composed sample.
//!
//! ```text
//! cargo run --example transforms_tour
//! ```

use gated_ssl::oracles::{check_label_space, distinct_pixel_image};
use gated_ssl::transforms::{apply_composed, sample_outcome, TaskKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gated_ssl::Result<()> {
    let img = distinct_pixel_image(4, 4, 3);
    for task in TaskKind::ALL {
        let space = check_label_space(task, &img).map_err(gated_ssl::Error::Domain)?;
        println!(
            "{:<15} {:>2} labels, {:>2} distinct outputs, identity labels {:?}",
            task.display_name(),
            space.labels,
            space.distinct_images,
            space.identity_labels
        );
    }

    // One outcome per task, applied in task order to the same image.
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let outcomes: Vec<_> = TaskKind::ALL.iter().map(|&t| sample_outcome(t, &mut rng)).collect();
    let (out, labels) = apply_composed(&img, &outcomes)?;
    for (o, label) in outcomes.iter().zip(&labels) {
        println!("{:<15} quadrant {} {:?} -> label {label}", o.task.display_name(), o.quadrant.value(), o.params);
    }
    println!("red channel after composition:\n{}", out.view().index_axis(ndarray::Axis(0), 0));
    Ok(())
}
