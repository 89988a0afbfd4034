//! The softmax gate and the gated total loss on hand-made numbers: two
//! samples, two pretext tasks.
//!
//! ```text
//! cargo run --example gated_loss
//! ```

use gated_ssl::losses::{gated_total_loss, task_ce};
use gated_ssl::model::gate_distribution;
use ndarray::array;

fn main() -> gated_ssl::Result<()> {
    let gate = gate_distribution(array![[2.0, 0.0], [0.0, 0.0]].view())?;
    println!("gate rows (each sums to 1):\n{gate:.4}");

    let rotation = task_ce(array![[3.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]].view(), &[0, 2])?;
    let shuffle = task_ce(array![[0.0, 0.0, 1.0], [0.0, 4.0, 0.0]].view(), &[0, 1])?;
    println!("per-sample task losses: rotation {rotation:.4}, shuffle {shuffle:.4}");

    let l_c = 1.25;
    for lambda in [0.0, 0.1, 1.0] {
        let b = gated_total_loss(l_c, gate.view(), &[rotation.clone(), shuffle.clone()], lambda)?;
        println!(
            "lambda {lambda:<4} gated task terms {:.4?} -> total {:.4}",
            b.per_task_gated, b.l_tot
        );
    }
    Ok(())
}
