//! Runs the built-in checks (closed-form oracles and finite differences of
//! every loss gradient) that back the `selftest` subcommand.
//!
//! ```text
//! cargo run --example gradient_check
//! ```

use gated_ssl::oracles::{objective_grad_checks, run_suite, Implementations};

fn main() {
    let imp = Implementations::default();
    for report in objective_grad_checks(&imp, 42) {
        println!("{report}");
    }
    let results = run_suite(&imp);
    for r in &results {
        println!("{r}");
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} checks, {failed} failed", results.len());
    if failed > 0 {
        std::process::exit(3);
    }
}
