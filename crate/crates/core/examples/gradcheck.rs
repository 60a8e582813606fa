//! Finite-difference checks of every differentiable operator and of the
//! training loss through a small network.
//!
//! `cargo run --example gradcheck -- [instances]`

use stdown::diffcore::{op_suite, OPERATORS};
use stdown::pscnet::model_suite;

fn main() -> stdown::Result<()> {
    let instances = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let mut results: Vec<_> = OPERATORS.iter().map(|op| op_suite(op, instances, 1)).collect::<stdown::Result<_>>()?;
    results.push(model_suite(instances, 1)?);
    for r in &results {
        let verdict = if r.passed() { "ok" } else { "FAILED" };
        println!("{:<26} {:>5} probes  max rel error {:.2e}  {verdict}", r.name, r.checked, r.max_rel_error);
    }
    Ok(())
}
