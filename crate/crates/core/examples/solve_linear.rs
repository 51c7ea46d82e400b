//! Solve a small linear chore division end to end and print the equilibrium.
//!
//! Run with `cargo run --example solve_linear`.

use choreeq::equilibrium::earnings;
use choreeq::pipeline;
use choreeq::{Instance, SolverParams};

fn main() -> choreeq::Result<()> {
    // Three roommates, four chores: dishes, laundry, vacuuming, trash.
    let inst = Instance::linear(vec![
        vec![2.0, 6.0, 4.0, 1.0],
        vec![5.0, 1.0, 3.0, 2.0],
        vec![4.0, 3.0, 1.0, 6.0],
    ])?;

    let sol = pipeline::solve(&inst, &SolverParams::with_epsilon(0.01))?;
    let res = &sol.result;

    println!("prices    {:.4?}", res.prices);
    for (i, row) in res.allocation.rows().iter().enumerate() {
        println!("agent {i}   {row:.4?}");
    }
    println!("earnings  {:.4?}", earnings(&res.allocation, &res.prices));
    println!(
        "eps {} verified {} after {} iterations",
        res.epsilon, res.certificate.verified, res.certificate.iterations
    );
    println!("{}", res.to_json());
    Ok(())
}
