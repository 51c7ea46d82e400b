//! Agents with different earning requirements. Two identical agents, one
//! of whom must earn twice as much as the other.

use choreeq::extensions::solve_weighted;
use choreeq::{Instance, SolverParams};

fn main() -> choreeq::Result<()> {
    let inst = Instance::linear(vec![vec![2.0, 1.0, 4.0], vec![2.0, 1.0, 4.0]])?;
    let eq = solve_weighted(&inst, &[1.0, 0.5], &SolverParams::with_epsilon(0.02))?;
    let e = eq.earnings();
    println!("weights  {:?}", eq.weights);
    println!("earnings {e:.5?}");
    println!("ratio    {:.5}", e[0] / e[1]);
    println!("eps {}  residuals {:?}", eq.epsilon, eq.residuals);
    Ok(())
}
