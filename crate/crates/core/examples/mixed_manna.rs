//! Items that are goods for some agents and chores for others. The
//! instance is classified first; each category is solved differently.

use choreeq::extensions::{classify_mixed, solve_mixed, witness_residual};
use choreeq::{Instance, SolverParams};

fn main() -> choreeq::Result<()> {
    let cases = [
        ("positive", vec![vec![3.0, -1.0], vec![-2.0, 1.0]]),
        ("null", vec![vec![1.0, -1.0], vec![1.0, -1.0]]),
        ("negative", vec![vec![1.0, -4.0, -2.0], vec![-3.0, -1.0, -5.0]]),
    ];
    let params = SolverParams::with_epsilon(0.02);
    for (label, u) in cases {
        let inst = Instance::mixed(u)?;
        let class = classify_mixed(&inst)?;
        println!(
            "{label:>8}: category {} witness residual {:.1e}",
            class.category.as_str(),
            witness_residual(&inst, &class)?
        );
        let sol = solve_mixed(&inst, &params)?;
        println!("          prices {:.4?} pass {}", sol.p, sol.pass);
        for row in sol.x.rows() {
            println!("          {row:.4?}");
        }
    }
    Ok(())
}
