//! Watch the log-Nash-welfare potential climb during the linear loop and
//! check the per-step progress bound.

use choreeq::solver::{iteration_bound_linear, progress_check, solve_kkt_linear};
use choreeq::{Instance, SolverParams};

fn main() -> choreeq::Result<()> {
    let inst = Instance::linear(vec![
        vec![9.0, 1.0, 4.0, 2.0, 7.0],
        vec![2.0, 8.0, 3.0, 6.0, 1.0],
        vec![5.0, 5.0, 9.0, 1.0, 3.0],
        vec![1.0, 2.0, 2.0, 8.0, 6.0],
    ])?;
    let eps = 0.02;
    let cert = solve_kkt_linear(&inst, &SolverParams::with_epsilon(eps))?;

    println!("{:>4} {:>12} {:>12} {:>10}  branch", "iter", "potential", "distance", "step");
    for row in &cert.trace {
        println!(
            "{:>4} {:>12.6} {:>12.3e} {:>10.3e}  {:?}",
            row.iter, row.potential, row.dist_to_feasible, row.logd_step, row.branch
        );
    }
    let progress = progress_check(&cert.potential_trace, eps, inst.n, None);
    println!(
        "min gain {:.3e} vs bound {:.3e}, pass {}",
        progress.min_gain,
        progress.bound,
        progress.pass()
    );
    println!(
        "{} iterations, analytic bound {:.3e}",
        cert.iterations,
        iteration_bound_linear(&inst, eps, None)?
    );
    Ok(())
}
