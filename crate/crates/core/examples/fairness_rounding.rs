//! Turn an approximate equilibrium into an allocation that is approximately
//! envy-free and Pareto-optimal, and check both properties.

use choreeq::disutility::ProfileMap;
use choreeq::equilibrium::{check_ef, check_po, ef_po_round, from_kkt_linear};
use choreeq::solver::solve_kkt_linear;
use choreeq::{Instance, SolverParams};

fn main() -> choreeq::Result<()> {
    let eps = 0.02;
    let inst = Instance::linear(vec![
        vec![1.0, 7.0, 3.0, 2.0],
        vec![4.0, 2.0, 6.0, 1.0],
        vec![3.0, 3.0, 1.0, 5.0],
    ])?;
    let pm = ProfileMap::from_instance(&inst);
    let cert = solve_kkt_linear(&inst, &SolverParams::with_epsilon(eps))?;
    let eq = from_kkt_linear(&inst, &cert)?;

    let y = ef_po_round(&pm, &eq.x)?;
    let ef = check_ef(&pm, &y, 2.0 * eps);
    let po = check_po(&pm, &y, 2.0 * eps)?;
    for row in y.rows() {
        println!("{row:.4?}");
    }
    println!("envy ratio {:.4} (threshold {:.2}) pass {}", ef.min_ratio, ef.threshold, ef.pass);
    println!("pareto t* {:?} pass {}", po.t_star, po.pass);
    Ok(())
}
