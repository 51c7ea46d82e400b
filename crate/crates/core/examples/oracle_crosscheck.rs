//! Compare the solver's building blocks with brute-force grid enumeration
//! on a 2 x 2 instance.

use choreeq::disutility::ProfileMap;
use choreeq::equilibrium::{from_kkt_linear, verify_ceei};
use choreeq::geometry::{nearest_point, NearestOptions};
use choreeq::oracle::{exhaustive_verify, grid_nearest_point, GridSpec};
use choreeq::solver::solve_kkt_linear;
use choreeq::{Instance, SolverParams};

fn main() -> choreeq::Result<()> {
    let inst = Instance::linear(vec![vec![3.0, 8.0], vec![6.0, 2.0]])?;
    let pm = ProfileMap::from_instance(&inst);

    let query = [1.5, 1.0];
    let exact = nearest_point(&pm, &query, NearestOptions::default())?;
    let (grid_dist, _) = grid_nearest_point(&pm, &query, &GridSpec::new(200, 2, 2)?)?;
    println!("nearest point: descent {:.6}  grid {:.6}", exact.distance, grid_dist);

    let eps = 0.02;
    let cert = solve_kkt_linear(&inst, &SolverParams::with_epsilon(eps))?;
    let eq = from_kkt_linear(&inst, &cert)?;
    let fast = verify_ceei(&pm, &eq.x, &eq.p, 2.0 * eps, None)?;
    let slow = exhaustive_verify(&inst, &eq.x, &eq.p, 2.0 * eps, &GridSpec::new(500, 2, 2)?)?;
    println!("verify_ceei {}  exhaustive {}", fast.pass, slow.pass);
    println!("grid optimal disutilities {:.4?}", slow.optimal);
    Ok(())
}
