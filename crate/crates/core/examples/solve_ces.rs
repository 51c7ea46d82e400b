//! CES disutilities through the general solver, with the measured
//! certificate quantities that determine the final ε.

use choreeq::disutility::ProfileMap;
use choreeq::equilibrium::{from_kkt_general, general_epsilon, verify_ceei};
use choreeq::instance::Mode;
use choreeq::solver::solve_kkt_general;
use choreeq::{DisutilitySpec, Instance, SolverParams};

fn main() -> choreeq::Result<()> {
    let specs = vec![
        DisutilitySpec::Ces { c: vec![1.0, 4.0, 2.0], rho: 2.0 },
        DisutilitySpec::Ces { c: vec![3.0, 1.0, 2.0], rho: 1.5 },
        DisutilitySpec::Ces { c: vec![2.0, 2.0, 1.0], rho: 2.0 },
    ];
    let inst = Instance::new(Mode::Chores, specs, None)?;
    let pm = ProfileMap::from_instance(&inst);

    let cert = solve_kkt_general(&pm, &SolverParams::with_epsilon(0.04))?;
    println!(
        "gamma {:.6}  lambda {:.6}  delta {:.2e}  iterations {}",
        cert.gamma, cert.lambda, cert.delta, cert.iterations
    );
    println!("eps_eff {:.4}", general_epsilon(cert.gamma, cert.lambda, cert.delta));

    let eq = from_kkt_general(&pm, &cert)?;
    let report = verify_ceei(&pm, &eq.x, &eq.p, eq.epsilon, None)?;
    println!("prices {:.4?}", eq.p);
    println!("residuals {:?}", report.residuals);
    println!("pass {}", report.pass);
    Ok(())
}
