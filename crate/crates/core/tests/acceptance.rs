//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::time::{Duration, Instant};

use choreeq::cli::{cmd_generate, Kind};
use choreeq::disutility::ProfileMap;
use choreeq::equilibrium::{self, check_ef, check_po, ef_po_round, general_epsilon, verify_ceei};
use choreeq::extensions::{self, Category};
use choreeq::geometry::{self, NearestOptions};
use choreeq::instance::{Allocation, DisutilitySpec, Instance, Mode, Residuals};
use choreeq::oracle::{exhaustive_verify, grid_nearest_point, GridSpec};
use choreeq::pipeline;
use choreeq::solver::{self, progress_check, KktCertificate, SolverParams};
use choreeq::Oracle;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const RECOVERY_TOL: f64 = 1e-7;

struct LinearRun {
    inst: Instance,
    eps: f64,
    cert: KktCertificate,
    eq: equilibrium::EquilibriumCertificate,
}

struct CesRun {
    inst: Instance,
    cert: KktCertificate,
}

fn report(k: usize, name: &str, pass: bool, detail: String) -> bool {
    println!("criterion {k:>2} {name:<28} {} {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn random_linear(seed: u64, dims: std::ops::RangeInclusive<usize>) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(dims.clone());
    let m = rng.gen_range(dims);
    cmd_generate(n, m, Kind::Linear, (1.0, 10.0), seed).expect("generate")
}

fn random_ces(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=4);
    let m = rng.gen_range(2..=4);
    let specs = (0..n)
        .map(|_| DisutilitySpec::Ces {
            c: (0..m).map(|_| rng.gen_range(1.0..=10.0)).collect(),
            rho: if rng.gen_bool(0.5) { 1.5 } else { 2.0 },
        })
        .collect();
    Instance::new(Mode::Chores, specs, None).expect("ces instance")
}

/// Income, optimal-bundle and feasibility residuals of the linear path.
fn linear_residual_ok(r: &Residuals, eps: f64) -> bool {
    r.income_ratio_worst <= 2.0 * eps && r.optimal_bundle_worst <= RECOVERY_TOL && r.feasibility_worst <= RECOVERY_TOL
}

fn criterion1(runs: &mut Vec<LinearRun>) -> bool {
    let t = Instant::now();
    let mut failures = 0;
    let mut worst_cond23: f64 = 0.0;
    for k in 0..100u64 {
        let inst = random_linear(1000 + k, 2..=6);
        for eps in [0.1, 0.02] {
            let params = SolverParams::with_epsilon(eps);
            let outcome = solver::solve_kkt_linear(&inst, &params)
                .and_then(|cert| equilibrium::from_kkt_linear(&inst, &cert).map(|eq| (cert, eq)));
            match outcome {
                Ok((cert, eq)) => {
                    let pm = ProfileMap::from_instance(&inst);
                    let v = verify_ceei(&pm, &eq.x, &eq.p, 2.0 * eps, None).expect("verify");
                    worst_cond23 = worst_cond23.max(v.residuals.optimal_bundle_worst).max(v.residuals.feasibility_worst);
                    if !(v.pass && linear_residual_ok(&v.residuals, eps)) {
                        failures += 1;
                    }
                    runs.push(LinearRun { inst: inst.clone(), eps, cert, eq });
                }
                Err(e) => {
                    println!("    instance {k} eps {eps}: {e}");
                    failures += 1;
                }
            }
        }
    }
    let elapsed = t.elapsed();
    report(
        1,
        "linear pipeline",
        failures == 0 && elapsed < Duration::from_secs(60),
        format!("{} runs, {failures} failures, worst cond(2)/(3) residual {worst_cond23:.2e}, {:.1}s", runs.len(), elapsed.as_secs_f64()),
    )
}

fn criterion2(runs: &[LinearRun]) -> bool {
    let mut bad = 0;
    let mut min_slack = f64::INFINITY;
    for r in runs {
        let rep = progress_check(&r.cert.potential_trace, r.eps, r.inst.n, None);
        if !rep.pass() {
            bad += 1;
        }
        if rep.min_gain.is_finite() {
            min_slack = min_slack.min(rep.min_gain / rep.bound);
        }
    }
    report(2, "potential progress", bad == 0, format!("{bad} runs with violations, min gain/bound {min_slack:.2}"))
}

fn criterion3(runs: &[LinearRun]) -> bool {
    let mut bad = 0;
    let mut max_ratio: f64 = 0.0;
    for r in runs {
        let bound = solver::iteration_bound_linear(&r.inst, r.eps, None).expect("bound");
        max_ratio = max_ratio.max(r.cert.iterations as f64 / bound);
        if r.cert.iterations as f64 > bound {
            bad += 1;
        }
    }
    report(3, "iteration bound", bad == 0, format!("{bad} violations, max iters/bound {max_ratio:.2e}"))
}

fn kkt_ok(pm: &ProfileMap, cert: &KktCertificate, gamma: f64, seed: u64) -> bool {
    let within = cert
        .a
        .iter()
        .zip(&cert.d)
        .all(|(a, d)| a * d >= 1.0 / gamma - 1e-12 && a * d <= gamma + 1e-12);
    within && cert.support_margin(pm, 1000, cert.delta.max(1e-6), seed) >= 0.0
}

fn criterion4(linear: &[LinearRun], ces: &[CesRun]) -> bool {
    let mut bad = 0;
    for (k, r) in linear.iter().enumerate() {
        let pm = ProfileMap::from_instance(&r.inst);
        if !kkt_ok(&pm, &r.cert, 1.0 + r.eps, k as u64) {
            bad += 1;
        }
    }
    for (k, r) in ces.iter().enumerate() {
        let pm = ProfileMap::from_instance(&r.inst);
        if !kkt_ok(&pm, &r.cert, r.cert.gamma, 10_000 + k as u64) {
            bad += 1;
        }
    }
    report(4, "KKT certificates", bad == 0, format!("{} certificates, {bad} violations", linear.len() + ces.len()))
}

const CES_EPS: f64 = 0.04;

fn criterion5(runs: &mut Vec<CesRun>) -> bool {
    let t = Instant::now();
    let mut failures = 0;
    let mut worst_eff: f64 = 0.0;
    for k in 0..30u64 {
        let inst = random_ces(5000 + k);
        let pm = ProfileMap::from_instance(&inst);
        let outcome = solver::solve_kkt_general(&pm, &SolverParams::with_epsilon(CES_EPS))
            .and_then(|cert| equilibrium::from_kkt_general(&pm, &cert).map(|eq| (cert, eq)));
        match outcome {
            Ok((cert, eq)) => {
                let eff = general_epsilon(cert.gamma, cert.lambda, cert.delta);
                worst_eff = worst_eff.max(eff);
                let v = verify_ceei(&pm, &eq.x, &eq.p, eff, None).expect("verify");
                if !(v.pass && eff <= 0.2) {
                    println!("    instance {k}: eps_eff {eff:.3e} residuals {:?}", v.residuals);
                    failures += 1;
                }
                runs.push(CesRun { inst, cert });
            }
            Err(e) => {
                println!("    instance {k}: {e}");
                failures += 1;
            }
        }
    }
    let elapsed = t.elapsed();
    report(
        5,
        "general (CES) pipeline",
        failures == 0 && elapsed < Duration::from_secs(600),
        format!("{} runs, {failures} failures, worst eps_eff {worst_eff:.3}, {:.1}s", runs.len(), elapsed.as_secs_f64()),
    )
}

/// Each residual of the general path must be within 10x of the linear
/// path's, measured against the linear tolerance for that residual.
fn criterion6() -> bool {
    let eps = 0.02;
    let mut bad = 0;
    let mut worst: f64 = 0.0;
    for k in 0..20u64 {
        let inst = random_linear(7000 + k, 2..=4);
        let pm = ProfileMap::from_instance(&inst);
        let params = SolverParams::with_epsilon(eps);
        let lin = solver::solve_kkt_linear(&inst, &params).and_then(|c| equilibrium::from_kkt_linear(&inst, &c));
        let gen = solver::solve_kkt_general(&pm, &params).and_then(|c| equilibrium::from_kkt_general(&pm, &c));
        let (Ok(lin), Ok(gen)) = (lin, gen) else {
            println!("    instance {k}: a pipeline failed");
            bad += 1;
            continue;
        };
        let lv = verify_ceei(&pm, &lin.x, &lin.p, 2.0 * eps, None).expect("verify").residuals;
        let gv = verify_ceei(&pm, &gen.x, &gen.p, gen.epsilon, None).expect("verify").residuals;
        let pairs = [
            (gv.income_ratio_worst, lv.income_ratio_worst, 2.0 * eps),
            (gv.optimal_bundle_worst, lv.optimal_bundle_worst, 2.0 * eps),
            (gv.feasibility_worst, lv.feasibility_worst, 2.0 * eps),
        ];
        for (g, l, tol) in pairs {
            let ratio = g / l.max(tol);
            worst = worst.max(ratio);
            if ratio > 10.0 {
                bad += 1;
            }
        }
    }
    report(6, "cross-path consistency", bad == 0, format!("20 instances, {bad} violations, worst ratio {worst:.2}"))
}

fn criterion7() -> bool {
    let g = GridSpec::new(200, 2, 2).expect("grid");
    let gv = GridSpec::new(500, 2, 2).expect("grid");
    let mut dist_bad = 0;
    let mut verdict_bad = 0;
    let mut worst_gap: f64 = 0.0;
    let mut verdicts = 0;
    for k in 0..20u64 {
        let inst = random_linear(9000 + k, 2..=2);
        let pm = ProfileMap::from_instance(&inst);
        let tol = pm.lipschitz() * (2.0 / 200.0) + 1e-8;
        let mut rng = ChaCha8Rng::seed_from_u64(k);
        let mut queries = vec![solver::initial_point_linear(&inst).expect("start")];
        for _ in 0..3 {
            queries.push((0..2).map(|_| rng.gen_range(0.0..12.0)).collect());
        }
        for q in &queries {
            let exact = geometry::nearest_point_linear(&pm, q, NearestOptions::default()).expect("nearest");
            let (grid, _) = grid_nearest_point(&pm, q, &g).expect("grid");
            let gap = (exact.distance - grid).abs();
            worst_gap = worst_gap.max(gap / tol);
            if gap > tol {
                dist_bad += 1;
            }
        }
        let eps = 0.02;
        let cert = solver::solve_kkt_linear(&inst, &SolverParams::with_epsilon(eps)).expect("solve");
        let eq = equilibrium::from_kkt_linear(&inst, &cert).expect("convert");
        let swapped = Allocation::from_rows(vec![eq.x.row(1).to_vec(), eq.x.row(0).to_vec()]).expect("rows");
        let uniform = Allocation::uniform(2, 2);
        for x in [&eq.x, &swapped, &uniform] {
            let a = verify_ceei(&pm, x, &eq.p, 2.0 * eps, None).expect("verify").pass;
            let b = exhaustive_verify(&inst, x, &eq.p, 2.0 * eps, &gv).expect("exhaustive").pass;
            verdicts += 1;
            if a != b {
                verdict_bad += 1;
            }
        }
    }
    report(
        7,
        "oracle equivalence",
        dist_bad == 0 && verdict_bad == 0,
        format!("80 distances ({dist_bad} off, worst gap/tol {worst_gap:.2}), {verdicts} verdicts ({verdict_bad} disagree)"),
    )
}

fn criterion8(runs: &[LinearRun]) -> bool {
    let (mut ef_bad, mut po_bad) = (0, 0);
    for r in runs {
        let pm = ProfileMap::from_instance(&r.inst);
        let eps_ceei = 2.0 * r.eps;
        let y = ef_po_round(&pm, &r.eq.x).expect("round");
        if !check_ef(&pm, &y, eps_ceei).pass {
            ef_bad += 1;
        }
        if !check_po(&pm, &y, eps_ceei).expect("po").pass {
            po_bad += 1;
        }
    }
    report(8, "EF/PO rounding", ef_bad + po_bad == 0, format!("{} allocations, {ef_bad} EF and {po_bad} PO violations", runs.len()))
}

fn criterion9() -> bool {
    let mut notes = Vec::new();
    let mut ok = true;

    let mut counts = [0usize; 3];
    let mut bad_witness = 0;
    let mut bad_solve = 0;
    for k in 0..30u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(11_000 + k);
        let (n, m) = (rng.gen_range(2..=4), rng.gen_range(2..=4));
        let inst = cmd_generate(n, m, Kind::Mixed, (1.0, 10.0), 11_000 + k).expect("generate");
        let c = extensions::classify_mixed(&inst).expect("classify");
        counts[c.category as usize] += 1;
        let witness_ok = match c.category {
            Category::Negative => c.witness.is_none(),
            _ => extensions::witness_residual(&inst, &c).expect("witness") <= 1e-9,
        };
        if !witness_ok {
            bad_witness += 1;
        }
        match pipeline::solve(&inst, &SolverParams::with_epsilon(0.02)) {
            Ok(sol) if sol.verified() => {}
            _ => bad_solve += 1,
        }
    }
    ok &= bad_witness == 0 && bad_solve == 0;
    notes.push(format!(
        "30 mixed (pos/null/neg {}/{}/{}), {bad_witness} bad witnesses, {bad_solve} unverified",
        counts[0], counts[1], counts[2]
    ));

    let goods = Instance::mixed(vec![vec![3.0, 1.0, 2.0]; 3]).expect("goods");
    let sol = extensions::solve_mixed(&goods, &SolverParams::with_epsilon(0.02)).expect("eg");
    let split_err = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (sol.x.get(i, j) - 1.0 / 3.0).abs())
        .fold(0.0, f64::max);
    ok &= sol.category == Category::Positive && split_err <= 1e-6;
    notes.push(format!("equal split error {split_err:.1e}"));

    let mut neg_bad = 0;
    for k in 0..10u64 {
        let eps = 0.02;
        let d = random_linear(12_000 + k, 2..=5).linear_matrix().expect("linear");
        let inst = Instance::mixed(d.iter().map(|r| r.iter().map(|v| -v).collect()).collect()).expect("mixed");
        let sol = extensions::solve_mixed(&inst, &SolverParams::with_epsilon(eps)).expect("negative");
        if !(sol.category == Category::Negative && sol.kkt.is_some() && linear_residual_ok(&sol.residuals, eps)) {
            neg_bad += 1;
        }
    }
    ok &= neg_bad == 0;
    notes.push(format!("10 negative cases, {neg_bad} failures"));
    report(9, "mixed manna", ok, notes.join("; "))
}

fn criterion10() -> bool {
    let eps = 0.02;
    let inst = Instance::linear(vec![vec![2.0, 1.0, 4.0], vec![2.0, 1.0, 4.0]]).expect("inst");
    let params = SolverParams::with_epsilon(eps);
    let eq = extensions::solve_weighted(&inst, &[1.0, 0.5], &params).expect("weighted");
    let e = eq.earnings();
    let ratio = e[0] / e[1];
    let (lo, hi) = ((1.0 - 2.0 * eps) * 2.0, 2.0 / (1.0 - 2.0 * eps));
    let in_range = ratio >= lo && ratio <= hi;

    let plain = equilibrium::from_kkt_linear(&inst, &solver::solve_kkt_linear(&inst, &params).expect("solve")).expect("eq");
    let unit = extensions::solve_weighted(&inst, &[1.0, 1.0], &params).expect("unit");
    let a = pipeline::solve(&inst, &params).expect("pipeline");
    let b = pipeline::solve(
        &inst,
        &SolverParams {
            weights: Some(vec![1.0, 1.0]),
            ..params.clone()
        },
    )
    .expect("pipeline");
    let identical = plain == unit && a.result.to_json() == b.result.to_json();
    report(
        10,
        "unequal incomes",
        in_range && identical,
        format!("ratio {ratio:.4} in [{lo:.4}, {hi:.4}]: {in_range}; unit weights bit-identical: {identical}"),
    )
}

fn criterion11() -> bool {
    let mut rng = ChaCha8Rng::seed_from_u64(13_000);
    let mut bad = [0usize; 4];
    for _ in 0..1000 {
        let m = rng.gen_range(1..=5);
        let c: Vec<f64> = (0..m).map(|_| rng.gen_range(0.1..10.0)).collect();
        let spec = match rng.gen_range(0..4) {
            0 => DisutilitySpec::Linear(c),
            k => DisutilitySpec::Ces {
                c,
                rho: [1.5, 2.0, 3.0][k - 1],
            },
        };
        let o = Oracle::new(spec);
        let x: Vec<f64> = (0..m).map(|_| rng.gen_range(0.05..2.0)).collect();
        let p: Vec<f64> = (0..m).map(|_| rng.gen_range(0.0..2.0)).collect();
        let a = rng.gen_range(0.0..10.0);
        let v = o.value(&x).expect("value");

        let ax: Vec<f64> = x.iter().map(|t| a * t).collect();
        if (o.value(&ax).expect("value") - a * v).abs() > 1e-10 * (1.0 + v) {
            bad[0] += 1;
        }
        let xp: Vec<f64> = x.iter().zip(&p).map(|(s, t)| s + t).collect();
        if o.value(&xp).expect("value") > v + o.value(&p).expect("value") + 1e-10 {
            bad[1] += 1;
        }
        let g = o.gradient(&x).expect("gradient");
        let euler: f64 = g.iter().zip(&x).map(|(s, t)| s * t).sum();
        if (euler - v).abs() > 1e-10 * (1.0 + v) {
            bad[2] += 1;
        }
        let h = 1e-6;
        for j in 0..m {
            let (mut up, mut dn) = (x.clone(), x.clone());
            up[j] += h;
            dn[j] -= h;
            let fd = (o.value(&up).expect("value") - o.value(&dn).expect("value")) / (2.0 * h);
            if (fd - g[j]).abs() > 1e-4 * g[j].abs().max(1e-8) {
                bad[3] += 1;
                break;
            }
        }
    }
    report(
        11,
        "disutility oracle properties",
        bad.iter().all(|&b| b == 0),
        format!("1000 samples; violations hom/sub/euler/fd = {}/{}/{}/{}", bad[0], bad[1], bad[2], bad[3]),
    )
}

fn main() {
    let mut linear = Vec::new();
    let mut ces = Vec::new();
    let results = [
        criterion1(&mut linear),
        criterion2(&linear),
        criterion3(&linear),
        criterion5(&mut ces),
        criterion4(&linear, &ces),
        criterion6(),
        criterion7(),
        criterion8(&linear),
        criterion9(),
        criterion10(),
        criterion11(),
    ];
    let passed = results.iter().filter(|&&p| p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
