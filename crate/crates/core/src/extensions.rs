//! Mixed manna (items that are goods for some agents and chores for others)
//! and unequal incomes.

use log::{info, warn};
use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::Serialize;

use crate::disutility::ProfileMap;
use crate::equilibrium::{self, verify_ceei, EquilibriumCertificate};
use crate::error::{Error, Result};
use crate::geometry::{self, Descent, NearestOptions, Penalty, Repair};
use crate::instance::{Allocation, DisutilitySpec, Instance, Mode, Residuals};
use crate::solver::{self, round_down, LinearLoop, SolverParams, ROUND_DIGITS};

/// Weight spreads beyond this ratio trigger a warning.
pub const WEIGHT_RATIO_WARN: f64 = 1e3;
const MAX_HALVINGS: usize = 200;
const POSITIVE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Category {
    /// Every agent who likes some item can get positive utility while the rest get zero.
    Positive,
    /// Every agent can be held at exactly zero utility.
    Null,
    /// Neither: the instance behaves like a chore division.
    Negative,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Positive => "positive",
            Category::Null => "null",
            Category::Negative => "negative",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedClassification {
    pub category: Category,
    /// Witness allocation of the defining program (absent for `Negative`).
    pub witness: Option<Allocation>,
    /// Optimal `s` of the positivity program, if it was feasible.
    pub s: Option<f64>,
}

fn utilities(inst: &Instance) -> Result<Vec<Vec<f64>>> {
    if inst.mode != Mode::Mixed {
        return Err(Error::Validation("mixed-manna routines need a mixed instance".into()));
    }
    inst.linear_matrix()
        .ok_or_else(|| Error::Validation("mixed mode supports linear specs only".into()))
}

/// Agents that value some item positively.
pub fn positive_agents(u: &[Vec<f64>]) -> Vec<bool> {
    u.iter().map(|r| r.iter().any(|&v| v > 0.0)).collect()
}

/// Items some agent values positively.
pub fn goods(u: &[Vec<f64>]) -> Vec<bool> {
    let m = u[0].len();
    (0..m).map(|j| u.iter().any(|r| r[j] > 0.0)).collect()
}

/// Entries that survive Pareto elimination: a good only goes to agents who
/// like it, and agents who like nothing only receive items they are
/// indifferent to.
pub fn pareto_mask(u: &[Vec<f64>]) -> Vec<bool> {
    let (n, m) = (u.len(), u[0].len());
    let plus = positive_agents(u);
    let good = goods(u);
    let mut mask = vec![false; n * m];
    for i in 0..n {
        for j in 0..m {
            mask[i * m + j] = if good[j] {
                u[i][j] > 0.0
            } else if plus[i] {
                true
            } else {
                u[i][j] == 0.0
            };
        }
    }
    mask
}

/// Negative-case mask: only the goods restriction applies.
fn goods_mask(u: &[Vec<f64>]) -> Vec<bool> {
    let (n, m) = (u.len(), u[0].len());
    let good = goods(u);
    let mut mask = vec![true; n * m];
    for i in 0..n {
        for j in 0..m {
            if good[j] && u[i][j] <= 0.0 {
                mask[i * m + j] = false;
            }
        }
    }
    mask
}

/// LP over allocations: maximize `s` subject to `U_i >= s` on `rows_at_least`
/// and `U_i = 0` on `rows_zero`, with `s <= 1`. Returns `(s, x)` or `None` if
/// infeasible.
fn classify_lp(
    u: &[Vec<f64>],
    mask: Option<&[bool]>,
    at_least: &[bool],
    zero: &[bool],
) -> Option<(f64, Allocation)> {
    let (n, m) = (u.len(), u[0].len());
    let mut lp = Problem::new(OptimizationDirection::Maximize);
    let s = lp.add_var(1.0, (f64::NEG_INFINITY, 1.0));
    let vars: Vec<_> = (0..n * m)
        .map(|k| {
            let hi = if mask.is_none_or(|mk| mk[k]) { f64::INFINITY } else { 0.0 };
            lp.add_var(0.0, (0.0, hi))
        })
        .collect();
    for j in 0..m {
        let col: Vec<_> = (0..n).map(|i| (vars[i * m + j], 1.0)).collect();
        lp.add_constraint(col.as_slice(), ComparisonOp::Eq, 1.0);
    }
    for i in 0..n {
        let mut expr: Vec<_> = (0..m).map(|j| (vars[i * m + j], u[i][j])).collect();
        if zero[i] {
            lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, 0.0);
        } else if at_least[i] {
            expr.push((s, -1.0));
            lp.add_constraint(expr.as_slice(), ComparisonOp::Ge, 0.0);
        }
    }
    let sol = lp.solve().ok()?;
    let mut x = Allocation::zeros(n, m);
    for (k, v) in vars.iter().enumerate() {
        x.set(k / m, k % m, sol[*v].max(0.0));
    }
    Some((sol[s], x))
}

/// Sorts a mixed instance into the positive, null or negative case by
/// linear programming.
pub fn classify_mixed(inst: &Instance) -> Result<MixedClassification> {
    let u = utilities(inst)?;
    let n = inst.n;
    let plus = positive_agents(&u);
    let minus: Vec<bool> = plus.iter().map(|p| !p).collect();
    let mut s_opt = None;
    if plus.iter().any(|&p| p) {
        let mask = pareto_mask(&u);
        if let Some((s, x)) = classify_lp(&u, Some(&mask), &plus, &minus) {
            s_opt = Some(s);
            if s > POSITIVE_TOL {
                return Ok(MixedClassification {
                    category: Category::Positive,
                    witness: Some(x),
                    s: Some(s),
                });
            }
        }
    }
    if let Some((_, x)) = classify_lp(&u, None, &vec![false; n], &vec![true; n]) {
        return Ok(MixedClassification {
            category: Category::Null,
            witness: Some(x),
            s: s_opt,
        });
    }
    Ok(MixedClassification {
        category: Category::Negative,
        witness: None,
        s: s_opt,
    })
}

/// Maximum violation of a classification's defining constraints by its witness.
pub fn witness_residual(inst: &Instance, c: &MixedClassification) -> Result<f64> {
    let u = utilities(inst)?;
    let Some(x) = &c.witness else {
        return Ok(0.0);
    };
    let plus = positive_agents(&u);
    let mut worst = x.column_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    worst = worst.max((-x.min_entry()).max(0.0));
    for (i, row) in u.iter().enumerate() {
        let ui: f64 = row.iter().zip(x.row(i)).map(|(a, b)| a * b).sum();
        let bad = match c.category {
            Category::Positive if plus[i] => (c.s.unwrap_or(0.0) - ui).max(0.0),
            _ => ui.abs(),
        };
        worst = worst.max(bad);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MixedSolution {
    pub category: Category,
    pub x: Allocation,
    /// Signed prices. Positive case: what agents pay (chores negative).
    /// Negative case: what agents are paid (goods negative).
    pub p: Vec<f64>,
    pub epsilon: f64,
    pub residuals: Residuals,
    pub kkt: Option<solver::KktCertificate>,
    pub pass: bool,
}

/// Solves a mixed instance according to its category.
pub fn solve_mixed(inst: &Instance, params: &SolverParams) -> Result<MixedSolution> {
    let class = classify_mixed(inst)?;
    info!("mixed instance classified as {}", class.category.as_str());
    match class.category {
        Category::Positive => solve_positive(inst, &class, params.epsilon),
        Category::Null => {
            let x = class.witness.expect("null witness");
            let residuals = null_residuals(&utilities(inst)?, &x);
            Ok(MixedSolution {
                category: Category::Null,
                p: vec![0.0; inst.m],
                epsilon: params.epsilon,
                pass: residuals.max() <= params.epsilon,
                residuals,
                x,
                kkt: None,
            })
        }
        Category::Negative => solve_negative(inst, params),
    }
}

/// Eisenberg-Gale: maximizes `Σ_{i∈N+} log U_i` over allocations that pass
/// Pareto elimination, then prices each item at `max_{i∈N+} U_ij / U_i`.
fn solve_positive(inst: &Instance, class: &MixedClassification, epsilon: f64) -> Result<MixedSolution> {
    let u = utilities(inst)?;
    let (n, m) = (inst.n, inst.m);
    let plus = positive_agents(&u);
    let mask = pareto_mask(&u);
    let neg = negated(&u)?;
    let pm = ProfileMap::from_instance(&neg);
    let desc = Descent {
        pm: &pm,
        penalties: plus
            .iter()
            .map(|&p| if p { Penalty::NegLog } else { Penalty::Linear(0.0) })
            .collect(),
        allowed: Some(&mask),
    };
    let uniform = desc.start()?;
    let util = |x: &Allocation, i: usize| -> f64 { u[i].iter().zip(x.row(i)).map(|(a, b)| a * b).sum() };
    let start = if (0..n).all(|i| !plus[i] || util(&uniform, i) > 0.0) {
        uniform
    } else {
        class.witness.clone().expect("positive witness")
    };
    let out = desc.minimize(start, 1e-13);
    let x = out.x;
    let mut p = vec![f64::NEG_INFINITY; m];
    for j in 0..m {
        for i in (0..n).filter(|&i| plus[i] && mask[i * m + j]) {
            p[j] = p[j].max(u[i][j] / util(&x, i));
        }
        if !p[j].is_finite() {
            p[j] = 0.0;
        }
    }
    let residuals = positive_residuals(&u, &x, &p)?;
    Ok(MixedSolution {
        category: Category::Positive,
        pass: residuals.max() <= epsilon,
        epsilon,
        residuals,
        x,
        p,
        kkt: None,
    })
}

/// Checks the positive-case equilibrium: agents in `N+` spend equal budgets
/// on utility-maximizing bundles; agents in `N-` hold zero utility.
fn positive_residuals(u: &[Vec<f64>], x: &Allocation, p: &[f64]) -> Result<Residuals> {
    let n = u.len();
    let plus = positive_agents(u);
    let idx: Vec<usize> = (0..n).filter(|&i| plus[i]).collect();
    let sub_rows: Vec<Vec<f64>> = idx.iter().map(|&i| u[i].iter().map(|v| -v).collect()).collect();
    let sub = Instance::new(Mode::Mixed, sub_rows.into_iter().map(DisutilitySpec::Linear).collect(), None)?;
    let sub_pm = ProfileMap::from_instance(&sub);
    let sub_x = Allocation::from_rows(idx.iter().map(|&i| x.row(i).to_vec()).collect())?;
    let neg_p: Vec<f64> = p.iter().map(|v| -v).collect();
    let mut r = verify_ceei(&sub_pm, &sub_x, &neg_p, 0.0, None)?.residuals;
    r.feasibility_worst = x.column_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    for i in (0..n).filter(|&i| !plus[i]) {
        let ui: f64 = u[i].iter().zip(x.row(i)).map(|(a, b)| a * b).sum();
        r.optimal_bundle_worst = r.optimal_bundle_worst.max(ui.abs());
    }
    Ok(r)
}

/// Re-checks a mixed solution. Price signs follow the category: in the
/// positive case prices are what agents pay, in the negative case what they
/// are paid.
pub fn verify_mixed(inst: &Instance, x: &Allocation, p: &[f64]) -> Result<(Category, Residuals)> {
    let u = utilities(inst)?;
    x.check_dims(inst.n, inst.m)?;
    let class = classify_mixed(inst)?;
    let r = match class.category {
        Category::Positive => positive_residuals(&u, x, p)?,
        Category::Null => null_residuals(&u, x),
        Category::Negative => {
            let pm = ProfileMap::from_instance(&negated(&u)?);
            verify_ceei(&pm, x, p, 0.0, None)?.residuals
        }
    };
    Ok((class.category, r))
}

fn null_residuals(u: &[Vec<f64>], x: &Allocation) -> Residuals {
    let util = (0..u.len())
        .map(|i| u[i].iter().zip(x.row(i)).map(|(a, b)| a * b).sum::<f64>().abs())
        .fold(0.0, f64::max);
    Residuals {
        income_ratio_worst: 0.0,
        optimal_bundle_worst: util,
        feasibility_worst: x.column_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max),
    }
}

fn negated(u: &[Vec<f64>]) -> Result<Instance> {
    Instance::new(
        Mode::Mixed,
        u.iter()
            .map(|r| DisutilitySpec::Linear(r.iter().map(|v| -v).collect()))
            .collect(),
        None,
    )
}

/// Finds `δ·1` outside the feasible region by halving from `m · max|D_ij|`.
pub fn initial_point_mixed_negative(inst: &Instance) -> Result<Vec<f64>> {
    let d_inst = match inst.mode {
        Mode::Mixed => negated(&utilities(inst)?)?,
        Mode::Chores => inst.clone(),
    };
    let rows = d_inst.linear_matrix().ok_or_else(|| Error::Validation("linear specs required".into()))?;
    let u: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
    let mask = goods_mask(&u);
    let pm = ProfileMap::from_instance(&d_inst);
    let max_abs = rows.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut delta = inst.m as f64 * max_abs;
    for _ in 0..MAX_HALVINGS {
        let d0 = vec![round_down(delta, ROUND_DIGITS); inst.n];
        let r = geometry::nearest_point(
            &pm,
            &d0,
            NearestOptions {
                allowed: Some(&mask),
                repair: Repair::MaxOnly,
                feasible_below: 1e-9 * delta,
                ..Default::default()
            },
        )?;
        if r.distance > 1e-9 * delta {
            return Ok(d0);
        }
        delta *= 0.5;
    }
    Err(Error::SearchFailed(MAX_HALVINGS))
}

/// Negative case: flip signs, restrict goods to their likers, and run the
/// linear loop from an infeasible `δ·1`.
fn solve_negative(inst: &Instance, params: &SolverParams) -> Result<MixedSolution> {
    let u = utilities(inst)?;
    let neg = negated(&u)?;
    let pm = ProfileMap::from_instance(&neg);
    let mask = goods_mask(&u);
    let d0 = initial_point_mixed_negative(inst)?;
    let cert = solver::run_linear(
        &pm,
        params,
        LinearLoop {
            start: Some(d0),
            allowed: Some(&mask),
            signed: true,
        },
    )?;
    let eq = equilibrium::from_kkt_linear_pm(&pm, &cert, Some(&mask))?;
    Ok(MixedSolution {
        category: Category::Negative,
        pass: eq.residuals.max() <= 2.0 * params.epsilon,
        epsilon: 2.0 * params.epsilon,
        residuals: eq.residuals,
        x: eq.x,
        p: eq.p,
        kkt: Some(cert),
    })
}

/// Rescales weights so the largest is one, warning on wide spreads.
pub fn normalize_weights(weights: &[f64]) -> Result<Vec<f64>> {
    if let Some((i, w)) = weights.iter().enumerate().find(|(_, w)| !(w.is_finite() && **w > 0.0)) {
        return Err(Error::Validation(format!("weight {i} = {w} is not positive")));
    }
    let hi = weights.iter().cloned().fold(0.0, f64::max);
    let lo = weights.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi / lo > WEIGHT_RATIO_WARN {
        warn!(
            "income weights span a ratio of {:e}; the iteration bound grows with this ratio",
            hi / lo
        );
    }
    Ok(weights.iter().map(|w| w / hi).collect())
}

/// Unequal incomes: earnings proportional to `η`, on a strictly positive
/// chores instance.
pub fn solve_weighted(inst: &Instance, weights: &[f64], params: &SolverParams) -> Result<EquilibriumCertificate> {
    if weights.len() != inst.n {
        return Err(Error::DimensionMismatch {
            expected: format!("{} weights", inst.n),
            got: format!("{}", weights.len()),
        });
    }
    let eta = normalize_weights(weights)?;
    let params = SolverParams {
        weights: Some(eta),
        ..params.clone()
    };
    let pm = ProfileMap::from_instance(inst);
    if inst.all_linear() {
        let cert = solver::solve_kkt_linear(inst, &params)?;
        equilibrium::from_kkt_linear(inst, &cert)
    } else {
        let cert = solver::solve_kkt_general(&pm, &params)?;
        equilibrium::from_kkt_general(&pm, &cert)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn classification_examples() {
        let goods = Instance::mixed(vec![vec![1.0, 2.0], vec![3.0, 1.0]]).unwrap();
        assert_eq!(classify_mixed(&goods).unwrap().category, Category::Positive);

        let chores = Instance::mixed(vec![vec![-1.0, -2.0], vec![-3.0, -1.0]]).unwrap();
        let c = classify_mixed(&chores).unwrap();
        assert_eq!(c.category, Category::Negative);
        assert!(c.witness.is_none());

        let swap = Instance::mixed(vec![vec![1.0, -1.0], vec![-1.0, 1.0]]).unwrap();
        let c = classify_mixed(&swap).unwrap();
        assert_eq!(c.category, Category::Positive);
        assert!(witness_residual(&swap, &c).unwrap() <= 1e-9);
        assert!(c.s.unwrap() > 0.0);

        let null = Instance::mixed(vec![vec![1.0, -1.0]]).unwrap();
        let c = classify_mixed(&null).unwrap();
        assert_eq!(c.category, Category::Null);
        assert!(witness_residual(&null, &c).unwrap() <= 1e-9);
        assert_eq!(c.witness.unwrap().rows(), vec![vec![1.0, 1.0]]);
    }

    #[test]
    fn pure_goods_identical_utilities_split_evenly() {
        let inst = Instance::mixed(vec![vec![1.0; 3]; 2]).unwrap();
        let sol = solve_mixed(&inst, &SolverParams::with_epsilon(0.01)).unwrap();
        assert_eq!(sol.category, Category::Positive);
        for i in 0..2 {
            for j in 0..3 {
                assert!((sol.x.get(i, j) - 0.5).abs() <= 1e-6);
            }
        }
        for &p in &sol.p {
            assert!((p - 2.0 / 3.0).abs() <= 1e-6, "{:?}", sol.p);
        }
        assert!(sol.pass, "{:?}", sol.residuals);
    }

    #[test]
    fn positive_case_with_a_chore() {
        let inst = Instance::mixed(vec![vec![3.0, 1.0, -1.0], vec![1.0, 2.0, -2.0]]).unwrap();
        let sol = solve_mixed(&inst, &SolverParams::with_epsilon(0.01)).unwrap();
        assert_eq!(sol.category, Category::Positive);
        assert!(sol.pass, "{:?}", sol.residuals);
        assert!(sol.p[2] < 0.0 && sol.p[0] > 0.0);
    }

    #[test]
    fn null_case_witness() {
        let inst = Instance::mixed(vec![vec![1.0, -1.0]]).unwrap();
        let sol = solve_mixed(&inst, &SolverParams::with_epsilon(0.01)).unwrap();
        assert_eq!(sol.category, Category::Null);
        assert!(sol.p.iter().all(|&p| p == 0.0));
        assert!(sol.pass);
    }

    #[test]
    fn negative_case_matches_chores_path() {
        let d = vec![vec![1.0, 4.0, 2.0], vec![3.0, 1.0, 2.5]];
        let chores = Instance::linear(d.clone()).unwrap();
        let mixed = Instance::mixed(d.iter().map(|r| r.iter().map(|v| -v).collect()).collect()).unwrap();
        let params = SolverParams::with_epsilon(0.02);
        let a = solve_mixed(&mixed, &params).unwrap();
        assert_eq!(a.category, Category::Negative);
        assert!(a.pass, "{:?}", a.residuals);
        let cert = solver::solve_kkt_linear(&chores, &params).unwrap();
        let b = equilibrium::from_kkt_linear(&chores, &cert).unwrap();
        assert!(b.residuals.max() <= 0.04);
        assert!((a.residuals.optimal_bundle_worst - b.residuals.optimal_bundle_worst).abs() <= 1e-6);
        assert!((a.residuals.feasibility_worst - b.residuals.feasibility_worst).abs() <= 1e-6);
    }

    #[test]
    fn negative_case_with_a_good() {
        let inst = Instance::mixed(vec![vec![-1.0, 0.5], vec![-2.0, -1.0]]).unwrap();
        let c = classify_mixed(&inst).unwrap();
        assert_eq!(c.category, Category::Negative);
        let d0 = initial_point_mixed_negative(&inst).unwrap();
        assert!(d0.iter().all(|&v| v > 0.0));
        let sol = solve_mixed(&inst, &SolverParams::with_epsilon(0.02)).unwrap();
        assert!(sol.pass, "{:?}", sol.residuals);
        assert!(sol.x.get(1, 1) <= 1e-9);
    }

    #[test]
    fn initial_point_mixed_negative_examples() {
        // Pure chores: the first guess m·max D is feasible, so halving is needed.
        let inst = Instance::linear(vec![vec![2.0, 1.0], vec![1.0, 3.0]]).unwrap();
        let d0 = initial_point_mixed_negative(&inst).unwrap();
        let pm = ProfileMap::from_instance(&inst);
        assert!(geometry::nearest_point(&pm, &d0, NearestOptions::default()).unwrap().distance > 0.0);
        assert!(d0[0] < 2.0 * 3.0);

        // A single agent with one chore: m·max|D| = 1 is already feasible; 0.5 is not.
        let one = Instance::mixed(vec![vec![-1.0]]).unwrap();
        assert_eq!(initial_point_mixed_negative(&one).unwrap(), vec![0.5]);
    }

    #[test]
    fn weighted_examples() {
        let inst = Instance::linear(vec![vec![1.0, 1.0], vec![1.0, 1.0]]).unwrap();
        let eps = 0.02;
        let params = SolverParams::with_epsilon(eps);
        let eq = solve_weighted(&inst, &[1.0, 0.5], &params).unwrap();
        let e = eq.earnings();
        let ratio = e[0] / e[1];
        assert!(ratio >= (1.0 - 2.0 * eps) * 2.0 && ratio <= 2.0 / (1.0 - 2.0 * eps), "{ratio}");

        let plain = equilibrium::from_kkt_linear(&inst, &solver::solve_kkt_linear(&inst, &params).unwrap()).unwrap();
        let unit = solve_weighted(&inst, &[1.0, 1.0], &params).unwrap();
        assert_eq!(plain, unit);

        assert_eq!(normalize_weights(&[2.0, 1.0]).unwrap(), vec![1.0, 0.5]);
        assert!(normalize_weights(&[1.0, 1e-6]).is_ok());
        assert!(normalize_weights(&[1.0, 0.0]).is_err());
    }
}
