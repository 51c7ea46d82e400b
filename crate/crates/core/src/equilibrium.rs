//! From KKT certificates to priced allocations, and independent checks of
//! the equilibrium, envy-freeness and Pareto-optimality conditions.

use minilp::{ComparisonOp, OptimizationDirection, Problem};
use serde::Serialize;

use crate::disutility::{Oracle, ProfileMap};
use crate::error::{Error, Result};
use crate::geometry::{self, NearestOptions};
use crate::instance::{Allocation, DisutilitySpec, Instance, Residuals};
use crate::solver::KktCertificate;

/// Relative slack for treating `a_i D_ij` as equal to the column price.
const TIGHT_SLACK: f64 = 1e-6;
/// Largest relative residual accepted from the allocation-recovery LP.
const RECOVERY_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CertMode {
    /// Linear pipeline: conditions (2) and (3) hold up to solver tolerance.
    LinearStrong,
    General,
}

/// A priced allocation with the residuals of each equilibrium condition.
#[derive(Debug, Clone, PartialEq)]
pub struct EquilibriumCertificate {
    pub x: Allocation,
    pub p: Vec<f64>,
    pub epsilon: f64,
    pub residuals: Residuals,
    pub mode: CertMode,
    pub weights: Vec<f64>,
}

impl EquilibriumCertificate {
    pub fn earnings(&self) -> Vec<f64> {
        earnings(&self.x, &self.p)
    }

    pub fn price_sum(&self) -> f64 {
        self.p.iter().sum()
    }
}

pub fn earnings(x: &Allocation, p: &[f64]) -> Vec<f64> {
    (0..x.n())
        .map(|i| x.row(i).iter().zip(p).map(|(a, b)| a * b).sum())
        .collect()
}

fn linear_rows(pm: &ProfileMap) -> Result<Vec<&[f64]>> {
    pm.oracles()
        .iter()
        .map(|o| match o.spec() {
            DisutilitySpec::Linear(c) => Ok(c.as_slice()),
            DisutilitySpec::Ces { .. } => Err(Error::Validation("linear conversion needs linear disutilities".into())),
        })
        .collect()
}

/// Linear conversion: prices `p_j = min_i a_i D_ij` and an allocation
/// recovered by LP on the tight entries, so that every agent's bundle costs
/// exactly `a_i d_i` and uses only its cheapest chores.
pub fn from_kkt_linear(inst: &Instance, cert: &KktCertificate) -> Result<EquilibriumCertificate> {
    from_kkt_linear_pm(&ProfileMap::from_instance(inst), cert, None)
}

pub(crate) fn from_kkt_linear_pm(
    pm: &ProfileMap,
    cert: &KktCertificate,
    allowed: Option<&[bool]>,
) -> Result<EquilibriumCertificate> {
    let rows = linear_rows(pm)?;
    let (n, m) = (pm.n(), pm.m());
    let ok = |i: usize, j: usize| allowed.is_none_or(|a| a[i * m + j]);
    let mut p = vec![f64::INFINITY; m];
    for j in 0..m {
        for i in (0..n).filter(|&i| ok(i, j)) {
            p[j] = p[j].min(cert.a[i] * rows[i][j]);
        }
        if !p[j].is_finite() {
            return Err(Error::ZeroColumn(j));
        }
    }
    let tight = |i: usize, j: usize| {
        ok(i, j) && cert.a[i] * rows[i][j] - p[j] <= TIGHT_SLACK * p[j].abs().max(1e-300)
    };
    // Tight entries keep every bundle optimal; a profile mismatch only shows
    // up in the income residual.
    let x = match recover(&rows, &cert.d, &tight) {
        Ok((x, residual)) => {
            if residual > 1e-3 {
                log::warn!("tight-entry recovery misses the profile by {residual:e}");
            } else if residual > RECOVERY_TOL {
                log::info!("tight-entry recovery misses the profile by {residual:e}");
            }
            x
        }
        Err(_) => {
            log::warn!("tight-entry recovery failed; retrying on all allowed entries");
            recover(&rows, &cert.d, &ok)?.0
        }
    };
    let gamma = cert.gamma;
    let epsilon = 2.0 * (gamma - 1.0);
    let report = verify_ceei(pm, &x, &p, epsilon, Some(&cert.weights))?;
    Ok(EquilibriumCertificate {
        x,
        p,
        epsilon,
        residuals: report.residuals,
        mode: CertMode::LinearStrong,
        weights: cert.weights.clone(),
    })
}

/// Solves `{x >= 0 on the allowed entries, Σ_i x_ij = 1, ⟨D_i, x_i⟩ = d_i}`
/// with slack variables, minimizing total slack.
fn recover(rows: &[&[f64]], d: &[f64], allowed: &dyn Fn(usize, usize) -> bool) -> Result<(Allocation, f64)> {
    let (n, m) = (rows.len(), rows[0].len());
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut vars = vec![None; n * m];
    for i in 0..n {
        for j in 0..m {
            if allowed(i, j) {
                vars[i * m + j] = Some(lp.add_var(0.0, (0.0, f64::INFINITY)));
            }
        }
    }
    for j in 0..m {
        let col: Vec<_> = (0..n).filter_map(|i| vars[i * m + j].map(|v| (v, 1.0))).collect();
        if col.is_empty() {
            return Err(Error::InfeasibleRecovery { residual: f64::INFINITY });
        }
        lp.add_constraint(col.as_slice(), ComparisonOp::Eq, 1.0);
    }
    for i in 0..n {
        let up = lp.add_var(1.0, (0.0, f64::INFINITY));
        let dn = lp.add_var(1.0, (0.0, f64::INFINITY));
        let mut expr: Vec<_> = (0..m)
            .filter_map(|j| vars[i * m + j].map(|v| (v, rows[i][j])))
            .collect();
        expr.push((up, 1.0));
        expr.push((dn, -1.0));
        lp.add_constraint(expr.as_slice(), ComparisonOp::Eq, d[i]);
    }
    let sol = lp.solve().map_err(|_| Error::InfeasibleRecovery { residual: f64::INFINITY })?;
    let scale = d.iter().fold(1e-300f64, |s, v| s.max(v.abs()));
    let residual = sol.objective() / scale;
    let mut x = Allocation::zeros(n, m);
    for i in 0..n {
        for j in 0..m {
            if let Some(v) = vars[i * m + j] {
                x.set(i, j, sol[v].max(0.0));
            }
        }
    }
    // Remove LP round-off from the column sums.
    for j in 0..m {
        let s = x.column_sum(j);
        if s > 0.0 {
            for i in 0..n {
                x.set(i, j, x.get(i, j) / s);
            }
        }
    }
    Ok((x, residual))
}

/// General conversion: the certificate allocation with prices from the
/// gradient hyperplane `c_ij = a_i ∂D_i/∂x_ij` at that allocation,
/// `p_j = min_i c_ij`, and
/// `ε = max(3(γ-1) + 5δ, λ-1)`.
pub fn from_kkt_general(pm: &ProfileMap, cert: &KktCertificate) -> Result<EquilibriumCertificate> {
    let (n, m) = (pm.n(), pm.m());
    let mut p = vec![f64::INFINITY; m];
    for i in 0..n {
        let g = pm.oracle(i).gradient_floored(cert.x.row(i));
        for j in 0..m {
            p[j] = p[j].min(cert.a[i] * g[j]);
        }
    }
    let epsilon = general_epsilon(cert.gamma, cert.lambda, cert.delta);
    let report = verify_ceei(pm, &cert.x, &p, epsilon, Some(&cert.weights))?;
    Ok(EquilibriumCertificate {
        x: cert.x.clone(),
        p,
        epsilon,
        residuals: report.residuals,
        mode: CertMode::General,
        weights: cert.weights.clone(),
    })
}

/// `max(3(γ-1) + 5δ, λ-1)`.
pub fn general_epsilon(gamma: f64, lambda: f64, delta: f64) -> f64 {
    (3.0 * (gamma - 1.0) + 5.0 * delta).max(lambda - 1.0)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CeeiReport {
    pub pass: bool,
    pub residuals: Residuals,
    pub earnings: Vec<f64>,
    /// Least disutility agent `i` can reach while earning at least `e_i`.
    pub optimal: Vec<f64>,
    pub disutility: Vec<f64>,
}

/// Checks the three ε-CEEI conditions, with weighted earnings when `weights`
/// is given.
///
/// Condition (2) asks each agent's disutility to be within a `(1-ε)` factor of
/// the cheapest bundle that earns as much at prices `p`. Prices may be signed
/// (mixed manna); then the bundle problem may be unbounded, which fails.
pub fn verify_ceei(
    pm: &ProfileMap,
    x: &Allocation,
    p: &[f64],
    epsilon: f64,
    weights: Option<&[f64]>,
) -> Result<CeeiReport> {
    let (n, m) = (pm.n(), pm.m());
    x.check_dims(n, m)?;
    if p.len() != m {
        return Err(Error::DimensionMismatch {
            expected: format!("{m} prices"),
            got: format!("{}", p.len()),
        });
    }
    if p.iter().all(|&v| v == 0.0) {
        return Err(Error::ZeroPrices);
    }
    let e = earnings(x, p);
    let income_ratio_worst = income_residual(&e, weights);
    let disutility = pm.eval(x);
    let mut optimal = Vec::with_capacity(n);
    let mut optimal_bundle_worst: f64 = 0.0;
    for i in 0..n {
        let opt = optimal_bundle(pm.oracle(i), p, e[i]);
        let d = disutility[i];
        let r = if opt >= d {
            0.0
        } else if opt == f64::NEG_INFINITY {
            f64::INFINITY
        } else {
            (d - opt) / d.abs().max(opt.abs())
        };
        optimal_bundle_worst = optimal_bundle_worst.max(r);
        optimal.push(opt);
    }
    let feasibility_worst = x
        .column_sums()
        .iter()
        .map(|s| (s - 1.0).abs())
        .fold(0.0, f64::max);
    let residuals = Residuals {
        income_ratio_worst,
        optimal_bundle_worst,
        feasibility_worst,
    };
    Ok(CeeiReport {
        pass: residuals.max() <= epsilon,
        residuals,
        earnings: e,
        optimal,
        disutility,
    })
}

/// `1 - min_{i,i'} (e_{i'}/η_{i'}) / (e_i/η_i)`; earnings of mixed sign fail outright.
fn income_residual(e: &[f64], weights: Option<&[f64]>) -> f64 {
    let scaled: Vec<f64> = e
        .iter()
        .enumerate()
        .map(|(i, v)| v / weights.map_or(1.0, |w| w[i]))
        .collect();
    let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scaled.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if lo > 0.0 {
        1.0 - lo / hi
    } else if hi < 0.0 {
        1.0 - hi / lo
    } else if lo == 0.0 && hi == 0.0 {
        0.0
    } else {
        1.0
    }
}

/// `min { D(y) : y >= 0, ⟨p, y⟩ >= e }`, possibly `±∞`.
pub fn optimal_bundle(o: &Oracle, p: &[f64], e: f64) -> f64 {
    match o.spec() {
        DisutilitySpec::Linear(c) => linear_optimal_bundle(c, p, e),
        DisutilitySpec::Ces { .. } => {
            if e <= 0.0 {
                return 0.0;
            }
            if p.iter().all(|&v| v <= 0.0) {
                return f64::INFINITY;
            }
            e * ces_unit_cost(o, p).0
        }
    }
}

/// Closed form through the one-constraint dual: `max e μ` subject to
/// `D_j - μ p_j >= 0` for all `j`, `μ >= 0`.
fn linear_optimal_bundle(c: &[f64], p: &[f64], e: f64) -> f64 {
    let mut lo: f64 = 0.0;
    let mut hi = f64::INFINITY;
    for (&d, &q) in c.iter().zip(p) {
        if q > 0.0 {
            hi = hi.min(d / q);
        } else if q < 0.0 {
            lo = lo.max(d / q);
        } else if d < 0.0 {
            return f64::NEG_INFINITY;
        }
    }
    if lo > hi * (1.0 + 1e-12) + 1e-300 {
        return f64::NEG_INFINITY;
    }
    if e > 0.0 {
        e * hi
    } else {
        e * lo
    }
}

/// Lower and upper bounds on `min { D(y) : y >= 0, ⟨p, y⟩ = 1 }` for
/// nonnegative prices, by pairwise Frank-Wolfe on `w = p ∘ y` in the simplex.
pub fn ces_unit_cost(o: &Oracle, p: &[f64]) -> (f64, f64) {
    let support: Vec<usize> = (0..p.len()).filter(|&j| p[j] > 0.0).collect();
    let k = support.len();
    let m = p.len();
    let to_y = |w: &[f64]| {
        let mut y = vec![0.0; m];
        for (t, &j) in support.iter().enumerate() {
            y[j] = w[t] / p[j];
        }
        y
    };
    let grad = |w: &[f64]| -> (f64, Vec<f64>) {
        let y = to_y(w);
        let v = o.eval(&y);
        let g = o.gradient_floored(&y);
        (v, support.iter().map(|&j| g[j] / p[j]).collect())
    };
    let mut w = vec![1.0 / k as f64; k];
    let mut best_lower = 0.0f64;
    let mut value = o.eval(&to_y(&w));
    for _ in 0..20_000 {
        let (v, g) = grad(&w);
        value = v;
        let dot: f64 = w.iter().zip(&g).map(|(a, b)| a * b).sum();
        let (t, gmin) = g
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &x)| if x < acc.1 { (i, x) } else { acc });
        let gap = dot - gmin;
        best_lower = best_lower.max(v - gap);
        if gap <= 1e-13 * v.max(1e-300) {
            break;
        }
        let s = (0..k)
            .filter(|&i| w[i] > 0.0)
            .max_by(|&a, &b| g[a].total_cmp(&g[b]))
            .unwrap_or(t);
        if s == t {
            break;
        }
        // Bisection on the directional derivative of moving mass s -> t.
        let slope = |tau: f64| {
            let mut u = w.clone();
            u[s] -= tau;
            u[t] += tau;
            let (_, gu) = grad(&u);
            gu[t] - gu[s]
        };
        let (mut lo, mut hi) = (0.0, w[s]);
        if slope(hi) <= 0.0 {
            lo = hi;
        } else {
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if slope(mid) <= 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
        if lo <= 0.0 {
            break;
        }
        w[s] -= lo;
        w[t] += lo;
    }
    (best_lower.min(value), value)
}

/// Divides each column by its sum, making the allocation exactly feasible.
pub fn ef_po_round(pm: &ProfileMap, x: &Allocation) -> Result<Allocation> {
    let (n, m) = (x.n(), x.m());
    let alpha = x.column_sums();
    if let Some(j) = alpha.iter().position(|&a| !(a > 0.0 && a.is_finite())) {
        return Err(Error::ZeroColumn(j));
    }
    let mut y = x.clone();
    for i in 0..n {
        for j in 0..m {
            y.set(i, j, x.get(i, j) / alpha[j]);
        }
    }
    let hi = alpha.iter().cloned().fold(0.0, f64::max);
    let lo = alpha.iter().cloned().fold(f64::INFINITY, f64::min);
    let (dx, dy) = (pm.eval(x), pm.eval(&y));
    for i in 0..n {
        let slack = 1e-12 * (1.0 + dx[i].abs());
        debug_assert!(dy[i] >= dx[i] / hi - slack && dy[i] <= dx[i] / lo + slack);
    }
    Ok(y)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EfReport {
    /// `min_{i != i'} D_i(y_{i'}) / D_i(y_i)`.
    pub min_ratio: f64,
    pub threshold: f64,
    pub pass: bool,
}

pub fn check_ef(pm: &ProfileMap, y: &Allocation, epsilon: f64) -> EfReport {
    let n = pm.n();
    let mut min_ratio = f64::INFINITY;
    for i in 0..n {
        let o = pm.oracle(i);
        let own = o.eval(y.row(i));
        if own <= 0.0 {
            continue;
        }
        for k in (0..n).filter(|&k| k != i) {
            min_ratio = min_ratio.min(o.eval(y.row(k)) / own);
        }
    }
    let threshold = 1.0 - 4.0 * epsilon;
    EfReport {
        min_ratio,
        threshold,
        pass: min_ratio >= threshold,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoReport {
    /// For linear instances, the least `t` such that some feasible `y'` has
    /// `D_i(y'_i) <= t D_i(y_i)` for all `i`.
    pub t_star: Option<f64>,
    /// Squared distance of `(1-2ε) D(y)` from the feasible region (convex case).
    pub infeasibility: Option<f64>,
    pub pass: bool,
}

/// `(1-2ε)`-Pareto-optimality of `y`. Linear instances solve an LP; otherwise
/// `(1-2ε) D(y)` must sit measurably outside the feasible region, which
/// resolves `ε` down to about `1e-7`.
pub fn check_po(pm: &ProfileMap, y: &Allocation, epsilon: f64) -> Result<PoReport> {
    let (n, m) = (pm.n(), pm.m());
    y.check_dims(n, m)?;
    let dy = pm.eval(y);
    let target = 1.0 - 2.0 * epsilon;
    if let Ok(rows) = linear_rows(pm) {
        let mut lp = Problem::new(OptimizationDirection::Minimize);
        let t = lp.add_var(1.0, (f64::NEG_INFINITY, f64::INFINITY));
        let vars: Vec<_> = (0..n * m).map(|_| lp.add_var(0.0, (0.0, f64::INFINITY))).collect();
        for j in 0..m {
            let col: Vec<_> = (0..n).map(|i| (vars[i * m + j], 1.0)).collect();
            lp.add_constraint(col.as_slice(), ComparisonOp::Eq, 1.0);
        }
        for i in 0..n {
            let mut expr: Vec<_> = (0..m).map(|j| (vars[i * m + j], rows[i][j])).collect();
            expr.push((t, -dy[i]));
            lp.add_constraint(expr.as_slice(), ComparisonOp::Le, 0.0);
        }
        let t_star = match lp.solve() {
            Ok(sol) => sol.objective(),
            Err(minilp::Error::Unbounded) => f64::NEG_INFINITY,
            Err(minilp::Error::Infeasible) => f64::INFINITY,
        };
        return Ok(PoReport {
            t_star: Some(t_star),
            infeasibility: None,
            pass: t_star > target - 1e-9,
        });
    }
    let q: Vec<f64> = dy.iter().map(|d| target * d).collect();
    let r = geometry::nearest_point(pm, &q, NearestOptions::default())?;
    let scale = dy.iter().fold(1e-300f64, |s, v| s.max(v.abs()));
    let infeasibility = r.distance * r.distance;
    Ok(PoReport {
        t_star: None,
        infeasibility: Some(infeasibility),
        pass: infeasibility > 1e-14 * scale * scale,
    })
}
