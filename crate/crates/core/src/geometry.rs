//! Nearest feasible points in disutility space and the supporting
//! hyperplanes built from them.
//!
//! Every program here is a convex minimization of `Σ_i φ_i(D_i(x_i))` over
//! the product of column simplices `F = {x >= 0 : Σ_i x_ij = 1}`. It is solved
//! by a column-pairwise descent: in each column, mass moves from the agent
//! with the largest partial derivative to the one with the smallest, with an
//! exact line search. The Frank-Wolfe gap bounds the suboptimality and is the
//! stopping rule.

use log::{debug, info};

use crate::disutility::ProfileMap;
use crate::error::{Error, Result};
use crate::instance::{Allocation, DisutilitySpec};

/// Default optimality-gap tolerance, relative to the squared query scale.
pub const QP_TOL: f64 = 1e-13;
const MAX_SWEEPS: usize = 200_000;
/// Sweep cap when the descent only refines a conic solution.
const POLISH_SWEEPS: usize = 5_000;

/// Per-agent outer function applied to `D_i(x_i)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Penalty {
    /// `(v - q)^2`
    Squared(f64),
    /// `max(0, v - q)^2`
    Hinge(f64),
    /// `a * v`
    Linear(f64),
    /// `-log(-v)` for `v < 0`: the Nash welfare of a utility `-v`.
    NegLog,
}

impl Penalty {
    #[inline]
    fn value(self, v: f64) -> f64 {
        match self {
            Penalty::Squared(q) => (v - q) * (v - q),
            Penalty::Hinge(q) => {
                let r = (v - q).max(0.0);
                r * r
            }
            Penalty::Linear(a) => a * v,
            Penalty::NegLog => {
                if v < 0.0 {
                    -(-v).ln()
                } else {
                    f64::INFINITY
                }
            }
        }
    }

    #[inline]
    fn derivative(self, v: f64) -> f64 {
        match self {
            Penalty::Squared(q) => 2.0 * (v - q),
            Penalty::Hinge(q) => 2.0 * (v - q).max(0.0),
            Penalty::Linear(a) => a,
            Penalty::NegLog => {
                if v < 0.0 {
                    -1.0 / v
                } else {
                    1e300
                }
            }
        }
    }

    /// Whether the derivative is piecewise linear in `v`.
    fn piecewise_linear_slope(self) -> bool {
        !matches!(self, Penalty::NegLog)
    }

    /// Point where the derivative has a kink, if any.
    fn kink(self) -> Option<f64> {
        match self {
            Penalty::Hinge(q) => Some(q),
            _ => None,
        }
    }
}

/// A separable convex program over `F`, optionally restricted to a mask of
/// allowed entries.
pub(crate) struct Descent<'a> {
    pub pm: &'a ProfileMap,
    pub penalties: Vec<Penalty>,
    /// Row-major `n*m` flags; `None` allows every entry.
    pub allowed: Option<&'a [bool]>,
}

#[derive(Debug, Clone)]
pub(crate) struct DescentOutcome {
    pub x: Allocation,
    pub values: Vec<f64>,
    pub objective: f64,
    pub gap: f64,
    pub sweeps: usize,
    pub converged: bool,
}

impl<'a> Descent<'a> {
    fn allowed(&self, i: usize, j: usize) -> bool {
        self.allowed.is_none_or(|a| a[i * self.pm.m() + j])
    }

    /// Uniform split of each column over its allowed agents.
    pub fn start(&self) -> Result<Allocation> {
        let (n, m) = (self.pm.n(), self.pm.m());
        let mut x = Allocation::zeros(n, m);
        for j in 0..m {
            let k = (0..n).filter(|&i| self.allowed(i, j)).count();
            if k == 0 {
                return Err(Error::ZeroColumn(j));
            }
            for i in (0..n).filter(|&i| self.allowed(i, j)) {
                x.set(i, j, 1.0 / k as f64);
            }
        }
        Ok(x)
    }

    fn objective(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.penalties)
            .map(|(v, p)| p.value(*v))
            .sum()
    }

    fn grad(&self, x: &Allocation, values: &[f64], i: usize, j: usize) -> f64 {
        let o = self.pm.oracle(i);
        self.penalties[i].derivative(values[i]) * o.partial(x.row(i), j, values[i])
    }

    /// Frank-Wolfe gap `Σ_j (Σ_i x_ij g_ij - min_i g_ij)`.
    fn gap(&self, x: &Allocation, values: &[f64]) -> f64 {
        let (n, m) = (self.pm.n(), self.pm.m());
        let mut total = 0.0;
        for j in 0..m {
            let mut inner = 0.0;
            let mut lo = f64::INFINITY;
            for i in 0..n {
                if !self.allowed(i, j) {
                    continue;
                }
                let g = self.grad(x, values, i, j);
                inner += x.get(i, j) * g;
                lo = lo.min(g);
            }
            total += (inner - lo).max(0.0);
        }
        total
    }

    pub fn minimize(&self, x: Allocation, tol: f64) -> DescentOutcome {
        self.minimize_until(x, tol, f64::NEG_INFINITY)
    }

    /// Like [`Descent::minimize`], but also stops once the objective is at
    /// most `floor`.
    pub fn minimize_until(&self, x: Allocation, tol: f64, floor: f64) -> DescentOutcome {
        self.minimize_capped(x, tol, floor, MAX_SWEEPS)
    }

    fn minimize_capped(&self, mut x: Allocation, tol: f64, floor: f64, max_sweeps: usize) -> DescentOutcome {
        let (n, m) = (self.pm.n(), self.pm.m());
        let mut values = self.pm.eval(&x);
        let mut gap = self.gap(&x, &values);
        let mut sweeps = 0;
        let mut g = vec![0.0; n];
        while gap > tol && sweeps < max_sweeps {
            sweeps += 1;
            for j in 0..m {
                let mut s = usize::MAX;
                let mut t = usize::MAX;
                for i in 0..n {
                    if !self.allowed(i, j) {
                        continue;
                    }
                    g[i] = self.grad(&x, &values, i, j);
                    if t == usize::MAX || g[i] < g[t] {
                        t = i;
                    }
                    if x.get(i, j) > 0.0 && (s == usize::MAX || g[i] > g[s]) {
                        s = i;
                    }
                }
                if s == usize::MAX || s == t || g[s] - g[t] <= 0.0 {
                    continue;
                }
                let tau = self.line_search(&x, &values, s, t, j);
                if tau <= 0.0 {
                    continue;
                }
                let xs = x.get(s, j);
                if tau >= xs {
                    x.set(s, j, 0.0);
                    x.add(t, j, xs);
                } else {
                    x.add(s, j, -tau);
                    x.add(t, j, tau);
                }
                values[s] = self.pm.oracle(s).eval(x.row(s));
                values[t] = self.pm.oracle(t).eval(x.row(t));
            }
            if sweeps % 8 == 0 || m == 1 {
                if self.objective(&values) <= floor {
                    break;
                }
                let new_gap = self.gap(&x, &values);
                if new_gap >= gap && new_gap <= tol * 1e3 {
                    // Progress has stalled at floating-point resolution.
                    break;
                }
                gap = new_gap;
            }
        }
        gap = self.gap(&x, &values);
        let objective = self.objective(&values);
        DescentOutcome {
            converged: gap <= tol || objective <= floor,
            x,
            values,
            objective,
            gap,
            sweeps,
        }
    }

    /// Derivative in `tau` of moving `tau` units of chore `j` from `s` to `t`.
    fn slope(&self, x: &Allocation, s: usize, t: usize, j: usize, tau: f64) -> f64 {
        let mut rs = x.row(s).to_vec();
        let mut rt = x.row(t).to_vec();
        rs[j] = (rs[j] - tau).max(0.0);
        rt[j] += tau;
        let (os, ot) = (self.pm.oracle(s), self.pm.oracle(t));
        let (vs, vt) = (os.eval(&rs), ot.eval(&rt));
        -self.penalties[s].derivative(vs) * os.partial(&rs, j, vs)
            + self.penalties[t].derivative(vt) * ot.partial(&rt, j, vt)
    }

    fn line_search(&self, x: &Allocation, values: &[f64], s: usize, t: usize, j: usize) -> f64 {
        let hi = x.get(s, j);
        let (os, ot) = (self.pm.oracle(s), self.pm.oracle(t));
        if os.is_linear()
            && ot.is_linear()
            && self.penalties[s].piecewise_linear_slope()
            && self.penalties[t].piecewise_linear_slope()
        {
            // The slope is piecewise linear in tau; find its root exactly.
            let ds = os.partial(x.row(s), j, values[s]);
            let dt = ot.partial(x.row(t), j, values[t]);
            let slope = |tau: f64| {
                -self.penalties[s].derivative(values[s] - ds * tau) * ds
                    + self.penalties[t].derivative(values[t] + dt * tau) * dt
            };
            let mut pts = vec![0.0, hi];
            if let Some(q) = self.penalties[s].kink() {
                if ds != 0.0 {
                    pts.push((values[s] - q) / ds);
                }
            }
            if let Some(q) = self.penalties[t].kink() {
                if dt != 0.0 {
                    pts.push((q - values[t]) / dt);
                }
            }
            pts.retain(|p| (0.0..=hi).contains(p));
            pts.sort_by(f64::total_cmp);
            let mut prev = (0.0, slope(0.0));
            if prev.1 >= 0.0 {
                return 0.0;
            }
            for &p in &pts[1..] {
                let h = slope(p);
                if h >= 0.0 {
                    let (p0, h0) = prev;
                    if h == h0 {
                        return p0;
                    }
                    return (p0 + (p - p0) * (-h0) / (h - h0)).clamp(0.0, hi);
                }
                prev = (p, h);
            }
            return hi;
        }
        if self.slope(x, s, t, j, hi) <= 0.0 {
            return hi;
        }
        let (mut lo, mut up) = (0.0, hi);
        for _ in 0..64 {
            let mid = 0.5 * (lo + up);
            if self.slope(x, s, t, j, mid) <= 0.0 {
                lo = mid;
            } else {
                up = mid;
            }
            if up - lo <= 1e-17 * hi.max(1e-300) {
                break;
            }
        }
        0.5 * (lo + up)
    }
}

/// How the nearest point is made to dominate the query.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Repair {
    /// Raise short rows by 1-homogeneity so `D_i(x_i)` reaches the query.
    RowScale,
    /// Only take the componentwise max of the profile with the query; the
    /// allocation is left unchanged. Used when profiles may be negative.
    MaxOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NearestPointResult {
    pub x_star: Allocation,
    pub d_star: Vec<f64>,
    /// `‖d_star - query‖_2`.
    pub distance: f64,
    pub tolerance_used: f64,
}

/// Options for the nearest-point programs.
#[derive(Debug, Clone, Copy)]
pub struct NearestOptions<'a> {
    pub tol: f64,
    pub warm: Option<&'a Allocation>,
    pub allowed: Option<&'a [bool]>,
    pub repair: Repair,
    /// Distances at or below this count as zero and end the descent early.
    pub feasible_below: f64,
}

impl Default for NearestOptions<'_> {
    fn default() -> Self {
        NearestOptions {
            tol: QP_TOL,
            warm: None,
            allowed: None,
            repair: Repair::RowScale,
            feasible_below: 0.0,
        }
    }
}

/// Exact optimum of the linear hinge program from the tight pattern of an
/// approximate solution with profile `values`.
///
/// With `c_i = 2 max(0, D_i x_i - q_i)`, optimality means `c_i D_ij` is
/// minimal over agents on the support of each column. On a connected
/// component of tight pairs the ratios of `c` are fixed, and the scale
/// follows from `Σ c_i D_i x_i = Σ p_j`. An LP then recovers `x`. Returns
/// `None` unless some tolerance yields a consistent pattern whose objective
/// is at most `accept`.
fn polish_linear(desc: &Descent<'_>, query: &[f64], x: &Allocation, values: &[f64], accept: f64) -> Option<Allocation> {
    let pm = desc.pm;
    let (n, m) = (pm.n(), pm.m());
    let coef: Vec<&[f64]> = (0..n).map(|i| pm.oracle(i).spec().coefficients()).collect();
    let allowed = |i: usize, j: usize| desc.allowed(i, j);
    if (0..n).any(|i| (0..m).any(|j| allowed(i, j) && coef[i][j] < 0.0)) {
        return None;
    }
    let c0: Vec<f64> = values.iter().zip(query).map(|(v, q)| 2.0 * (v - q).max(0.0)).collect();
    let cmax = c0.iter().cloned().fold(0.0, f64::max);
    if cmax <= 0.0 {
        return None;
    }
    // Candidate patterns: the support of `x` at several thresholds, then
    // near-minimal entries of `c_i D_ij`.
    let mut patterns = Vec::new();
    for cut in [1e-12, 1e-9, 1e-6, 1e-3] {
        let mask: Vec<bool> = (0..n * m).map(|k| allowed(k / m, k % m) && x.get(k / m, k % m) > cut).collect();
        patterns.push((mask, c0.clone()));
    }
    for tau in [1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
        let c0: Vec<f64> = c0.iter().map(|&c| if c <= tau * cmax { 0.0 } else { c }).collect();
        let mut tight = vec![false; n * m];
        for j in 0..m {
            let g = |i: usize| c0[i] * coef[i][j];
            let lo = (0..n).filter(|&i| allowed(i, j)).map(g).fold(f64::INFINITY, f64::min);
            let hi = (0..n).filter(|&i| allowed(i, j)).map(g).fold(0.0, f64::max);
            for i in (0..n).filter(|&i| allowed(i, j)) {
                tight[i * m + j] = g(i) <= lo + tau * hi;
            }
        }
        patterns.push((tight, c0));
    }
    for (tight, c0) in patterns {
        let Some((c, p)) = pattern_prices(&coef, &c0, &tight, query) else {
            continue;
        };
        // Dual feasibility and the exact tight set under the rebuilt prices.
        let pscale = p.iter().cloned().fold(1e-300, f64::max);
        let mut support = vec![false; n * m];
        let mut ok = true;
        for j in 0..m {
            for i in (0..n).filter(|&i| allowed(i, j)) {
                let g = c[i] * coef[i][j];
                if g < p[j] - 1e-9 * pscale {
                    ok = false;
                }
                support[i * m + j] = g <= p[j] + 1e-9 * pscale;
            }
        }
        if !ok {
            continue;
        }
        let Some(x) = pattern_allocation(&coef, &support, &c, query) else {
            continue;
        };
        if desc.objective(&pm.eval(&x)) <= accept {
            return Some(x);
        }
    }
    None
}

/// Objective of [`conic_program`].
#[derive(Debug, Clone, Copy)]
enum ConicGoal<'a> {
    /// `Σ_i max(0, D_i(x_i) - q_i)^2`.
    Hinge(&'a [f64]),
    /// `Σ_i a_i D_i(x_i)` with `a >= 0`.
    Weighted(&'a [f64]),
}

/// Solves a program over F with an interior-point conic solver. Each agent
/// gets an epigraph variable `t_i >= D_i(x_i)`: a linear row for linear
/// agents, and for CES agents `t_i = Σ_j r_ij` with
/// `r_ij^(1/ρ) t_i^(1-1/ρ) >= c_ij^(1/ρ) x_ij` (a power cone per entry).
fn conic_program(desc: &Descent<'_>, goal: ConicGoal<'_>) -> Option<Allocation> {
    use clarabel::algebra::CscMatrix;
    use clarabel::solver::{
        DefaultSettingsBuilder, DefaultSolver, IPSolver, NonnegativeConeT, PowerConeT, SolverStatus,
        SupportedConeT, ZeroConeT,
    };
    let pm = desc.pm;
    let (n, m) = (pm.n(), pm.m());
    if let ConicGoal::Weighted(a) = goal {
        if a.iter().any(|&v| v < 0.0) {
            return None;
        }
    }
    let entries: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (0..m).map(move |j| (i, j))).filter(|&(i, j)| desc.allowed(i, j)).collect();
    let nx = entries.len();
    let mut nv = nx;
    let t_var: Vec<usize> = (0..n).map(|i| nx + i).collect();
    nv += n;
    // One r per allowed CES entry, in `entries` order.
    let mut r_var = vec![usize::MAX; nx];
    for (k, &(i, _)) in entries.iter().enumerate() {
        if !pm.oracle(i).is_linear() {
            r_var[k] = nv;
            nv += 1;
        }
    }
    let beta0 = nv;
    if matches!(goal, ConicGoal::Hinge(_)) {
        nv += n;
    }

    let (mut rows, mut cols, mut vals, mut b) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut row = 0;
    let mut push = |rows: &mut Vec<usize>, r: usize, c: usize, v: f64| {
        rows.push(r);
        cols.push(c);
        vals.push(v);
    };
    // Zero cone: unit column sums, then Σ_j r_ij = t_i for CES agents.
    for j in 0..m {
        for (k, &(_, jj)) in entries.iter().enumerate() {
            if jj == j {
                push(&mut rows, row, k, 1.0);
            }
        }
        b.push(1.0);
        row += 1;
    }
    let mut zeros = m;
    for i in (0..n).filter(|&i| !pm.oracle(i).is_linear()) {
        for (k, &(ii, _)) in entries.iter().enumerate() {
            if ii == i {
                push(&mut rows, row, r_var[k], 1.0);
            }
        }
        push(&mut rows, row, t_var[i], -1.0);
        b.push(0.0);
        row += 1;
        zeros += 1;
    }
    // Nonnegative cone: x >= 0, linear epigraphs, hinge slacks.
    let nonneg_start = row;
    for k in 0..nx {
        push(&mut rows, row, k, -1.0);
        b.push(0.0);
        row += 1;
    }
    for i in (0..n).filter(|&i| pm.oracle(i).is_linear()) {
        let c = pm.oracle(i).spec().coefficients();
        for (k, &(ii, j)) in entries.iter().enumerate() {
            if ii == i {
                push(&mut rows, row, k, c[j]);
            }
        }
        push(&mut rows, row, t_var[i], -1.0);
        b.push(0.0);
        row += 1;
    }
    if let ConicGoal::Hinge(q) = goal {
        for i in 0..n {
            push(&mut rows, row, t_var[i], 1.0);
            push(&mut rows, row, beta0 + i, -1.0);
            b.push(q[i]);
            row += 1;
            push(&mut rows, row, beta0 + i, -1.0);
            b.push(0.0);
            row += 1;
        }
    }
    let nonneg = row - nonneg_start;
    let mut cones: Vec<SupportedConeT<f64>> = vec![ZeroConeT(zeros), NonnegativeConeT(nonneg)];
    for (k, &(i, j)) in entries.iter().enumerate() {
        if let DisutilitySpec::Ces { c, rho } = pm.oracle(i).spec() {
            push(&mut rows, row, r_var[k], -1.0);
            push(&mut rows, row + 1, t_var[i], -1.0);
            push(&mut rows, row + 2, k, -c[j].powf(1.0 / rho));
            b.extend([0.0; 3]);
            row += 3;
            cones.push(PowerConeT(1.0 / rho));
        }
    }
    let a_mat = CscMatrix::new_from_triplets(row, nv, rows, cols, vals);
    let mut q_vec = vec![0.0; nv];
    let p_mat = match goal {
        ConicGoal::Hinge(_) => CscMatrix::new_from_triplets(nv, nv, (beta0..nv).collect(), (beta0..nv).collect(), vec![2.0; n]),
        ConicGoal::Weighted(a) => {
            for i in 0..n {
                q_vec[t_var[i]] = a[i];
            }
            CscMatrix::zeros((nv, nv))
        }
    };
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .tol_gap_abs(1e-13)
        .tol_gap_rel(1e-13)
        .tol_feas(1e-12)
        .max_iter(400)
        .build()
        .ok()?;
    let mut solver = DefaultSolver::new(&p_mat, &q_vec, &a_mat, &b, &cones, settings).ok()?;
    solver.solve();
    if !matches!(solver.solution.status, SolverStatus::Solved | SolverStatus::AlmostSolved) {
        debug!("conic solver status {:?}", solver.solution.status);
        return None;
    }
    let mut x = Allocation::zeros(n, m);
    for (k, &(i, j)) in entries.iter().enumerate() {
        x.set(i, j, solver.solution.x[k].max(0.0));
    }
    for j in 0..m {
        let s = x.column_sum(j);
        if s <= 0.0 {
            return None;
        }
        for i in 0..n {
            x.set(i, j, x.get(i, j) / s);
        }
    }
    Some(x)
}

/// Prices `c` (agents) and `p` (chores) consistent with a tight pattern,
/// scaled per connected component.
fn pattern_prices(coef: &[&[f64]], c0: &[f64], tight: &[bool], query: &[f64]) -> Option<(Vec<f64>, Vec<f64>)> {
    let (n, m) = (coef.len(), coef[0].len());
    let mut w = vec![f64::NAN; n];
    let mut pi = vec![f64::NAN; m];
    let mut c = vec![0.0; n];
    let mut p = vec![0.0; m];
    for root in 0..n {
        if !w[root].is_nan() {
            continue;
        }
        w[root] = 1.0;
        let (mut agents, mut chores) = (vec![root], Vec::new());
        let mut stack = vec![root];
        while let Some(i) = stack.pop() {
            for j in 0..m {
                if !tight[i * m + j] || !pi[j].is_nan() {
                    continue;
                }
                pi[j] = w[i] * coef[i][j];
                chores.push(j);
                for k in 0..n {
                    if !tight[k * m + j] || !w[k].is_nan() {
                        continue;
                    }
                    if coef[k][j] <= 0.0 {
                        return None;
                    }
                    w[k] = pi[j] / coef[k][j];
                    agents.push(k);
                    stack.push(k);
                }
            }
        }
        if agents.iter().any(|&i| c0[i] == 0.0) {
            continue;
        }
        let spend: f64 = chores.iter().map(|&j| pi[j]).sum();
        let base: f64 = agents.iter().map(|&i| w[i] * query[i]).sum();
        let norm: f64 = agents.iter().map(|&i| w[i] * w[i]).sum();
        let theta = 2.0 * (spend - base) / norm;
        if theta > 0.0 {
            for &i in &agents {
                c[i] = theta * w[i];
            }
            for &j in &chores {
                p[j] = theta * pi[j];
            }
        }
    }
    Some((c, p))
}

/// Allocation on `support` with `D_i x_i = q_i + c_i / 2` for priced agents
/// and `D_i x_i <= q_i` for the rest.
fn pattern_allocation(coef: &[&[f64]], support: &[bool], c: &[f64], query: &[f64]) -> Option<Allocation> {
    use minilp::{ComparisonOp, OptimizationDirection, Problem};
    let (n, m) = (coef.len(), coef[0].len());
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let mut vars = vec![None; n * m];
    for (k, v) in vars.iter_mut().enumerate() {
        if support[k] {
            *v = Some(lp.add_var(0.0, (0.0, f64::INFINITY)));
        }
    }
    for j in 0..m {
        let col: Vec<_> = (0..n).filter_map(|i| vars[i * m + j].map(|v| (v, 1.0))).collect();
        if col.is_empty() {
            return None;
        }
        lp.add_constraint(col.as_slice(), ComparisonOp::Eq, 1.0);
    }
    for i in 0..n {
        let row: Vec<_> = (0..m).filter_map(|j| vars[i * m + j].map(|v| (v, coef[i][j]))).collect();
        if c[i] > 0.0 {
            lp.add_constraint(row.as_slice(), ComparisonOp::Eq, query[i] + 0.5 * c[i]);
        } else if !row.is_empty() {
            lp.add_constraint(row.as_slice(), ComparisonOp::Le, query[i]);
        }
    }
    let sol = lp.solve().ok()?;
    let mut x = Allocation::zeros(n, m);
    for (k, v) in vars.iter().enumerate() {
        if let Some(v) = v {
            x.set(k / m, k % m, sol[*v].max(0.0));
        }
    }
    for j in 0..m {
        let s = x.column_sum(j);
        for i in 0..n {
            x.set(i, j, x.get(i, j) / s);
        }
    }
    Some(x)
}

/// Nearest point of `D + R^n_{>=0}` to `query`, for linear disutilities.
pub fn nearest_point_linear(
    pm: &ProfileMap,
    query: &[f64],
    opts: NearestOptions<'_>,
) -> Result<NearestPointResult> {
    if !pm.all_linear() {
        return Err(Error::Validation("nearest_point_linear needs linear disutilities".into()));
    }
    nearest_point(pm, query, opts)
}

/// Solves `min Σ_i max(0, D_i(z_i) - q_i)^2` over `F`, which has the same
/// value as the program over over-allocations with free slack `β`, then
/// returns a pre-image in `F'` with `D(z) >= query`.
pub fn nearest_point(
    pm: &ProfileMap,
    query: &[f64],
    opts: NearestOptions<'_>,
) -> Result<NearestPointResult> {
    let n = pm.n();
    if query.len() != n {
        return Err(Error::DimensionMismatch {
            expected: format!("{n} entries"),
            got: format!("{}", query.len()),
        });
    }
    let desc = Descent {
        pm,
        penalties: query.iter().map(|&q| Penalty::Hinge(q)).collect(),
        allowed: opts.allowed,
    };
    let x0 = match opts.warm {
        Some(w) => {
            w.check_dims(n, pm.m())?;
            feasible_warm(&desc, w)?
        }
        None => desc.start()?,
    };
    // The starting distance bounds the optimal one, so it sets the scale
    // when the query itself is tiny.
    let scale = query
        .iter()
        .fold(1e-300f64, |a, q| a.max(q.abs()))
        .max(desc.objective(&pm.eval(&x0)).sqrt());
    let tol = opts.tol * scale * scale;
    let floor = opts.feasible_below * opts.feasible_below;
    // For curved disutilities the descent converges slowly; start it from the
    // conic solution and only let it polish.
    let conic = if pm.all_linear() {
        None
    } else {
        conic_program(&desc, ConicGoal::Hinge(query))
            .filter(|x| desc.objective(&pm.eval(x)) <= desc.objective(&pm.eval(&x0)))
    };
    let out = match conic {
        Some(x) => desc.minimize_capped(x, tol, floor, POLISH_SWEEPS),
        None => desc.minimize_until(x0, tol, floor),
    };
    debug!(
        "nearest point: {} sweeps, objective {:e}, gap {:e}",
        out.sweeps, out.objective, out.gap
    );
    let mut out = out;
    if !out.converged && pm.all_linear() {
        let polished = polish_linear(&desc, query, &out.x, &out.values, out.objective + tol).or_else(|| {
            let x = conic_program(&desc, ConicGoal::Hinge(query))?;
            let values = pm.eval(&x);
            polish_linear(&desc, query, &x, &values, out.objective + tol)
                .or_else(|| (desc.gap(&x, &values) <= tol * 1e6).then_some(x))
        });
        if let Some(x) = polished {
            let values = pm.eval(&x);
            debug!("nearest point recovered after the descent stalled");
            out.objective = desc.objective(&values);
            out.gap = desc.gap(&x, &values);
            out.x = x;
            out.values = values;
            out.converged = true;
        }
    }
    if !out.converged {
        if out.gap > tol * 1e6 {
            return Err(Error::SolverStall {
                what: "nearest-point descent",
                iterations: out.sweeps,
                residual: out.gap,
            });
        }
        info!("nearest point stopped at gap {:e} (tol {:e})", out.gap, tol);
    }
    let mut x = out.x;
    let mut d = out.values;
    if opts.repair == Repair::RowScale {
        for i in 0..n {
            if d[i] < query[i] {
                raise_row(pm, &mut x, i, d[i], query[i], opts.allowed);
                d[i] = pm.oracle(i).eval(x.row(i));
            }
        }
    }
    let d_star: Vec<f64> = d.iter().zip(query).map(|(d, q)| d.max(*q)).collect();
    let distance = euclid(&d_star, query);
    Ok(NearestPointResult {
        x_star: x,
        d_star,
        distance,
        tolerance_used: tol,
    })
}

/// Rescales a warm start (possibly a repaired over-allocation) back onto the
/// column simplices, falling back to the uniform split for empty columns.
fn feasible_warm(desc: &Descent<'_>, w: &Allocation) -> Result<Allocation> {
    let (n, m) = (desc.pm.n(), desc.pm.m());
    let uniform = desc.start()?;
    let mut x = Allocation::zeros(n, m);
    for j in 0..m {
        let s: f64 = (0..n).filter(|&i| desc.allowed(i, j)).map(|i| w.get(i, j).max(0.0)).sum();
        for i in (0..n).filter(|&i| desc.allowed(i, j)) {
            let v = if s > 0.0 { w.get(i, j).max(0.0) / s } else { uniform.get(i, j) };
            x.set(i, j, v);
        }
    }
    Ok(x)
}

/// Scales row `i` so that its disutility becomes `target`.
fn raise_row(pm: &ProfileMap, x: &mut Allocation, i: usize, current: f64, target: f64, allowed: Option<&[bool]>) {
    let m = pm.m();
    if current > 0.0 {
        let r = target / current;
        for v in x.row_mut(i) {
            *v *= r;
        }
        return;
    }
    // Empty row: load the cheapest allowed chore.
    let o = pm.oracle(i);
    let mut best = (f64::INFINITY, 0usize);
    for j in 0..m {
        if allowed.is_some_and(|a| !a[i * m + j]) {
            continue;
        }
        let mut e = vec![0.0; m];
        e[j] = 1.0;
        let unit = o.eval(&e);
        if unit > 0.0 && unit < best.0 {
            best = (unit, j);
        }
    }
    if best.0.is_finite() {
        x.add(i, best.1, target / best.0);
    }
}

pub(crate) fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Nearest point for general disutilities at accuracy `eps1`.
///
/// Coordinates are snapped to multiples of `eps1 / 2^20`; columns left short
/// of one by the snapping are topped up so the result stays in `F'`.
pub fn nearest_point_general(
    pm: &ProfileMap,
    query: &[f64],
    eps1: f64,
    warm: Option<&Allocation>,
) -> Result<NearestPointResult> {
    let opts = NearestOptions {
        warm,
        ..Default::default()
    };
    let mut r = nearest_point(pm, query, opts)?;
    snap(&mut r.x_star, eps1 / f64::from(1u32 << 20));
    r.d_star = pm.eval(&r.x_star);
    r.distance = euclid(&r.d_star, query);
    Ok(r)
}

fn snap(x: &mut Allocation, h: f64) {
    let (n, m) = (x.n(), x.m());
    for i in 0..n {
        for v in x.row_mut(i) {
            *v = (*v / h).round() * h;
        }
    }
    for j in 0..m {
        let sum = x.column_sum(j);
        if sum < 1.0 {
            let top = (0..n)
                .max_by(|&a, &b| x.get(a, j).total_cmp(&x.get(b, j)))
                .unwrap_or(0);
            let k = ((1.0 - sum) / h).ceil();
            x.add(top, j, k * h);
            // Grid arithmetic can still land one ulp short.
            while x.column_sum(j) < 1.0 {
                let step = h.max(x.get(top, j) * f64::EPSILON);
                x.add(top, j, step);
            }
        }
    }
}

/// Adds `2 L eps1` to every entry and recomputes the profile.
pub fn pareto_lift(pm: &ProfileMap, r: &NearestPointResult, eps1: f64) -> NearestPointResult {
    let shift = 2.0 * pm.lipschitz() * eps1;
    let mut x = r.x_star.clone();
    for i in 0..x.n() {
        for v in x.row_mut(i) {
            *v += shift;
        }
    }
    let d_star = pm.eval(&x);
    NearestPointResult {
        distance: r.distance,
        tolerance_used: r.tolerance_used,
        x_star: x,
        d_star,
    }
}

/// A hyperplane `⟨a, y⟩ = offset`, supporting the feasible region up to `delta`.
#[derive(Debug, Clone, PartialEq)]
pub struct Hyperplane {
    pub a: Vec<f64>,
    pub offset: f64,
    pub delta: f64,
}

impl Hyperplane {
    pub fn is_strictly_positive(&self) -> bool {
        self.a.iter().all(|&v| v > 0.0)
    }
}

/// Normal `d_plus - query`, rescaled so that `⟨a, d_plus⟩ = Σ η` (`n` when unweighted).
pub fn supporting_hyperplane(
    query: &[f64],
    d_plus: &[f64],
    weights: Option<&[f64]>,
) -> Result<Hyperplane> {
    let diff: Vec<f64> = d_plus.iter().zip(query).map(|(p, q)| p - q).collect();
    let offset = weights.map_or(query.len() as f64, |w| w.iter().sum());
    let denom: f64 = diff.iter().zip(d_plus).map(|(a, d)| a * d).sum();
    if diff.iter().all(|&v| v <= 0.0) || !(denom > 0.0) {
        return Err(Error::DegenerateDirection);
    }
    let s = offset / denom;
    Ok(Hyperplane {
        a: diff.iter().map(|v| (v * s).max(0.0)).collect(),
        offset,
        delta: 0.0,
    })
}

/// `(η_i / a_i)_i`, the maximizer of `Σ η_i log d_i` on `⟨a, d⟩ = Σ η_i`.
pub fn hyperplane_max_nsw(h: &Hyperplane, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    h.a.iter()
        .enumerate()
        .map(|(i, &a)| {
            if a <= 0.0 {
                Err(Error::ZeroNormalEntry(i))
            } else {
                Ok(weights.map_or(1.0, |w| w[i]) / a)
            }
        })
        .collect()
}

/// Bounds on `min_{x∈F} ⟨a, D(x)⟩` as `(lower, upper, argmin)`.
///
/// Exact for linear disutilities (`Σ_j min_i a_i D_ij`); otherwise solved by
/// descent, with the lower bound taken as objective minus gap.
pub fn min_weighted_disutility(pm: &ProfileMap, a: &[f64]) -> Result<(f64, f64, Allocation)> {
    let (n, m) = (pm.n(), pm.m());
    if pm.all_linear() {
        let mut x = Allocation::zeros(n, m);
        let mut total = 0.0;
        for j in 0..m {
            let mut e = vec![0.0; m];
            e[j] = 1.0;
            let (best, i) = (0..n)
                .map(|i| (a[i] * pm.oracle(i).eval(&e), i))
                .min_by(|p, q| p.0.total_cmp(&q.0))
                .expect("n >= 1");
            x.set(i, j, 1.0);
            total += best;
        }
        return Ok((total, total, x));
    }
    let desc = Descent {
        pm,
        penalties: a.iter().map(|&v| Penalty::Linear(v)).collect(),
        allowed: None,
    };
    let scale = a.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    let out = match conic_program(&desc, ConicGoal::Weighted(a)) {
        Some(x) => desc.minimize_capped(x, 1e-12 * scale, f64::NEG_INFINITY, POLISH_SWEEPS),
        None => desc.minimize(desc.start()?, 1e-12 * scale),
    };
    Ok((out.objective - out.gap, out.objective, out.x))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instance::{DisutilitySpec, Instance};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pm_linear(rows: Vec<Vec<f64>>) -> ProfileMap {
        ProfileMap::from_instance(&Instance::linear(rows).unwrap())
    }

    fn pm_specs(specs: Vec<DisutilitySpec>) -> ProfileMap {
        ProfileMap::from_instance(&Instance::new(crate::instance::Mode::Chores, specs, None).unwrap())
    }

    #[test]
    fn nearest_point_linear_examples() {
        let pm = pm_linear(vec![vec![1.0, 2.0], vec![2.0, 1.0]]);
        let r = nearest_point_linear(&pm, &[0.5, 0.5], NearestOptions::default()).unwrap();
        assert!((r.d_star[0] - 1.0).abs() < 1e-9 && (r.d_star[1] - 1.0).abs() < 1e-9);
        assert!((r.distance - 0.5f64.sqrt()).abs() < 1e-9);
        assert!((r.x_star.get(0, 0) - 1.0).abs() < 1e-9 && (r.x_star.get(1, 1) - 1.0).abs() < 1e-9);

        let r = nearest_point_linear(&pm, &[1.5, 1.5], NearestOptions::default()).unwrap();
        assert!(r.distance <= 1e-6);

        let pm1 = pm_linear(vec![vec![2.0]]);
        let r = nearest_point_linear(&pm1, &[1.0], NearestOptions::default()).unwrap();
        assert_eq!(r.d_star, vec![2.0]);
        assert_eq!(r.x_star.get(0, 0), 1.0);
        assert!((r.distance - 1.0).abs() < 1e-12);
    }

    #[test]
    fn nearest_point_general_examples() {
        let pm = pm_specs(vec![DisutilitySpec::Ces {
            c: vec![1.0, 1.0],
            rho: 2.0,
        }]);
        // A lone agent must take every chore in full, so the only point is D(1, 1).
        let r = nearest_point_general(&pm, &[0.1], 1e-9, None).unwrap();
        assert!((r.d_star[0] - 2f64.sqrt()).abs() < 1e-9, "{:?}", r.d_star);
        assert_eq!(r.x_star.rows(), vec![vec![1.0, 1.0]]);

        // Two agents splitting one chore with disutility sqrt(2) z each: the
        // nearest point to a low symmetric query splits evenly.
        let pm = pm_specs(vec![
            DisutilitySpec::Ces { c: vec![2.0], rho: 2.0 },
            DisutilitySpec::Ces { c: vec![2.0], rho: 2.0 },
        ]);
        let r = nearest_point_general(&pm, &[0.1, 0.1], 1e-9, None).unwrap();
        assert!((r.x_star.get(0, 0) - 0.5).abs() < 1e-6, "{:?}", r.x_star);
        assert!((r.d_star[0] - 0.5f64.sqrt()).abs() < 1e-6);

        // A query above the full-bundle profile is already feasible.
        let pm2 = pm_specs(vec![
            DisutilitySpec::Ces {
                c: vec![1.0, 2.0],
                rho: 2.0,
            },
            DisutilitySpec::Linear(vec![1.0, 1.0]),
        ]);
        let q = [pm2.full_bundle(0) + 0.1, pm2.full_bundle(1) + 0.1];
        let r = nearest_point_general(&pm2, &q, 1e-9, None).unwrap();
        assert!(euclid(&r.d_star.iter().zip(&q).map(|(a, b)| a.max(*b)).collect::<Vec<_>>(), &q) <= 1e-9);
    }

    #[test]
    fn general_matches_linear_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let n = rng.gen_range(1..=4);
            let m = rng.gen_range(1..=4);
            let rows: Vec<Vec<f64>> = (0..n)
                .map(|_| (0..m).map(|_| rng.gen_range(1.0..10.0)).collect())
                .collect();
            let pm = pm_linear(rows);
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.05..2.0)).collect();
            let a = nearest_point_linear(&pm, &q, NearestOptions::default()).unwrap();
            let b = nearest_point_general(&pm, &q, 1e-9, None).unwrap();
            assert!((a.distance - b.distance).abs() <= 1e-6, "{} vs {}", a.distance, b.distance);
        }
    }

    #[test]
    fn pareto_lift_examples() {
        let pm = pm_linear(vec![vec![1.0, 1.0]]);
        let x = Allocation::from_rows(vec![vec![1.0, 0.0]]).unwrap();
        let r = NearestPointResult {
            d_star: pm.eval(&x),
            x_star: x,
            distance: 0.0,
            tolerance_used: 0.0,
        };
        assert_eq!(pareto_lift(&pm, &r, 0.0), r);
        let lifted = pareto_lift(&pm, &r, 1e-3);
        assert!((lifted.x_star.get(0, 0) - 1.002).abs() < 1e-15);
        assert!((lifted.x_star.get(0, 1) - 0.002).abs() < 1e-15);
        assert!((lifted.d_star[0] - 1.004).abs() < 1e-12);
    }

    #[test]
    fn pareto_lift_dominates_query() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let n = rng.gen_range(1..=3);
            let m = rng.gen_range(1..=3);
            let specs = (0..n)
                .map(|_| {
                    let c: Vec<f64> = (0..m).map(|_| rng.gen_range(0.5..4.0)).collect();
                    if rng.gen_bool(0.5) {
                        DisutilitySpec::Linear(c)
                    } else {
                        DisutilitySpec::Ces { c, rho: 2.0 }
                    }
                })
                .collect();
            let pm = pm_specs(specs);
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
            let eps1 = 1e-8;
            let r = nearest_point_general(&pm, &q, eps1, None).unwrap();
            let lifted = pareto_lift(&pm, &r, eps1);
            for i in 0..n {
                assert!(lifted.d_star[i] >= q[i], "{:?} vs {:?}", lifted.d_star, q);
            }
        }
    }

    #[test]
    fn supporting_hyperplane_examples() {
        let h = supporting_hyperplane(&[0.5, 0.5], &[1.0, 1.0], None).unwrap();
        assert_eq!(h.a, vec![1.0, 1.0]);
        assert_eq!(h.offset, 2.0);

        let h = supporting_hyperplane(&[1.0, 1.0], &[1.0, 3.0], None).unwrap();
        assert_eq!(h.a[0], 0.0);
        assert!(!h.is_strictly_positive());
        assert!(matches!(hyperplane_max_nsw(&h, None), Err(Error::ZeroNormalEntry(0))));

        let h = supporting_hyperplane(&[1.0], &[2.0], None).unwrap();
        assert_eq!(h.a, vec![0.5]);
        assert_eq!(h.offset, 1.0);

        assert!(matches!(
            supporting_hyperplane(&[1.0, 1.0], &[1.0, 1.0], None),
            Err(Error::DegenerateDirection)
        ));
    }

    #[test]
    fn hyperplane_max_nsw_examples() {
        let h = |a: Vec<f64>| Hyperplane {
            offset: 2.0,
            a,
            delta: 0.0,
        };
        assert_eq!(hyperplane_max_nsw(&h(vec![1.0, 1.0]), None).unwrap(), vec![1.0, 1.0]);
        assert_eq!(hyperplane_max_nsw(&h(vec![2.0, 0.5]), None).unwrap(), vec![0.5, 2.0]);
        let d = hyperplane_max_nsw(&h(vec![1.0, 1.0]), Some(&[2.0, 1.0])).unwrap();
        assert_eq!(d, vec![2.0, 1.0]);
    }

    fn random_feasible(rng: &mut ChaCha8Rng, n: usize, m: usize) -> Allocation {
        let mut x = Allocation::zeros(n, m);
        for j in 0..m {
            let w: Vec<f64> = (0..n).map(|_| -rng.gen::<f64>().max(1e-300).ln()).collect();
            let s: f64 = w.iter().sum();
            for i in 0..n {
                x.set(i, j, w[i] / s);
            }
        }
        x
    }

    fn instance_strategy() -> impl Strategy<Value = (Vec<Vec<f64>>, u64)> {
        (1usize..4, 1usize..4).prop_flat_map(|(n, m)| {
            (
                prop::collection::vec(prop::collection::vec(1.0f64..10.0, m), n),
                any::<u64>(),
            )
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn upward_closure_and_convexity((rows, seed) in instance_strategy()) {
            let pm = pm_linear(rows);
            let (n, m) = (pm.n(), pm.m());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let d1 = pm.eval(&random_feasible(&mut rng, n, m));
            let d2 = pm.eval(&random_feasible(&mut rng, n, m));
            let t: f64 = rng.gen();
            let mix: Vec<f64> = d1.iter().zip(&d2).map(|(a, b)| t * a + (1.0 - t) * b).collect();
            let up: Vec<f64> = d1.iter().map(|a| a + rng.gen::<f64>()).collect();
            for q in [mix, up] {
                let r = nearest_point_linear(&pm, &q, NearestOptions::default()).unwrap();
                prop_assert!(r.distance <= 1e-6 * (1.0 + q.iter().cloned().fold(0.0, f64::max)));
            }
        }

        #[test]
        fn nearest_point_dominates_and_supports((rows, seed) in instance_strategy()) {
            let pm = pm_linear(rows);
            let (n, m) = (pm.n(), pm.m());
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let q: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..0.5)).collect();
            let r = nearest_point_linear(&pm, &q, NearestOptions::default()).unwrap();
            for i in 0..n {
                prop_assert!(r.d_star[i] >= q[i]);
            }
            let dx = pm.eval(&r.x_star);
            for i in 0..n {
                prop_assert!((dx[i] - r.d_star[i]).abs() <= 1e-10 * (1.0 + r.d_star[i]));
            }
            if r.distance > 1e-9 {
                let h = supporting_hyperplane(&q, &r.d_star, None).unwrap();
                let tol: f64 = 1e-6;
                for _ in 0..200 {
                    let d = pm.eval(&random_feasible(&mut rng, n, m));
                    let v: f64 = h.a.iter().zip(&d).map(|(a, d)| a * d).sum();
                    prop_assert!(v >= h.offset - tol.max(10.0 * r.tolerance_used), "{} < {}", v, h.offset);
                }
            }
        }
    }
}
