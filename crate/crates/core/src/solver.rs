//! Exterior-point loops that search for approximate KKT points of the
//! Nash-welfare objective `L(d) = Σ η_i log d_i` over the upward closure of
//! the feasible disutility region.
//!
//! Each iteration projects the current infeasible profile `d^k` onto the
//! feasible region, takes the projection direction as a supporting normal
//! `a`, and jumps to the welfare maximizer `η / a` on that hyperplane.

use std::path::Path;

use log::{debug, info};
use rand::{Rng, SeedableRng};
use serde::{Deserialize, Serialize};

use crate::disutility::ProfileMap;
use crate::error::{Error, Result};
use crate::geometry::{
    self, euclid, hyperplane_max_nsw, nearest_point_general, pareto_lift, supporting_hyperplane,
    NearestOptions, Repair, QP_TOL,
};
use crate::instance::{Allocation, Instance};

/// Significant digits kept when rounding an iterate down.
pub const ROUND_DIGITS: i32 = 12;
/// Relative distance under which a linear iterate counts as feasible.
pub const DEGENERATE_REL: f64 = 1e-6;
/// Smallest default `eps1 · L` for the general loop, so the Pareto lift
/// `2 L eps1` stays negligible however large `L` is.
pub const EPS1_FLOOR: f64 = 1e-11;
/// Default cap on `eps2` relative to `eps3`. A small `eps2` keeps the loop
/// off the early branch, whose rescaled allocation under-fills the chores.
pub const EPS2_REL: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct SolverParams {
    pub epsilon: f64,
    pub eps1: Option<f64>,
    pub eps2: Option<f64>,
    pub eps3: Option<f64>,
    pub max_iters: usize,
    pub weights: Option<Vec<f64>>,
    pub trace: bool,
    /// Gap tolerance of the nearest-point programs, relative to the query scale.
    pub qp_tol: f64,
}

impl Default for SolverParams {
    fn default() -> Self {
        SolverParams {
            epsilon: 0.05,
            eps1: None,
            eps2: None,
            eps3: None,
            max_iters: 1_000_000,
            weights: None,
            trace: true,
            qp_tol: QP_TOL,
        }
    }
}

impl SolverParams {
    pub fn with_epsilon(epsilon: f64) -> Self {
        SolverParams {
            epsilon,
            ..Default::default()
        }
    }

    fn weights_for(&self, n: usize) -> Result<Vec<f64>> {
        match &self.weights {
            Some(w) if w.len() != n => Err(Error::DimensionMismatch {
                expected: format!("{n} weights"),
                got: format!("{}", w.len()),
            }),
            Some(w) => Ok(w.clone()),
            None => Ok(vec![1.0; n]),
        }
    }

    /// Fills in the general-mode error split for an `n x m` instance with
    /// Lipschitz constant `l`.
    pub fn resolve(&self, n: usize, m: usize, l: f64) -> Result<EpsSplit> {
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(Error::Validation(format!("epsilon {} not in (0, 1)", self.epsilon)));
        }
        let (nf, mf) = (n as f64, m as f64);
        let eps3 = self.eps3.unwrap_or(self.epsilon);
        let eps1 = self.eps1.unwrap_or_else(|| {
            (self.epsilon * 1e-6 / (nf.powi(4) * mf.powi(4) * l.powi(6))).max(EPS1_FLOOR / l)
        });
        let eps2 = self.eps2.unwrap_or_else(|| {
            (nf.powi(4) * mf.powi(3) * l.powi(3) * eps1.powf(1.0 / 6.0)).min(eps3 * EPS2_REL)
        });
        for (name, v) in [("eps1", eps1), ("eps2", eps2), ("eps3", eps3)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Validation(format!("{name} = {v} must be positive")));
            }
        }
        Ok(EpsSplit { eps1, eps2, eps3 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsSplit {
    pub eps1: f64,
    pub eps2: f64,
    pub eps3: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Regular step to the next hyperplane maximizer.
    Step,
    /// Stopped because consecutive profiles are close in log distance.
    Stop,
    /// Stopped because the projection barely moved the iterate.
    Early,
    /// The iterate was already feasible.
    Degenerate,
}

/// One line of the iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub potential: f64,
    pub dist_to_feasible: f64,
    pub logd_step: f64,
    pub branch: Branch,
}

pub fn write_trace(path: &Path, rows: &[TraceRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    if rows.is_empty() {
        w.write_record(["iter", "potential", "dist_to_feasible", "logd_step", "branch"])
            .map_err(csv_err)?;
    }
    for r in rows {
        w.serialize(r).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    r.deserialize().map(|row| row.map_err(csv_err)).collect()
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse(format!("{other:?}")),
    }
}

/// Worst-case error bounds from the convergence analysis, kept next to the
/// measured values.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnalyticBounds {
    pub gamma: f64,
    pub lambda: f64,
    pub delta: f64,
}

/// An approximate KKT point `(a, d, x)` with measured `(γ, λ, δ)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCertificate {
    pub a: Vec<f64>,
    pub d: Vec<f64>,
    pub x: Allocation,
    /// `max_i max(a_i d_i / η_i, η_i / (a_i d_i))`.
    pub gamma: f64,
    /// `max_j max(s_j, 1 / s_j)` over column sums `s_j`.
    pub lambda: f64,
    /// `max(0, Σ η - min_{x∈F} ⟨a, D(x)⟩)`, a lower-bound-safe estimate.
    pub delta: f64,
    pub iterations: usize,
    /// `L(d^0), ..., L(d^K), L(d*)`: the iterates, then the returned profile.
    pub potential_trace: Vec<f64>,
    pub trace: Vec<TraceRow>,
    pub weights: Vec<f64>,
    pub bounds: AnalyticBounds,
    pub early_branch: bool,
}

impl KktCertificate {
    fn measure(
        pm: &ProfileMap,
        a: Vec<f64>,
        d: Vec<f64>,
        x: Allocation,
        weights: Vec<f64>,
    ) -> Result<Self> {
        let gamma = a
            .iter()
            .zip(&d)
            .zip(&weights)
            .map(|((a, d), w)| {
                let r = a * d / w;
                r.max(1.0 / r)
            })
            .fold(1.0, f64::max);
        let lambda = column_lambda(&x);
        let offset: f64 = weights.iter().sum();
        let level: f64 = a.iter().zip(&d).map(|(a, d)| a * d).sum();
        let (lower, _, _) = geometry::min_weighted_disutility(pm, &a)?;
        let delta = (offset.max(level) - lower).max(0.0);
        Ok(KktCertificate {
            a,
            d,
            x,
            gamma,
            lambda,
            delta,
            iterations: 0,
            potential_trace: Vec::new(),
            trace: Vec::new(),
            weights,
            bounds: AnalyticBounds {
                gamma: f64::NAN,
                lambda: 1.0,
                delta: 0.0,
            },
            early_branch: false,
        })
    }

    /// `max(3(γ-1) + 5δ, λ-1)`, the equilibrium error this certificate
    /// converts to.
    pub fn epsilon_eff(&self) -> f64 {
        crate::equilibrium::general_epsilon(self.gamma, self.lambda, self.delta)
    }

    /// Minimum of `⟨a, D(x)⟩ - (Σ η - δ_test)` over `samples` random
    /// allocations with Dirichlet(1) columns; nonnegative means the sampled
    /// supporting test passed.
    pub fn support_margin(&self, pm: &ProfileMap, samples: usize, delta_test: f64, seed: u64) -> f64 {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let offset: f64 = self.weights.iter().sum();
        let mut worst = f64::INFINITY;
        for _ in 0..samples {
            let x = random_allocation(&mut rng, pm.n(), pm.m());
            let v: f64 = self.a.iter().zip(pm.eval(&x)).map(|(a, d)| a * d).sum();
            worst = worst.min(v - (offset - delta_test));
        }
        worst
    }
}

/// Allocation whose columns are independent uniform draws from the simplex.
pub fn random_allocation<R: Rng>(rng: &mut R, n: usize, m: usize) -> Allocation {
    let mut x = Allocation::zeros(n, m);
    for j in 0..m {
        let w: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
        let s: f64 = w.iter().sum();
        for (i, wi) in w.iter().enumerate() {
            x.set(i, j, wi / s);
        }
    }
    x
}

fn column_lambda(x: &Allocation) -> f64 {
    x.column_sums()
        .iter()
        .map(|&s| if s > 0.0 { s.max(1.0 / s) } else { f64::INFINITY })
        .fold(1.0, f64::max)
}

/// `Σ η_i log d_i`.
pub fn log_nsw(d: &[f64], weights: Option<&[f64]>) -> Result<f64> {
    let mut total = 0.0;
    for (i, &v) in d.iter().enumerate() {
        if !(v > 0.0) {
            return Err(Error::NonpositiveEntry { index: i, value: v });
        }
        total += weights.map_or(1.0, |w| w[i]) * v.ln();
    }
    Ok(total)
}

/// `Σ_i |log(x_i / y_i)|`.
pub fn log_dist(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::DimensionMismatch {
            expected: format!("{}", x.len()),
            got: format!("{}", y.len()),
        });
    }
    let mut total = 0.0;
    for (i, (&a, &b)) in x.iter().zip(y).enumerate() {
        for v in [a, b] {
            if !(v > 0.0) {
                return Err(Error::NonpositiveEntry { index: i, value: v });
            }
        }
        total += (a / b).ln().abs();
    }
    Ok(total)
}

/// Rounds a positive value down to `digits` significant decimal digits.
pub fn round_down(v: f64, digits: i32) -> f64 {
    if !(v > 0.0) || !v.is_finite() {
        return v;
    }
    let e = v.log10().floor() as i32;
    let scale = 10f64.powi(digits - 1 - e);
    let r = (v * scale).floor() / scale;
    if r > 0.0 {
        r.min(v)
    } else {
        v
    }
}

fn round_profile(d: &[f64]) -> Vec<f64> {
    d.iter().map(|&v| round_down(v, ROUND_DIGITS)).collect()
}

fn min_max_coefficient(inst: &Instance) -> Result<(f64, f64)> {
    let rows = inst
        .linear_matrix()
        .ok_or_else(|| Error::Validation("linear loop needs linear disutilities".into()))?;
    let (lo, hi) = rows
        .iter()
        .flatten()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(lo > 0.0) {
        return Err(Error::Validation(
            "linear loop needs strictly positive coefficients; preprocess the instance first".into(),
        ));
    }
    Ok((lo, hi))
}

/// `(m · min D_ij / (2n)) · 1`, strictly below every feasible profile.
pub fn initial_point_linear(inst: &Instance) -> Result<Vec<f64>> {
    let (lo, _) = min_max_coefficient(inst)?;
    Ok(vec![inst.m as f64 * lo / (2.0 * inst.n as f64); inst.n])
}

/// Starting allocation for the general loop: `1 / (2 n m L^2)` in every entry,
/// so that each `d_i <= L ‖x_i‖ <= 1 / (2nL)` while staying strictly positive.
pub fn initial_allocation_general(pm: &ProfileMap) -> Allocation {
    let (n, m) = (pm.n() as f64, pm.m() as f64);
    let l = pm.lipschitz();
    Allocation::filled(pm.n(), pm.m(), 1.0 / (2.0 * n * m * l * l))
}

pub fn initial_point_general(pm: &ProfileMap) -> Vec<f64> {
    pm.eval(&initial_allocation_general(pm))
}

/// The single-entry start: `1 / (2nL^2)` at position `(0, 0)`, zero elsewhere.
/// Agents other than the first get a zero profile.
pub fn initial_allocation_single_entry(pm: &ProfileMap) -> Allocation {
    let l = pm.lipschitz();
    let mut x = Allocation::zeros(pm.n(), pm.m());
    x.set(0, 0, 1.0 / (2.0 * pm.n() as f64 * l * l));
    x
}

/// Worst-case iteration count of the linear loop:
/// `(Σ_i η_i (log(m maxD) - log d0_i)) / (ε^2 min η / (16 n^2))`.
pub fn iteration_bound_linear(inst: &Instance, epsilon: f64, weights: Option<&[f64]>) -> Result<f64> {
    let (lo, hi) = min_max_coefficient(inst)?;
    let (n, m) = (inst.n as f64, inst.m as f64);
    let ones = vec![1.0; inst.n];
    let w = weights.unwrap_or(&ones);
    let min_w = w.iter().cloned().fold(f64::INFINITY, f64::min);
    let span: f64 = w
        .iter()
        .map(|wi| wi * ((m * hi).ln() - (m * lo / (2.0 * n)).ln()))
        .sum();
    Ok(16.0 * n * n / (epsilon * epsilon * min_w) * span)
}

/// Options for the linear loop beyond [`SolverParams`].
#[derive(Debug, Clone, Default)]
pub struct LinearLoop<'a> {
    pub start: Option<Vec<f64>>,
    pub allowed: Option<&'a [bool]>,
    pub signed: bool,
}

/// Algorithm for linear disutilities: returns a `(1+ε)`-KKT certificate with
/// `λ = 1` and `δ` at QP tolerance.
pub fn solve_kkt_linear(inst: &Instance, params: &SolverParams) -> Result<KktCertificate> {
    let d0 = initial_point_linear(inst)?;
    let pm = ProfileMap::from_instance(inst);
    run_linear(
        &pm,
        params,
        LinearLoop {
            start: Some(d0),
            ..Default::default()
        },
    )
}

pub(crate) fn run_linear(pm: &ProfileMap, params: &SolverParams, opts: LinearLoop<'_>) -> Result<KktCertificate> {
    let n = pm.n();
    let eps = params.epsilon;
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Validation(format!("epsilon {eps} not in (0, 1)")));
    }
    let weights = params.weights_for(n)?;
    let w = Some(weights.as_slice());
    let mut d = round_profile(&opts.start.ok_or_else(|| Error::Validation("missing start".into()))?);
    let mut potentials = vec![log_nsw(&d, w)?];
    let mut trace = Vec::new();
    let mut warm: Option<Allocation> = None;
    let mut prev_a: Option<Vec<f64>> = None;
    let repair = if opts.signed { Repair::MaxOnly } else { Repair::RowScale };
    for k in 1..=params.max_iters {
        // Below this distance the computed direction is QP noise and `d` is
        // feasible for all practical purposes.
        let scale = d.iter().fold(0.0f64, |s, v| s.max(v.abs()));
        let feasible_below = DEGENERATE_REL * scale;
        let np = geometry::nearest_point(
            pm,
            &d,
            NearestOptions {
                tol: params.qp_tol,
                warm: warm.as_ref(),
                allowed: opts.allowed,
                repair,
                feasible_below,
            },
        )?;
        let hyper = if np.distance <= feasible_below {
            Err(Error::DegenerateDirection)
        } else {
            supporting_hyperplane(&d, &np.d_star, w)
        };
        let h = match hyper {
            Ok(h) => h,
            Err(Error::DegenerateDirection) => {
                // The iterate is feasible: with `d = η / a_prev` it is an exact KKT point.
                let a = prev_a.ok_or(Error::DegenerateDirection)?;
                debug!("linear loop: feasible iterate at k={k}");
                potentials.push(log_nsw(&np.d_star, w)?);
                trace.push(TraceRow {
                    iter: k,
                    potential: log_nsw(&d, w)?,
                    dist_to_feasible: np.distance,
                    logd_step: 0.0,
                    branch: Branch::Degenerate,
                });
                return finish_linear(pm, a, np.d_star, np.x_star, weights, k, potentials, trace, eps, params.trace);
            }
            Err(e) => return Err(e),
        };
        let d_next = round_profile(&hyperplane_max_nsw(&h, w)?);
        let step = log_dist(&d_next, &np.d_star)?;
        let stop = step < eps;
        trace.push(TraceRow {
            iter: k,
            potential: log_nsw(&d, w)?,
            dist_to_feasible: np.distance,
            logd_step: step,
            branch: if stop { Branch::Stop } else { Branch::Step },
        });
        if stop {
            potentials.push(log_nsw(&np.d_star, w)?);
            return finish_linear(pm, h.a, np.d_star, np.x_star, weights, k, potentials, trace, eps, params.trace);
        }
        potentials.push(log_nsw(&d_next, w)?);
        warm = Some(np.x_star);
        prev_a = Some(h.a);
        d = d_next;
    }
    Err(Error::IterationCapExceeded {
        cap: params.max_iters,
        trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_linear(
    pm: &ProfileMap,
    a: Vec<f64>,
    d: Vec<f64>,
    x: Allocation,
    weights: Vec<f64>,
    iterations: usize,
    potentials: Vec<f64>,
    trace: Vec<TraceRow>,
    eps: f64,
    keep_trace: bool,
) -> Result<KktCertificate> {
    let mut cert = KktCertificate::measure(pm, a, d, x, weights)?;
    cert.iterations = iterations;
    cert.potential_trace = potentials;
    if keep_trace {
        cert.trace = trace;
    }
    cert.bounds = AnalyticBounds {
        gamma: 1.0 + eps,
        lambda: 1.0,
        delta: 0.0,
    };
    info!(
        "linear loop: {} iterations, gamma {:.6}, delta {:e}",
        cert.iterations, cert.gamma, cert.delta
    );
    Ok(cert)
}

/// Algorithm for general 1-homogeneous disutilities: returns a
/// `(λ, γ, δ)`-KKT certificate.
pub fn solve_kkt_general(pm: &ProfileMap, params: &SolverParams) -> Result<KktCertificate> {
    solve_kkt_general_from(pm, params, initial_allocation_general(pm))
}

pub fn solve_kkt_general_from(pm: &ProfileMap, params: &SolverParams, x0: Allocation) -> Result<KktCertificate> {
    let (n, m) = (pm.n(), pm.m());
    let l = pm.lipschitz();
    let split = params.resolve(n, m, l)?;
    debug!("general loop: L = {l:e}, split {split:?}");
    let weights = params.weights_for(n)?;
    let w = Some(weights.as_slice());
    let mut d = round_profile(&pm.eval(&x0));
    let mut potentials = vec![log_nsw(&d, w)?];
    let mut trace = Vec::new();
    let mut warm: Option<Allocation> = None;
    let mut prev_a: Option<Vec<f64>> = None;
    for k in 1..=params.max_iters {
        let r = nearest_point_general(pm, &d, split.eps1, warm.as_ref())?;
        let plus = pareto_lift(pm, &r, split.eps1);
        let moved = euclid(&plus.d_star, &d);
        if moved <= split.eps2 {
            let a = match prev_a {
                Some(a) if k > 1 => a,
                _ => return Err(Error::EarlyBranchAtStart),
            };
            let mut y = plus.x_star.clone();
            for i in 0..n {
                let s = d[i] / plus.d_star[i];
                for v in y.row_mut(i) {
                    *v *= s;
                }
            }
            let on_plane: f64 = a.iter().zip(&d).map(|(a, d)| a * d).sum();
            let offset: f64 = weights.iter().sum();
            debug_assert!((on_plane - offset).abs() <= 1e-8 * offset, "{on_plane} vs {offset}");
            trace.push(TraceRow {
                iter: k,
                potential: log_nsw(&d, w)?,
                dist_to_feasible: moved,
                logd_step: 0.0,
                branch: Branch::Early,
            });
            let dy = pm.eval(&y);
            potentials.push(log_nsw(&dy, w)?);
            // The stale normal can support F poorly; the log-gradient at the
            // returned point is the other natural candidate. Keep whichever
            // measures better.
            let grad: Vec<f64> = weights.iter().zip(&dy).map(|(w, d)| w / d).collect();
            let mut best = finish_general(pm, a, dy.clone(), y.clone(), weights.clone(), k, potentials.clone(), trace.clone(), split, params.trace, true)?;
            if dy.iter().all(|&v| v > 0.0) {
                let alt = finish_general(pm, grad, dy, y, weights, k, potentials, trace, split, params.trace, true)?;
                if alt.epsilon_eff() < best.epsilon_eff() {
                    debug!("early branch: log-gradient normal measures better");
                    best = alt;
                }
            }
            return Ok(best);
        }
        let h = supporting_hyperplane(&d, &plus.d_star, w)?;
        let d_next = round_profile(&hyperplane_max_nsw(&h, w)?);
        let step = log_dist(&d_next, &plus.d_star)?;
        let stop = step < split.eps3;
        trace.push(TraceRow {
            iter: k,
            potential: log_nsw(&d, w)?,
            dist_to_feasible: moved,
            logd_step: step,
            branch: if stop { Branch::Stop } else { Branch::Step },
        });
        if stop {
            potentials.push(log_nsw(&plus.d_star, w)?);
            return finish_general(pm, h.a, plus.d_star, plus.x_star, weights, k, potentials, trace, split, params.trace, false);
        }
        potentials.push(log_nsw(&d_next, w)?);
        warm = Some(r.x_star);
        prev_a = Some(h.a);
        d = d_next;
    }
    Err(Error::IterationCapExceeded {
        cap: params.max_iters,
        trace,
    })
}

#[allow(clippy::too_many_arguments)]
fn finish_general(
    pm: &ProfileMap,
    a: Vec<f64>,
    d: Vec<f64>,
    x: Allocation,
    weights: Vec<f64>,
    iterations: usize,
    potentials: Vec<f64>,
    trace: Vec<TraceRow>,
    split: EpsSplit,
    keep_trace: bool,
    early: bool,
) -> Result<KktCertificate> {
    let mut cert = KktCertificate::measure(pm, a, d, x, weights)?;
    cert.iterations = iterations;
    cert.potential_trace = potentials;
    cert.early_branch = early;
    if keep_trace {
        cert.trace = trace;
    }
    let (n, m, l) = (pm.n() as f64, pm.m() as f64, pm.lipschitz());
    let alpha = 48.0 * n.powi(7) * m * l.powi(6) * split.eps1 / split.eps2.powi(3);
    cert.bounds = AnalyticBounds {
        gamma: 1.0 + split.eps3,
        lambda: 1.0 + 3.0 * m * n * n * l.powi(3) * (alpha + split.eps2),
        delta: 9.0 * n.powi(5) * m * l.powi(3) * split.eps1 / (split.eps2 * split.eps2),
    };
    info!(
        "general loop: {} iterations, gamma {:.6}, lambda {:.6}, delta {:e}",
        cert.iterations, cert.gamma, cert.lambda, cert.delta
    );
    Ok(cert)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ProgressReport {
    pub bound: f64,
    pub min_gain: f64,
    /// Indices `k` where `L(d^{k+1}) - L(d^k)` fell short of the bound.
    pub violations: Vec<usize>,
    /// Indices `k` where the trace decreased.
    pub monotonicity_violations: Vec<usize>,
}

impl ProgressReport {
    pub fn pass(&self) -> bool {
        self.violations.is_empty() && self.monotonicity_violations.is_empty()
    }
}

/// Checks that every non-terminal step of a potential trace gained at least
/// `ε^2 min η / (16 n^2)` and that the trace never decreases.
pub fn progress_check(trace: &[f64], epsilon: f64, n: usize, weights: Option<&[f64]>) -> ProgressReport {
    let min_w = weights.map_or(1.0, |w| w.iter().cloned().fold(f64::INFINITY, f64::min));
    let bound = epsilon * epsilon * min_w / (16.0 * (n * n) as f64);
    let mut violations = Vec::new();
    let mut monotonicity_violations = Vec::new();
    let mut min_gain = f64::INFINITY;
    let pairs = trace.len().saturating_sub(1);
    for k in 0..pairs {
        let gain = trace[k + 1] - trace[k];
        if gain < -1e-12 * (1.0 + trace[k].abs()) {
            monotonicity_violations.push(k);
        }
        // The last pair compares the final iterate with the returned profile.
        if k + 1 < pairs {
            min_gain = min_gain.min(gain);
            if gain < bound - 1e-12 {
                violations.push(k);
            }
        }
    }
    ProgressReport {
        bound,
        min_gain,
        violations,
        monotonicity_violations,
    }
}
