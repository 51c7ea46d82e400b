//! Brute-force validators for tiny instances. Slow and simple on purpose:
//! nothing here shares code with the solver beyond disutility evaluation.

use crate::disutility::ProfileMap;
use crate::error::{Error, Result};
use crate::instance::{Allocation, Instance, Residuals};

/// Upper limit on enumerated grid points.
pub const GRID_CAP: f64 = 1e8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GridSpec {
    /// Grid steps per unit.
    pub resolution: u32,
    pub n: usize,
    pub m: usize,
}

impl GridSpec {
    pub fn new(resolution: u32, n: usize, m: usize) -> Result<Self> {
        if resolution < 2 {
            return Err(Error::Validation(format!("grid resolution {resolution} < 2")));
        }
        if n == 0 || m == 0 {
            return Err(Error::UnsupportedDims(format!("{n} x {m}")));
        }
        Ok(GridSpec { resolution, n, m })
    }

    /// Number of allocations when each column ranges over the grid simplex.
    pub fn allocation_count(&self) -> f64 {
        binomial(self.resolution as usize + self.n - 1, self.n - 1).powi(self.m as i32)
    }

    fn guard(&self, points: f64) -> Result<()> {
        if points > GRID_CAP {
            Err(Error::GridTooLarge {
                points,
                cap: GRID_CAP,
            })
        } else {
            Ok(())
        }
    }
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// All ways to write `total` as an ordered sum of `parts` nonnegative integers.
fn compositions(total: u32, parts: usize) -> Vec<Vec<u32>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    let mut out = Vec::new();
    for first in 0..=total {
        for mut rest in compositions(total - first, parts - 1) {
            rest.insert(0, first);
            out.push(rest);
        }
    }
    out
}

/// Visits every allocation whose columns lie on the grid simplex.
fn for_each_allocation(g: &GridSpec, mut visit: impl FnMut(&Allocation)) {
    let cols = compositions(g.resolution, g.n);
    let r = g.resolution as f64;
    let mut idx = vec![0usize; g.m];
    let mut x = Allocation::zeros(g.n, g.m);
    let set_col = |x: &mut Allocation, j: usize, c: &[u32]| {
        for (i, &k) in c.iter().enumerate() {
            x.set(i, j, k as f64 / r);
        }
    };
    for j in 0..g.m {
        set_col(&mut x, j, &cols[0]);
    }
    loop {
        visit(&x);
        let mut j = 0;
        loop {
            if j == g.m {
                return;
            }
            idx[j] += 1;
            if idx[j] < cols.len() {
                set_col(&mut x, j, &cols[idx[j]]);
                break;
            }
            idx[j] = 0;
            set_col(&mut x, j, &cols[0]);
            j += 1;
        }
    }
}

/// Distance from `query` to the upward closure of the grid profiles:
/// `min_x ‖(D(x) − query)₊‖₂` over grid allocations, with its argmin.
pub fn grid_nearest_point(pm: &ProfileMap, query: &[f64], g: &GridSpec) -> Result<(f64, Allocation)> {
    if pm.n() != g.n || pm.m() != g.m || query.len() != g.n {
        return Err(Error::DimensionMismatch {
            expected: format!("{} x {} grid, {} query entries", pm.n(), pm.m(), pm.n()),
            got: format!("{} x {} grid, {} query entries", g.n, g.m, query.len()),
        });
    }
    g.guard(g.allocation_count())?;
    let mut best = (f64::INFINITY, Allocation::zeros(g.n, g.m));
    for_each_allocation(g, |x| {
        let d2: f64 = pm
            .eval(x)
            .iter()
            .zip(query)
            .map(|(d, q)| (d - q).max(0.0).powi(2))
            .sum();
        if d2 < best.0 {
            best = (d2, x.clone());
        }
    });
    Ok((best.0.sqrt(), best.1))
}

/// A boundary profile that passes the approximate KKT test.
#[derive(Debug, Clone, PartialEq)]
pub struct KktCandidate {
    pub d: Vec<f64>,
    /// Supporting normal scaled so that `⟨a, d⟩ = 2`.
    pub a: Vec<f64>,
    pub x: Allocation,
}

/// Scans the lower boundary of the profile region of a two-agent linear
/// instance for points with a supporting normal `a` such that
/// `γ⁻¹ ≤ a_i d_i ≤ γ`.
///
/// Supporting slopes at a boundary point are read off its neighbours on the
/// lower convex hull of the grid profiles.
pub fn grid_kkt_scan(inst: &Instance, g: &GridSpec, gamma: f64) -> Result<Vec<KktCandidate>> {
    if inst.n != 2 || inst.m > 3 || g.n != 2 || g.m != inst.m {
        return Err(Error::UnsupportedDims(format!(
            "scan needs n = 2 and m <= 3, got {} x {}",
            inst.n, inst.m
        )));
    }
    if !inst.all_linear() {
        return Err(Error::Validation("scan needs linear disutilities".into()));
    }
    g.guard(g.allocation_count())?;
    let pm = ProfileMap::from_instance(inst);
    let mut pts: Vec<(f64, f64, Allocation)> = Vec::new();
    for_each_allocation(g, |x| {
        let d = pm.eval(x);
        pts.push((d[0], d[1], x.clone()));
    });
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    // Lower convex hull, keeping collinear points so flat stretches survive.
    let mut hull: Vec<usize> = Vec::new();
    for k in 0..pts.len() {
        if let Some(&last) = hull.last() {
            if pts[k].0 - pts[last].0 <= 1e-9 * (1.0 + pts[k].0.abs()) {
                continue;
            }
        }
        while hull.len() >= 2 {
            let (o, a) = (hull[hull.len() - 2], hull[hull.len() - 1]);
            let cross = (pts[a].0 - pts[o].0) * (pts[k].1 - pts[o].1) - (pts[a].1 - pts[o].1) * (pts[k].0 - pts[o].0);
            let scale = 1e-12 * (1.0 + pts[k].0.abs() + pts[k].1.abs()).powi(2);
            if cross < -scale {
                hull.pop();
            } else {
                break;
            }
        }
        hull.push(k);
    }
    // Only the part with negative slope bounds the region from below-left.
    let end = hull
        .iter()
        .enumerate()
        .min_by(|a, b| pts[*a.1].1.total_cmp(&pts[*b.1].1).then(b.0.cmp(&a.0)))
        .map_or(0, |(k, _)| k);
    let hull = &hull[..=end];

    let slope = |p: usize, q: usize| -(pts[q].1 - pts[p].1) / (pts[q].0 - pts[p].0);
    let mut out = Vec::new();
    for (k, &h) in hull.iter().enumerate() {
        let (d1, d2) = (pts[h].0, pts[h].1);
        if d1 <= 0.0 || d2 <= 0.0 {
            continue;
        }
        // Normals (t, 1) with t between the adjacent edge slopes.
        let t_hi = if k > 0 { slope(hull[k - 1], h) } else { f64::INFINITY };
        let t_lo = if k + 1 < hull.len() { slope(h, hull[k + 1]) } else { 0.0 };
        let t = (d2 / d1).clamp(t_lo.min(t_hi), t_hi.max(t_lo));
        if !t.is_finite() {
            continue;
        }
        let norm = 2.0 / (t * d1 + d2);
        let a = vec![t * norm, norm];
        let ok = [a[0] * d1, a[1] * d2].iter().all(|&v| v >= 1.0 / gamma && v <= gamma);
        if ok {
            out.push(KktCandidate {
                d: vec![d1, d2],
                a,
                x: pts[h].2.clone(),
            });
        }
    }
    Ok(out)
}

/// Groups candidates, ordered by `d_1`, into runs whose consecutive profiles
/// are within `gap` of each other.
pub fn cluster_candidates(cands: &[KktCandidate], gap: f64) -> Vec<Vec<KktCandidate>> {
    let mut sorted = cands.to_vec();
    sorted.sort_by(|a, b| a.d[0].total_cmp(&b.d[0]));
    let mut out: Vec<Vec<KktCandidate>> = Vec::new();
    for c in sorted {
        let join = out.last().and_then(|cl| cl.last()).is_some_and(|prev| {
            let dist: f64 = prev.d.iter().zip(&c.d).map(|(a, b)| (a - b).powi(2)).sum();
            dist.sqrt() <= gap
        });
        if join {
            out.last_mut().expect("nonempty").push(c);
        } else {
            out.push(vec![c]);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveReport {
    pub pass: bool,
    pub residuals: Residuals,
    /// Grid minimum of `D_i(y)` over bundles earning at least `⟨x_i, p⟩`.
    pub optimal: Vec<f64>,
}

/// Checks the three ε-CEEI conditions with condition (2) decided by
/// enumerating budget-exhausting bundles `y_j = w_j e_i / p_j` for spending
/// shares `w` on the grid simplex.
pub fn exhaustive_verify(inst: &Instance, x: &Allocation, p: &[f64], epsilon: f64, g: &GridSpec) -> Result<ExhaustiveReport> {
    let (n, m) = (inst.n, inst.m);
    x.check_dims(n, m)?;
    if p.len() != m || g.m != m {
        return Err(Error::DimensionMismatch {
            expected: format!("{m} prices"),
            got: format!("{}", p.len()),
        });
    }
    if p.iter().any(|&v| v < 0.0) {
        return Err(Error::Validation("exhaustive verification needs nonnegative prices".into()));
    }
    let shares = binomial(g.resolution as usize + m - 1, m - 1);
    g.guard(shares * n as f64)?;
    let pm = ProfileMap::from_instance(inst);
    let eta = inst.weights_or_ones();
    let d = pm.eval(x);
    let e: Vec<f64> = (0..n).map(|i| x.row(i).iter().zip(p).map(|(a, b)| a * b).sum()).collect();

    let scaled: Vec<f64> = e.iter().zip(&eta).map(|(v, w)| v / w).collect();
    let lo = scaled.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = scaled.iter().cloned().fold(0.0, f64::max);
    let income_ratio_worst = if hi == 0.0 { 0.0 } else if lo <= 0.0 { 1.0 } else { 1.0 - lo / hi };

    let grid = compositions(g.resolution, m);
    let r = g.resolution as f64;
    let mut optimal = Vec::with_capacity(n);
    let mut optimal_bundle_worst: f64 = 0.0;
    for i in 0..n {
        let opt = if e[i] <= 0.0 {
            0.0
        } else {
            let mut best = f64::INFINITY;
            let mut y = vec![0.0; m];
            for w in &grid {
                let mut usable = true;
                for j in 0..m {
                    y[j] = if w[j] == 0 {
                        0.0
                    } else if p[j] > 0.0 {
                        w[j] as f64 / r * e[i] / p[j]
                    } else {
                        usable = false;
                        0.0
                    };
                }
                if usable {
                    best = best.min(pm.oracle(i).eval(&y));
                }
            }
            best
        };
        let res = if opt >= d[i] { 0.0 } else { (d[i] - opt) / d[i].abs().max(opt.abs()) };
        optimal_bundle_worst = optimal_bundle_worst.max(res);
        optimal.push(opt);
    }
    let feasibility_worst = x.column_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    let residuals = Residuals {
        income_ratio_worst,
        optimal_bundle_worst,
        feasibility_worst,
    };
    Ok(ExhaustiveReport {
        pass: residuals.max() <= epsilon,
        residuals,
        optimal,
    })
}
