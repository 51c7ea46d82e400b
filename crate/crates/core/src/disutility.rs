//! Value and gradient evaluation for per-agent disutility functions.

use crate::error::{Error, Result};
use crate::instance::{Allocation, DisutilitySpec, Instance};

/// Coordinates below this are lifted before a floored CES gradient is taken.
pub const GRAD_FLOOR: f64 = 1e-9;
/// Lower edge of the box on which CES Lipschitz constants are computed.
pub const LIPSCHITZ_FLOOR: f64 = 1e-6;
/// Upper edge of that box: no step ever hands an agent more than twice a chore.
pub const ALLOCATION_BOUND: f64 = 2.0;

/// A single agent's disutility with its precomputed Lipschitz constant.
#[derive(Debug, Clone, PartialEq)]
pub struct Oracle {
    spec: DisutilitySpec,
    lipschitz: f64,
}

impl Oracle {
    pub fn new(spec: DisutilitySpec) -> Self {
        let lipschitz = lipschitz_constant(&spec);
        Oracle { spec, lipschitz }
    }

    pub fn spec(&self) -> &DisutilitySpec {
        &self.spec
    }

    pub fn lipschitz(&self) -> f64 {
        self.lipschitz
    }

    pub fn m(&self) -> usize {
        self.spec.coefficients().len()
    }

    pub fn is_linear(&self) -> bool {
        self.spec.is_linear()
    }

    /// `D(x)`, rejecting negative coordinates.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.eval(x))
    }

    /// Exact partial derivatives. CES is not differentiable at the origin.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check(x)?;
        match &self.spec {
            DisutilitySpec::Linear(c) => Ok(c.clone()),
            DisutilitySpec::Ces { c, rho } => {
                let v = ces_value(c, *rho, x);
                if v <= 0.0 {
                    if *rho == 1.0 {
                        return Ok(c.clone());
                    }
                    return Err(Error::GradientSingularity);
                }
                Ok(ces_gradient(c, *rho, x, v))
            }
        }
    }

    /// Gradient taken at `max(x, GRAD_FLOOR)` whenever some coordinate is
    /// below the floor; always defined.
    pub fn gradient_floored(&self, x: &[f64]) -> Vec<f64> {
        match &self.spec {
            DisutilitySpec::Linear(c) => c.clone(),
            DisutilitySpec::Ces { c, rho } => {
                if x.iter().any(|&v| v < GRAD_FLOOR) {
                    let y: Vec<f64> = x.iter().map(|&v| v.max(GRAD_FLOOR)).collect();
                    let v = ces_value(c, *rho, &y);
                    ces_gradient(c, *rho, &y, v)
                } else {
                    let v = ces_value(c, *rho, x);
                    ces_gradient(c, *rho, x, v)
                }
            }
        }
    }

    /// Unchecked evaluation for solver inner loops. Negative CES coordinates
    /// are treated as zero; linear specs are evaluated as-is (signed data in
    /// mixed mode relies on this).
    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        match &self.spec {
            DisutilitySpec::Linear(c) => dot(c, x),
            DisutilitySpec::Ces { c, rho } => ces_value(c, *rho, x),
        }
    }

    /// Partial derivative in coordinate `j` given the precomputed value `v = D(x)`.
    /// Uses the gradient floor when `v` vanishes.
    #[inline]
    pub fn partial(&self, x: &[f64], j: usize, v: f64) -> f64 {
        match &self.spec {
            DisutilitySpec::Linear(c) => c[j],
            DisutilitySpec::Ces { c, rho } => {
                if *rho == 1.0 {
                    return c[j];
                }
                if v <= 0.0 {
                    return self.gradient_floored(x)[j];
                }
                c[j] * (x[j].max(0.0) / v).powf(rho - 1.0)
            }
        }
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} coordinates", self.m()),
                got: format!("{}", x.len()),
            });
        }
        if let Some((index, &value)) = x.iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeInput { index, value });
        }
        Ok(())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn ces_value(c: &[f64], rho: f64, x: &[f64]) -> f64 {
    if rho == 1.0 {
        return c.iter().zip(x).map(|(c, x)| c * x.max(0.0)).sum();
    }
    // Factor out the largest weighted term to keep x^rho in range.
    let scale = c
        .iter()
        .zip(x)
        .map(|(c, x)| c.powf(1.0 / rho) * x.max(0.0))
        .fold(0.0, f64::max);
    if scale == 0.0 {
        return 0.0;
    }
    let s: f64 = c
        .iter()
        .zip(x)
        .map(|(c, x)| c * (x.max(0.0) / scale).powf(rho))
        .sum();
    scale * s.powf(1.0 / rho)
}

fn ces_gradient(c: &[f64], rho: f64, x: &[f64], v: f64) -> Vec<f64> {
    c.iter()
        .zip(x)
        .map(|(c, x)| c * (x.max(0.0) / v).powf(rho - 1.0))
        .collect()
}

/// Two-sided Lipschitz constant `L` for the default box.
///
/// Linear: `max(max_j D_j, 1 / min_j D_j)`. CES: the upper bound is
/// `max_j c_j^(1/rho)` and the lower bound is the smallest partial derivative
/// over `[LIPSCHITZ_FLOOR, ALLOCATION_BOUND]^m`.
pub fn lipschitz_constant(spec: &DisutilitySpec) -> f64 {
    lipschitz_constant_on(spec, LIPSCHITZ_FLOOR, ALLOCATION_BOUND)
}

pub fn lipschitz_constant_on(spec: &DisutilitySpec, floor: f64, bound: f64) -> f64 {
    match spec {
        DisutilitySpec::Linear(c) => {
            let (lo, hi) = extremes(c);
            if lo > 0.0 {
                hi.max(1.0 / lo)
            } else {
                hi.max(1.0)
            }
        }
        DisutilitySpec::Ces { c, rho } => {
            let upper = c.iter().map(|c| c.powf(1.0 / rho)).fold(0.0, f64::max);
            let mut lower = f64::INFINITY;
            for (j, &cj) in c.iter().enumerate() {
                if cj <= 0.0 {
                    continue;
                }
                let rest: f64 = c
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| *k != j)
                    .map(|(_, ck)| ck * bound.powf(*rho))
                    .sum();
                let dmax = (cj * floor.powf(*rho) + rest).powf(1.0 / rho);
                lower = lower.min(cj * (floor / dmax).powf(rho - 1.0));
            }
            if lower.is_finite() && lower > 0.0 {
                upper.max(1.0 / lower)
            } else {
                upper.max(1.0)
            }
        }
    }
}

fn extremes(c: &[f64]) -> (f64, f64) {
    c.iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &v| (lo.min(v.abs()), hi.max(v.abs())))
}

/// The disutility map `x -> (D_1(x_1), ..., D_n(x_n))`.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileMap {
    oracles: Vec<Oracle>,
    m: usize,
}

impl ProfileMap {
    pub fn new(oracles: Vec<Oracle>) -> Self {
        let m = oracles.first().map_or(0, Oracle::m);
        ProfileMap { oracles, m }
    }

    pub fn from_instance(inst: &Instance) -> Self {
        Self::new(inst.disutilities.iter().cloned().map(Oracle::new).collect())
    }

    pub fn n(&self) -> usize {
        self.oracles.len()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn oracle(&self, i: usize) -> &Oracle {
        &self.oracles[i]
    }

    pub fn oracles(&self) -> &[Oracle] {
        &self.oracles
    }

    pub fn all_linear(&self) -> bool {
        self.oracles.iter().all(Oracle::is_linear)
    }

    /// Largest per-agent Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        self.oracles.iter().map(Oracle::lipschitz).fold(1.0, f64::max)
    }

    pub fn profile(&self, x: &Allocation) -> Result<Vec<f64>> {
        x.check_dims(self.n(), self.m)?;
        (0..self.n())
            .map(|i| self.oracles[i].value(x.row(i)))
            .collect()
    }

    /// Unchecked profile for inner loops.
    pub fn eval(&self, x: &Allocation) -> Vec<f64> {
        (0..self.n()).map(|i| self.oracles[i].eval(x.row(i))).collect()
    }

    /// `D_i` applied to the full bundle `(1, ..., 1)`.
    pub fn full_bundle(&self, i: usize) -> f64 {
        self.oracles[i].eval(&vec![1.0; self.m])
    }
}
