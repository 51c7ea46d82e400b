//! Problem data: instances, allocations, and the JSON file formats.
//!
//! An [`Instance`] holds `n` agents and `m` divisible chores, one
//! [`DisutilitySpec`] per agent and optional income weights. Instances are
//! validated on construction and never mutated afterwards.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Every item is a chore for every agent; coefficients are nonnegative.
    #[default]
    Chores,
    /// Linear utilities of either sign (goods and chores mixed).
    Mixed,
}

/// A single agent's disutility function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisutilitySpec {
    /// `D(x) = Σ_j D_j x_j`.
    Linear(Vec<f64>),
    /// `D(x) = (Σ_j c_j x_j^rho)^(1/rho)` with `rho >= 1`.
    Ces { c: Vec<f64>, rho: f64 },
}

impl DisutilitySpec {
    pub fn coefficients(&self) -> &[f64] {
        match self {
            DisutilitySpec::Linear(c) => c,
            DisutilitySpec::Ces { c, .. } => c,
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, DisutilitySpec::Linear(_))
    }

    fn with_coefficients(&self, c: Vec<f64>) -> Self {
        match self {
            DisutilitySpec::Linear(_) => DisutilitySpec::Linear(c),
            DisutilitySpec::Ces { rho, .. } => DisutilitySpec::Ces { c, rho: *rho },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Instance {
    pub n: usize,
    pub m: usize,
    pub mode: Mode,
    pub disutilities: Vec<DisutilitySpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
}

impl Instance {
    /// Validates and builds an instance.
    pub fn new(
        mode: Mode,
        disutilities: Vec<DisutilitySpec>,
        weights: Option<Vec<f64>>,
    ) -> Result<Self> {
        let n = disutilities.len();
        let m = disutilities.first().map_or(0, |d| d.coefficients().len());
        let inst = Instance {
            n,
            m,
            mode,
            disutilities,
            weights,
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Convenience constructor for a chores instance with linear disutilities.
    pub fn linear(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            Mode::Chores,
            rows.into_iter().map(DisutilitySpec::Linear).collect(),
            None,
        )
    }

    /// Convenience constructor for a mixed-manna instance from signed utilities.
    pub fn mixed(utilities: Vec<Vec<f64>>) -> Result<Self> {
        Self::new(
            Mode::Mixed,
            utilities.into_iter().map(DisutilitySpec::Linear).collect(),
            None,
        )
    }

    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        self.weights = Some(weights);
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::Validation("instance needs at least one agent".into()));
        }
        if self.m == 0 {
            return Err(Error::Validation("instance needs at least one chore".into()));
        }
        if self.disutilities.len() != self.n {
            return Err(Error::Validation(format!(
                "n = {} but {} disutility functions given",
                self.n,
                self.disutilities.len()
            )));
        }
        for (i, spec) in self.disutilities.iter().enumerate() {
            let c = spec.coefficients();
            if c.len() != self.m {
                return Err(Error::Validation(format!(
                    "agent {i} has {} coefficients, expected {}",
                    c.len(),
                    self.m
                )));
            }
            for (j, &v) in c.iter().enumerate() {
                if v.is_infinite() {
                    return Err(Error::InfiniteDisutility { agent: i, chore: j });
                }
                if v.is_nan() {
                    return Err(Error::Validation(format!("agent {i} chore {j}: NaN coefficient")));
                }
                if self.mode == Mode::Chores && v < 0.0 {
                    return Err(Error::Validation(format!(
                        "agent {i} chore {j}: negative coefficient {v} in chores mode"
                    )));
                }
            }
            if let DisutilitySpec::Ces { rho, .. } = spec {
                if self.mode == Mode::Mixed {
                    return Err(Error::Validation("mixed mode supports linear specs only".into()));
                }
                if !rho.is_finite() || *rho < 1.0 {
                    return Err(Error::Validation(format!("agent {i}: rho = {rho} < 1")));
                }
            }
        }
        if let Some(w) = &self.weights {
            if w.len() != self.n {
                return Err(Error::Validation(format!(
                    "{} weights for {} agents",
                    w.len(),
                    self.n
                )));
            }
            if let Some((i, v)) = w.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v > 0.0)) {
                return Err(Error::Validation(format!("weight {i} = {v} is not positive")));
            }
        }
        Ok(())
    }

    pub fn all_linear(&self) -> bool {
        self.disutilities.iter().all(DisutilitySpec::is_linear)
    }

    /// Linear coefficient matrix (row per agent). `None` if any spec is CES.
    pub fn linear_matrix(&self) -> Option<Vec<Vec<f64>>> {
        self.disutilities
            .iter()
            .map(|s| match s {
                DisutilitySpec::Linear(c) => Some(c.clone()),
                DisutilitySpec::Ces { .. } => None,
            })
            .collect()
    }

    /// Income weights, defaulting to all ones.
    pub fn weights_or_ones(&self) -> Vec<f64> {
        self.weights.clone().unwrap_or_else(|| vec![1.0; self.n])
    }

    /// Strips chores that some agent finds costless.
    ///
    /// In chores mode a chore `j` with `D_ij = 0` for some agent `i` is
    /// given entirely to the first such agent at price zero and removed from
    /// the optimization. Mixed instances are returned unchanged.
    pub fn preprocess(&self) -> Preprocessed {
        let mut kept = Vec::new();
        let mut free = Vec::new();
        for j in 0..self.m {
            let zero_agent = if self.mode == Mode::Chores {
                (0..self.n).find(|&i| self.disutilities[i].coefficients()[j] == 0.0)
            } else {
                None
            };
            match zero_agent {
                Some(i) => free.push((j, i)),
                None => kept.push(j),
            }
        }
        let disutilities = self
            .disutilities
            .iter()
            .map(|s| {
                let c = s.coefficients();
                s.with_coefficients(kept.iter().map(|&j| c[j]).collect())
            })
            .collect();
        Preprocessed {
            instance: Instance {
                n: self.n,
                m: kept.len(),
                mode: self.mode,
                disutilities,
                weights: self.weights.clone(),
            },
            kept,
            free,
            original_m: self.m,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        parse_instance(text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("instance serializes")
    }
}

/// Result of [`Instance::preprocess`]. The reduced instance may have `m = 0`
/// when every chore is free for someone.
#[derive(Debug, Clone, PartialEq)]
pub struct Preprocessed {
    pub instance: Instance,
    /// Original indices of the chores that remain.
    pub kept: Vec<usize>,
    /// `(chore, agent)` pairs assigned outside the optimization.
    pub free: Vec<(usize, usize)>,
    pub original_m: usize,
}

impl Preprocessed {
    pub fn is_trivial(&self) -> bool {
        self.kept.is_empty()
    }

    /// Re-inserts the free chores into an allocation and price vector of the
    /// reduced instance.
    pub fn lift(&self, x: &Allocation, prices: &[f64]) -> (Allocation, Vec<f64>) {
        let n = self.instance.n;
        let mut full = Allocation::zeros(n, self.original_m);
        let mut p = vec![0.0; self.original_m];
        for (k, &j) in self.kept.iter().enumerate() {
            for i in 0..n {
                full.set(i, j, x.get(i, k));
            }
            p[j] = prices[k];
        }
        for &(j, i) in &self.free {
            full.set(i, j, 1.0);
        }
        (full, p)
    }
}

/// Parses and validates an instance from its JSON text.
pub fn parse_instance(text: &str) -> Result<Instance> {
    let raw: RawInstance = serde_json::from_str(text)?;
    let mut disutilities = Vec::with_capacity(raw.disutilities.len());
    for spec in raw.disutilities {
        disutilities.push(match spec {
            RawSpec::Linear(c) => DisutilitySpec::Linear(to_f64s(c)?),
            RawSpec::Ces { c, rho } => DisutilitySpec::Ces {
                c: to_f64s(c)?,
                rho: rho.value()?,
            },
        });
    }
    let weights = raw.weights.map(to_f64s).transpose()?;
    if raw.n != disutilities.len() {
        return Err(Error::Validation(format!(
            "n = {} but {} disutility functions given",
            raw.n,
            disutilities.len()
        )));
    }
    let inst = Instance {
        n: raw.n,
        m: raw.m,
        mode: raw.mode.unwrap_or_default(),
        disutilities,
        weights,
    };
    inst.validate()?;
    Ok(inst)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawInstance {
    n: usize,
    m: usize,
    #[serde(default)]
    mode: Option<Mode>,
    disutilities: Vec<RawSpec>,
    #[serde(default)]
    weights: Option<Vec<Number>>,
}

#[derive(Deserialize)]
#[serde(rename_all = "lowercase")]
enum RawSpec {
    Linear(Vec<Number>),
    Ces { c: Vec<Number>, rho: Number },
}

/// A JSON number, or a decimal string (which may spell out `inf`).
#[derive(Deserialize)]
#[serde(untagged)]
enum Number {
    Float(f64),
    Text(String),
}

impl Number {
    fn value(&self) -> Result<f64> {
        match self {
            Number::Float(v) => Ok(*v),
            Number::Text(s) => s
                .trim()
                .parse::<f64>()
                .map_err(|e| Error::Parse(format!("bad number {s:?}: {e}"))),
        }
    }
}

fn to_f64s(v: Vec<Number>) -> Result<Vec<f64>> {
    v.iter().map(Number::value).collect()
}

/// An `n x m` matrix of chore fractions, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    n: usize,
    m: usize,
    data: Vec<f64>,
}

impl Allocation {
    pub fn zeros(n: usize, m: usize) -> Self {
        Allocation {
            n,
            m,
            data: vec![0.0; n * m],
        }
    }

    pub fn filled(n: usize, m: usize, v: f64) -> Self {
        Allocation {
            n,
            m,
            data: vec![v; n * m],
        }
    }

    /// Every chore split evenly across agents.
    pub fn uniform(n: usize, m: usize) -> Self {
        Self::filled(n, m, 1.0 / n as f64)
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        let m = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != m) {
            return Err(Error::DimensionMismatch {
                expected: format!("rows of length {m}"),
                got: "ragged rows".into(),
            });
        }
        Ok(Allocation {
            n,
            m,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn m(&self) -> usize {
        self.m
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.m + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.m + j] = v;
    }

    #[inline]
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.m + j] += v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.m..(i + 1) * self.m]
    }

    pub fn column_sum(&self, j: usize) -> f64 {
        (0..self.n).map(|i| self.get(i, j)).sum()
    }

    pub fn column_sums(&self) -> Vec<f64> {
        (0..self.m).map(|j| self.column_sum(j)).collect()
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn min_entry(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn check_dims(&self, n: usize, m: usize) -> Result<()> {
        if self.n != n || self.m != m {
            return Err(Error::DimensionMismatch {
                expected: format!("{n}x{m}"),
                got: format!("{}x{}", self.n, self.m),
            });
        }
        Ok(())
    }

    /// Euclidean distance between two allocations of equal shape.
    pub fn distance(&self, other: &Allocation) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl Serialize for Allocation {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.rows().serialize(s)
    }
}

impl<'de> Deserialize<'de> for Allocation {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<Vec<f64>>::deserialize(d)?;
        Allocation::from_rows(rows).map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AllocationReport {
    /// All columns sum to one (within `tol`) and all entries are `>= -tol`.
    pub feasible_exact: bool,
    /// All columns sum to at least one (within `tol`): membership in the
    /// over-allocation region.
    pub feasible_relaxed: bool,
    pub max_column_residual: f64,
}

pub fn validate_allocation(inst: &Instance, x: &Allocation, tol: f64) -> Result<AllocationReport> {
    x.check_dims(inst.n, inst.m)?;
    let nonneg = x.min_entry() >= -tol;
    let sums = x.column_sums();
    let max_column_residual = sums.iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
    Ok(AllocationReport {
        feasible_exact: nonneg && max_column_residual <= tol,
        feasible_relaxed: nonneg && sums.iter().all(|s| *s >= 1.0 - tol),
        max_column_residual,
    })
}

/// Per-condition residuals of an equilibrium check.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Residuals {
    /// `1 - min_{i,i'} e_{i'} / e_i` over (weight-rescaled) earnings.
    pub income_ratio_worst: f64,
    /// `max_i (1 - opt_i / d_i)`: how far the worst agent is from an optimal bundle.
    pub optimal_bundle_worst: f64,
    /// `max_j |Σ_i x_ij - 1|`.
    pub feasibility_worst: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.income_ratio_worst
            .max(self.optimal_bundle_worst)
            .max(self.feasibility_worst)
    }
}

/// Certificate block of the result file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CertificateRecord {
    pub mode: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<String>,
    pub gamma: f64,
    pub lambda: f64,
    pub delta: f64,
    pub iterations: usize,
    pub normal: Vec<f64>,
    pub profile: Vec<f64>,
    pub residuals: Residuals,
    pub verified: bool,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

/// The result file written by `choreeq solve`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultFile {
    pub allocation: Allocation,
    pub prices: Vec<f64>,
    pub epsilon: f64,
    pub certificate: CertificateRecord,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace_file: Option<String>,
}

impl ResultFile {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("result serializes")
    }
}
