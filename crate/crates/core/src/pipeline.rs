//! End-to-end solving: preprocessing, routing to the right solver, lifting
//! the answer back and verifying it on the original instance.

use log::{info, warn};

use crate::disutility::ProfileMap;
use crate::equilibrium::{self, verify_ceei, CertMode, EquilibriumCertificate};
use crate::error::{Error, Result};
use crate::extensions::{self, Category};
use crate::instance::{Allocation, CertificateRecord, Instance, Mode, ResultFile, Residuals};
use crate::solver::{self, KktCertificate, SolverParams, TraceRow};

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct Solution {
    pub result: ResultFile,
    pub kkt: Option<KktCertificate>,
    pub trace: Vec<TraceRow>,
}

impl Solution {
    pub fn verified(&self) -> bool {
        self.result.certificate.verified
    }
}

fn resolve_weights(inst: &Instance, params: &SolverParams) -> Result<Option<Vec<f64>>> {
    let w = params.weights.clone().or_else(|| inst.weights.clone());
    match w {
        None => Ok(None),
        Some(w) if w.len() != inst.n => Err(Error::DimensionMismatch {
            expected: format!("{} weights", inst.n),
            got: format!("{}", w.len()),
        }),
        Some(w) => extensions::normalize_weights(&w).map(Some),
    }
}

/// Solves an instance of either mode and self-verifies the result.
pub fn solve(inst: &Instance, params: &SolverParams) -> Result<Solution> {
    inst.validate()?;
    match inst.mode {
        Mode::Chores => solve_chores(inst, params),
        Mode::Mixed => solve_mixed(inst, params),
    }
}

fn record(
    mode: &str,
    kkt: Option<&KktCertificate>,
    residuals: Residuals,
    verified: bool,
    warnings: Vec<String>,
) -> CertificateRecord {
    CertificateRecord {
        mode: mode.to_string(),
        category: None,
        gamma: kkt.map_or(1.0, |c| c.gamma),
        lambda: kkt.map_or(1.0, |c| c.lambda),
        delta: kkt.map_or(0.0, |c| c.delta),
        iterations: kkt.map_or(0, |c| c.iterations),
        normal: kkt.map_or_else(Vec::new, |c| c.a.clone()),
        profile: kkt.map_or_else(Vec::new, |c| c.d.clone()),
        residuals,
        verified,
        warnings,
    }
}

fn solve_chores(inst: &Instance, params: &SolverParams) -> Result<Solution> {
    let weights = resolve_weights(inst, params)?;
    let params = SolverParams {
        weights: weights.clone(),
        ..params.clone()
    };
    let pre = inst.preprocess();
    let mut warnings = Vec::new();
    if !pre.free.is_empty() {
        warnings.push(format!("{} chore(s) assigned at zero price to an agent who does not mind them", pre.free.len()));
    }
    let mode_name = if inst.all_linear() { "linear" } else { "general" };
    if pre.is_trivial() {
        info!("every chore is free for some agent");
        let (x, p) = pre.lift(&Allocation::zeros(inst.n, 0), &[]);
        let residuals = Residuals {
            income_ratio_worst: 0.0,
            optimal_bundle_worst: 0.0,
            feasibility_worst: 0.0,
        };
        return Ok(Solution {
            result: ResultFile {
                allocation: x,
                prices: p,
                epsilon: params.epsilon,
                certificate: record(mode_name, None, residuals, true, warnings),
                trace_file: None,
            },
            kkt: None,
            trace: Vec::new(),
        });
    }
    let sub = &pre.instance;
    let sub_pm = ProfileMap::from_instance(sub);
    let (cert, eq) = if sub.all_linear() {
        let cert = solver::solve_kkt_linear(sub, &params)?;
        let eq = equilibrium::from_kkt_linear(sub, &cert)?;
        (cert, eq)
    } else {
        let cert = solver::solve_kkt_general(&sub_pm, &params)?;
        let eq = equilibrium::from_kkt_general(&sub_pm, &cert)?;
        (cert, eq)
    };
    if cert.early_branch {
        warnings.push("stopped on the nearest-point branch".into());
    }
    let (x, p) = pre.lift(&eq.x, &eq.p);
    // Linear runs carry the guaranteed 2ε; general runs their measured ε.
    let epsilon = if sub.all_linear() { 2.0 * params.epsilon } else { eq.epsilon };
    let pm = ProfileMap::from_instance(inst);
    let report = verify_ceei(&pm, &x, &p, epsilon, weights.as_deref())?;
    if !report.pass {
        warn!("self-verification failed: {:?}", report.residuals);
    }
    let trace = cert.trace.clone();
    Ok(Solution {
        result: ResultFile {
            allocation: x,
            prices: p,
            epsilon,
            certificate: record(mode_name, Some(&cert), report.residuals, report.pass, warnings),
            trace_file: None,
        },
        kkt: Some(cert),
        trace,
    })
}

fn solve_mixed(inst: &Instance, params: &SolverParams) -> Result<Solution> {
    if params.weights.is_some() || inst.weights.is_some() {
        return Err(Error::Validation("income weights are not supported in mixed mode".into()));
    }
    let sol = extensions::solve_mixed(inst, params)?;
    let (_, residuals) = extensions::verify_mixed(inst, &sol.x, &sol.p)?;
    let epsilon = match sol.category {
        Category::Negative => 2.0 * params.epsilon,
        _ => params.epsilon,
    };
    let verified = residuals.max() <= epsilon;
    let mut cert = record("mixed", sol.kkt.as_ref(), residuals, verified, Vec::new());
    cert.category = Some(sol.category.as_str().to_string());
    let trace = sol.kkt.as_ref().map_or_else(Vec::new, |c| c.trace.clone());
    Ok(Solution {
        result: ResultFile {
            allocation: sol.x,
            prices: sol.p,
            epsilon,
            certificate: cert,
            trace_file: None,
        },
        kkt: sol.kkt,
        trace,
    })
}

/// Independent re-check of a stored result against its instance.
#[derive(Debug, Clone, PartialEq)]
pub struct Verification {
    pub pass: bool,
    pub residuals: Residuals,
    pub category: Option<Category>,
}

/// Re-verifies `result` on `inst` at the result's own `ε`.
pub fn verify_result(inst: &Instance, result: &ResultFile, weights: Option<&[f64]>) -> Result<Verification> {
    inst.validate()?;
    let x = &result.allocation;
    x.check_dims(inst.n, inst.m)?;
    match inst.mode {
        Mode::Mixed => {
            let (category, residuals) = extensions::verify_mixed(inst, x, &result.prices)?;
            Ok(Verification {
                pass: residuals.max() <= result.epsilon,
                residuals,
                category: Some(category),
            })
        }
        Mode::Chores => {
            let w = match weights.map(|w| w.to_vec()).or_else(|| inst.weights.clone()) {
                Some(w) => Some(extensions::normalize_weights(&w)?),
                None => None,
            };
            if result.prices.iter().all(|&p| p == 0.0) {
                let pm = ProfileMap::from_instance(inst);
                let d = pm.eval(x);
                let feas = x.column_sums().iter().map(|s| (s - 1.0).abs()).fold(0.0, f64::max);
                let residuals = Residuals {
                    income_ratio_worst: 0.0,
                    optimal_bundle_worst: d.iter().cloned().fold(0.0, f64::max),
                    feasibility_worst: feas,
                };
                return Ok(Verification {
                    pass: residuals.max() <= result.epsilon,
                    residuals,
                    category: None,
                });
            }
            let pm = ProfileMap::from_instance(inst);
            let r = verify_ceei(&pm, x, &result.prices, result.epsilon, w.as_deref())?;
            Ok(Verification {
                pass: r.pass,
                residuals: r.residuals,
                category: None,
            })
        }
    }
}

/// Equilibrium view of a chores-mode solution, for fairness post-processing.
pub fn equilibrium_of(sol: &Solution, inst: &Instance) -> EquilibriumCertificate {
    EquilibriumCertificate {
        x: sol.result.allocation.clone(),
        p: sol.result.prices.clone(),
        epsilon: sol.result.epsilon,
        residuals: sol.result.certificate.residuals,
        mode: if inst.all_linear() { CertMode::LinearStrong } else { CertMode::General },
        weights: sol
            .kkt
            .as_ref()
            .map_or_else(|| vec![1.0; inst.n], |c| c.weights.clone()),
    }
}
