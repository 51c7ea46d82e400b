//! Command-line front end. `choreeq solve | verify | generate | bench`.
//!
//! Exit codes: 0 success, 2 bad input, 3 solver failure, 4 verification
//! mismatch. Set `CHOREEQ_LOG` (e.g. `info`) for logging on stderr.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::instance::{DisutilitySpec, Instance, Mode, ResultFile};
use crate::pipeline;
use crate::solver::{self, write_trace, SolverParams};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_SOLVER: i32 = 3;
pub const EXIT_MISMATCH: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "choreeq", version, about = "Approximate competitive equilibria for divisible chores")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Chores,
    Mixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    Linear,
    Ces,
    Mixed,
}

#[derive(Debug, clap::Args)]
pub struct SolveArgs {
    /// Instance JSON file.
    pub instance: PathBuf,
    /// Result JSON destination (stdout if omitted).
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.05)]
    pub eps: f64,
    #[arg(long)]
    pub eps1: Option<f64>,
    #[arg(long)]
    pub eps2: Option<f64>,
    #[arg(long)]
    pub eps3: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    pub max_iters: usize,
    /// Accepted for symmetry with the other commands; solving is deterministic.
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Per-iteration trace CSV destination.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// JSON array of income weights.
    #[arg(long)]
    pub weights: Option<PathBuf>,
    /// Overrides the instance's mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Re-verify the existing result at `--out` instead of solving.
    #[arg(long)]
    pub verify_only: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve an instance and write a self-verified result.
    Solve(SolveArgs),
    /// Check a stored result against its instance.
    Verify {
        instance: PathBuf,
        result: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
    },
    /// Write a random instance.
    Generate {
        #[arg(long)]
        n: usize,
        #[arg(long)]
        m: usize,
        #[arg(long, value_enum, default_value_t = Kind::Linear)]
        kind: Kind,
        /// Coefficient range `lo,hi`.
        #[arg(long, default_value = "1,10", value_parser = parse_range)]
        range: (f64, f64),
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Solve every `*.json` instance in a directory and tabulate iterations.
    Bench {
        suite: PathBuf,
        /// Comma-separated epsilons.
        #[arg(long, default_value = "0.1,0.01", value_delimiter = ',')]
        eps_list: Vec<f64>,
        #[arg(long, default_value_t = 1_000_000)]
        max_iters: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn parse_range(s: &str) -> std::result::Result<(f64, f64), String> {
    let (a, b) = s.split_once(',').ok_or("expected lo,hi")?;
    let lo = a.trim().parse::<f64>().map_err(|e| e.to_string())?;
    let hi = b.trim().parse::<f64>().map_err(|e| e.to_string())?;
    Ok((lo, hi))
}

/// Exit code for a library error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Parse(_)
        | Error::Validation(_)
        | Error::InfiniteDisutility { .. }
        | Error::DimensionMismatch { .. }
        | Error::NegativeInput { .. }
        | Error::InvalidRange(_)
        | Error::UnsupportedDims(_)
        | Error::GridTooLarge { .. }
        | Error::Io(_) => EXIT_INPUT,
        _ => EXIT_SOLVER,
    }
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// Initializes logging from `CHOREEQ_LOG`, defaulting to warnings.
pub fn init_logging() {
    let env = env_logger::Env::new().filter_or("CHOREEQ_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Solve(args) => cmd_solve(&args),
        Command::Verify {
            instance,
            result,
            weights,
            mode,
        } => cmd_verify(&instance, &result, weights.as_deref(), mode),
        Command::Generate {
            n,
            m,
            kind,
            range,
            seed,
            out,
        } => {
            let inst = cmd_generate(n, m, kind, range, seed)?;
            emit(out.as_deref(), &inst.to_json())?;
            Ok(EXIT_OK)
        }
        Command::Bench {
            suite,
            eps_list,
            max_iters,
            out,
        } => {
            let (csv, all_ok) = cmd_bench(&suite, &eps_list, max_iters)?;
            emit(out.as_deref(), &csv)?;
            Ok(if all_ok { EXIT_OK } else { EXIT_MISMATCH })
        }
    }
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
        }
    }
    Ok(())
}

fn load_instance(path: &Path, mode: Option<ModeArg>) -> Result<Instance> {
    let mut inst = Instance::from_json(&fs::read_to_string(path)?)?;
    if let Some(m) = mode {
        inst.mode = match m {
            ModeArg::Chores => Mode::Chores,
            ModeArg::Mixed => Mode::Mixed,
        };
        inst.validate()?;
    }
    Ok(inst)
}

fn load_weights(path: Option<&Path>) -> Result<Option<Vec<f64>>> {
    path.map(|p| -> Result<Vec<f64>> { Ok(serde_json::from_str(&fs::read_to_string(p)?)?) })
        .transpose()
}

/// Solves the instance named in `args`, writing the result JSON and
/// optional trace.
pub fn cmd_solve(args: &SolveArgs) -> Result<i32> {
    if args.verify_only {
        let out = args
            .out
            .as_deref()
            .ok_or_else(|| Error::Validation("--verify-only needs --out pointing at a result".into()))?;
        return cmd_verify(&args.instance, out, args.weights.as_deref(), args.mode);
    }
    let inst = load_instance(&args.instance, args.mode)?;
    let params = SolverParams {
        epsilon: args.eps,
        eps1: args.eps1,
        eps2: args.eps2,
        eps3: args.eps3,
        max_iters: args.max_iters,
        weights: load_weights(args.weights.as_deref())?,
        trace: args.trace.is_some(),
        ..SolverParams::default()
    };
    if !(args.eps > 0.0 && args.eps < 1.0) {
        return Err(Error::Validation(format!("--eps {} not in (0, 1)", args.eps)));
    }
    let sol = match pipeline::solve(&inst, &params) {
        Ok(s) => s,
        Err(Error::IterationCapExceeded { cap, trace }) => {
            if let Some(p) = &args.trace {
                write_trace(p, &trace)?;
            }
            return Err(Error::IterationCapExceeded { cap, trace });
        }
        Err(e) => return Err(e),
    };
    let mut result = sol.result.clone();
    if let Some(p) = &args.trace {
        write_trace(p, &sol.trace)?;
        result.trace_file = Some(p.display().to_string());
    }
    emit(args.out.as_deref(), &result.to_json())?;
    info!(
        "solved in {} iterations, epsilon {:.3e}, verified {}",
        result.certificate.iterations, result.epsilon, result.certificate.verified
    );
    Ok(if result.certificate.verified { EXIT_OK } else { EXIT_MISMATCH })
}

/// Re-verifies a stored result; prints the residuals as JSON.
pub fn cmd_verify(instance: &Path, result: &Path, weights: Option<&Path>, mode: Option<ModeArg>) -> Result<i32> {
    let inst = load_instance(instance, mode)?;
    let res = ResultFile::from_json(&fs::read_to_string(result)?)?;
    let w = load_weights(weights)?;
    let v = pipeline::verify_result(&inst, &res, w.as_deref())?;
    #[derive(Serialize)]
    struct Out<'a> {
        pass: bool,
        epsilon: f64,
        residuals: &'a crate::instance::Residuals,
        #[serde(skip_serializing_if = "Option::is_none")]
        category: Option<&'a str>,
    }
    let text = serde_json::to_string_pretty(&Out {
        pass: v.pass,
        epsilon: res.epsilon,
        residuals: &v.residuals,
        category: v.category.map(|c| c.as_str()),
    })?;
    emit(None, &(text + "\n"))?;
    Ok(if v.pass { EXIT_OK } else { EXIT_MISMATCH })
}

/// Draws a random instance. Coefficients are uniform on `range`; CES
/// exponents come from {1.5, 2, 3}; mixed instances get random signs with
/// at least one negative entry.
pub fn cmd_generate(n: usize, m: usize, kind: Kind, range: (f64, f64), seed: u64) -> Result<Instance> {
    let (lo, hi) = range;
    if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
        return Err(Error::InvalidRange(format!("coefficient range [{lo}, {hi}] must be positive and ordered")));
    }
    if n == 0 || m == 0 {
        return Err(Error::InvalidRange(format!("dimensions {n} x {m} must be positive")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draw = |rng: &mut ChaCha8Rng| -> Vec<f64> { (0..m).map(|_| rng.gen_range(lo..=hi)).collect() };
    match kind {
        Kind::Linear => Instance::linear((0..n).map(|_| draw(&mut rng)).collect()),
        Kind::Ces => {
            let specs = (0..n)
                .map(|_| {
                    let c = draw(&mut rng);
                    let rho = *[1.5, 2.0, 3.0].choose(&mut rng).expect("nonempty");
                    DisutilitySpec::Ces { c, rho }
                })
                .collect();
            Instance::new(Mode::Chores, specs, None)
        }
        Kind::Mixed => {
            let mut rows: Vec<Vec<f64>> = (0..n)
                .map(|_| draw(&mut rng).into_iter().map(|v| if rng.gen_bool(0.5) { v } else { -v }).collect())
                .collect();
            if rows.iter().flatten().all(|&v| v > 0.0) {
                let (i, j) = (rng.gen_range(0..n), rng.gen_range(0..m));
                rows[i][j] = -rows[i][j];
            }
            Instance::mixed(rows)
        }
    }
}

#[derive(Debug, Serialize)]
struct BenchRow {
    instance: String,
    n: usize,
    m: usize,
    eps: f64,
    iters: usize,
    bound: Option<f64>,
    wall_ms: u128,
    pass: bool,
}

/// Runs every instance in `suite` at each epsilon. Returns the CSV text and
/// whether every run verified and stayed within its iteration bound.
pub fn cmd_bench(suite: &Path, eps_list: &[f64], max_iters: usize) -> Result<(String, bool)> {
    let mut files: Vec<PathBuf> = fs::read_dir(suite)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    files.sort();
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(["instance", "n", "m", "eps", "iters", "bound", "wall_ms", "pass"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    let mut all_ok = true;
    for f in &files {
        let inst = Instance::from_json(&fs::read_to_string(f)?)?;
        for &eps in eps_list {
            let params = SolverParams {
                epsilon: eps,
                max_iters,
                ..SolverParams::default()
            };
            let t = Instant::now();
            let sol = pipeline::solve(&inst, &params);
            let wall_ms = t.elapsed().as_millis();
            let (iters, verified) = match &sol {
                Ok(s) => (s.result.certificate.iterations, s.verified()),
                Err(_) => (0, false),
            };
            let reduced = inst.preprocess();
            let bound = if inst.mode == Mode::Chores && inst.all_linear() && !reduced.is_trivial() {
                Some(solver::iteration_bound_linear(&reduced.instance, eps, None)?)
            } else {
                None
            };
            let pass = verified && bound.is_none_or(|b| iters as f64 <= b);
            all_ok &= pass;
            let name = f.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            w.serialize(BenchRow {
                instance: name,
                n: inst.n,
                m: inst.m,
                eps,
                iters,
                bound,
                wall_ms,
                pass,
            })
            .map_err(|e| Error::Parse(e.to_string()))?;
        }
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    Ok((String::from_utf8(bytes).expect("csv is utf-8"), all_ok))
}
