//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 model/file error,
//! 3 non-convergent analysis, 4 verification failure. Diagnostics and
//! timings go to standard error; reports are reproducible byte for byte
//! given the same flags and seed.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::evolution::{evolution_fibre, EvolutionError, SolverConfig};
use crate::flow::{cocycle_check, integrate_process, isomorphism_residual, FlowError};
use crate::foliation::{
    classify_interval, detect_smooth_aging, extract_leaves, FoliationError, LeafKind,
};
use crate::model::{load_model_from_slice, ModelError};
use crate::report::{
    atomic_write, build_report, csv_bytes, hash_bytes, to_json_bytes, FibreRecord, ProcessDump,
    ProcessRecord,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_MODEL: i32 = 2;
pub const EXIT_NON_CONVERGENT: i32 = 3;
pub const EXIT_VERIFICATION: i32 = 4;

#[derive(Parser)]
#[command(
    name = "matevol",
    version,
    about = "Time-material symmetry analysis of evolving constitutive laws"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the evolution equation at one instant and print the fibre
    Fibre(FibreArgs),
    /// Classify a time interval and extract its foliation
    Classify(ClassifyArgs),
    /// Integrate and verify a remodeling process on a chosen leaf
    Process(ProcessArgs),
    /// Run the built-in property suite on the model zoo
    Verify(VerifyArgs),
}

#[derive(Args)]
struct SolverFlags {
    /// Frames in the first sampling round
    #[arg(long = "samples", default_value_t = 20)]
    samples: usize,
    /// Cap on frames per sampling round
    #[arg(long = "max-samples", default_value_t = 320)]
    max_samples: usize,
    /// Relative singular-value cutoff for the numerical rank
    #[arg(long = "rank-tol", default_value_t = 1e-9)]
    rank_tol: f64,
    /// Seed of the deterministic frame sampler
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

impl SolverFlags {
    fn to_config(&self) -> SolverConfig {
        SolverConfig {
            n_samples_initial: self.samples,
            n_samples_max: self.max_samples,
            rank_tol_rel: self.rank_tol,
            seed: self.seed,
            ..SolverConfig::default()
        }
    }
}

#[derive(Args)]
struct FibreArgs {
    /// Model file (JSON)
    #[arg(long)]
    model: PathBuf,
    /// Instant to analyze
    #[arg(long)]
    t: f64,
    /// Write the fibre JSON here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct ClassifyArgs {
    /// Model file (JSON)
    #[arg(long)]
    model: PathBuf,
    /// Left end of the analyzed interval
    #[arg(long)]
    t0: f64,
    /// Right end of the analyzed interval
    #[arg(long)]
    t1: f64,
    /// Number of grid instants
    #[arg(long, default_value_t = 201)]
    grid: usize,
    /// Write the JSON report here instead of standard output
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write plot-ready grid data as CSV
    #[arg(long)]
    csv: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct ProcessArgs {
    /// Model file (JSON)
    #[arg(long)]
    model: PathBuf,
    /// Left end of the analyzed interval
    #[arg(long)]
    t0: f64,
    /// Right end of the analyzed interval
    #[arg(long)]
    t1: f64,
    /// Number of grid instants
    #[arg(long, default_value_t = 201)]
    grid: usize,
    /// Index of the leaf to integrate on (order reported by classify)
    #[arg(long)]
    leaf: usize,
    /// Reference instant with P(t_ref) = I; defaults to the leaf start
    #[arg(long = "t-ref")]
    t_ref: Option<f64>,
    /// Write the full process dump here
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    solver: SolverFlags,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    solver: SolverFlags,
}

struct Failure {
    code: i32,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure { code: EXIT_USAGE, message: message.into() }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure { code: EXIT_MODEL, message: e.to_string() }
    }
}

impl From<ModelError> for Failure {
    fn from(e: ModelError) -> Self {
        Failure { code: EXIT_MODEL, message: e.to_string() }
    }
}

impl From<EvolutionError> for Failure {
    fn from(e: EvolutionError) -> Self {
        let code = match &e {
            EvolutionError::InvalidConfig(_) | EvolutionError::OutOfDomain(_) => EXIT_USAGE,
            EvolutionError::NonConvergent { .. } => EXIT_NON_CONVERGENT,
            EvolutionError::Eval(_) | EvolutionError::NonFinite(_) => EXIT_MODEL,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<FoliationError> for Failure {
    fn from(e: FoliationError) -> Self {
        match e {
            FoliationError::BadGrid(msg) => Failure::usage(msg),
            FoliationError::Evolution(inner) => inner.into(),
        }
    }
}

impl From<FlowError> for Failure {
    fn from(e: FlowError) -> Self {
        let code = match &e {
            FlowError::NotRemodeling | FlowError::OutsideLeaf { .. } => EXIT_USAGE,
            FlowError::Evolution(inner) => return Failure::from_inner_evolution(inner, &e),
            FlowError::Eval(_) => EXIT_MODEL,
            _ => EXIT_NON_CONVERGENT,
        };
        Failure { code, message: e.to_string() }
    }
}

impl Failure {
    fn from_inner_evolution(inner: &EvolutionError, outer: &FlowError) -> Self {
        let code = match inner {
            EvolutionError::InvalidConfig(_) | EvolutionError::OutOfDomain(_) => EXIT_USAGE,
            EvolutionError::NonConvergent { .. } => EXIT_NON_CONVERGENT,
            EvolutionError::Eval(_) | EvolutionError::NonFinite(_) => EXIT_MODEL,
        };
        Failure { code, message: outer.to_string() }
    }
}

fn init_thread_pool() {
    if let Ok(raw) = std::env::var("EVOLVE_THREADS") {
        if let Ok(n) = raw.trim().parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

fn emit(out: Option<&PathBuf>, bytes: &[u8]) -> Result<(), Failure> {
    match out {
        Some(path) => atomic_write(path, bytes)?,
        None => {
            std::io::stdout().write_all(bytes).map_err(Failure::from)?;
        }
    }
    Ok(())
}

fn load(path: &PathBuf) -> Result<(crate::model::ConstitutiveModel, String), Failure> {
    let bytes = std::fs::read(path).map_err(|e| Failure {
        code: EXIT_MODEL,
        message: format!("{}: {e}", path.display()),
    })?;
    let model = load_model_from_slice(&bytes)?;
    Ok((model, hash_bytes(&bytes)))
}

fn cmd_fibre(args: &FibreArgs) -> Result<i32, Failure> {
    let (model, _) = load(&args.model)?;
    let cfg = args.solver.to_config();
    let fibre = evolution_fibre(&model, args.t, &cfg)?;
    emit(args.out.as_ref(), &to_json_bytes(&FibreRecord::from(&fibre)))?;
    Ok(EXIT_OK)
}

fn cmd_classify(args: &ClassifyArgs) -> Result<i32, Failure> {
    let started = Instant::now();
    let (model, hash) = load(&args.model)?;
    let cfg = args.solver.to_config();
    let cls = classify_interval(&model, args.t0, args.t1, args.grid, &cfg)?;
    let leaves = extract_leaves(&cls);
    let verdict = detect_smooth_aging(&cls);
    let report = build_report(model.label(), &hash, &cfg, &cls, &leaves, &verdict, Vec::new());
    emit(args.out.as_ref(), &to_json_bytes(&report))?;
    if let Some(csv) = &args.csv {
        atomic_write(csv, &csv_bytes(&cls))?;
    }
    eprintln!(
        "classify: {} instants, {} leaves, {:.3} s",
        cls.grid.len(),
        leaves.len(),
        started.elapsed().as_secs_f64()
    );
    if cls.issues.is_empty() {
        Ok(EXIT_OK)
    } else {
        eprintln!("classify: {} instant(s) did not converge; see the report", cls.issues.len());
        Ok(EXIT_NON_CONVERGENT)
    }
}

fn cmd_process(args: &ProcessArgs) -> Result<i32, Failure> {
    let started = Instant::now();
    let (model, hash) = load(&args.model)?;
    let cfg = args.solver.to_config();
    let cls = classify_interval(&model, args.t0, args.t1, args.grid, &cfg)?;
    let leaves = extract_leaves(&cls);
    let leaf = leaves.get(args.leaf).ok_or_else(|| {
        Failure::usage(format!(
            "leaf index {} out of range; classify reported {} leaves",
            args.leaf,
            leaves.len()
        ))
    })?;
    if leaf.kind != LeafKind::RemodelingInterval {
        return Err(Failure::usage(format!(
            "leaf {} is an aging instant at t = {}; choose a remodeling leaf",
            args.leaf, leaf.t_lo
        )));
    }
    let t_ref = args.t_ref.unwrap_or(leaf.t_lo);
    let step = cls.spacing();
    let process = integrate_process(&model, leaf, t_ref, step, &cfg)?;
    let residual = isomorphism_residual(&model, &process, 20, cfg.seed)?;
    let defect = cocycle_check(&model, leaf, step, &cfg)?;

    let record = ProcessRecord {
        leaf_index: args.leaf,
        t_ref: process.t_ref,
        step,
        grid_points: process.grid.len(),
        max_isomorphism_residual: residual,
        cocycle_defect: defect,
    };
    let verdict = detect_smooth_aging(&cls);
    let report = build_report(
        model.label(),
        &hash,
        &cfg,
        &cls,
        &leaves,
        &verdict,
        vec![record],
    );
    std::io::stdout()
        .write_all(&to_json_bytes(&report.processes[0]))
        .map_err(Failure::from)?;
    if let Some(path) = &args.out {
        atomic_write(path, &to_json_bytes(&ProcessDump::from(&process)))?;
    }
    eprintln!(
        "process: leaf [{}, {}], {} samples, {:.3} s",
        leaf.t_lo,
        leaf.t_hi,
        process.grid.len(),
        started.elapsed().as_secs_f64()
    );
    if residual <= cfg.residual_tol && defect <= 1e-6 {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "process: verification failed (residual {residual:.3e}, cocycle defect {defect:.3e})"
        );
        Ok(EXIT_VERIFICATION)
    }
}

fn cmd_verify(args: &VerifyArgs) -> Result<i32, Failure> {
    let cfg = args.solver.to_config();
    let checks = crate::verify::run_suite(&cfg);
    let mut all_ok = true;
    for check in &checks {
        let status = if check.passed { "PASS" } else { "FAIL" };
        println!("check {status}: {} ({})", check.name, check.detail);
        all_ok &= check.passed;
    }
    Ok(if all_ok { EXIT_OK } else { EXIT_VERIFICATION })
}

/// Parses arguments (the first item is the program name) and runs the
/// selected subcommand, returning the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    init_thread_pool();
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let outcome = match &cli.command {
        Command::Fibre(args) => cmd_fibre(args),
        Command::Classify(args) => cmd_classify(args),
        Command::Process(args) => cmd_process(args),
        Command::Verify(args) => cmd_verify(args),
    };
    match outcome {
        Ok(code) => code,
        Err(failure) => {
            eprintln!("matevol: {}", failure.message);
            failure.code
        }
    }
}
