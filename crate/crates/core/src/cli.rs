// SPDX-License-Identifier: Apache-2.0
//! `overlay-sim` command line.
//!
//! Exit codes: 0 success, 1 verification or kernel failure, 2 usage error.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use crate::apps::{self, LuProblem, VggConfig, VggWeights};
use crate::element::{Element, Precision};
use crate::error::{Error, Result};
use crate::oracle;
use crate::overlay::{load_overlay, Overlay};
use crate::runtime::{check_dependence_sufficiency, emit_trace, ExecutionTrace, RunOptions, TaskGraph};
use crate::tensor::TensorBuffer;

#[derive(Debug, Parser)]
#[command(name = "overlay-sim", version, about = "Run applications on simulated command-queue overlays")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum App {
    Lu,
    Vgg,
}

impl App {
    fn manifest_name(self) -> &'static str {
        match self {
            App::Lu => "lu.overlay.json",
            App::Vgg => "vgg.overlay.json",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Scale {
    Tiny,
    Small,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the overlay manifest for an application.
    Build {
        app: App,
        /// Directory to write into.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Generate, schedule and execute an application.
    Run(RunArgs),
    /// Summarize and validate a trace file.
    InspectTrace { path: PathBuf },
}

#[derive(Debug, Clone, clap::Args)]
pub struct RunArgs {
    pub app: App,
    /// Blocks along the diagonal (LU).
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    /// Block size (LU).
    #[arg(long, default_value_t = 8)]
    pub m: usize,
    /// Network preset (VGG).
    #[arg(long, value_enum, default_value_t = Scale::Tiny)]
    pub scale: Scale,
    /// Input maps (VGG).
    #[arg(long, default_value_t = 1)]
    pub batch: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 4)]
    pub workers: usize,
    #[arg(long, value_enum, default_value_t = PrecisionArg::F64)]
    pub precision: PrecisionArg,
    /// Tensor-text input: the matrix A (LU) or the maps X (VGG).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Write the result (packed L\U or Y) as tensor text.
    #[arg(long)]
    pub dump: Option<PathBuf>,
    /// Write the execution trace.
    #[arg(long)]
    pub trace: Option<PathBuf>,
    /// Compare against the reference oracle.
    #[arg(long)]
    pub verify: bool,
    /// Print the conflict report and fail if it is not empty.
    #[arg(long)]
    pub check_races: bool,
    /// Execute even when unordered conflicting tasks exist.
    #[arg(long = "unsafe")]
    pub allow_unsafe: bool,
    /// Load the overlay from a manifest instead of building it.
    #[arg(long)]
    pub overlay: Option<PathBuf>,
    /// Directory of VGG weight files (`conv0.txt`.. `fc2.txt`).
    #[arg(long)]
    pub weights: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PrecisionArg {
    F32,
    F64,
}

impl From<PrecisionArg> for Precision {
    fn from(p: PrecisionArg) -> Self {
        match p {
            PrecisionArg::F32 => Precision::F32,
            PrecisionArg::F64 => Precision::F64,
        }
    }
}

/// A failed run: usage problems map to exit code 2, everything else to 1.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Failed(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            other => Failure::Failed(other.to_string()),
        }
    }
}

pub fn main_with_args<I, S>(args: I) -> ExitCode
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

pub fn execute(command: &Command) -> std::result::Result<(), Failure> {
    match command {
        Command::Build { app, out } => build(*app, out).map_err(Failure::from),
        Command::Run(args) => {
            if args.workers == 0 {
                return Err(Failure::Usage("--workers must be at least 1".into()));
            }
            match args.precision {
                PrecisionArg::F32 => run_app::<f32>(args),
                PrecisionArg::F64 => run_app::<f64>(args),
            }
        }
        Command::InspectTrace { path } => inspect_trace(path),
    }
}

fn build(app: App, out: &Path) -> Result<()> {
    let overlay = match app {
        App::Lu => apps::lu_overlay::<f64>()?,
        App::Vgg => apps::vgg_overlay::<f64>()?,
    };
    let path = out.join(app.manifest_name());
    overlay.save_manifest(&path)?;
    println!("wrote {} ({} queues)", path.display(), overlay.queue_count());
    for iface in overlay.interfaces() {
        println!("  queue {}: {}", iface.queue_no, iface.ip.name);
    }
    Ok(())
}

fn overlay_for<T: Element>(args: &RunArgs) -> Result<Overlay<T>> {
    match (&args.overlay, args.app) {
        (Some(path), _) => Ok(load_overlay(path)?),
        (None, App::Lu) => apps::lu_overlay(),
        (None, App::Vgg) => apps::vgg_overlay(),
    }
}

fn tolerance<T: Element>(f64_tol: f64) -> f64 {
    match T::PRECISION {
        Precision::F64 => f64_tol,
        Precision::F32 => 1e-4,
    }
}

/// Print the conflict report for `graph`; an error when it is not empty.
fn check_races<T: Element>(graph: &TaskGraph<T>) -> std::result::Result<(), Failure> {
    let report = check_dependence_sufficiency(graph);
    println!("{report}");
    if report.is_empty() {
        Ok(())
    } else {
        Err(Failure::Failed(format!("{} conflicting task pair(s)", report.pair_count())))
    }
}

fn finish(args: &RunArgs, trace: &ExecutionTrace, result: &TensorBuffer<impl Element>) -> Result<()> {
    if let Some(path) = &args.trace {
        emit_trace(trace, path)?;
    }
    if let Some(path) = &args.dump {
        result.save_text(path)?;
    }
    let summary = trace.summary();
    println!(
        "executed {} tasks on {} worker(s); span {} critical path {}",
        summary.tasks, args.workers, summary.span, summary.critical_path
    );
    Ok(())
}

fn run_app<T: Element>(args: &RunArgs) -> std::result::Result<(), Failure> {
    let overlay = overlay_for::<T>(args)?;
    let opts = RunOptions {
        workers: args.workers,
        allow_unsafe: args.allow_unsafe,
    };
    match args.app {
        App::Lu => {
            let problem = match &args.input {
                Some(path) => LuProblem::from_buffer(TensorBuffer::<T>::load_text(path).map_err(Error::from)?, args.m)?,
                None => LuProblem::generate(args.n, args.m, args.seed)?,
            };
            let original = problem.a.to_f64_vec();
            let graph = apps::lu_task_graph(&problem, &overlay)?;
            if args.check_races {
                check_races(&graph)?;
            }
            let trace = crate::runtime::run_with(&overlay, &graph, opts).map_err(Error::from)?;
            finish(args, &trace, &problem.a)?;
            if args.verify {
                let size = problem.size();
                let expected = oracle::oracle_lu(size, &original).map_err(Error::from)?;
                let actual = problem.a.to_f64_vec();
                let report = oracle::compare(&expected, &actual, tolerance::<T>(1e-10)).map_err(Error::from)?;
                let recon = oracle::lu_reconstruction_error(size, &original, &actual);
                println!(
                    "verify: rel_fro_err = {:.3e}, max_abs_err = {:.3e}, reconstruction = {:.3e}, tolerance = {:.0e}",
                    report.rel_fro_err, report.max_abs_err, recon, report.tolerance
                );
                if !report.pass || recon > report.tolerance {
                    return Err(Failure::Failed("LU verification failed".into()));
                }
            }
        }
        App::Vgg => {
            let base = match args.scale {
                Scale::Tiny => VggConfig::tiny(args.batch),
                Scale::Small => VggConfig::small(args.batch),
            };
            let (config, x) = match &args.input {
                Some(path) => {
                    let x = TensorBuffer::<T>::load_text(path).map_err(Error::from)?;
                    let shape = x.shape();
                    if shape.len() != 4 || shape[..3] != [base.height, base.width, base.channels] {
                        return Err(Failure::Usage(format!(
                            "input shape {shape:?} does not match the {:?} preset ({}x{}x{}xN)",
                            args.scale, base.height, base.width, base.channels
                        )));
                    }
                    (VggConfig { batch: shape[3], ..base }, x)
                }
                None => {
                    base.validate()?;
                    let x = apps::vgg_input(&base, args.seed)?;
                    (base, x)
                }
            };
            let weights = match &args.weights {
                Some(dir) => VggWeights::from_dir(&config, dir)?,
                None => VggWeights::seeded(&config, args.seed)?,
            };
            let y = TensorBuffer::<T>::zeros(&[config.y_len(), config.batch]).map_err(Error::from)?;
            let graph = apps::vgg_task_graph(&config, &x, &y, &weights, &overlay)?;
            if args.check_races {
                check_races(&graph)?;
            }
            let trace = crate::runtime::run_with(&overlay, &graph, opts).map_err(Error::from)?;
            finish(args, &trace, &y)?;
            if args.verify {
                let run = apps::VggRun { y, trace };
                let expected = oracle::oracle_cnn_forward(&config, &x, &weights).map_err(Error::from)?;
                let actual: Vec<f64> = run.outputs(&config).concat().into_iter().map(T::as_f64).collect();
                let report = oracle::compare(&expected.concat(), &actual, tolerance::<T>(1e-6)).map_err(Error::from)?;
                println!(
                    "verify: rel_fro_err = {:.3e}, max_abs_err = {:.3e}, tolerance = {:.0e}",
                    report.rel_fro_err, report.max_abs_err, report.tolerance
                );
                if !report.pass {
                    return Err(Failure::Failed("VGG verification failed".into()));
                }
            }
        }
    }
    Ok(())
}

fn inspect_trace(path: &Path) -> std::result::Result<(), Failure> {
    let trace = ExecutionTrace::load(path).map_err(|e| Failure::Failed(e.to_string()))?;
    print!("{}", trace.summary());
    let problems = trace.validate();
    if problems.is_empty() {
        println!("valid: order is a linear extension of the edge list");
        Ok(())
    } else {
        for p in &problems {
            println!("invalid: {p}");
        }
        Err(Failure::Failed(format!("{} trace violation(s)", problems.len())))
    }
}
