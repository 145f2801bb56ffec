//! Command-line driver: `analyze`, `witness`, `reduce` and `solve`.
//!
//! Reports go to stdout, or to `report.json` under `--out`. `solve` writes
//! one `component_<k>.csv` per component under `--out`, and a single CSV on
//! stdout otherwise. Exit codes: 0 success, 2 when some component failed,
//! 1 on a fatal error.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::expr::{Expr, JetVar, Point};
use crate::ire::{analyze, ire_loop, measure, Analysis, IreOptions, IreOutcome, Stage, XiMode};
use crate::model_io::{
    emit_report_json, emit_trajectories_csv, emit_trajectory_csv, parse_any, parse_initial_point, validate_square, ComponentRecord,
    DaeSystem, Report, Trajectory, WitnessRecord,
};
use crate::numkernel::singular_values;
use crate::solver::{global_solve, starting_points, GlobalOptions, SolveConfig, SolveError};
use crate::structural::jacobian;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FATAL: i32 = 1;
pub const EXIT_PARTIAL: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "ire-dae", version, about = "Structural analysis and index reduction by embedding for DAEs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub opts: Options,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Signature matrix, offsets and δ.
    Analyze { model: PathBuf },
    /// Witness points of the constraints with their ranks.
    Witness { model: PathBuf },
    /// Run the IRE loop from every witness point.
    Reduce { model: PathBuf },
    /// Reduce, then integrate every component.
    Solve { model: PathBuf },
}

#[derive(Debug, Clone, Args)]
pub struct Options {
    #[arg(long, global = true, default_value_t = 1e-6)]
    pub abstol: f64,
    #[arg(long, global = true, default_value_t = 1e-3)]
    pub reltol: f64,
    #[arg(long, global = true, default_value_t = 1e-2)]
    pub step: f64,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Penalty factor for the penalty witness formulation.
    #[arg(long, global = true, default_value_t = 1e5)]
    pub beta: f64,
    /// Start of the interval; defaults to the model's.
    #[arg(long, global = true)]
    pub t0: Option<f64>,
    /// End of the interval; defaults to the model's.
    #[arg(long, global = true)]
    pub tend: Option<f64>,
    #[arg(long = "max-passes", global = true, default_value_t = 10)]
    pub max_passes: usize,
    /// Take ξ from the current values of the frozen derivatives instead of
    /// drawing them.
    #[arg(long = "xi-from-point", global = true)]
    pub xi_from_point: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// JSON starting point, used instead of witness points.
    #[arg(long, global = true)]
    pub initial: Option<PathBuf>,
}

/// A failure that ends the run, with the stage it happened in.
#[derive(Debug)]
pub struct Fatal {
    pub stage: &'static str,
    pub message: String,
}

impl std::fmt::Display for Fatal {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}: {}", self.stage, self.message)
    }
}

fn fatal(stage: &'static str) -> impl Fn(&dyn std::fmt::Display) -> Fatal {
    move |e| Fatal { stage, message: e.to_string() }
}

/// Parses the arguments, runs the command and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_FATAL } else { EXIT_OK };
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_FATAL
        }
    }
}

/// Runs one command. Output that is not written to `--out` goes to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<i32, Fatal> {
    let (model, cmd) = match &cli.command {
        Command::Analyze { model } => (model, "analyze"),
        Command::Witness { model } => (model, "witness"),
        Command::Reduce { model } => (model, "reduce"),
        Command::Solve { model } => (model, "solve"),
    };
    let sys = load_model(model)?;
    let opts = &cli.opts;
    let cfg = SolveConfig {
        abstol: opts.abstol,
        reltol: opts.reltol,
        h: opts.step,
        t0: opts.t0.unwrap_or(sys.t0),
        t_end: opts.tend.unwrap_or(sys.t_end),
        ..SolveConfig::default()
    };
    cfg.validate().map_err(|e| fatal("configuration")(&e))?;
    let initial = match &opts.initial {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| fatal("reading initial point")(&e))?;
            Some(parse_initial_point(&text, &sys).map_err(|e| fatal("initial point")(&e))?)
        }
        None => None,
    };
    let gopts = GlobalOptions {
        seed: opts.seed,
        beta: opts.beta,
        max_passes: opts.max_passes,
        xi_mode: if opts.xi_from_point { XiMode::FromPoint } else { XiMode::Random },
        initial,
    };

    let stage = Stage::new(sys.names.clone(), sys.equations.clone());
    let analysis = analyze(&stage, None).map_err(|e| fatal("structural analysis")(&e))?;
    let mut report = base_report(&sys, &analysis, opts.seed);
    if cmd == "analyze" {
        return finish(report, &[], opts.out.as_deref(), out, false);
    }

    let (points, witness) = starting_points(&analysis, &cfg, &gopts).map_err(|e| fatal("witness points")(&e))?;
    if let Some(w) = &witness {
        if w.is_empty() {
            return Err(Fatal { stage: "witness points", message: "no real witness points".into() });
        }
    }
    report.witness = points.iter().map(|p| witness_record(&sys, &analysis, p, cfg.abstol)).collect();
    match cmd {
        "witness" => finish(report, &[], opts.out.as_deref(), out, false),
        "reduce" => {
            let ire_opts = IreOptions { abstol: cfg.abstol, seed: opts.seed, max_passes: opts.max_passes, xi_mode: gopts.xi_mode };
            let outcomes: Vec<_> = points.par_iter().map(|p| ire_loop(stage.clone(), p, &ire_opts)).collect();
            report.components = outcomes
                .iter()
                .enumerate()
                .map(|(k, o)| match o {
                    Ok(o) => component_record(k, Some(o), None, None),
                    Err(e) => component_record(k, None, None, Some(&SolveError::from(e.clone()))),
                })
                .collect();
            finish(report, &[], opts.out.as_deref(), out, false)
        }
        _ => {
            let run = global_solve(&sys, &cfg, &gopts).map_err(|e| fatal("solve")(&e))?;
            report.components = run
                .components
                .iter()
                .map(|c| component_record(c.component, c.ire.as_ref(), c.trajectory.as_ref(), c.error.as_ref()))
                .collect();
            let trajs: Vec<Trajectory> = run.components.into_iter().filter_map(|c| c.trajectory).collect();
            finish(report, &trajs, opts.out.as_deref(), out, true)
        }
    }
}

fn load_model(path: &Path) -> Result<DaeSystem, Fatal> {
    let text = fs::read_to_string(path).map_err(|e| Fatal { stage: "reading model", message: format!("{}: {e}", path.display()) })?;
    let sys = parse_any(&text).map_err(|e| fatal("parsing model")(&e))?;
    validate_square(&sys).map_err(|e| fatal("parsing model")(&e))?;
    Ok(sys)
}

fn base_report(sys: &DaeSystem, analysis: &Analysis, seed: u64) -> Report {
    let mut report = Report::new(sys.names.clone());
    report.signature_matrix = crate::structural::signature_matrix(&sys.equations, sys.n());
    report.c = analysis.solution.c.clone();
    report.d = analysis.solution.d.clone();
    report.delta = analysis.delta;
    report.seed = seed;
    report
}

fn jet_name(v: JetVar, names: &[String]) -> String {
    Expr::jet(v.var, v.order).display(names).to_string()
}

fn witness_record(sys: &DaeSystem, analysis: &Analysis, p: &Point, abstol: f64) -> WitnessRecord {
    let state = analysis.state_vars();
    let point: BTreeMap<String, f64> = state.iter().map(|&v| (jet_name(v, &sys.names), p.get(v).unwrap_or(f64::NAN))).collect();
    let residual = analysis.constraints.iter().map(|e| e.evaluate(p).map_or(f64::INFINITY, f64::abs)).fold(0.0, f64::max);
    let min_singular = crate::ire::evaluate_matrix(&jacobian(&analysis.constraints, &state), p)
        .ok()
        .and_then(|m| singular_values(&m).last().copied())
        .unwrap_or(f64::NAN);
    let size = analysis.top_block().len();
    let rank = measure(analysis, p, abstol).map_or(0, |m| m.r);
    WitnessRecord { t: p.t, point, residual, min_singular, rank, size }
}

fn component_record(k: usize, ire: Option<&IreOutcome>, traj: Option<&Trajectory>, error: Option<&SolveError>) -> ComponentRecord {
    let names = ire.map(|o| o.stage.names.clone()).unwrap_or_default();
    ComponentRecord {
        component: k,
        status: if error.is_none() { "ok" } else { "failed" }.into(),
        error: error.map(describe),
        iterations: ire.map(|o| o.log.clone()).unwrap_or_default(),
        xi: ire.map(|o| o.xi()).unwrap_or_default(),
        final_delta: ire.map(|o| o.analysis.delta),
        regularized_system: ire.map(|o| o.regularized_rows().iter().map(|e| format!("{} = 0", e.display(&names))).collect()).unwrap_or_default(),
        samples: traj.map_or(0, |t| t.len()),
    }
}

/// Error text naming the failing stage of one component.
fn describe(e: &SolveError) -> String {
    use crate::ire::IreError;
    match e {
        SolveError::Ire(IreError::NoSolution { .. }) => format!("no solution on this component: {e}"),
        SolveError::Ire(IreError::MaxPasses(_)) => format!("still degenerate on this component: {e}"),
        SolveError::Ire(IreError::Inconsistent(_)) => format!("starting point is not consistent: {e}"),
        SolveError::Singular { .. } => format!("integration hit a singular point: {e}"),
        SolveError::Projection { .. } => format!("integration left the constraints: {e}"),
        _ => e.to_string(),
    }
}

fn finish(mut report: Report, trajs: &[Trajectory], dir: Option<&Path>, out: &mut dyn Write, csv: bool) -> Result<i32, Fatal> {
    let failed = report.components.iter().filter(|c| c.status != "ok").count();
    let code = if failed > 0 { EXIT_PARTIAL } else { EXIT_OK };
    report.status = match failed {
        0 => "ok".into(),
        n if n == report.components.len() => "failed".into(),
        _ => "partial".into(),
    };
    for c in report.components.iter().filter(|c| c.status != "ok") {
        eprintln!("component {}: {}", c.component, c.error.as_deref().unwrap_or("failed"));
    }
    let json = emit_report_json(&report);
    let io = fatal("writing output");
    match dir {
        Some(dir) => {
            fs::create_dir_all(dir).map_err(|e| io(&e))?;
            fs::write(dir.join("report.json"), json + "\n").map_err(|e| io(&e))?;
            for t in trajs {
                fs::write(dir.join(format!("component_{}.csv", t.component)), emit_trajectory_csv(t)).map_err(|e| io(&e))?;
            }
        }
        None if csv => out.write_all(emit_trajectories_csv(&report.variables, trajs).as_bytes()).map_err(|e| io(&e))?,
        None => writeln!(out, "{json}").map_err(|e| io(&e))?,
    }
    Ok(code)
}
