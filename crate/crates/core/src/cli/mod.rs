//! Command-line front end: `spectrum`, `steady`, `sweep-gate`, `sweep-kappa`
//! and `fit`.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use log::warn;
use serde_json::{json, Value};

use crate::experiments::{
    fit_esaki_tsu, fmt_float, linear_grid, log_grid, measure, sweep_decoherence, sweep_gate, SweepOptions,
    SweepTable, CSV_MAGIC,
};
use crate::lattice::{classify_edge_states, spectrum, EdgeDetection};
use crate::master_eq::solve_steady_state;
use crate::observables::current_profile;
use crate::{Error, Result};
pub use config::{parse_config, ParseOptions, RunConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "edgesense", version, about = "Steady-state transport through lattices with edge states")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Eigenvalues of the device lattice with edge-state flags.
    Spectrum(RunArgs),
    /// One steady state: current profile, populations, diagnostics.
    Steady(RunArgs),
    /// Current against gate voltage.
    SweepGate(RunArgs),
    /// Current against dephasing rate.
    SweepKappa(RunArgs),
    /// Esaki-Tsu fit of a dephasing sweep CSV.
    Fit(FitArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Run configuration (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory; defaults to `output.path` of the config.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, env = "EDGESENSE_THREADS")]
    pub parallel: Option<usize>,
    /// Dotted-path override, e.g. `decoherence.kappa=0.003`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Accept mu_L < mu_R.
    #[arg(long)]
    pub allow_reverse_bias: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    /// Sweep CSV with a `kappa` axis.
    #[arg(long)]
    pub input: PathBuf,
    /// Directory for `fit.json`; nothing is written when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse arguments, run, report errors as JSON on stderr, return the exit
/// code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli.command) {
        Ok(outcome) => {
            println!("{}", outcome.summary);
            outcome.exit_code
        }
        Err(e) => {
            let code = exit_code(&e);
            eprintln!("{}", error_json(&e, code));
            code
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotConverged { .. } | Error::StepUnderflow { .. } => EXIT_NOT_CONVERGED,
        Error::Io { .. } => EXIT_IO,
        _ => EXIT_USAGE,
    }
}

fn error_json(e: &Error, code: i32) -> Value {
    let kind = match e {
        Error::InvalidParameter { .. } => "invalid_parameter",
        Error::Dimension(_) => "dimension",
        Error::IndexOutOfRange { .. } => "index_out_of_range",
        Error::NotConverged { .. } => "not_converged",
        Error::StepUnderflow { .. } => "step_underflow",
        Error::Decomposition(_) => "decomposition",
        Error::Fit { .. } => "fit",
        Error::Config { .. } => "config",
        Error::Io { .. } => "io",
    };
    let mut v = json!({ "error": kind, "message": e.to_string(), "exit_code": code });
    match e {
        Error::Config { path, .. } | Error::Io { path, .. } => v["path"] = json!(path),
        Error::Fit { a, c, .. } => v["grid_best"] = json!({ "a": a, "c": c }),
        _ => {}
    }
    v
}

pub struct Outcome {
    pub summary: String,
    pub exit_code: i32,
    pub artifacts: Vec<PathBuf>,
}

pub fn run(cmd: &Command) -> Result<Outcome> {
    match cmd {
        Command::Spectrum(a) => with_config(a, run_spectrum),
        Command::Steady(a) => with_config(a, run_steady),
        Command::SweepGate(a) => with_config(a, |cfg, ctx| run_sweep(cfg, ctx, config::SweepAxisName::Delta)),
        Command::SweepKappa(a) => with_config(a, |cfg, ctx| run_sweep(cfg, ctx, config::SweepAxisName::Kappa)),
        Command::Fit(a) => run_fit(a),
    }
}

struct Context {
    out: PathBuf,
    parallel: usize,
    fingerprint: String,
}

fn with_config(args: &RunArgs, f: impl FnOnce(&RunConfig, &Context) -> Result<Outcome> + Send) -> Result<Outcome> {
    let text = fs::read_to_string(&args.config).map_err(|e| io_error(&args.config, e))?;
    let cfg = parse_config(&text, &args.overrides, ParseOptions { allow_reverse_bias: args.allow_reverse_bias })
        .map_err(|e| match e {
            Error::Config { path, message } => Error::Config { path: format!("{}: {path}", args.config.display()), message },
            other => other,
        })?;
    let out = args.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output.path));
    fs::create_dir_all(&out).map_err(|e| io_error(&out, e))?;
    let parallel = args.parallel.unwrap_or(0);
    let ctx = Context { out, parallel, fingerprint: cfg.fingerprint() };
    if parallel > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(parallel)
            .build()
            .map_err(|e| Error::param("parallel", e.to_string()))?
            .install(|| f(&cfg, &ctx))
    } else {
        f(&cfg, &ctx)
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io { path: path.display().to_string(), source }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| io_error(path, e))
}

fn run_spectrum(cfg: &RunConfig, ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let lat = cfg.lattice.build()?;
    let spec = spectrum(&lat);
    let edges = classify_edge_states(&spec, &lat.spectral_gaps(), &EdgeDetection::default())?;
    let mut text = format!("{CSV_MAGIC}{}\nindex,energy,edge,side,end_weight,localization_length,ipr\n", ctx.fingerprint);
    for (i, e) in spec.energies.iter().enumerate() {
        match edges.iter().find(|r| r.eigen_index == i) {
            Some(r) => text.push_str(&format!(
                "{i},{},1,{},{},{},{}\n",
                fmt_float(*e),
                serde_json::to_value(r.side).expect("side").as_str().unwrap_or(""),
                fmt_float(r.end_weight),
                fmt_float(r.localization_length),
                fmt_float(r.ipr)
            )),
            None => text.push_str(&format!("{i},{},0,,,,\n", fmt_float(*e))),
        }
    }
    let path = ctx.out.join("spectrum.csv");
    write_file(&path, &text)?;
    Ok(Outcome {
        summary: format!(
            "spectrum: {} eigenvalues, {} edge states, wall {:.3}s -> {}",
            spec.energies.len(),
            edges.len(),
            start.elapsed().as_secs_f64(),
            path.display()
        ),
        exit_code: EXIT_OK,
        artifacts: vec![path],
    })
}

fn run_steady(cfg: &RunConfig, ctx: &Context) -> Result<Outcome> {
    let start = Instant::now();
    let scenario = cfg.scenario()?;
    let sys = scenario.system()?;
    let (rho, diag) = solve_steady_state(&sys, scenario.kappa, &scenario.solver)?;
    let point = measure(&rho, &sys, diag, &cfg.measure_options())?;
    let profile = current_profile(&rho, &sys)?;
    let mut diagnostics = serde_json::to_value(&point.diagnostics).expect("diagnostics");
    if let Value::Object(m) = &mut diagnostics {
        m.remove("wall_time_s");
    }
    let doc = json!({
        "fingerprint": ctx.fingerprint,
        "config": serde_json::from_str::<Value>(&cfg.canonical_json()).expect("canonical json"),
        "current": profile,
        "imbalance": point.imbalance,
        "gradient": point.gradient,
        "populations": point.populations,
        "diagnostics": diagnostics,
    });
    let path = ctx.out.join("steady.json");
    write_file(&path, &serde_json::to_string_pretty(&doc).expect("json"))?;
    for w in &point.diagnostics.warnings {
        warn!("{w}");
    }
    Ok(Outcome {
        summary: format!(
            "steady: j={:.6e} residual={:.3e} max_deviation={:.3e} wall={:.3}s -> {}",
            point.current,
            point.residual,
            point.max_deviation,
            start.elapsed().as_secs_f64(),
            path.display()
        ),
        exit_code: EXIT_OK,
        artifacts: vec![path],
    })
}

fn run_sweep(cfg: &RunConfig, ctx: &Context, axis: config::SweepAxisName) -> Result<Outcome> {
    let start = Instant::now();
    let values = match &cfg.sweep {
        Some(s) if s.axis == axis => s.grid()?,
        Some(s) => {
            return Err(Error::config("sweep.axis", format!("config sweeps {:?} but the command sweeps {:?}", s.axis, axis)))
        }
        None => match axis {
            config::SweepAxisName::Delta => linear_grid(-1.2, 1.2, 0.01)?,
            config::SweepAxisName::Kappa => log_grid(1e-4, 1e-1, 91)?,
        },
    };
    let scenario = cfg.scenario()?;
    let opts = SweepOptions { parallelism: ctx.parallel, warm_start: cfg.analysis.warm_start, measure: cfg.measure_options() };
    let (table, name) = match axis {
        config::SweepAxisName::Delta => (sweep_gate(&scenario, &values, &opts, &ctx.fingerprint)?, "sweep_gate"),
        config::SweepAxisName::Kappa => (sweep_decoherence(&scenario, &values, &opts, &ctx.fingerprint)?, "sweep_kappa"),
    };
    let path = match cfg.output.format {
        config::OutputFormat::Csv => {
            let p = ctx.out.join(format!("{name}.csv"));
            table.write_csv(&p)?;
            p
        }
        config::OutputFormat::Json => {
            let p = ctx.out.join(format!("{name}.json"));
            write_file(&p, &serde_json::to_string_pretty(&table).expect("json"))?;
            p
        }
    };
    let failed = table.failed_rows();
    let max_res = table.residuals.iter().cloned().filter(|r| r.is_finite()).fold(0.0, f64::max);
    let (imax, jmax) = table
        .current
        .iter()
        .enumerate()
        .filter(|(_, j)| j.is_finite())
        .fold((0, f64::NEG_INFINITY), |acc, (i, &j)| if j > acc.1 { (i, j) } else { acc });
    Ok(Outcome {
        summary: format!(
            "{}: {} rows, {} failed, max j={:.6e} at {}={}, max residual={:.3e}, wall={:.2}s -> {}",
            name.replace('_', "-"),
            table.len(),
            failed.len(),
            jmax,
            table.axis_name,
            table.axis_values.get(imax).copied().unwrap_or(f64::NAN),
            max_res,
            start.elapsed().as_secs_f64(),
            path.display()
        ),
        exit_code: if failed.is_empty() { EXIT_OK } else { EXIT_NOT_CONVERGED },
        artifacts: vec![path],
    })
}

fn run_fit(args: &FitArgs) -> Result<Outcome> {
    let table = SweepTable::read_csv(&args.input)?;
    if table.axis_name != "kappa" {
        return Err(Error::config(args.input.display().to_string(), format!("expected a kappa sweep, got axis `{}`", table.axis_name)));
    }
    let failed = table.failed_rows();
    let ok: Vec<usize> = (0..table.len()).filter(|i| !failed.contains(i)).collect();
    let kappa: Vec<f64> = ok.iter().map(|&i| table.axis_values[i]).collect();
    let current: Vec<f64> = ok.iter().map(|&i| table.current[i]).collect();
    let fit = fit_esaki_tsu(&kappa, &current)?;
    let doc = json!({
        "a": fit.a,
        "c": fit.c,
        "relative_residual": fit.relative_residual,
        "kappa_peak": fit.kappa_peak,
        "fingerprint": table.config_fingerprint,
    });
    let mut artifacts = Vec::new();
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        let p = dir.join("fit.json");
        write_file(&p, &serde_json::to_string_pretty(&doc).expect("json"))?;
        artifacts.push(p);
    }
    Ok(Outcome { summary: doc.to_string(), exit_code: EXIT_OK, artifacts })
}
