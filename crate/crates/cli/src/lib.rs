//! Experiment runner behind the `lindbladiff` binary.
//!
//! Every subcommand resolves an [`ExperimentConfig`] into concrete values,
//! runs one pipeline, and writes a JSON [`RunReport`] whose `config` field
//! can be fed back in with `--config` to repeat the run.

pub mod config;
pub mod plots;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lindbladiff::eigen::eigvalsh;
use lindbladiff::optimize::{gradient_check, maximize_qfi, GradCheckReport, OptTrace};
use lindbladiff::qfi::{qfi_of_params, Convention, QfiOptions};
use lindbladiff::{integrate, Error};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub use config::{parse_params, read_config, ExperimentConfig, ResolvedConfig};

pub const SCHEMA: &str = "lindbladiff-report/1";
pub const VERSION: &str = concat!("lindbladiff ", env!("CARGO_PKG_VERSION"));

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;
pub const EXIT_GRAD_CHECK: i32 = 4;

#[derive(Parser, Debug)]
#[command(name = "lindbladiff", version, about = "Differentiable Lindblad dynamics and quantum Fisher information")]
pub struct Cli {
    /// Experiment config (JSON). A previous report also works.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Where to write the report (or CSV for emit-plots); stdout if absent.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Seed for default parameters (default 0)
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Relative solver tolerance
    #[arg(long, global = true)]
    pub rtol: Option<f64>,
    /// Absolute solver tolerance
    #[arg(long, global = true)]
    pub atol: Option<f64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Default, Clone)]
pub struct PipelineArgs {
    /// `oat:<n>`, `phase`, or a model file.
    #[arg(long)]
    pub model: Option<String>,
    /// Comma-separated values or a JSON file.
    #[arg(long)]
    pub params: Option<String>,
    /// `Sz`, `Sz:<n>`, or a matrix file.
    #[arg(long)]
    pub generator: Option<String>,
    /// Dissipation rate of preset models (decay for `oat`, dephasing for `phase`)
    #[arg(long)]
    pub gamma: Option<f64>,
    /// `all-zero-pure[:n]`, `plus[:n]`, `maximally-mixed[:n]`, or a matrix file
    #[arg(long)]
    pub initial_state: Option<String>,
    /// Final time T (start is 0)
    #[arg(long)]
    pub t_end: Option<f64>,
    /// Report F (and gradients) under the ×4 convention.
    #[arg(long)]
    pub standard_convention: bool,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Integrate the master equation and report ρ(T).
    Solve(PipelineArgs),
    /// Quantum Fisher information of ρ(T), optionally with its gradient.
    Qfi {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Also compute ∇ₓF by the adjoint method
        #[arg(long)]
        grad: bool,
    },
    /// Compare adjoint, forward-tangent and finite-difference gradients.
    GradCheck {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Relative-error tolerance (default 1e-4)
        #[arg(long)]
        tol: Option<f64>,
        /// Central-difference step, scaled by max(1, |x_k|) (default 1e-6)
        #[arg(long)]
        h: Option<f64>,
    },
    /// Maximize F by gradient ascent.
    Optimize {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// JSON-lines trace file; defaults to `<out>.trace.jsonl`.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Iteration cap (default 200)
        #[arg(long)]
        max_iters: Option<usize>,
    },
    /// Write plot-ready CSV from an optimization trace or a trajectory.
    EmitPlots {
        #[command(flatten)]
        pipeline: PipelineArgs,
        /// Trace file (JSON lines) or optimize report.
        #[arg(long, conflicts_with = "trajectory")]
        trace: Option<PathBuf>,
        /// Sample ρ(t) of the configured experiment instead.
        #[arg(long)]
        trajectory: bool,
        #[arg(long, default_value_t = 50)]
        samples: usize,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Solve(_) => "solve",
            Command::Qfi { .. } => "qfi",
            Command::GradCheck { .. } => "grad-check",
            Command::Optimize { .. } => "optimize",
            Command::EmitPlots { .. } => "emit-plots",
        }
    }

    fn pipeline(&self) -> &PipelineArgs {
        match self {
            Command::Solve(p) => p,
            Command::Qfi { pipeline, .. }
            | Command::GradCheck { pipeline, .. }
            | Command::Optimize { pipeline, .. }
            | Command::EmitPlots { pipeline, .. } => pipeline,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorInfo {
    pub kind: String,
    pub message: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: String,
    pub version: String,
    pub command: String,
    pub status: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub config: Option<ResolvedConfig>,
    pub stages: BTreeMap<String, Value>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<ErrorInfo>,
    /// Seconds per stage; the only nondeterministic part of a report.
    pub wall_clock: BTreeMap<String, f64>,
}

impl RunReport {
    fn new(command: &str) -> Self {
        RunReport {
            schema: SCHEMA.into(),
            version: VERSION.into(),
            command: command.into(),
            status: "ok".into(),
            config: None,
            stages: BTreeMap::new(),
            error: None,
            wall_clock: BTreeMap::new(),
        }
    }

    fn fail(&mut self, e: &Error) -> i32 {
        let (status, code) = if e.is_validation() {
            ("validation-error", EXIT_VALIDATION)
        } else {
            ("numerical-error", EXIT_NUMERICAL)
        };
        self.status = status.into();
        self.error = Some(ErrorInfo {
            kind: status.into(),
            message: e.to_string(),
        });
        code
    }
}

fn timed<T>(report: &mut RunReport, stage: &str, f: impl FnOnce() -> T) -> T {
    let start = Instant::now();
    let out = f();
    report.wall_clock.insert(stage.into(), start.elapsed().as_secs_f64());
    out
}

/// Applies command-line overrides on top of the config file.
fn build_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let mut cfg = match &cli.config {
        Some(p) => read_config(p)?,
        None => ExperimentConfig::default(),
    };
    let p = cli.command.pipeline();
    if let Some(m) = &p.model {
        cfg.model = Some(m.clone());
    }
    if let Some(x) = &p.params {
        cfg.params = Some(parse_params(x)?);
    }
    if let Some(g) = &p.generator {
        cfg.generator = Some(g.clone());
    }
    if let Some(g) = p.gamma {
        cfg.gamma = Some(g);
    }
    if let Some(s) = &p.initial_state {
        cfg.initial_state = Some(s.clone());
    }
    if let Some(t) = p.t_end {
        let t0 = cfg.t_span.map_or(0.0, |s| s[0]);
        cfg.t_span = Some([t0, t]);
    }
    if p.standard_convention {
        cfg.convention = Some(Convention::Standard);
    }
    if let Some(s) = cli.seed {
        cfg.seed = Some(s);
    }
    if cli.rtol.is_some() || cli.atol.is_some() {
        let mut solver = cfg.solver.clone().unwrap_or_default();
        if let Some(r) = cli.rtol {
            solver.rtol = r;
        }
        if let Some(a) = cli.atol {
            solver.atol = a;
        }
        cfg.solver = Some(solver);
    }
    match &cli.command {
        Command::GradCheck { tol, h, .. } => {
            let mut gc = cfg.grad_check.clone().unwrap_or_default();
            if let Some(t) = tol {
                gc.tol = *t;
            }
            if let Some(h) = h {
                gc.h = *h;
            }
            cfg.grad_check = Some(gc);
        }
        Command::Optimize { max_iters: Some(n), .. } => {
            let mut o = cfg.optimizer.clone().unwrap_or_default();
            o.max_iters = *n;
            cfg.optimizer = Some(o);
        }
        _ => {}
    }
    Ok(cfg)
}

fn out_path(cli: &Cli, cfg: Option<&ExperimentConfig>) -> Option<PathBuf> {
    cli.out.clone().or_else(|| cfg.and_then(|c| c.output.clone()))
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> std::io::Result<()> {
    match path {
        Some(p) => {
            let mut f = BufWriter::new(File::create(p)?);
            f.write_all(bytes)?;
            f.flush()
        }
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(bytes)?;
            out.flush()
        }
    }
}

/// Serialized report with a trailing newline.
pub fn report_bytes(report: &RunReport) -> Vec<u8> {
    let mut s = serde_json::to_vec_pretty(report).expect("report serializes");
    s.push(b'\n');
    s
}

fn grad_check_table(r: &GradCheckReport) -> String {
    let mut s = format!(
        "{:>5}  {:>24}  {:>24}  {:>24}  {:>10}\n",
        "param", "adjoint", "forward", "finite-diff", "rel-err"
    );
    for k in 0..r.adjoint.len() {
        s += &format!(
            "{:>5}  {:>24.16e}  {:>24.16e}  {:>24.16e}  {:>10.3e}\n",
            k, r.adjoint[k], r.forward[k], r.finite_difference[k], r.relative_errors[k]
        );
    }
    s += &format!(
        "max relative error {:.3e} (tol {:.1e}): {}\n",
        r.max_relative_error,
        r.tolerance,
        if r.passed { "PASS" } else { "FAIL" }
    );
    s
}

fn trace_lines(trace: &OptTrace, x: &[f64]) -> Vec<u8> {
    let mut out = Vec::new();
    for it in &trace.iterates {
        serde_json::to_writer(&mut out, it).expect("iterate serializes");
        out.push(b'\n');
    }
    let best = trace.best();
    let summary = json!({
        "summary": {
            "status": trace.status,
            "evaluations": trace.evaluations,
            "iterations": trace.iterates.len() - 1,
            "x": x,
            "F": best.f,
            "counters": trace.counters,
        }
    });
    serde_json::to_writer(&mut out, &summary).expect("summary serializes");
    out.push(b'\n');
    out
}

fn default_trace_path(out: &Path) -> PathBuf {
    let mut name = out.file_stem().unwrap_or_default().to_os_string();
    name.push(".trace.jsonl");
    out.with_file_name(name)
}

/// Runs one pipeline; returns the report and the exit status.
fn run_pipeline(cli: &Cli, report: &mut RunReport, out: Option<&Path>) -> Result<i32, Error> {
    let cfg = build_config(cli)?;
    let exp = timed(report, "resolve", || cfg.resolve())?;
    report.config = Some(exp.config.clone());
    let c = &exp.config;
    let t_span = exp.t_span();
    let opts = QfiOptions {
        convention: c.convention,
        verify_cost: false,
    };
    match &cli.command {
        Command::Solve(_) => {
            let res = timed(report, "solve", || integrate(&exp.model, &c.params, &exp.rho0, t_span, &c.solver))?;
            let rho = res.final_state.matrix();
            let min_eig = eigvalsh(rho)?.first().copied().unwrap_or(0.0);
            report.stages.insert(
                "solve".into(),
                json!({
                    "final_state": config::matrix_json(rho),
                    "solver": res.stats,
                    "checkpoints": res.checkpoints.len(),
                    "t_span": [res.t_span.0, res.t_span.1],
                    "purity": res.final_state.purity(),
                    "min_eigenvalue": min_eig,
                }),
            );
            Ok(EXIT_OK)
        }
        Command::Qfi { grad, .. } => {
            let rep = timed(report, "qfi", || {
                qfi_of_params(&exp.model, &c.params, &exp.rho0, t_span, &exp.generator, &c.solver, *grad, &opts)
            })?;
            report.stages.insert("qfi".into(), serde_json::to_value(&rep).expect("serializes"));
            Ok(EXIT_OK)
        }
        Command::GradCheck { .. } => {
            let cost = exp.cost()?;
            let gc = &c.grad_check;
            let rep = timed(report, "grad_check", || {
                gradient_check(&exp.model, &c.params, &exp.rho0, t_span, cost.as_ref(), &c.solver, gc.h, gc.tol)
            })?;
            eprint!("{}", grad_check_table(&rep));
            let passed = rep.passed;
            report.stages.insert("grad_check".into(), serde_json::to_value(&rep).expect("serializes"));
            if passed {
                Ok(EXIT_OK)
            } else {
                report.status = "grad-check-failed".into();
                Ok(EXIT_GRAD_CHECK)
            }
        }
        Command::Optimize { trace, .. } => {
            let (x, tr) = timed(report, "optimize", || {
                maximize_qfi(&exp.model, &c.params, &exp.rho0, t_span, &exp.generator, &c.solver, &c.optimizer, opts)
            })?;
            let trace_path = trace.clone().or_else(|| out.map(default_trace_path));
            if let Some(p) = &trace_path {
                write_output(Some(p), &trace_lines(&tr, &x))
                    .map_err(|e| Error::parse(p.display().to_string(), format!("cannot write trace: {e}")))?;
            }
            report.stages.insert(
                "optimize".into(),
                json!({
                    "x": x,
                    "F": tr.best().f,
                    "status": tr.status,
                    "evaluations": tr.evaluations,
                    "counters": tr.counters,
                    "trace": tr,
                }),
            );
            Ok(EXIT_OK)
        }
        Command::EmitPlots { .. } => unreachable!("handled separately"),
    }
}

fn emit_plots(cli: &Cli) -> Result<Vec<u8>, Error> {
    let Command::EmitPlots {
        trace,
        trajectory,
        samples,
        ..
    } = &cli.command
    else {
        unreachable!()
    };
    let mut buf = Vec::new();
    match (trace, trajectory) {
        (Some(p), _) => {
            let iterates = plots::read_trace(p)?;
            plots::trace_csv(&iterates, &mut buf)
        }
        (None, true) => {
            let exp = build_config(cli)?.resolve()?;
            plots::trajectory_csv(&exp, *samples, &mut buf)
        }
        (None, false) => Err(Error::InvalidConfig("emit-plots needs --trace <file> or --trajectory".into())),
    }?;
    Ok(buf)
}

/// Entry point shared by the binary and the tests.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };

    if let Command::EmitPlots { .. } = cli.command {
        return match emit_plots(&cli) {
            Ok(csv) => match write_output(cli.out.as_deref(), &csv) {
                Ok(()) => EXIT_OK,
                Err(e) => {
                    eprintln!("error: cannot write output: {e}");
                    EXIT_IO
                }
            },
            Err(e) => {
                eprintln!("error: {e}");
                if e.is_validation() {
                    EXIT_VALIDATION
                } else {
                    EXIT_NUMERICAL
                }
            }
        };
    }

    let mut report = RunReport::new(cli.command.name());
    let cfg_for_out = cli.config.as_deref().and_then(|p| read_config(p).ok());
    let out = out_path(&cli, cfg_for_out.as_ref());
    let start = Instant::now();
    let code = match run_pipeline(&cli, &mut report, out.as_deref()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            report.fail(&e)
        }
    };
    report.wall_clock.insert("total".into(), start.elapsed().as_secs_f64());
    if let Err(e) = write_output(out.as_deref(), &report_bytes(&report)) {
        eprintln!("error: cannot write report: {e}");
        return EXIT_IO;
    }
    code
}
