use std::path::{Path, PathBuf};

use lindbladiff::io;
use lindbladiff::linalg::{CMatrix, C64};
use lindbladiff::model::{preset_oat, preset_phase, DensityOperator, LindbladModel};
use lindbladiff::optimize::{OptConfig, GRAD_CHECK_TOL};
use lindbladiff::qfi::{random_parameters, Convention, Generator};
use lindbladiff::sensitivity::{CostCofunction, ElementCost, LinearCost, Part};
use lindbladiff::{Error, Result, SolveConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum CostSpec {
    Qfi,
    Element { row: usize, col: usize, part: Part },
    /// `Re Tr(Aρ)` with `A` read from a matrix file.
    Observable { matrix: String },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GradCheckConfig {
    pub h: f64,
    pub tol: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        GradCheckConfig {
            h: 1e-6,
            tol: GRAD_CHECK_TOL,
        }
    }
}

/// Experiment description as written by the user. Unset fields are
/// resolved to concrete values before anything runs.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// `"oat:<n>"`, `"phase"`, or a model file.
    pub model: Option<String>,
    pub gamma: Option<f64>,
    /// `"all-zero-pure:<n>"`, `"plus:<n>"`, `"maximally-mixed:<n>"`, or a
    /// matrix file.
    pub initial_state: Option<String>,
    /// White-noise admixture applied to the initial state.
    pub depolarize: Option<f64>,
    pub t_span: Option<[f64; 2]>,
    pub params: Option<Vec<f64>>,
    pub solver: Option<SolveConfig>,
    /// `"Sz"`, `"Sz:<n>"`, or a matrix file.
    pub generator: Option<String>,
    pub convention: Option<Convention>,
    pub cost: Option<CostSpec>,
    pub grad_check: Option<GradCheckConfig>,
    pub optimizer: Option<OptConfig>,
    pub seed: Option<u64>,
    pub output: Option<PathBuf>,
}

/// Fully resolved configuration; echoed verbatim in every report, and
/// accepted back as a config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedConfig {
    pub model: String,
    pub gamma: f64,
    pub initial_state: String,
    pub depolarize: f64,
    pub t_span: [f64; 2],
    pub params: Vec<f64>,
    pub solver: SolveConfig,
    pub generator: String,
    pub convention: Convention,
    pub cost: CostSpec,
    pub grad_check: GradCheckConfig,
    pub optimizer: OptConfig,
    pub seed: u64,
}

/// Everything a pipeline needs, built from a [`ResolvedConfig`].
pub struct Experiment {
    pub config: ResolvedConfig,
    pub model: LindbladModel,
    pub rho0: DensityOperator,
    pub generator: Generator,
}

impl Experiment {
    pub fn t_span(&self) -> (f64, f64) {
        (self.config.t_span[0], self.config.t_span[1])
    }

    pub fn cost(&self) -> Result<Box<dyn CostCofunction>> {
        Ok(match &self.config.cost {
            CostSpec::Qfi => Box::new(lindbladiff::qfi::QfiCost::new(self.generator.clone())),
            CostSpec::Element { row, col, part } => {
                let d = self.model.dim();
                if *row >= d || *col >= d {
                    return Err(Error::parse("/cost", format!("element ({row}, {col}) outside {d}x{d}")));
                }
                Box::new(ElementCost {
                    row: *row,
                    col: *col,
                    part: *part,
                })
            }
            CostSpec::Observable { matrix } => {
                let op = io::load_operator(Path::new(matrix))?.to_dense();
                if op.shape() != (self.model.dim(), self.model.dim()) {
                    return Err(Error::parse("/cost/matrix", "observable dimension does not match the model"));
                }
                Box::new(LinearCost { observable: op })
            }
        })
    }
}

/// Reads a config file. A previous report is accepted too: its `config`
/// echo is used.
pub fn read_config(path: &Path) -> Result<ExperimentConfig> {
    let mut v = io::read_json(path)?;
    if v.get("schema").is_some() {
        if let Some(c) = v.get_mut("config") {
            v = c.take();
        }
    }
    serde_json::from_value(v).map_err(|e| Error::parse(path.display().to_string(), e.to_string()))
}

fn qubits_from_dim(dim: usize) -> usize {
    dim.trailing_zeros() as usize
}

fn preset_arg(spec: &str, name: &str, path: &str) -> Result<Option<usize>> {
    match spec.strip_prefix(name) {
        Some("") => Ok(None),
        Some(rest) => match rest.strip_prefix(':').and_then(|n| n.parse::<usize>().ok()) {
            Some(n) => Ok(Some(n)),
            None => Err(Error::parse(path, format!("malformed preset \"{spec}\""))),
        },
        None => Err(Error::parse(path, "not this preset")),
    }
}

fn is_file(spec: &str) -> bool {
    Path::new(spec).is_file()
}

fn load_model(spec: &str, gamma: f64) -> Result<LindbladModel> {
    if spec.starts_with("oat") && !is_file(spec) {
        let n = preset_arg(spec, "oat", "/model")?
            .ok_or_else(|| Error::parse("/model", "preset \"oat\" needs a qubit count, e.g. \"oat:2\""))?;
        return preset_oat(n, gamma).map_err(|e| Error::parse("/model", e.to_string()));
    }
    if spec == "phase" && !is_file(spec) {
        return preset_phase(gamma).map_err(|e| Error::parse("/model", e.to_string()));
    }
    if is_file(spec) {
        return io::load_model(Path::new(spec));
    }
    Err(Error::parse(
        "/model",
        format!("unknown preset or missing file \"{spec}\" (presets: oat:<n>, phase)"),
    ))
}

fn load_state(spec: &str, n: usize) -> Result<DensityOperator> {
    if is_file(spec) {
        return io::load_state(Path::new(spec));
    }
    let check = |m: Option<usize>| -> Result<()> {
        match m {
            Some(m) if m != n => Err(Error::parse(
                "/initial_state",
                format!("state has {m} qubits, model has {n}"),
            )),
            _ => Ok(()),
        }
    };
    let d = 1usize << n;
    if let Ok(m) = preset_arg(spec, "all-zero-pure", "/initial_state") {
        check(m)?;
        return Ok(DensityOperator::all_zero(n));
    }
    if let Ok(m) = preset_arg(spec, "maximally-mixed", "/initial_state") {
        check(m)?;
        return Ok(DensityOperator::maximally_mixed(n));
    }
    if let Ok(m) = preset_arg(spec, "plus", "/initial_state") {
        check(m)?;
        let amp = C64::new(1.0 / (d as f64).sqrt(), 0.0);
        return DensityOperator::pure(&vec![amp; d]);
    }
    Err(Error::parse(
        "/initial_state",
        format!("unknown preset or missing file \"{spec}\" (presets: all-zero-pure:<n>, plus:<n>, maximally-mixed:<n>)"),
    ))
}

fn load_generator(spec: &str, n: usize) -> Result<Generator> {
    if is_file(spec) {
        let g = Generator::new(io::load_operator(Path::new(spec))?)
            .map_err(|e| Error::parse(format!("{spec}#"), e.to_string()))?;
        if g.dim() != 1 << n {
            return Err(Error::parse("/generator", "generator dimension does not match the model"));
        }
        return Ok(g);
    }
    match preset_arg(spec, "Sz", "/generator") {
        Ok(Some(m)) if m != n => Err(Error::parse(
            "/generator",
            format!("Sz:{m} does not act on a {n}-qubit model"),
        )),
        Ok(_) => Ok(Generator::collective_sz(n)),
        Err(_) => Err(Error::parse(
            "/generator",
            format!("unknown preset or missing file \"{spec}\" (presets: Sz, Sz:<n>)"),
        )),
    }
}

impl ExperimentConfig {
    /// Fills every default and builds the model, state and generator.
    pub fn resolve(&self) -> Result<Experiment> {
        let seed = self.seed.unwrap_or(0);
        let gamma = self.gamma.unwrap_or(0.0);
        if !(gamma.is_finite() && gamma >= 0.0) {
            return Err(Error::parse("/gamma", format!("negative or non-finite rate {gamma}")));
        }
        let model_spec = self.model.clone().unwrap_or_else(|| "oat:2".into());
        let model = load_model(&model_spec, gamma)?;
        let n = qubits_from_dim(model.dim());

        let state_spec = self
            .initial_state
            .clone()
            .unwrap_or_else(|| format!("all-zero-pure:{n}"));
        let mut rho0 = load_state(&state_spec, n)?;
        if rho0.dim() != model.dim() {
            return Err(Error::parse("/initial_state", "state dimension does not match the model"));
        }
        let depolarize = self.depolarize.unwrap_or(0.0);
        if depolarize != 0.0 {
            rho0 = rho0
                .depolarized(depolarize)
                .map_err(|e| Error::parse("/depolarize", e.to_string()))?;
        }

        let t_span = self.t_span.unwrap_or([0.0, 1.0]);
        let params = match &self.params {
            Some(p) => p.clone(),
            None => random_parameters(model.param_count(), seed),
        };
        model.check_params(&params).map_err(|e| Error::parse("/params", e.to_string()))?;

        let mut solver = self.solver.clone().unwrap_or_default();
        solver.validate().map_err(|e| Error::parse("/solver", e.to_string()))?;
        solver.checkpoints = Some(solver.checkpoint_budget());

        let generator_spec = self.generator.clone().unwrap_or_else(|| format!("Sz:{n}"));
        let generator = load_generator(&generator_spec, n)?;

        // One seed drives everything: the optimizer's copy follows it.
        let mut optimizer = self.optimizer.clone().unwrap_or_default();
        optimizer.seed = seed;
        optimizer.validate().map_err(|e| Error::parse("/optimizer", e.to_string()))?;

        let grad_check = self.grad_check.clone().unwrap_or_default();
        if !(grad_check.h > 0.0 && grad_check.tol > 0.0) {
            return Err(Error::parse("/grad_check", "h and tol must be positive"));
        }

        Ok(Experiment {
            config: ResolvedConfig {
                model: model_spec,
                gamma,
                initial_state: state_spec,
                depolarize,
                t_span,
                params,
                solver,
                generator: generator_spec,
                convention: self.convention.unwrap_or_default(),
                cost: self.cost.clone().unwrap_or(CostSpec::Qfi),
                grad_check,
                optimizer,
                seed,
            },
            model,
            rho0,
            generator,
        })
    }
}

/// Parses `--params`: comma-separated numbers or a JSON file holding an
/// array.
pub fn parse_params(arg: &str) -> Result<Vec<f64>> {
    if is_file(arg) {
        let v = io::read_json(Path::new(arg))?;
        return serde_json::from_value(v).map_err(|e| Error::parse(format!("{arg}#"), e.to_string()));
    }
    arg.split(',')
        .filter(|s| !s.trim().is_empty())
        .enumerate()
        .map(|(i, s)| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse(format!("/params/{i}"), format!("not a number: \"{s}\"")))
        })
        .collect()
}

pub fn matrix_json(m: &CMatrix) -> serde_json::Value {
    io::matrix_to_json(m)
}
