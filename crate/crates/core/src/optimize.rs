//! Gradient ascent with Armijo backtracking, and a three-way gradient check.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DensityOperator, LindbladModel};
use crate::qfi::{qfi_of_params, Generator, QfiOptions};
use crate::sensitivity::{adjoint_gradient_with, forward_sensitivities, CostCofunction, GradientOptions};
use crate::solver::{integrate, SolveConfig, SolveCounters};

/// Something to maximize. Every call returns the value and the gradient.
pub trait Objective {
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;
}

/// Adapts a closure into an [`Objective`].
pub struct FnObjective<F>(pub F);

impl<F> Objective for FnObjective<F>
where
    F: FnMut(&[f64]) -> Result<(f64, Vec<f64>)>,
{
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        (self.0)(x)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptConfig {
    pub max_iters: usize,
    pub initial_step: f64,
    pub backtrack: f64,
    pub armijo: f64,
    pub grad_tol: f64,
    pub max_halvings: usize,
    pub seed: u64,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            max_iters: 200,
            initial_step: 0.1,
            backtrack: 0.5,
            armijo: 1e-4,
            grad_tol: 1e-6,
            max_halvings: 30,
            seed: 0,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v.is_finite() && v > 0.0;
        if !positive(self.initial_step) || !positive(self.armijo) || !positive(self.grad_tol) {
            return Err(Error::InvalidConfig(
                "initial_step, armijo and grad_tol must be positive".into(),
            ));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "backtracking factor {} not in (0, 1)",
                self.backtrack
            )));
        }
        if self.max_iters == 0 || self.max_halvings == 0 {
            return Err(Error::InvalidConfig("max_iters and max_halvings must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Iterate {
    pub iter: usize,
    pub x: Vec<f64>,
    #[serde(rename = "F")]
    pub f: f64,
    pub grad_norm: f64,
    /// Step length that produced this iterate (0 for the start point).
    pub step: f64,
    /// Objective evaluations so far, including this one.
    pub evaluations: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptStatus {
    Converged,
    MaxIters,
    LineSearchFailure,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptTrace {
    pub iterates: Vec<Iterate>,
    pub status: OptStatus,
    pub evaluations: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counters: Option<SolveCounters>,
}

impl OptTrace {
    pub fn best(&self) -> &Iterate {
        self.iterates.last().expect("trace starts with x0")
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|g| g * g).sum::<f64>().sqrt()
}

/// Maximizes `obj` from `x0`. Accepted iterates strictly increase the
/// objective, so the last iterate is also the best one seen.
pub fn maximize(obj: &mut dyn Objective, x0: &[f64], cfg: &OptConfig) -> Result<(Vec<f64>, OptTrace)> {
    cfg.validate()?;
    let (mut f, mut g) = obj.evaluate(x0)?;
    let mut evaluations = 1;
    let mut x = x0.to_vec();
    let mut iterates = vec![Iterate {
        iter: 0,
        x: x.clone(),
        f,
        grad_norm: norm(&g),
        step: 0.0,
        evaluations,
    }];
    let mut alpha = cfg.initial_step;
    let mut status = OptStatus::MaxIters;
    for iter in 1..=cfg.max_iters {
        let gn = norm(&g);
        if gn < cfg.grad_tol {
            status = OptStatus::Converged;
            break;
        }
        let mut accepted = None;
        for _ in 0..=cfg.max_halvings {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(xi, gi)| xi + alpha * gi).collect();
            let (ft, gt) = obj.evaluate(&trial)?;
            evaluations += 1;
            if ft.is_finite() && ft > f && ft >= f + cfg.armijo * alpha * gn * gn {
                accepted = Some((trial, ft, gt));
                break;
            }
            alpha *= cfg.backtrack;
        }
        let Some((xn, fnew, gnew)) = accepted else {
            status = OptStatus::LineSearchFailure;
            break;
        };
        x = xn;
        f = fnew;
        g = gnew;
        iterates.push(Iterate {
            iter,
            x: x.clone(),
            f,
            grad_norm: norm(&g),
            step: alpha,
            evaluations,
        });
        alpha /= cfg.backtrack;
    }
    if status == OptStatus::MaxIters && norm(&g) < cfg.grad_tol {
        status = OptStatus::Converged;
    }
    Ok((
        x,
        OptTrace {
            iterates,
            status,
            evaluations,
            counters: None,
        },
    ))
}

/// `F(x)` with its adjoint gradient.
pub struct QfiObjective<'a> {
    pub model: &'a LindbladModel,
    pub rho0: &'a DensityOperator,
    pub t_span: (f64, f64),
    pub generator: &'a Generator,
    pub solve: &'a SolveConfig,
    pub options: QfiOptions,
}

impl Objective for QfiObjective<'_> {
    fn evaluate(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
        let r = qfi_of_params(
            self.model,
            x,
            self.rho0,
            self.t_span,
            self.generator,
            self.solve,
            true,
            &self.options,
        )?;
        Ok((r.f, r.gradient.expect("gradient requested")))
    }
}

#[allow(clippy::too_many_arguments)]
pub fn maximize_qfi(
    model: &LindbladModel,
    x0: &[f64],
    rho0: &DensityOperator,
    t_span: (f64, f64),
    g: &Generator,
    solve: &SolveConfig,
    opt: &OptConfig,
    options: QfiOptions,
) -> Result<(Vec<f64>, OptTrace)> {
    let start = SolveCounters::snapshot();
    let mut obj = QfiObjective {
        model,
        rho0,
        t_span,
        generator: g,
        solve,
        options,
    };
    let (x, mut trace) = maximize(&mut obj, x0, opt)?;
    trace.counters = Some(SolveCounters::snapshot().since(start));
    Ok((x, trace))
}

pub const GRAD_CHECK_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub cost: f64,
    pub adjoint: Vec<f64>,
    pub forward: Vec<f64>,
    pub finite_difference: Vec<f64>,
    /// Per parameter, the largest pairwise relative error of the three.
    pub relative_errors: Vec<f64>,
    pub max_relative_error: f64,
    /// Adjoint against forward tangent alone.
    pub max_adjoint_forward_error: f64,
    pub step: f64,
    /// Denominator floor of the relative errors.
    pub error_floor: f64,
    pub tolerance: f64,
    pub passed: bool,
}

/// Relative error whose denominator never drops below `floor`, so that
/// components at the integrator's noise level are judged absolutely.
fn rel_err(a: f64, b: f64, floor: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        return 0.0;
    }
    d / a.abs().max(b.abs()).max(floor).max(1e-300)
}

/// Gradient components below this are compared on an absolute scale: a
/// millionth of the largest component, or 10⁴ times the solver tolerance
/// relative to the cost.
fn error_floor(gradient: &[f64], cost: f64, cfg: &SolveConfig) -> f64 {
    let scale = gradient.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (1e-6 * scale).max(1e4 * (cfg.rtol + cfg.atol) * cost.abs().max(1.0))
}

/// Compares adjoint, forward-tangent and central-difference gradients of
/// `cost(ρ(T))`.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    model: &LindbladModel,
    x: &[f64],
    rho0: &DensityOperator,
    t_span: (f64, f64),
    cost: &dyn CostCofunction,
    cfg: &SolveConfig,
    h: f64,
    tol: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::InvalidConfig(format!("finite-difference step {h} must be positive")));
    }
    let opts = GradientOptions {
        verify_cost: false,
        ..GradientOptions::default()
    };
    let adj = adjoint_gradient_with(model, x, rho0, t_span, cfg, cost, &opts)?;
    let params: Vec<usize> = (0..model.param_count()).collect();
    let fwd = forward_sensitivities(model, x, rho0, t_span, cfg, &params)?;
    let c = cost.gradient(&fwd.final_state)?;
    let forward: Vec<f64> = fwd.tangents.iter().map(|t| c.real_inner(t)).collect();

    let mut fd = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        let hk = h * x[k].abs().max(1.0);
        xp[k] = x[k] + hk;
        let fp = cost.value(integrate(model, &xp, rho0, t_span, cfg)?.final_state.matrix())?;
        xp[k] = x[k] - hk;
        let fm = cost.value(integrate(model, &xp, rho0, t_span, cfg)?.final_state.matrix())?;
        xp[k] = x[k];
        fd.push((fp - fm) / (2.0 * hk));
    }

    let floor = error_floor(&adj.gradient, adj.cost, cfg);
    let mut relative_errors = Vec::with_capacity(x.len());
    let mut max_af = 0.0f64;
    for k in 0..x.len() {
        let (a, f, d) = (adj.gradient[k], forward[k], fd[k]);
        let af = rel_err(a, f, floor);
        max_af = max_af.max(af);
        relative_errors.push(af.max(rel_err(a, d, floor)).max(rel_err(f, d, floor)));
    }
    let max_relative_error = relative_errors.iter().fold(0.0f64, |m, &v| m.max(v));
    Ok(GradCheckReport {
        cost: adj.cost,
        adjoint: adj.gradient,
        forward,
        finite_difference: fd,
        relative_errors,
        max_relative_error,
        max_adjoint_forward_error: max_af,
        step: h,
        error_floor: floor,
        tolerance: tol,
        passed: max_relative_error.is_finite() && max_relative_error < tol,
    })
}
