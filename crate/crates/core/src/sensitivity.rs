//! Forward (tangent) and reverse (adjoint) sensitivities of [`integrate`].
//!
//! The complex state is treated as a real vector of doubled length
//! (`Re ρ`, `Im ρ`). Cotangents are stored as complex matrices
//! `∂c/∂Re ρ + i ∂c/∂Im ρ`, so that the real pairing of a cotangent `Λ`
//! with a perturbation `δρ` is `Re Tr(Λ† δρ)`. Since ℒ is complex-linear,
//! the transpose of its realified Jacobian is the Hilbert–Schmidt adjoint ℒ†.
//!
//! The reverse pass is the exact discrete adjoint of the Runge–Kutta steps
//! taken by the forward solve, replayed segment by segment from
//! checkpoints. Gradients therefore do not depend on the checkpoint count.
//!
//! [`integrate`]: crate::solver::integrate

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64};
use crate::model::{BoundModel, DensityOperator, LindbladModel};
use crate::solver::{
    self, count_adjoint_solve, integrate, stage_states, BlockSystem, Blocks, SolveConfig, SolveResult, SolverStats,
    StateSystem, A, B, C,
};

/// `(Re ρ, Im ρ)` stacked, each block row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct RealifiedState(pub Vec<f64>);

pub fn realify(rho: &CMatrix) -> RealifiedState {
    let s = rho.as_slice();
    let mut v = Vec::with_capacity(2 * s.len());
    v.extend(s.iter().map(|z| z.re));
    v.extend(s.iter().map(|z| z.im));
    RealifiedState(v)
}

/// Inverse of [`realify`] for a `dim × dim` matrix.
pub fn complexify(v: &RealifiedState, dim: usize) -> Result<CMatrix> {
    let n = dim * dim;
    if v.0.len() != 2 * n {
        return Err(Error::InvalidLayout(format!(
            "realified length {} does not match dimension {dim}",
            v.0.len()
        )));
    }
    let data = (0..n).map(|i| C64::new(v.0[i], v.0[n + i])).collect();
    CMatrix::from_vec(dim, dim, data)
}

/// A scalar cost of the final state with its gradient.
pub trait CostCofunction {
    fn value(&self, rho: &CMatrix) -> Result<f64>;

    /// `∂c/∂Re ρ + i ∂c/∂Im ρ`.
    fn gradient(&self, rho: &CMatrix) -> Result<CMatrix>;

    /// Directions along which the gradient is checked against finite
    /// differences. Defaults to random complex directions.
    fn check_directions(&self, rho: &CMatrix, rng: &mut ChaCha8Rng) -> Vec<CMatrix> {
        (0..3).map(|_| random_matrix(rho.rows(), rng)).collect()
    }
}

pub(crate) fn random_matrix(d: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    let m = CMatrix::from_fn(d, d, |_, _| {
        C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    let n = m.frobenius_norm();
    m.scale_real(1.0 / n)
}

/// `c(ρ) = Re Tr(A ρ)`.
#[derive(Clone, Debug)]
pub struct LinearCost {
    pub observable: CMatrix,
}

impl CostCofunction for LinearCost {
    fn value(&self, rho: &CMatrix) -> Result<f64> {
        Ok(self.observable.matmul(rho)?.trace()?.re)
    }

    fn gradient(&self, _rho: &CMatrix) -> Result<CMatrix> {
        Ok(self.observable.adjoint())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Part {
    Re,
    Im,
}

/// `c(ρ) = Re ρᵢⱼ` or `Im ρᵢⱼ`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ElementCost {
    pub row: usize,
    pub col: usize,
    pub part: Part,
}

impl CostCofunction for ElementCost {
    fn value(&self, rho: &CMatrix) -> Result<f64> {
        if self.row >= rho.rows() || self.col >= rho.cols() {
            return Err(Error::InvalidConfig(format!(
                "element ({}, {}) outside {}x{}",
                self.row,
                self.col,
                rho.rows(),
                rho.cols()
            )));
        }
        let z = rho[(self.row, self.col)];
        Ok(match self.part {
            Part::Re => z.re,
            Part::Im => z.im,
        })
    }

    fn gradient(&self, rho: &CMatrix) -> Result<CMatrix> {
        self.value(rho)?;
        let mut g = CMatrix::zeros(rho.rows(), rho.cols());
        g[(self.row, self.col)] = match self.part {
            Part::Re => C64::new(1.0, 0.0),
            Part::Im => C64::new(0.0, 1.0),
        };
        Ok(g)
    }
}

/// Step for the built-in cost-gradient verifier.
pub const COST_CHECK_STEP: f64 = 1e-6;
/// Relative tolerance of the built-in cost-gradient verifier.
pub const COST_CHECK_RTOL: f64 = 1e-5;

/// Compares the analytic cost gradient with central differences along the
/// cost's check directions.
pub fn verify_cost_gradient(cost: &dyn CostCofunction, rho: &CMatrix, seed: u64) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grad = cost.gradient(rho)?;
    if !grad.is_finite() {
        return Err(Error::NonFinite("cost gradient"));
    }
    for (n, dir) in cost.check_directions(rho, &mut rng).iter().enumerate() {
        let h = COST_CHECK_STEP;
        let mut plus = rho.clone();
        plus.axpy_real(h, dir);
        let mut minus = rho.clone();
        minus.axpy_real(-h, dir);
        let fd = (cost.value(&plus)? - cost.value(&minus)?) / (2.0 * h);
        let an = grad.real_inner(dir);
        let scale = fd.abs().max(an.abs());
        let err = (fd - an).abs();
        if err > COST_CHECK_RTOL * scale + 1e-7 {
            return Err(Error::CostGradientMismatch {
                direction: n,
                rel_err: err / scale.max(f64::MIN_POSITIVE),
            });
        }
    }
    Ok(())
}

/// `(ρ, ∂ρ/∂x_k for k in params)`; step control sees only the state.
struct TangentSystem<'a> {
    bound: &'a BoundModel<'a>,
    params: &'a [usize],
}

impl BlockSystem for TangentSystem<'_> {
    fn rhs(&self, t: f64, y: &[CMatrix]) -> Blocks {
        let mut out = Vec::with_capacity(y.len());
        out.push(self.bound.apply(t, &y[0]));
        for (b, &k) in self.params.iter().enumerate() {
            let mut d = self.bound.apply(t, &y[b + 1]);
            d += &self.bound.apply_param_derivative(t, k, &y[0]);
            out.push(d);
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct ForwardSensitivity {
    pub final_state: CMatrix,
    /// `∂ρ(T)/∂x_k`, one per requested parameter.
    pub tangents: Vec<CMatrix>,
    pub stats: SolverStats,
}

/// Tangents of `ρ(T)` for each parameter in `params`, integrated jointly
/// with the state on the state's own step sequence.
pub fn forward_sensitivities(
    model: &LindbladModel,
    x: &[f64],
    rho0: &DensityOperator,
    t_span: (f64, f64),
    cfg: &SolveConfig,
    params: &[usize],
) -> Result<ForwardSensitivity> {
    solver::validate_initial(model, rho0)?;
    if let Some(&k) = params.iter().find(|&&k| k >= model.param_count()) {
        return Err(Error::ParameterIndex {
            index: k,
            count: model.param_count(),
        });
    }
    let bound = model.bind(x)?;
    let sys = TangentSystem { bound: &bound, params };
    let d = model.dim();
    let mut y0 = vec![rho0.matrix().clone()];
    y0.extend(params.iter().map(|_| CMatrix::zeros(d, d)));
    let solve = solver::integrate_blocks(&sys, 1, y0, t_span, cfg, None)?;
    let mut blocks = solve.y;
    let tangents = blocks.split_off(1);
    let final_state = blocks.pop().expect("state block");
    let trace_drift = (final_state.trace()? - C64::new(1.0, 0.0)).norm();
    Ok(ForwardSensitivity {
        stats: SolverStats {
            accepted: solve.accepted,
            rejected: solve.rejected,
            rhs_evals: solve.rhs_evals,
            trace_drift,
            hermiticity_drift: final_state.hermiticity_residual(),
        },
        final_state,
        tangents,
    })
}

/// `(ρ(T), ∂ρ(T)/∂x_k)`.
pub fn forward_sensitivity(
    model: &LindbladModel,
    x: &[f64],
    rho0: &DensityOperator,
    t_span: (f64, f64),
    cfg: &SolveConfig,
    k: usize,
) -> Result<(CMatrix, CMatrix)> {
    let mut fs = forward_sensitivities(model, x, rho0, t_span, cfg, &[k])?;
    Ok((fs.final_state, fs.tangents.pop().expect("one tangent")))
}

#[derive(Clone, Debug)]
pub struct GradientOptions {
    /// Check the cost gradient against finite differences before the
    /// backward pass.
    pub verify_cost: bool,
    pub verify_seed: u64,
}

impl Default for GradientOptions {
    fn default() -> Self {
        GradientOptions {
            verify_cost: true,
            verify_seed: 0x5eed,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AdjointStats {
    pub steps: usize,
    pub segments: usize,
    /// `ℒ†` applications in the backward pass.
    pub adjoint_applications: usize,
    /// Largest number of full states held at once during the backward pass
    /// (checkpoints plus the replayed segment).
    pub peak_retained_states: usize,
    pub checkpoints: usize,
    pub longest_segment: usize,
    /// `∂H/∂x` came from central differences.
    pub fd_assisted: bool,
}

#[derive(Clone, Debug)]
pub struct GradientResult {
    pub cost: f64,
    /// `dc/dx`.
    pub gradient: Vec<f64>,
    /// `dc/dρ₀` as a complex cotangent.
    pub initial_cotangent: CMatrix,
    /// `dc/dT`.
    pub final_time_derivative: f64,
    pub final_state: DensityOperator,
    pub forward: SolverStats,
    pub adjoint: AdjointStats,
}

impl GradientResult {
    pub fn initial_gradient(&self) -> RealifiedState {
        realify(&self.initial_cotangent)
    }
}

/// Backpropagates a terminal cotangent through a finished forward solve.
///
/// Returns `(dc/dx, dc/dρ₀ cotangent, stats)`.
pub fn adjoint_pass(
    model: &LindbladModel,
    x: &[f64],
    solve: &SolveResult,
    cfg: &SolveConfig,
    terminal: &CMatrix,
) -> Result<(Vec<f64>, CMatrix, AdjointStats)> {
    let d = model.dim();
    if terminal.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            op: "adjoint_pass",
            left: (d, d),
            right: terminal.shape(),
        });
    }
    let bound = model.bind(x)?;
    let sys = StateSystem { bound: &bound };
    count_adjoint_solve();
    let p = model.param_count();
    let mut grad = vec![0.0; p];
    let mut lambda = terminal.clone();
    let mut stats = AdjointStats {
        checkpoints: solve.checkpoints.len(),
        longest_segment: solve.longest_segment(),
        fd_assisted: model.uses_fd_derivative(),
        ..AdjointStats::default()
    };
    for w in solve.checkpoints.windows(2).rev() {
        let steps = solver::dense_segment(model, x, &w[0], w[1].step_index, solve.t_span, cfg)?;
        stats.segments += 1;
        stats.peak_retained_states = stats.peak_retained_states.max(solve.checkpoints.len() + steps.len());
        for step in steps.iter().rev() {
            lambda = step_adjoint(&sys, &bound, step.t, &step.state, step.h, lambda, &mut grad);
            stats.adjoint_applications += 6;
            stats.steps += 1;
        }
    }
    if !lambda.is_finite() || !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::NonFiniteState(solve.t_span.0));
    }
    Ok((grad, lambda, stats))
}

/// Discrete adjoint of one Dormand–Prince step `y ↦ y + h Σ bᵢ kᵢ`.
fn step_adjoint(
    sys: &StateSystem<'_>,
    bound: &BoundModel<'_>,
    t: f64,
    y: &CMatrix,
    h: f64,
    lambda_next: CMatrix,
    grad: &mut [f64],
) -> CMatrix {
    let stages = stage_states(sys, t, std::slice::from_ref(y), h);
    let mut mu: Vec<Option<CMatrix>> = vec![None; 6];
    let mut lambda = lambda_next.clone();
    for i in (0..6).rev() {
        // κᵢ = h (bᵢ λ + Σ_{l>i} a_{li} μ_l)
        let mut kappa = lambda_next.scale_real(h * B[i]);
        for l in (i + 1)..6 {
            let a = A[l][i];
            if a != 0.0 {
                kappa.axpy_real(h * a, mu[l].as_ref().expect("computed"));
            }
        }
        let ti = t + C[i] * h;
        for (k, g) in grad.iter_mut().enumerate() {
            *g += kappa.real_inner(&bound.apply_param_derivative(ti, k, &stages[i][0]));
        }
        let m = bound.apply_adjoint(ti, &kappa);
        lambda += &m;
        mu[i] = Some(m);
    }
    lambda
}

/// Gradient of `cost(ρ(T))` with respect to the parameters by one forward
/// solve and one checkpointed backward pass.
pub fn adjoint_gradient(
    model: &LindbladModel,
    x: &[f64],
    rho0: &DensityOperator,
    t_span: (f64, f64),
    cfg: &SolveConfig,
    cost: &dyn CostCofunction,
) -> Result<GradientResult> {
    adjoint_gradient_with(model, x, rho0, t_span, cfg, cost, &GradientOptions::default())
}

pub fn adjoint_gradient_with(
    model: &LindbladModel,
    x: &[f64],
    rho0: &DensityOperator,
    t_span: (f64, f64),
    cfg: &SolveConfig,
    cost: &dyn CostCofunction,
    opts: &GradientOptions,
) -> Result<GradientResult> {
    let solve = integrate(model, x, rho0, t_span, cfg)?;
    let rho_t = solve.final_state.matrix();
    let value = cost.value(rho_t)?;
    if opts.verify_cost {
        verify_cost_gradient(cost, rho_t, opts.verify_seed)?;
    }
    let terminal = cost.gradient(rho_t)?;
    let bound = model.bind(x)?;
    let final_time_derivative = terminal.real_inner(&bound.apply(t_span.1, rho_t));
    let (gradient, initial_cotangent, adjoint) = adjoint_pass(model, x, &solve, cfg, &terminal)?;
    Ok(GradientResult {
        cost: value,
        gradient,
        initial_cotangent,
        final_time_derivative,
        final_state: solve.final_state,
        forward: solve.stats,
        adjoint,
    })
}

pub use crate::model::adjoint_liouvillian_apply;
