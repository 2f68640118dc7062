//! Adaptive Dormand–Prince 5(4) integration of `ρ̇ = ℒ(ρ)` with a
//! checkpoint trail for reverse passes.
//!
//! The state is integrated natively in complex arithmetic. The integrator
//! works on a list of matrix blocks so the same stepper drives plain solves
//! (one block) and tangent solves (state plus tangents, with step control
//! on the state block only).

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, ONE};
use crate::model::{BoundModel, DensityOperator, LindbladModel, STATE_TOL};

/// Stage nodes.
pub(crate) const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];

/// Lower-triangular stage coefficients; row 6 equals the fifth-order weights.
pub(crate) const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];

/// Fifth-order weights (the seventh stage has weight zero).
pub(crate) const B: [f64; 6] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0];

/// Difference between the fifth- and fourth-order weights.
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

const SAFETY: f64 = 0.9;
const PI_ALPHA: f64 = 0.7 / 5.0;
const PI_BETA: f64 = 0.4 / 5.0;
const FAC_MIN: f64 = 0.2;
const FAC_MAX: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, rename_all = "snake_case")]
pub struct SolveConfig {
    pub rtol: f64,
    pub atol: f64,
    /// First trial step; chosen automatically when absent.
    pub initial_step: Option<f64>,
    pub max_steps: usize,
    /// Checkpoint budget `K`; defaults to `⌈√max_steps⌉`.
    pub checkpoints: Option<usize>,
}

impl Default for SolveConfig {
    fn default() -> Self {
        SolveConfig {
            rtol: 1e-8,
            atol: 1e-10,
            initial_step: None,
            max_steps: 100_000,
            checkpoints: None,
        }
    }
}

impl SolveConfig {
    pub fn with_tolerances(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn with_checkpoints(mut self, k: usize) -> Self {
        self.checkpoints = Some(k);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) || !self.rtol.is_finite() || !self.atol.is_finite() {
            return Err(Error::InvalidConfig("rtol and atol must be positive".into()));
        }
        if self.max_steps == 0 {
            return Err(Error::InvalidConfig("max_steps must be at least 1".into()));
        }
        if let Some(h) = self.initial_step {
            if h <= 0.0 || !h.is_finite() {
                return Err(Error::InvalidConfig("initial_step must be positive".into()));
            }
        }
        if matches!(self.checkpoints, Some(k) if k < 2) {
            return Err(Error::InvalidConfig("at least two checkpoints are required".into()));
        }
        Ok(())
    }

    /// Resolved checkpoint budget.
    pub fn checkpoint_budget(&self) -> usize {
        self.checkpoints
            .unwrap_or_else(|| (self.max_steps as f64).sqrt().ceil() as usize)
            .max(2)
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SolverStats {
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
    /// `|Tr ρ(T) − 1|`.
    pub trace_drift: f64,
    /// `‖ρ(T) − ρ(T)†‖_F`.
    pub hermiticity_drift: f64,
}

/// Step-size controller state carried across steps.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ControllerState {
    pub h: f64,
    pub err_prev: f64,
    pub last_rejected: bool,
}

/// Saved integrator state. Replaying from a checkpoint with the same
/// configuration reproduces the original steps bit for bit.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub t: f64,
    /// Number of accepted steps taken before this point.
    pub step_index: usize,
    pub state: CMatrix,
    pub controller: ControllerState,
}

#[derive(Clone, Debug)]
pub struct SolveResult {
    pub final_state: DensityOperator,
    /// Sorted by time; first at `t₀`, last at `T`.
    pub checkpoints: Vec<Checkpoint>,
    pub stats: SolverStats,
    pub t_span: (f64, f64),
}

impl SolveResult {
    /// Longest gap (in accepted steps) between consecutive checkpoints.
    pub fn longest_segment(&self) -> usize {
        self.checkpoints
            .windows(2)
            .map(|w| w[1].step_index - w[0].step_index)
            .max()
            .unwrap_or(0)
    }
}

/// One accepted step of a replayed segment.
#[derive(Clone, Debug, PartialEq)]
pub struct SegmentStep {
    pub t: f64,
    pub h: f64,
    /// State at the start of the step.
    pub state: CMatrix,
}

thread_local! {
    static FORWARD_SOLVES: Cell<usize> = const { Cell::new(0) };
    static ADJOINT_SOLVES: Cell<usize> = const { Cell::new(0) };
    static SEGMENT_REPLAYS: Cell<usize> = const { Cell::new(0) };
}

/// Per-thread counters of solver invocations, for cost-contract checks.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SolveCounters {
    pub forward: usize,
    pub adjoint: usize,
    pub replays: usize,
}

impl SolveCounters {
    pub fn snapshot() -> Self {
        SolveCounters {
            forward: FORWARD_SOLVES.with(Cell::get),
            adjoint: ADJOINT_SOLVES.with(Cell::get),
            replays: SEGMENT_REPLAYS.with(Cell::get),
        }
    }

    pub fn since(self, earlier: SolveCounters) -> SolveCounters {
        SolveCounters {
            forward: self.forward - earlier.forward,
            adjoint: self.adjoint - earlier.adjoint,
            replays: self.replays - earlier.replays,
        }
    }
}

pub(crate) fn count_adjoint_solve() {
    ADJOINT_SOLVES.with(|c| c.set(c.get() + 1));
}

pub(crate) type Blocks = Vec<CMatrix>;

/// Right-hand side over a list of blocks.
pub(crate) trait BlockSystem {
    fn rhs(&self, t: f64, y: &[CMatrix]) -> Blocks;
}

/// `ρ̇ = ℒ(ρ)`.
pub(crate) struct StateSystem<'a> {
    pub bound: &'a BoundModel<'a>,
}

impl BlockSystem for StateSystem<'_> {
    fn rhs(&self, t: f64, y: &[CMatrix]) -> Blocks {
        vec![self.bound.apply(t, &y[0])]
    }
}

fn combine(base: &[CMatrix], h: f64, coefs: &[f64], ks: &[Blocks]) -> Blocks {
    let mut out = base.to_vec();
    for (&a, k) in coefs.iter().zip(ks) {
        if a == 0.0 {
            continue;
        }
        for (o, kb) in out.iter_mut().zip(k) {
            o.axpy_real(h * a, kb);
        }
    }
    out
}

/// Stage arguments `Y₁..Y₆` of one step; `Y₁ = y`.
pub(crate) fn stage_states(sys: &dyn BlockSystem, t: f64, y: &[CMatrix], h: f64) -> Vec<Blocks> {
    let mut ys: Vec<Blocks> = Vec::with_capacity(6);
    let mut ks: Vec<Blocks> = Vec::with_capacity(6);
    for i in 0..6 {
        let yi = combine(y, h, &A[i][..i], &ks);
        ks.push(sys.rhs(t + C[i] * h, &yi));
        ys.push(yi);
    }
    ys
}

struct Stepper<'s> {
    sys: &'s dyn BlockSystem,
    controlled: usize,
    rtol: f64,
    atol: f64,
    t: f64,
    t_end: f64,
    span: f64,
    y: Blocks,
    k1: Blocks,
    ctrl: ControllerState,
    accepted: usize,
    rejected: usize,
    rhs_evals: usize,
    max_steps: usize,
}

impl<'s> Stepper<'s> {
    fn error_norm(&self, y: &[CMatrix], y_new: &[CMatrix], err: &[CMatrix]) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for b in 0..self.controlled {
            for ((a, c), e) in y[b].as_slice().iter().zip(y_new[b].as_slice()).zip(err[b].as_slice()) {
                let sc = self.atol + self.rtol * a.norm().max(c.norm());
                let r = e.norm() / sc;
                acc += r * r;
                n += 1;
            }
        }
        (acc / n.max(1) as f64).sqrt()
    }

    fn scaled_rms(&self, y: &[CMatrix], v: &[CMatrix]) -> f64 {
        let mut acc = 0.0;
        let mut n = 0usize;
        for b in 0..self.controlled {
            for (a, x) in y[b].as_slice().iter().zip(v[b].as_slice()) {
                let r = x.norm() / (self.atol + self.rtol * a.norm());
                acc += r * r;
                n += 1;
            }
        }
        (acc / n.max(1) as f64).sqrt()
    }

    /// Hairer–Wanner starting step heuristic.
    fn initial_step(&mut self) -> f64 {
        let d0 = self.scaled_rms(&self.y, &self.y);
        let d1 = self.scaled_rms(&self.y, &self.k1);
        let h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 }.min(self.span);
        let y1 = combine(&self.y, h0, &[1.0], std::slice::from_ref(&self.k1));
        let f1 = self.sys.rhs(self.t + h0, &y1);
        self.rhs_evals += 1;
        let diff: Blocks = f1.iter().zip(&self.k1).map(|(a, b)| a - b).collect();
        let d2 = self.scaled_rms(&self.y, &diff) / h0;
        let dm = d1.max(d2);
        let h1 = if dm <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / dm).powf(0.2)
        };
        (100.0 * h0).min(h1).min(self.span)
    }

    fn new(
        sys: &'s dyn BlockSystem,
        controlled: usize,
        cfg: &SolveConfig,
        t0: f64,
        t_end: f64,
        y0: Blocks,
    ) -> Self {
        let k1 = sys.rhs(t0, &y0);
        let mut s = Stepper {
            sys,
            controlled,
            rtol: cfg.rtol,
            atol: cfg.atol,
            t: t0,
            t_end,
            span: t_end - t0,
            y: y0,
            k1,
            ctrl: ControllerState {
                h: 0.0,
                err_prev: 1.0,
                last_rejected: false,
            },
            accepted: 0,
            rejected: 0,
            rhs_evals: 1,
            max_steps: cfg.max_steps,
        };
        s.ctrl.h = match cfg.initial_step {
            Some(h) => h.min(s.span),
            None => s.initial_step(),
        };
        s
    }

    #[allow(clippy::too_many_arguments)]
    fn resume(
        sys: &'s dyn BlockSystem,
        controlled: usize,
        cfg: &SolveConfig,
        t_span: (f64, f64),
        ck_t: f64,
        step_index: usize,
        y: Blocks,
        ctrl: ControllerState,
    ) -> Self {
        let k1 = sys.rhs(ck_t, &y);
        Stepper {
            sys,
            controlled,
            rtol: cfg.rtol,
            atol: cfg.atol,
            t: ck_t,
            t_end: t_span.1,
            span: t_span.1 - t_span.0,
            y,
            k1,
            ctrl,
            accepted: step_index,
            rejected: 0,
            rhs_evals: 1,
            max_steps: cfg.max_steps,
        }
    }

    fn finished(&self) -> bool {
        self.t >= self.t_end
    }

    /// Takes one accepted step; returns `(t, h)` of that step.
    fn advance(&mut self) -> Result<(f64, f64)> {
        loop {
            if self.accepted + self.rejected >= self.max_steps {
                return Err(Error::MaxStepsExceeded(self.max_steps));
            }
            let mut h = self.ctrl.h;
            let mut last = false;
            if self.t + h * 1.000_001 >= self.t_end {
                h = self.t_end - self.t;
                last = true;
            }
            if h < 1e-14 * self.span {
                return Err(Error::StepUnderflow { t: self.t, h });
            }
            let mut ks: Vec<Blocks> = Vec::with_capacity(7);
            ks.push(self.k1.clone());
            for i in 1..7 {
                let yi = combine(&self.y, h, &A[i][..i], &ks);
                ks.push(self.sys.rhs(self.t + C[i] * h, &yi));
            }
            self.rhs_evals += 6;
            let y_new = combine(&self.y, h, &B, &ks[..6]);
            let err_vec = combine(
                &self.y.iter().map(|b| CMatrix::zeros(b.rows(), b.cols())).collect::<Vec<_>>(),
                h,
                &E,
                &ks,
            );
            let err = self.error_norm(&self.y, &y_new, &err_vec);
            if !err.is_finite() {
                return Err(Error::NonFiniteState(self.t));
            }
            if err <= 1.0 {
                let e = err.max(1e-10);
                let mut fac = SAFETY * e.powf(-PI_ALPHA) * self.ctrl.err_prev.powf(PI_BETA);
                fac = fac.clamp(FAC_MIN, FAC_MAX);
                if self.ctrl.last_rejected {
                    fac = fac.min(1.0);
                }
                let t_start = self.t;
                self.t = if last { self.t_end } else { self.t + h };
                self.y = y_new;
                self.k1 = ks.pop().expect("seven stages");
                self.ctrl = ControllerState {
                    h: h * fac,
                    err_prev: err.max(1e-4),
                    last_rejected: false,
                };
                self.accepted += 1;
                return Ok((t_start, h));
            }
            let fac = (SAFETY * err.powf(-0.2)).max(FAC_MIN);
            self.ctrl.h = h * fac;
            self.ctrl.last_rejected = true;
            self.rejected += 1;
        }
    }
}

pub(crate) struct BlockSolve {
    pub y: Blocks,
    pub checkpoints: Vec<Checkpoint>,
    pub accepted: usize,
    pub rejected: usize,
    pub rhs_evals: usize,
}

fn check_span(t_span: (f64, f64)) -> Result<()> {
    let (t0, t1) = t_span;
    if !(t0.is_finite() && t1.is_finite() && t1 > t0) {
        return Err(Error::InvalidConfig(format!("time span ({t0}, {t1}) must satisfy T > t0")));
    }
    Ok(())
}

/// Integrates a block system; checkpoints hold block 0 only and are
/// recorded when `budget` is given.
pub(crate) fn integrate_blocks(
    sys: &dyn BlockSystem,
    controlled: usize,
    y0: Blocks,
    t_span: (f64, f64),
    cfg: &SolveConfig,
    budget: Option<usize>,
) -> Result<BlockSolve> {
    cfg.validate()?;
    check_span(t_span)?;
    let mut st = Stepper::new(sys, controlled, cfg, t_span.0, t_span.1, y0);
    let mut checkpoints = Vec::new();
    let mut stride = 1usize;
    let snapshot = |st: &Stepper| Checkpoint {
        t: st.t,
        step_index: st.accepted,
        state: st.y[0].clone(),
        controller: st.ctrl,
    };
    if budget.is_some() {
        checkpoints.push(snapshot(&st));
    }
    while !st.finished() {
        st.advance()?;
        if let Some(k) = budget {
            if st.finished() {
                checkpoints.push(snapshot(&st));
            } else if st.accepted.is_multiple_of(stride) {
                checkpoints.push(snapshot(&st));
                // keep room for the final state
                while checkpoints.len() > k - 1 {
                    stride *= 2;
                    checkpoints.retain(|c| c.step_index % stride == 0);
                }
            }
        }
    }
    Ok(BlockSolve {
        y: st.y,
        checkpoints,
        accepted: st.accepted,
        rejected: st.rejected,
        rhs_evals: st.rhs_evals,
    })
}

/// Replays accepted steps `[from.step_index, end_index)` starting at `from`.
pub(crate) fn replay_blocks(
    sys: &dyn BlockSystem,
    from: &Checkpoint,
    end_index: usize,
    t_span: (f64, f64),
    cfg: &SolveConfig,
) -> Result<Vec<SegmentStep>> {
    let mut st = Stepper::resume(
        sys,
        1,
        cfg,
        t_span,
        from.t,
        from.step_index,
        vec![from.state.clone()],
        from.controller,
    );
    let mut out = Vec::with_capacity(end_index.saturating_sub(from.step_index));
    while st.accepted < end_index {
        if st.finished() {
            return Err(Error::InvalidConfig(format!(
                "segment end index {end_index} lies beyond the solve ({} steps)",
                st.accepted
            )));
        }
        let state = st.y[0].clone();
        let (t, h) = st.advance()?;
        out.push(SegmentStep { t, h, state });
    }
    Ok(out)
}

pub(crate) fn validate_initial(model: &LindbladModel, rho0: &DensityOperator) -> Result<()> {
    if rho0.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            op: "integrate",
            left: (model.dim(), model.dim()),
            right: (rho0.dim(), rho0.dim()),
        });
    }
    Ok(())
}

/// Tolerance used when validating a solver's final state.
pub fn final_state_tolerance(cfg: &SolveConfig) -> f64 {
    STATE_TOL.max(100.0 * (cfg.rtol + cfg.atol))
}

pub(crate) fn finish_state(m: CMatrix, cfg: &SolveConfig, t: f64) -> Result<(DensityOperator, f64, f64)> {
    if !m.is_finite() {
        return Err(Error::NonFiniteState(t));
    }
    let drift = (m.trace()? - ONE).norm();
    let herm = m.hermiticity_residual();
    let state = DensityOperator::with_tolerance(m, final_state_tolerance(cfg))?;
    Ok((state, drift, herm))
}

/// Integrates the master equation from `rho0` over `t_span`.
pub fn integrate(
    model: &LindbladModel,
    x: &[f64],
    rho0: &DensityOperator,
    t_span: (f64, f64),
    cfg: &SolveConfig,
) -> Result<SolveResult> {
    validate_initial(model, rho0)?;
    let bound = model.bind(x)?;
    let sys = StateSystem { bound: &bound };
    FORWARD_SOLVES.with(|c| c.set(c.get() + 1));
    let solve = integrate_blocks(
        &sys,
        1,
        vec![rho0.matrix().clone()],
        t_span,
        cfg,
        Some(cfg.checkpoint_budget()),
    )?;
    let mut y = solve.y;
    let (final_state, trace_drift, hermiticity_drift) = finish_state(y.swap_remove(0), cfg, t_span.1)?;
    Ok(SolveResult {
        final_state,
        checkpoints: solve.checkpoints,
        stats: SolverStats {
            accepted: solve.accepted,
            rejected: solve.rejected,
            rhs_evals: solve.rhs_evals,
            trace_drift,
            hermiticity_drift,
        },
        t_span,
    })
}

/// Recomputes every accepted step between checkpoint `from` and the
/// checkpoint at accepted-step index `end_index` of the same solve.
pub fn dense_segment(
    model: &LindbladModel,
    x: &[f64],
    from: &Checkpoint,
    end_index: usize,
    t_span: (f64, f64),
    cfg: &SolveConfig,
) -> Result<Vec<SegmentStep>> {
    let bound = model.bind(x)?;
    let sys = StateSystem { bound: &bound };
    SEGMENT_REPLAYS.with(|c| c.set(c.get() + 1));
    replay_blocks(&sys, from, end_index, t_span, cfg)
}
