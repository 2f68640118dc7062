//! Parameterized open-system models and the master-equation generator.
//!
//! The generator is
//!
//! ```text
//! ℒ(ρ) = −i[H(t,x), ρ] + Σⱼ γⱼ (Jⱼ ρ Jⱼ† − ½{Jⱼ†Jⱼ, ρ})
//! ```
//!
//! Jump channels never depend on `x`, so parameter derivatives of ℒ only see
//! the Hamiltonian.

use std::fmt;
use std::sync::Arc;

use crate::eigen;
use crate::error::{Error, Result};
use crate::linalg::{pauli, CMatrix, OperatorHandle, C64, I};

/// Tolerances for the [`DensityOperator`] invariants.
pub const STATE_TOL: f64 = 1e-9;

/// A validated density operator: Hermitian, unit trace, positive semidefinite.
#[derive(Clone, Debug, PartialEq)]
pub struct DensityOperator {
    matrix: CMatrix,
    qubits: usize,
}

impl DensityOperator {
    pub fn new(matrix: CMatrix) -> Result<Self> {
        Self::with_tolerance(matrix, STATE_TOL)
    }

    /// Validates with a caller-chosen tolerance for the trace, Hermiticity
    /// and positivity checks.
    pub fn with_tolerance(matrix: CMatrix, tol: f64) -> Result<Self> {
        let d = matrix.rows();
        if !matrix.is_square() {
            return Err(Error::NotSquare {
                op: "density operator",
                rows: matrix.rows(),
                cols: matrix.cols(),
            });
        }
        if d == 0 || !d.is_power_of_two() {
            return Err(Error::InvalidState(format!("dimension {d} is not a power of two")));
        }
        if !matrix.is_finite() {
            return Err(Error::NonFinite("density operator"));
        }
        let norm = matrix.frobenius_norm();
        let herm = matrix.hermiticity_residual();
        if herm >= tol * norm.max(f64::MIN_POSITIVE) {
            return Err(Error::InvalidState(format!("not Hermitian (residual {herm:e})")));
        }
        let tr = matrix.trace()?;
        if (tr - C64::new(1.0, 0.0)).norm() >= tol {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min_eig = eigen::eigvalsh(&matrix)?[0];
        if min_eig <= -tol {
            return Err(Error::InvalidState(format!("negative eigenvalue {min_eig:e}")));
        }
        Ok(DensityOperator {
            qubits: d.trailing_zeros() as usize,
            matrix,
        })
    }

    /// `|ψ⟩⟨ψ|` for a normalized state vector.
    pub fn pure(psi: &[C64]) -> Result<Self> {
        let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > STATE_TOL {
            return Err(Error::InvalidState(format!("state vector norm {norm}")));
        }
        let d = psi.len();
        Self::new(CMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj()))
    }

    /// `|0…0⟩⟨0…0|` on `n` qubits.
    pub fn all_zero(n: usize) -> Self {
        let d = 1usize << n;
        let mut m = CMatrix::zeros(d, d);
        m[(0, 0)] = C64::new(1.0, 0.0);
        DensityOperator { matrix: m, qubits: n }
    }

    /// `I/d` on `n` qubits.
    pub fn maximally_mixed(n: usize) -> Self {
        let d = 1usize << n;
        DensityOperator {
            matrix: CMatrix::identity(d).scale_real(1.0 / d as f64),
            qubits: n,
        }
    }

    /// `(1 − p)·self + p·I/d`.
    pub fn depolarized(&self, p: f64) -> Result<Self> {
        let mut m = self.matrix.scale_real(1.0 - p);
        m.axpy_real(p, &Self::maximally_mixed(self.qubits).matrix);
        Self::new(m)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn into_matrix(self) -> CMatrix {
        self.matrix
    }

    pub fn qubits(&self) -> usize {
        self.qubits
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    pub fn purity(&self) -> f64 {
        self.matrix.real_inner(&self.matrix)
    }
}

/// One dissipative channel `γ·D[J]`.
#[derive(Clone, Debug, PartialEq)]
pub struct JumpChannel {
    rate: f64,
    op: OperatorHandle,
    op_adj: OperatorHandle,
    gram: OperatorHandle,
}

impl JumpChannel {
    pub fn new(rate: f64, op: OperatorHandle) -> Result<Self> {
        if rate < 0.0 || !rate.is_finite() {
            return Err(Error::InvalidModel(format!("jump rate {rate} must be finite and >= 0")));
        }
        let (r, c) = op.shape();
        if r != c {
            return Err(Error::NotSquare {
                op: "jump operator",
                rows: r,
                cols: c,
            });
        }
        Ok(JumpChannel {
            rate,
            op_adj: op.adjoint(),
            gram: op.gram(),
            op,
        })
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn operator(&self) -> &OperatorHandle {
        &self.op
    }

    fn with_storage(&self, f: impl Fn(&OperatorHandle) -> OperatorHandle) -> Self {
        JumpChannel {
            rate: self.rate,
            op: f(&self.op),
            op_adj: f(&self.op_adj),
            gram: f(&self.gram),
        }
    }
}

/// A time- and parameter-dependent Hermitian operator `H(t, x)`.
pub trait HamiltonianSchedule: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn param_count(&self) -> usize;

    fn evaluate(&self, t: f64, x: &[f64]) -> OperatorHandle;

    /// Analytic `∂H/∂xₖ`, if the schedule knows it.
    fn derivative(&self, _t: f64, _x: &[f64], _k: usize) -> Option<OperatorHandle> {
        None
    }

    /// Whether `evaluate` depends on `t`. Time-independent schedules are
    /// evaluated once per solve.
    fn is_time_dependent(&self) -> bool {
        true
    }

    /// A copy with every operator converted by `storage`. Used to compare
    /// dense and sparse execution paths.
    fn restored(&self, storage: Storage) -> Arc<dyn HamiltonianSchedule>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Storage {
    Dense,
    Sparse,
}

impl Storage {
    fn convert(self, op: &OperatorHandle) -> OperatorHandle {
        match self {
            Storage::Dense => op.densified(),
            Storage::Sparse => op.sparsified(),
        }
    }
}

/// Coefficient of one Hamiltonian term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Coefficient {
    Constant(f64),
    Param(usize),
}

impl Coefficient {
    fn value(self, x: &[f64]) -> f64 {
        match self {
            Coefficient::Constant(c) => c,
            Coefficient::Param(k) => x[k],
        }
    }
}

/// `H(x) = Σ_m c_m(x) A_m` with each `c_m` a constant or a single parameter.
#[derive(Clone, Debug)]
pub struct LinearHamiltonian {
    dim: usize,
    param_count: usize,
    terms: Vec<(Coefficient, OperatorHandle)>,
}

impl LinearHamiltonian {
    pub fn new(dim: usize, param_count: usize, terms: Vec<(Coefficient, OperatorHandle)>) -> Result<Self> {
        for (m, (coef, op)) in terms.iter().enumerate() {
            if op.shape() != (dim, dim) {
                return Err(Error::InvalidModel(format!(
                    "term {m} has shape {:?}, expected {dim}x{dim}",
                    op.shape()
                )));
            }
            let herm = op.hermiticity_residual();
            if herm > 1e-12 * op.to_dense().frobenius_norm().max(1.0) {
                return Err(Error::NotHermitian {
                    what: "Hamiltonian term",
                    residual: herm,
                });
            }
            match *coef {
                Coefficient::Param(k) if k >= param_count => {
                    return Err(Error::ParameterIndex {
                        index: k,
                        count: param_count,
                    })
                }
                Coefficient::Constant(c) if !c.is_finite() => {
                    return Err(Error::NonFinite("Hamiltonian coefficient"))
                }
                _ => {}
            }
        }
        Ok(LinearHamiltonian {
            dim,
            param_count,
            terms,
        })
    }

    pub fn terms(&self) -> &[(Coefficient, OperatorHandle)] {
        &self.terms
    }

    fn combine<'a>(&self, parts: impl Iterator<Item = (f64, &'a OperatorHandle)>) -> OperatorHandle {
        let mut dense = CMatrix::zeros(self.dim, self.dim);
        let mut all_sparse = true;
        for (c, op) in parts {
            all_sparse &= op.is_sparse();
            if c != 0.0 {
                dense.axpy_real(c, &op.to_dense());
            }
        }
        if all_sparse && !self.terms.is_empty() {
            OperatorHandle::Dense(dense).sparsified()
        } else {
            OperatorHandle::Dense(dense)
        }
    }
}

impl HamiltonianSchedule for LinearHamiltonian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        self.param_count
    }

    fn evaluate(&self, _t: f64, x: &[f64]) -> OperatorHandle {
        self.combine(self.terms.iter().map(|(c, op)| (c.value(x), op)))
    }

    fn derivative(&self, _t: f64, _x: &[f64], k: usize) -> Option<OperatorHandle> {
        Some(self.combine(self.terms.iter().filter_map(|(c, op)| match c {
            Coefficient::Param(j) if *j == k => Some((1.0, op)),
            _ => None,
        })))
    }

    fn is_time_dependent(&self) -> bool {
        false
    }

    fn restored(&self, storage: Storage) -> Arc<dyn HamiltonianSchedule> {
        Arc::new(LinearHamiltonian {
            dim: self.dim,
            param_count: self.param_count,
            terms: self
                .terms
                .iter()
                .map(|(c, op)| (*c, storage.convert(op)))
                .collect(),
        })
    }
}

type EvalFn = dyn Fn(f64, &[f64]) -> OperatorHandle + Send + Sync;
type DerivFn = dyn Fn(f64, &[f64], usize) -> OperatorHandle + Send + Sync;

/// A schedule given by closures; without a derivative rule, parameter
/// derivatives fall back to central differences.
#[derive(Clone)]
pub struct FnHamiltonian {
    dim: usize,
    param_count: usize,
    eval: Arc<EvalFn>,
    deriv: Option<Arc<DerivFn>>,
}

impl FnHamiltonian {
    pub fn new(
        dim: usize,
        param_count: usize,
        eval: impl Fn(f64, &[f64]) -> OperatorHandle + Send + Sync + 'static,
    ) -> Self {
        FnHamiltonian {
            dim,
            param_count,
            eval: Arc::new(eval),
            deriv: None,
        }
    }

    pub fn with_derivative(
        mut self,
        deriv: impl Fn(f64, &[f64], usize) -> OperatorHandle + Send + Sync + 'static,
    ) -> Self {
        self.deriv = Some(Arc::new(deriv));
        self
    }
}

impl fmt::Debug for FnHamiltonian {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnHamiltonian")
            .field("dim", &self.dim)
            .field("param_count", &self.param_count)
            .field("analytic_derivative", &self.deriv.is_some())
            .finish()
    }
}

impl HamiltonianSchedule for FnHamiltonian {
    fn dim(&self) -> usize {
        self.dim
    }

    fn param_count(&self) -> usize {
        self.param_count
    }

    fn evaluate(&self, t: f64, x: &[f64]) -> OperatorHandle {
        (self.eval)(t, x)
    }

    fn derivative(&self, t: f64, x: &[f64], k: usize) -> Option<OperatorHandle> {
        self.deriv.as_ref().map(|d| d(t, x, k))
    }

    fn restored(&self, storage: Storage) -> Arc<dyn HamiltonianSchedule> {
        let inner = self.clone();
        let mut out = FnHamiltonian::new(self.dim, self.param_count, move |t, x| {
            storage.convert(&inner.evaluate(t, x))
        });
        if let Some(d) = self.deriv.clone() {
            out = out.with_derivative(move |t, x, k| storage.convert(&d(t, x, k)));
        }
        Arc::new(out)
    }
}

/// Hamiltonian schedule plus jump channels.
#[derive(Clone, Debug)]
pub struct LindbladModel {
    hamiltonian: Arc<dyn HamiltonianSchedule>,
    channels: Vec<JumpChannel>,
    dim: usize,
}

impl LindbladModel {
    pub fn new(hamiltonian: Arc<dyn HamiltonianSchedule>, channels: Vec<JumpChannel>) -> Result<Self> {
        let dim = hamiltonian.dim();
        for (j, ch) in channels.iter().enumerate() {
            if ch.op.dim() != dim {
                return Err(Error::InvalidModel(format!(
                    "channel {j} has dimension {}, Hamiltonian has {dim}",
                    ch.op.dim()
                )));
            }
        }
        Ok(LindbladModel {
            hamiltonian,
            channels,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn param_count(&self) -> usize {
        self.hamiltonian.param_count()
    }

    pub fn hamiltonian(&self) -> &Arc<dyn HamiltonianSchedule> {
        &self.hamiltonian
    }

    pub fn channels(&self) -> &[JumpChannel] {
        &self.channels
    }

    /// True when `∂H/∂xₖ` comes from central differences for some `k`.
    pub fn uses_fd_derivative(&self) -> bool {
        let x = vec![0.0; self.param_count()];
        (0..self.param_count()).any(|k| self.hamiltonian.derivative(0.0, &x, k).is_none())
    }

    /// The same model with every operator stored as `storage`.
    pub fn with_storage(&self, storage: Storage) -> Self {
        LindbladModel {
            hamiltonian: self.hamiltonian.restored(storage),
            channels: self
                .channels
                .iter()
                .map(|c| c.with_storage(|op| storage.convert(op)))
                .collect(),
            dim: self.dim,
        }
    }

    pub fn check_params(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.param_count() {
            return Err(Error::ParameterCount {
                expected: self.param_count(),
                got: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("parameters"));
        }
        Ok(())
    }

    fn check_operand(&self, rho: &CMatrix, what: &'static str) -> Result<()> {
        if rho.shape() != (self.dim, self.dim) {
            return Err(Error::DimensionMismatch {
                op: what,
                left: (self.dim, self.dim),
                right: rho.shape(),
            });
        }
        if !rho.is_finite() {
            return Err(Error::NonFinite(what));
        }
        Ok(())
    }

    /// Freezes the parameters. Time-independent Hamiltonians (and their
    /// parameter derivatives) are evaluated once here.
    pub fn bind<'a>(&'a self, x: &'a [f64]) -> Result<BoundModel<'a>> {
        self.check_params(x)?;
        let cached = (!self.hamiltonian.is_time_dependent()).then(|| self.hamiltonian.evaluate(0.0, x));
        let cached_derivs = if self.hamiltonian.is_time_dependent() {
            None
        } else {
            Some(
                (0..self.param_count())
                    .map(|k| self.param_derivative_operator(0.0, x, k).0)
                    .collect(),
            )
        };
        Ok(BoundModel {
            model: self,
            x,
            cached,
            cached_derivs,
        })
    }

    /// `∂H/∂xₖ`, with a flag telling whether central differences were used.
    fn param_derivative_operator(&self, t: f64, x: &[f64], k: usize) -> (OperatorHandle, bool) {
        if let Some(op) = self.hamiltonian.derivative(t, x, k) {
            return (op, false);
        }
        let h = 1e-6 * x[k].abs().max(1.0);
        let mut xp = x.to_vec();
        let mut xm = x.to_vec();
        xp[k] += h;
        xm[k] -= h;
        let mut d = self.hamiltonian.evaluate(t, &xp).to_dense();
        d -= &self.hamiltonian.evaluate(t, &xm).to_dense();
        (OperatorHandle::Dense(d.scale_real(0.5 / h)), true)
    }
}

/// A model with parameters fixed, ready for repeated generator application.
pub struct BoundModel<'a> {
    model: &'a LindbladModel,
    x: &'a [f64],
    cached: Option<OperatorHandle>,
    cached_derivs: Option<Vec<OperatorHandle>>,
}

impl BoundModel<'_> {
    pub fn model(&self) -> &LindbladModel {
        self.model
    }

    pub fn params(&self) -> &[f64] {
        self.x
    }

    fn hamiltonian_at(&self, t: f64) -> std::borrow::Cow<'_, OperatorHandle> {
        match &self.cached {
            Some(h) => std::borrow::Cow::Borrowed(h),
            None => std::borrow::Cow::Owned(self.model.hamiltonian.evaluate(t, self.x)),
        }
    }

    /// `ℒ(ρ)` without input validation.
    pub fn apply(&self, t: f64, rho: &CMatrix) -> CMatrix {
        let h = self.hamiltonian_at(t);
        // −i(Hρ − ρH)
        let mut out = h.apply(rho).expect("validated shape");
        out -= &h.apply_right(rho).expect("validated shape");
        let mut out = out.scale(-I);
        for ch in &self.model.channels {
            if ch.rate == 0.0 {
                continue;
            }
            let jr = ch.op.apply(rho).expect("validated shape");
            let jrj = ch.op_adj.apply_right(&jr).expect("validated shape");
            out.axpy_real(ch.rate, &jrj);
            out.axpy_real(-0.5 * ch.rate, &ch.gram.apply(rho).expect("validated shape"));
            out.axpy_real(-0.5 * ch.rate, &ch.gram.apply_right(rho).expect("validated shape"));
        }
        out
    }

    /// `ℒ†(λ)` under the Hilbert–Schmidt inner product.
    pub fn apply_adjoint(&self, t: f64, lambda: &CMatrix) -> CMatrix {
        let h = self.hamiltonian_at(t);
        // +i(Hλ − λH)
        let mut out = h.apply(lambda).expect("validated shape");
        out -= &h.apply_right(lambda).expect("validated shape");
        let mut out = out.scale(I);
        for ch in &self.model.channels {
            if ch.rate == 0.0 {
                continue;
            }
            let jl = ch.op_adj.apply(lambda).expect("validated shape");
            let jlj = ch.op.apply_right(&jl).expect("validated shape");
            out.axpy_real(ch.rate, &jlj);
            out.axpy_real(-0.5 * ch.rate, &ch.gram.apply(lambda).expect("validated shape"));
            out.axpy_real(-0.5 * ch.rate, &ch.gram.apply_right(lambda).expect("validated shape"));
        }
        out
    }

    /// `(∂ℒ/∂xₖ)(ρ) = −i[∂H/∂xₖ, ρ]`.
    pub fn apply_param_derivative(&self, t: f64, k: usize, rho: &CMatrix) -> CMatrix {
        let owned;
        let dh = match &self.cached_derivs {
            Some(ds) => &ds[k],
            None => {
                owned = self.model.param_derivative_operator(t, self.x, k).0;
                &owned
            }
        };
        let mut out = dh.apply(rho).expect("validated shape");
        out -= &dh.apply_right(rho).expect("validated shape");
        out.scale(-I)
    }
}

/// Evaluates `ℒ(ρ)` at time `t` and parameters `x`.
pub fn lindblad_rhs(t: f64, rho: &CMatrix, model: &LindbladModel, x: &[f64]) -> Result<CMatrix> {
    model.check_operand(rho, "lindblad_rhs")?;
    Ok(model.bind(x)?.apply(t, rho))
}

/// Evaluates `−i[∂H/∂xₖ(t,x), ρ]`.
pub fn rhs_parameter_derivative(
    t: f64,
    rho: &CMatrix,
    model: &LindbladModel,
    x: &[f64],
    k: usize,
) -> Result<CMatrix> {
    if k >= model.param_count() {
        return Err(Error::ParameterIndex {
            index: k,
            count: model.param_count(),
        });
    }
    model.check_operand(rho, "rhs_parameter_derivative")?;
    model.check_params(x)?;
    let (dh, _) = model.param_derivative_operator(t, x, k);
    let mut out = dh.apply(rho)?;
    out -= &dh.apply_right(rho)?;
    Ok(out.scale(-I))
}

/// Evaluates `ℒ†(λ) = i[H, λ] + Σⱼ γⱼ(Jⱼ†λJⱼ − ½{Jⱼ†Jⱼ, λ})`.
pub fn adjoint_liouvillian_apply(model: &LindbladModel, x: &[f64], t: f64, lambda: &CMatrix) -> Result<CMatrix> {
    model.check_operand(lambda, "adjoint_liouvillian_apply")?;
    Ok(model.bind(x)?.apply_adjoint(t, lambda))
}

pub const MAX_PRESET_QUBITS: usize = 10;

/// One-axis twisting with a transverse drive and per-qubit decay:
/// `H(x) = x₀·Sz² + x₁·Sx`, channels `γ·D[σ⁻ᵢ]`.
pub fn preset_oat(n: usize, gamma: f64) -> Result<LindbladModel> {
    if n == 0 || n > MAX_PRESET_QUBITS {
        return Err(Error::InvalidModel(format!(
            "preset_oat needs 1..={MAX_PRESET_QUBITS} qubits, got {n}"
        )));
    }
    let dim = 1usize << n;
    let sz = pauli::collective(&pauli::z(), n);
    let sz2 = sz.matmul(&sz)?;
    let sx = pauli::collective(&pauli::x(), n);
    let h = LinearHamiltonian::new(
        dim,
        2,
        vec![
            (Coefficient::Param(0), OperatorHandle::Dense(sz2).sparsified()),
            (Coefficient::Param(1), OperatorHandle::Dense(sx).sparsified()),
        ],
    )?;
    let channels = (0..n)
        .map(|q| {
            JumpChannel::new(
                gamma,
                OperatorHandle::Dense(pauli::on_site(&pauli::lowering(), q, n)).sparsified(),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    LindbladModel::new(Arc::new(h), channels)
}

/// Single-qubit phase model `H(x) = x₀·½σz`, optionally dephased by
/// `γ·D[σz]`.
pub fn preset_phase(gamma: f64) -> Result<LindbladModel> {
    let h = LinearHamiltonian::new(
        2,
        1,
        vec![(Coefficient::Param(0), OperatorHandle::Dense(pauli::z().scale_real(0.5)))],
    )?;
    let channels = if gamma > 0.0 {
        vec![JumpChannel::new(gamma, pauli::z().into())?]
    } else {
        Vec::new()
    };
    LindbladModel::new(Arc::new(h), channels)
}

/// A model with a fixed Hamiltonian and no parameters.
pub fn constant_model(h: OperatorHandle, channels: Vec<JumpChannel>) -> Result<LindbladModel> {
    let dim = h.dim();
    let ham = LinearHamiltonian::new(dim, 0, vec![(Coefficient::Constant(1.0), h)])?;
    LindbladModel::new(Arc::new(ham), channels)
}
