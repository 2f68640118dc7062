//! Quantum Fisher information of a density operator with respect to a
//! Hermitian generator, and its exact gradient through the solve.
//!
//! The value is computed from the spectral decomposition as
//!
//! ```text
//! F = Σᵢ Σ_{j<i} (λᵢ − λⱼ)² / (λᵢ + λⱼ) · |⟨ψᵢ|G|ψⱼ⟩|²
//! ```
//!
//! with no overall prefactor, so a pure state gives `F = Var(G)`. The more
//! common normalization is four times larger; [`Convention::Standard`]
//! applies that multiplier to reported values and gradients.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::eigen::{self, eig_vjp_blocks, EigDecomposition};
use crate::error::{Error, Result};
use crate::linalg::{pauli, CMatrix, OperatorHandle, C64, I};
use crate::model::{DensityOperator, LindbladModel};
use crate::sensitivity::{adjoint_gradient_with, CostCofunction, GradientOptions};
use crate::solver::{final_state_tolerance, integrate, SolveConfig, SolveCounters, SolverStats};

/// Pairs with `λᵢ + λⱼ` at or below this are dropped.
pub const SKIP_TOL: f64 = 1e-12;
/// Negative eigenvalues smaller than this in magnitude are clipped to zero.
pub const CLIP_TOL: f64 = 1e-9;

/// Hermitian generator of the sensed phase, `e^{−iθG}`.
#[derive(Clone, Debug, PartialEq)]
pub struct Generator(OperatorHandle);

impl Generator {
    pub fn new(op: OperatorHandle) -> Result<Self> {
        let (r, c) = op.shape();
        if r != c {
            return Err(Error::NotSquare {
                op: "generator",
                rows: r,
                cols: c,
            });
        }
        let residual = op.hermiticity_residual();
        if residual > 1e-12 * op.to_dense().frobenius_norm().max(1.0) {
            return Err(Error::NotHermitian {
                what: "generator",
                residual,
            });
        }
        Ok(Generator(op))
    }

    /// Collective `Sz = ½ Σᵢ σzᵢ` on `n` qubits.
    pub fn collective_sz(n: usize) -> Self {
        Generator(OperatorHandle::Dense(pauli::collective(&pauli::z(), n)).sparsified())
    }

    pub fn operator(&self) -> &OperatorHandle {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.dim()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Convention {
    /// The sum as written above; `F = Var(G)` on pure states.
    #[default]
    Literal,
    /// Four times the literal value.
    Standard,
}

impl Convention {
    pub fn multiplier(self) -> f64 {
        match self {
            Convention::Literal => 1.0,
            Convention::Standard => 4.0,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EigenDiagnostics {
    /// Size of every degeneracy cluster, in ascending eigenvalue order.
    pub clusters: Vec<usize>,
    pub min_gap: Option<f64>,
    /// `‖ρΨ − Ψ diag(λ)‖_F`.
    pub residual: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QfiReport {
    /// Fisher information, scaled by the convention multiplier.
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "grad")]
    pub gradient: Option<Vec<f64>>,
    pub skipped_pairs: usize,
    pub clusters: Vec<usize>,
    pub convention: Convention,
    pub eigen: EigenDiagnostics,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub counters: Option<SolveCounters>,
    /// `∂H/∂x` was approximated by central differences.
    pub fd_assisted: bool,
}

fn clipped_values(decomp: &EigDecomposition, clip: f64) -> Result<Vec<f64>> {
    decomp
        .values()
        .iter()
        .map(|&v| {
            if v < -clip {
                Err(Error::NegativeEigenvalue(v))
            } else {
                Ok(v.max(0.0))
            }
        })
        .collect()
}

/// `Ψ† G Ψ`.
fn generator_in_eigenbasis(decomp: &EigDecomposition, g: &Generator) -> Result<CMatrix> {
    if g.dim() != decomp.dim() {
        return Err(Error::DimensionMismatch {
            op: "qfi",
            left: (decomp.dim(), decomp.dim()),
            right: g.0.shape(),
        });
    }
    let v = decomp.vectors();
    v.adjoint().matmul(&g.0.apply(v)?)
}

fn diagnostics(decomp: &EigDecomposition, residual: f64) -> EigenDiagnostics {
    let gap = decomp.min_gap();
    EigenDiagnostics {
        clusters: decomp.clusters().iter().map(Vec::len).collect(),
        min_gap: gap.is_finite().then_some(gap),
        residual,
    }
}

/// Fisher information of a decomposed state (value only, literal
/// convention).
pub fn qfi(decomp: &EigDecomposition, g: &Generator) -> Result<QfiReport> {
    qfi_with_clip(decomp, g, CLIP_TOL)
}

/// As [`qfi`], clipping negative eigenvalues down to `−clip` instead of
/// [`CLIP_TOL`]. Solver outputs are only positive to the solver's own
/// accuracy, so the pipeline clips at the tolerance the final state was
/// validated against.
pub fn qfi_with_clip(decomp: &EigDecomposition, g: &Generator, clip: f64) -> Result<QfiReport> {
    let lam = clipped_values(decomp, clip)?;
    let gt = generator_in_eigenbasis(decomp, g)?;
    let d = decomp.dim();
    let mut f = 0.0;
    let mut skipped = 0;
    for i in 0..d {
        for j in 0..i {
            let s = lam[i] + lam[j];
            if s <= SKIP_TOL {
                skipped += 1;
                continue;
            }
            let diff = lam[i] - lam[j];
            f += diff * diff / s * gt[(i, j)].norm_sqr();
        }
    }
    let eigen = diagnostics(decomp, 0.0);
    Ok(QfiReport {
        f,
        gradient: None,
        skipped_pairs: skipped,
        clusters: eigen.clusters.clone(),
        convention: Convention::Literal,
        eigen,
        solver: None,
        counters: None,
        fd_assisted: false,
    })
}

/// `F` of a raw Hermitian matrix.
pub fn qfi_of_matrix(rho: &CMatrix, g: &Generator) -> Result<f64> {
    Ok(qfi(&eigen::eigh(rho)?, g)?.f)
}

/// `dF/dρ` as a Hermitian matrix (real-gradient convention).
///
/// Pair weights use cluster-mean eigenvalues, and pairs inside one cluster
/// are dropped, so the eigenvector cotangent is exactly invariant under
/// rotations within each cluster. Eigenvalue cotangents of a cluster are
/// assembled as a full block in the cluster basis.
pub fn qfi_rho_cotangent(decomp: &EigDecomposition, g: &Generator) -> Result<CMatrix> {
    qfi_rho_cotangent_with_clip(decomp, g, CLIP_TOL)
}

pub fn qfi_rho_cotangent_with_clip(decomp: &EigDecomposition, g: &Generator, clip: f64) -> Result<CMatrix> {
    let lam = clipped_values(decomp, clip)?;
    let gt = generator_in_eigenbasis(decomp, g)?;
    let d = decomp.dim();
    let clusters = decomp.clusters();
    let label: Vec<usize> = (0..d).map(|i| decomp.cluster_of(i)).collect();
    let means: Vec<f64> = clusters
        .iter()
        .map(|idx| idx.iter().map(|&i| lam[i]).sum::<f64>() / idx.len() as f64)
        .collect();
    let lbar = |i: usize| means[label[i]];
    let retained = |i: usize, j: usize| label[i] != label[j] && lbar(i) + lbar(j) > SKIP_TOL;

    // Weighted generator entries w_ij G_ij and ∂w/∂λᵢ.
    let mut wg = CMatrix::zeros(d, d);
    let mut dw = vec![vec![0.0; d]; d];
    for i in 0..d {
        for j in 0..d {
            if !retained(i, j) {
                continue;
            }
            let (a, b) = (lbar(i), lbar(j));
            let s = a + b;
            wg[(i, j)] = gt[(i, j)] * ((a - b) * (a - b) / s);
            dw[i][j] = (a - b) * (a + 3.0 * b) / (s * s);
        }
    }

    let blocks: Vec<CMatrix> = clusters
        .iter()
        .map(|idx| {
            CMatrix::from_fn(idx.len(), idx.len(), |p, q| {
                let (i, j) = (idx[p], idx[q]);
                (0..d)
                    .filter(|&k| retained(i, k))
                    .map(|k| gt[(i, k)] * gt[(k, j)] * dw[i][k])
                    .sum::<C64>()
            })
        })
        .collect();

    // c_Ψ = 2 G Ψ (W∘G̃)
    let v = decomp.vectors();
    let c_vectors = g.0.apply(&v.matmul(&wg)?)?.scale_real(2.0);
    eig_vjp_blocks(decomp, &blocks, Some(&c_vectors))
}

/// The QFI as a cost on the final state of a solve.
#[derive(Clone, Debug)]
pub struct QfiCost {
    pub generator: Generator,
    pub clip: f64,
}

impl QfiCost {
    pub fn new(generator: Generator) -> Self {
        QfiCost {
            generator,
            clip: CLIP_TOL,
        }
    }
}

impl CostCofunction for QfiCost {
    fn value(&self, rho: &CMatrix) -> Result<f64> {
        Ok(qfi_with_clip(&eigen::eigh(rho)?, &self.generator, self.clip)?.f)
    }

    fn gradient(&self, rho: &CMatrix) -> Result<CMatrix> {
        qfi_rho_cotangent_with_clip(&eigen::eigh(rho)?, &self.generator, self.clip)
    }

    /// Random Hermitian directions when the state is safely full rank;
    /// otherwise tangents `−i[K, ρ]` to the unitary orbit, which keep the
    /// spectrum (and hence positivity) fixed to first order.
    fn check_directions(&self, rho: &CMatrix, rng: &mut ChaCha8Rng) -> Vec<CMatrix> {
        let d = rho.rows();
        let full_rank = eigen::min_eigenvalue(rho).map(|m| m > 1e-4).unwrap_or(false);
        (0..3)
            .map(|_| {
                let k = CMatrix::from_fn(d, d, |_, _| {
                    C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
                })
                .hermitian_part();
                let dir = if full_rank {
                    k
                } else {
                    k.commutator(rho).expect("square").scale(-I)
                };
                let n = dir.frobenius_norm().max(f64::MIN_POSITIVE);
                dir.scale_real(1.0 / n)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Default)]
pub struct QfiOptions {
    pub convention: Convention,
    /// Run the finite-difference check of `dF/dρ` before each backward
    /// pass.
    pub verify_cost: bool,
}

fn stage<T>(name: &'static str, r: Result<T>) -> Result<T> {
    r.map_err(|e| Error::Stage {
        stage: name,
        source: Box::new(e),
    })
}

/// `F(x)` for a protocol, optionally with `∇ₓF` from one forward solve and
/// one adjoint pass.
#[allow(clippy::too_many_arguments)]
pub fn qfi_of_params(
    model: &LindbladModel,
    x: &[f64],
    rho0: &DensityOperator,
    t_span: (f64, f64),
    g: &Generator,
    cfg: &SolveConfig,
    want_gradient: bool,
    opts: &QfiOptions,
) -> Result<QfiReport> {
    if g.dim() != model.dim() {
        return Err(Error::DimensionMismatch {
            op: "qfi_of_params",
            left: (model.dim(), model.dim()),
            right: g.0.shape(),
        });
    }
    let start = SolveCounters::snapshot();
    let clip = final_state_tolerance(cfg).max(CLIP_TOL);
    let (final_state, solver_stats, gradient) = if want_gradient {
        let cost = QfiCost {
            generator: g.clone(),
            clip,
        };
        let gopts = GradientOptions {
            verify_cost: opts.verify_cost,
            ..GradientOptions::default()
        };
        let res = stage("gradient", adjoint_gradient_with(model, x, rho0, t_span, cfg, &cost, &gopts))?;
        (res.final_state, res.forward, Some(res.gradient))
    } else {
        let res = stage("solve", integrate(model, x, rho0, t_span, cfg))?;
        (res.final_state, res.stats, None)
    };
    let decomp = stage("eigen", eigen::eigh(final_state.matrix()))?;
    let mut report = stage("qfi", qfi_with_clip(&decomp, g, clip))?;
    let m = opts.convention.multiplier();
    report.f *= m;
    report.gradient = gradient.map(|gr| gr.into_iter().map(|v| v * m).collect());
    report.convention = opts.convention;
    report.eigen.residual = decomp.residual(final_state.matrix());
    report.solver = Some(solver_stats);
    report.counters = Some(SolveCounters::snapshot().since(start));
    report.fd_assisted = model.uses_fd_derivative();
    Ok(report)
}

/// Uniform random parameters in `[−π, π]`.
pub fn random_parameters(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
        .collect()
}
