//! Hermitian eigendecomposition with first derivatives that stay finite
//! under eigenvalue multiplicity.
//!
//! Eigenvalues closer than the degeneracy tolerance are grouped into
//! clusters. For a singleton the usual perturbation formulas apply. For a
//! cluster only the mean eigenvalue and the invariant subspace have
//! well-defined derivatives; the rotation inside the subspace is a gauge
//! choice and is set to zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, C64, I, ONE, ZERO};

const MAX_SWEEPS: usize = 64;

/// Relative degeneracy tolerance: `|λᵢ − λⱼ| < 1e-8 · max(1, ‖ρ‖₂)`.
pub const DEGENERACY_RTOL: f64 = 1e-8;

/// Inputs whose Hermiticity residual exceeds this (relative to
/// `max(1, ‖ρ‖_F)`) are rejected.
pub const HERMITIAN_TOL: f64 = 1e-9;

/// How the normalization constraint on `∂ψ` is imposed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NormConstraint {
    /// `Re⟨ψ, ∂ψ⟩ = 0`, with the remaining phase freedom fixed by the same
    /// gauge as [`eigh`] (the pivot entry stays real).
    #[default]
    RealPart,
    /// `⟨ψ, ∂ψ⟩ = 0`.
    Full,
}

/// Spectral decomposition `ρ = Ψ diag(λ) Ψ†` with ascending eigenvalues.
#[derive(Clone, Debug, PartialEq)]
pub struct EigDecomposition {
    values: Vec<f64>,
    vectors: CMatrix,
    clusters: Vec<Vec<usize>>,
    tolerance: f64,
}

impl EigDecomposition {
    /// Builds a decomposition from given parts, recomputing the clusters.
    /// Intended for tests that need to perturb the gauge.
    pub fn from_parts(values: Vec<f64>, vectors: CMatrix) -> Self {
        let spectral_norm = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let tolerance = DEGENERACY_RTOL * spectral_norm.max(1.0);
        let clusters = cluster_sorted(&values, tolerance);
        EigDecomposition {
            values,
            vectors,
            clusters,
            tolerance,
        }
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn vectors(&self) -> &CMatrix {
        &self.vectors
    }

    pub fn vector(&self, i: usize) -> Vec<C64> {
        self.vectors.column(i)
    }

    pub fn clusters(&self) -> &[Vec<usize>] {
        &self.clusters
    }

    pub fn tolerance(&self) -> f64 {
        self.tolerance
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// Index into [`clusters`](Self::clusters) of the cluster holding `i`.
    pub fn cluster_of(&self, i: usize) -> usize {
        self.clusters
            .iter()
            .position(|c| c.contains(&i))
            .expect("every index belongs to a cluster")
    }

    /// Smallest gap between adjacent distinct clusters (infinite if only one).
    pub fn min_gap(&self) -> f64 {
        self.clusters
            .windows(2)
            .map(|w| self.values[w[1][0]] - self.values[*w[0].last().unwrap()])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn cluster_mean(&self, c: usize) -> f64 {
        let idx = &self.clusters[c];
        idx.iter().map(|&i| self.values[i]).sum::<f64>() / idx.len() as f64
    }

    /// `‖ρΨ − Ψ diag(λ)‖_F`.
    pub fn residual(&self, rho: &CMatrix) -> f64 {
        let lhs = rho.matmul(&self.vectors).expect("matching dimension");
        let rhs = CMatrix::from_fn(self.dim(), self.dim(), |i, j| self.vectors[(i, j)] * self.values[j]);
        (&lhs - &rhs).frobenius_norm()
    }

    /// `Ψ diag(λ) Ψ†`.
    pub fn reconstruct(&self) -> CMatrix {
        let d = self.dim();
        let scaled = CMatrix::from_fn(d, d, |i, j| self.vectors[(i, j)] * self.values[j]);
        scaled.matmul(&self.vectors.adjoint()).expect("square")
    }
}

/// Groups sorted eigenvalues whose neighbours lie within `tol`.
fn cluster_sorted(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    for (i, &v) in values.iter().enumerate() {
        match clusters.last_mut() {
            Some(last) if v - values[*last.last().unwrap()] < tol => last.push(i),
            _ => clusters.push(vec![i]),
        }
    }
    clusters
}

fn check_hermitian_input(rho: &CMatrix) -> Result<()> {
    if !rho.is_square() {
        return Err(Error::NotSquare {
            op: "eigh",
            rows: rho.rows(),
            cols: rho.cols(),
        });
    }
    if !rho.is_finite() {
        return Err(Error::NonFinite("eigh input"));
    }
    let residual = rho.hermiticity_residual();
    if residual > HERMITIAN_TOL * rho.frobenius_norm().max(1.0) {
        return Err(Error::NotHermitian {
            what: "eigh input",
            residual,
        });
    }
    Ok(())
}

/// Cyclic complex Jacobi. Returns unsorted eigenvalues and the unitary whose
/// columns are the eigenvectors.
fn jacobi(mut a: CMatrix) -> Result<(Vec<f64>, CMatrix)> {
    let n = a.rows();
    let mut v = CMatrix::identity(n);
    for i in 0..n {
        a[(i, i)] = C64::new(a[(i, i)].re, 0.0);
    }
    let scale = a.frobenius_norm();
    if scale == 0.0 {
        return Ok((vec![0.0; n], v));
    }
    let mut converged = false;
    for _ in 0..MAX_SWEEPS {
        let mut off = 0.0;
        for p in 0..n {
            for q in 0..n {
                if p != q {
                    off += a[(p, q)].norm_sqr();
                }
            }
        }
        if off.sqrt() <= 1e-15 * scale {
            converged = true;
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                let mag = apq.norm();
                if mag <= f64::MIN_POSITIVE {
                    continue;
                }
                let phase = apq / mag;
                let app = a[(p, p)].re;
                let aqq = a[(q, q)].re;
                let theta = (aqq - app) / (2.0 * mag);
                let t = if theta >= 0.0 { 1.0 } else { -1.0 } / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                // W = diag(1, conj(phase)) · [[c, s], [-s, c]]
                let w_pp = C64::new(c, 0.0);
                let w_pq = C64::new(s, 0.0);
                let w_qp = -phase.conj() * s;
                let w_qq = phase.conj() * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = akp * w_pp + akq * w_qp;
                    a[(k, q)] = akp * w_pq + akq * w_qq;
                    let vkp = v[(k, p)];
                    let vkq = v[(k, q)];
                    v[(k, p)] = vkp * w_pp + vkq * w_qp;
                    v[(k, q)] = vkp * w_pq + vkq * w_qq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = w_pp.conj() * apk + w_qp.conj() * aqk;
                    a[(q, k)] = w_pq.conj() * apk + w_qq.conj() * aqk;
                }
                a[(p, q)] = ZERO;
                a[(q, p)] = ZERO;
                a[(p, p)] = C64::new(a[(p, p)].re, 0.0);
                a[(q, q)] = C64::new(a[(q, q)].re, 0.0);
            }
        }
    }
    if !converged {
        return Err(Error::EigenNoConvergence(MAX_SWEEPS));
    }
    Ok(((0..n).map(|i| a[(i, i)].re).collect(), v))
}

/// Eigenvalues of a Hermitian matrix in ascending order.
pub fn eigvalsh(rho: &CMatrix) -> Result<Vec<f64>> {
    check_hermitian_input(rho)?;
    let (mut values, _) = jacobi(rho.hermitian_part())?;
    values.sort_by(f64::total_cmp);
    Ok(values)
}

/// Full Hermitian eigendecomposition with a fixed phase gauge: in every
/// eigenvector the entry of largest magnitude (lowest row on ties) is real
/// and positive.
pub fn eigh(rho: &CMatrix) -> Result<EigDecomposition> {
    check_hermitian_input(rho)?;
    let (values, vectors) = jacobi(rho.hermitian_part())?;
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]).then(i.cmp(&j)));
    let sorted_values: Vec<f64> = order.iter().map(|&i| values[i]).collect();
    let mut sorted_vectors = vectors.select_columns(&order);
    for j in 0..n {
        let col = sorted_vectors.column(j);
        let pivot = gauge_pivot(&col);
        let z = col[pivot];
        let rot = z.conj() / z.norm();
        let fixed: Vec<C64> = col.iter().map(|c| c * rot).collect();
        sorted_vectors.set_column(j, &fixed);
        sorted_vectors[(pivot, j)] = C64::new(fixed[pivot].norm(), 0.0);
    }
    Ok(EigDecomposition::from_parts(sorted_values, sorted_vectors))
}

/// Row of the largest-magnitude entry, lowest index on ties.
fn gauge_pivot(col: &[C64]) -> usize {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in col.iter().enumerate() {
        let m = z.norm_sqr();
        if m > best_mag {
            best = i;
            best_mag = m;
        }
    }
    best
}

fn matvec(m: &CMatrix, v: &[C64]) -> Vec<C64> {
    (0..m.rows())
        .map(|i| m.row(i).iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

fn dot(a: &[C64], b: &[C64]) -> C64 {
    a.iter().zip(b).map(|(x, y)| x.conj() * y).sum()
}

/// Dense complex solve with partial pivoting. Returns `None` if singular.
fn solve_linear(mut a: CMatrix, mut b: Vec<C64>) -> Option<Vec<C64>> {
    let n = a.rows();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[(i, col)].norm().total_cmp(&a[(j, col)].norm()))?;
        if a[(piv, col)].norm() == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                let tmp = a[(col, k)];
                a[(col, k)] = a[(piv, k)];
                a[(piv, k)] = tmp;
            }
            b.swap(col, piv);
        }
        let d = a[(col, col)];
        for r in (col + 1)..n {
            let f = a[(r, col)] / d;
            if f == ZERO {
                continue;
            }
            for k in col..n {
                let v = a[(col, k)];
                a[(r, k)] -= f * v;
            }
            let v = b[col];
            b[r] -= f * v;
        }
    }
    let mut x = vec![ZERO; n];
    for r in (0..n).rev() {
        let s: C64 = ((r + 1)..n).map(|k| a[(r, k)] * x[k]).sum();
        x[r] = (b[r] - s) / a[(r, r)];
    }
    Some(x)
}

/// Derivative of one nondegenerate eigenpair, from both routes.
#[derive(Clone, Debug, PartialEq)]
pub struct SimpleEigDerivative {
    pub dvalue: f64,
    pub dvector: Vec<C64>,
    /// `∂λ` from the bordered linear system.
    pub bordered_dvalue: f64,
    /// `∂ψ` from the bordered linear system, same constraint as `dvector`.
    pub bordered_dvector: Vec<C64>,
    /// `‖(ρ − λI)∂ψ + (∂ρ − ∂λ I)ψ‖`.
    pub residual: f64,
}

impl SimpleEigDerivative {
    /// Largest disagreement between the perturbation-series and bordered
    /// routes.
    pub fn route_discrepancy(&self) -> f64 {
        let dv = self
            .dvector
            .iter()
            .zip(&self.bordered_dvector)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        dv.max((self.dvalue - self.bordered_dvalue).abs())
    }
}

fn check_perturbation(decomp: &EigDecomposition, drho: &CMatrix) -> Result<()> {
    let d = decomp.dim();
    if drho.shape() != (d, d) {
        return Err(Error::DimensionMismatch {
            op: "eigen derivative",
            left: (d, d),
            right: drho.shape(),
        });
    }
    if !drho.is_finite() {
        return Err(Error::NonFinite("eigen perturbation"));
    }
    Ok(())
}

/// Moves `dpsi` from the `⟨ψ,∂ψ⟩ = 0` gauge to the one matching [`eigh`].
fn apply_constraint(psi: &[C64], dpsi: &mut [C64], constraint: NormConstraint) {
    if constraint == NormConstraint::RealPart {
        let m = gauge_pivot(psi);
        let alpha = -dpsi[m].im / psi[m].re;
        for (d, p) in dpsi.iter_mut().zip(psi) {
            *d += I * alpha * p;
        }
    }
}

/// Derivative of eigenpair `i` along `drho`. Fails on degenerate indices.
pub fn eig_derivative_simple(
    decomp: &EigDecomposition,
    i: usize,
    drho: &CMatrix,
    constraint: NormConstraint,
) -> Result<SimpleEigDerivative> {
    check_perturbation(decomp, drho)?;
    let d = decomp.dim();
    if i >= d {
        return Err(Error::ParameterIndex { index: i, count: d });
    }
    let cluster = &decomp.clusters[decomp.cluster_of(i)];
    if cluster.len() > 1 {
        return Err(Error::DegenerateIndex {
            index: i,
            size: cluster.len(),
        });
    }
    let lambda = decomp.values[i];
    let psi = decomp.vector(i);
    let dpsi_rho = matvec(drho, &psi);

    // Perturbation series.
    let dvalue = dot(&psi, &dpsi_rho).re;
    let mut dvector = vec![ZERO; d];
    for j in (0..d).filter(|&j| j != i) {
        let psi_j = decomp.vector(j);
        let coef = dot(&psi_j, &dpsi_rho) / (lambda - decomp.values[j]);
        for (o, p) in dvector.iter_mut().zip(&psi_j) {
            *o += coef * p;
        }
    }

    // Bordered system [[ρ − λI, −ψ], [ψ†, 0]] [∂ψ; ∂λ] = [−∂ρψ; 0].
    let rho = decomp.reconstruct();
    let mut sys = CMatrix::zeros(d + 1, d + 1);
    for r in 0..d {
        for c in 0..d {
            sys[(r, c)] = rho[(r, c)];
        }
        sys[(r, r)] -= lambda;
        sys[(r, d)] = -psi[r];
        sys[(d, r)] = psi[r].conj();
    }
    let mut rhs: Vec<C64> = dpsi_rho.iter().map(|z| -z).collect();
    rhs.push(ZERO);
    let sol = solve_linear(sys, rhs).ok_or(Error::DegenerateIndex { index: i, size: 1 })?;
    let bordered_dvalue = sol[d].re;
    let mut bordered_dvector = sol[..d].to_vec();

    apply_constraint(&psi, &mut dvector, constraint);
    apply_constraint(&psi, &mut bordered_dvector, constraint);

    let residual = {
        let lhs = matvec(&rho, &dvector);
        lhs.iter()
            .zip(&dvector)
            .zip(&dpsi_rho)
            .zip(&psi)
            .map(|(((a, dv), dr), p)| (a - dv * lambda + dr - p * dvalue).norm_sqr())
            .sum::<f64>()
            .sqrt()
    };
    Ok(SimpleEigDerivative {
        dvalue,
        dvector,
        bordered_dvalue,
        bordered_dvector,
        residual,
    })
}

/// Derivative of a degenerate cluster: mean eigenvalue and the component of
/// the subspace tangent orthogonal to the cluster.
#[derive(Clone, Debug, PartialEq)]
pub struct ClusterDerivative {
    pub indices: Vec<usize>,
    pub mean_dvalue: f64,
    /// `d × m` block, column `a` the tangent of cluster vector `a`.
    pub subspace_tangent: CMatrix,
}

pub fn eig_derivative_clustered(
    decomp: &EigDecomposition,
    cluster: &[usize],
    drho: &CMatrix,
) -> Result<ClusterDerivative> {
    check_perturbation(decomp, drho)?;
    let ci = cluster
        .first()
        .filter(|&&i| i < decomp.dim())
        .map(|&i| decomp.cluster_of(i))
        .ok_or_else(|| Error::ClusterNotMaximal(cluster.to_vec()))?;
    let mut sorted = cluster.to_vec();
    sorted.sort_unstable();
    if decomp.clusters[ci] != sorted {
        return Err(Error::ClusterNotMaximal(cluster.to_vec()));
    }
    if sorted.len() < 2 {
        return Err(Error::InvalidConfig(
            "clustered derivative needs at least two eigenvalues".into(),
        ));
    }
    Ok(cluster_derivative_unchecked(decomp, ci, drho))
}

fn cluster_derivative_unchecked(decomp: &EigDecomposition, ci: usize, drho: &CMatrix) -> ClusterDerivative {
    let idx = &decomp.clusters[ci];
    let d = decomp.dim();
    let m = idx.len();
    let basis = decomp.vectors.select_columns(idx);
    let dr_basis = drho.matmul(&basis).expect("dimension checked");
    let projected = basis.adjoint().matmul(&dr_basis).expect("dimension checked");
    let mean_dvalue = projected.trace().expect("square").re / m as f64;
    let lambda_c = decomp.cluster_mean(ci);
    let mut tangent = CMatrix::zeros(d, m);
    for j in (0..d).filter(|j| !idx.contains(j)) {
        let psi_j = decomp.vector(j);
        let gap = lambda_c - decomp.values[j];
        for a in 0..m {
            let coef = (0..d).map(|r| psi_j[r].conj() * dr_basis[(r, a)]).sum::<C64>() / gap;
            for r in 0..d {
                tangent[(r, a)] += coef * psi_j[r];
            }
        }
    }
    ClusterDerivative {
        indices: idx.clone(),
        mean_dvalue,
        subspace_tangent: tangent,
    }
}

/// First derivatives of the whole decomposition along one perturbation.
#[derive(Clone, Debug, PartialEq)]
pub struct EigDerivative {
    /// `∂λᵢ`; members of a cluster all carry the cluster mean.
    pub dvalues: Vec<f64>,
    pub dvectors: CMatrix,
    /// `true` where `dvalues[i]` is a cluster average.
    pub averaged: Vec<bool>,
    /// Eq.-residual per singleton index (zero for cluster members).
    pub residuals: Vec<f64>,
    /// Indices whose two derivative routes disagree by more than 1e-8.
    pub warnings: Vec<usize>,
}

pub fn eig_derivative(decomp: &EigDecomposition, drho: &CMatrix, constraint: NormConstraint) -> Result<EigDerivative> {
    check_perturbation(decomp, drho)?;
    let d = decomp.dim();
    let mut out = EigDerivative {
        dvalues: vec![0.0; d],
        dvectors: CMatrix::zeros(d, d),
        averaged: vec![false; d],
        residuals: vec![0.0; d],
        warnings: Vec::new(),
    };
    for (ci, idx) in decomp.clusters.iter().enumerate() {
        if idx.len() == 1 {
            let i = idx[0];
            let s = eig_derivative_simple(decomp, i, drho, constraint)?;
            if s.route_discrepancy() > 1e-8 {
                out.warnings.push(i);
            }
            out.dvalues[i] = s.dvalue;
            out.dvectors.set_column(i, &s.dvector);
            out.residuals[i] = s.residual;
        } else {
            let c = cluster_derivative_unchecked(decomp, ci, drho);
            for (a, &i) in idx.iter().enumerate() {
                out.dvalues[i] = c.mean_dvalue;
                out.averaged[i] = true;
                out.dvectors.set_column(i, &c.subspace_tangent.column(a));
            }
        }
    }
    Ok(out)
}

/// Reverse-mode rule with per-eigenvalue cotangents. Within a cluster the
/// eigenvalue cotangents are averaged, matching the cluster-mean
/// derivative model.
///
/// Cotangents use the real-gradient convention: for a complex quantity `z`
/// the cotangent is `∂c/∂Re z + i ∂c/∂Im z`, so `dc = Re⟨c̄, dz⟩`.
pub fn eig_vjp(decomp: &EigDecomposition, c_values: &[f64], c_vectors: Option<&CMatrix>) -> Result<CMatrix> {
    if c_values.len() != decomp.dim() {
        return Err(Error::DimensionMismatch {
            op: "eig_vjp",
            left: (decomp.dim(), 1),
            right: (c_values.len(), 1),
        });
    }
    let blocks: Vec<CMatrix> = decomp
        .clusters
        .iter()
        .map(|idx| {
            let mean = idx.iter().map(|&i| c_values[i]).sum::<f64>() / idx.len() as f64;
            CMatrix::identity(idx.len()).scale_real(mean)
        })
        .collect();
    eig_vjp_blocks(decomp, &blocks, c_vectors)
}

/// Reverse-mode rule where the eigenvalue cotangent of each cluster is a
/// Hermitian block expressed in that cluster's eigenvector basis. A
/// singleton cluster takes a 1×1 block. This form is exact for costs whose
/// dependence on a degenerate cluster is through a full within-cluster
/// operator rather than a symmetric function of its eigenvalues.
pub fn eig_vjp_blocks(
    decomp: &EigDecomposition,
    value_blocks: &[CMatrix],
    c_vectors: Option<&CMatrix>,
) -> Result<CMatrix> {
    let d = decomp.dim();
    if value_blocks.len() != decomp.clusters.len() {
        return Err(Error::InvalidConfig(format!(
            "{} eigenvalue blocks for {} clusters",
            value_blocks.len(),
            decomp.clusters.len()
        )));
    }
    let mut inner = CMatrix::zeros(d, d);
    for (idx, block) in decomp.clusters.iter().zip(value_blocks) {
        if block.shape() != (idx.len(), idx.len()) {
            return Err(Error::DimensionMismatch {
                op: "eig_vjp block",
                left: (idx.len(), idx.len()),
                right: block.shape(),
            });
        }
        for (a, &i) in idx.iter().enumerate() {
            for (b, &j) in idx.iter().enumerate() {
                inner[(i, j)] = block[(a, b)];
            }
        }
    }
    if let Some(cv) = c_vectors {
        if cv.shape() != (d, d) {
            return Err(Error::DimensionMismatch {
                op: "eig_vjp",
                left: (d, d),
                right: cv.shape(),
            });
        }
        let m = decomp.vectors.adjoint().matmul(cv)?;
        for idx in &decomp.clusters {
            let mut worst = 0.0f64;
            for &i in idx {
                for &j in idx {
                    worst = worst.max(((m[(i, j)] - m[(j, i)].conj()) * 0.5).norm());
                }
            }
            if worst > 1e-8 {
                return Err(Error::GaugeDependence {
                    cluster: idx.clone(),
                    magnitude: worst,
                });
            }
        }
        let label: Vec<usize> = (0..d).map(|i| decomp.cluster_of(i)).collect();
        for i in 0..d {
            for j in 0..d {
                if label[i] != label[j] {
                    inner[(i, j)] += m[(i, j)] / (decomp.values[j] - decomp.values[i]);
                }
            }
        }
    }
    let v = &decomp.vectors;
    let out = v.matmul(&inner)?.matmul(&v.adjoint())?;
    Ok(out.hermitian_part())
}

/// `ψᵢψᵢ†` for a normalized vector.
pub fn projector(psi: &[C64]) -> CMatrix {
    let d = psi.len();
    CMatrix::from_fn(d, d, |i, j| psi[i] * psi[j].conj())
}

/// Smallest eigenvalue of a Hermitian matrix.
pub fn min_eigenvalue(m: &CMatrix) -> Result<f64> {
    Ok(eigvalsh(m)?[0])
}

#[doc(hidden)]
pub fn unit(d: usize, i: usize) -> Vec<C64> {
    let mut v = vec![ZERO; d];
    v[i] = ONE;
    v
}
