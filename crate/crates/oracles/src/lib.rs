//! Slow, simple reference computations for the test suites.
//!
//! Nothing here shares numerical kernels with `lindbladiff`: matrices are
//! `nalgebra` matrices, eigenvalues come from `nalgebra`'s symmetric solver
//! applied to a real embedding, and the master-equation right-hand side is
//! written out again from scratch.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type C64 = Complex64;
pub type Mat = DMatrix<C64>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    MatrixExponential,
    FixedStepRk4,
    CentralFd,
    HandEnumeration,
}

#[derive(Clone, Debug, PartialEq)]
pub struct OracleResult<T> {
    pub value: T,
    pub method: Method,
}

#[derive(Debug, Clone, PartialEq)]
pub enum OracleError {
    NonFinite,
    NoConvergence,
    BadStep(f64),
}

impl std::fmt::Display for OracleError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            OracleError::NonFinite => write!(f, "non-finite function value"),
            OracleError::NoConvergence => write!(f, "series did not converge"),
            OracleError::BadStep(h) => write!(f, "invalid step {h}"),
        }
    }
}

impl std::error::Error for OracleError {}

pub fn from_row_major(d: usize, data: &[C64]) -> Mat {
    Mat::from_row_slice(d, d, data)
}

pub fn to_row_major(m: &Mat) -> Vec<C64> {
    let mut out = Vec::with_capacity(m.nrows() * m.ncols());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// `e^{A}` by scaling and squaring a truncated Taylor series.
pub fn expm(a: &Mat) -> Result<Mat, OracleError> {
    let n = a.nrows();
    let norm = a.iter().map(|z| z.norm()).sum::<f64>();
    if !norm.is_finite() {
        return Err(OracleError::NonFinite);
    }
    let mut s = 0u32;
    while norm / 2f64.powi(s as i32) > 0.25 {
        s += 1;
        if s > 200 {
            return Err(OracleError::NoConvergence);
        }
    }
    let scaled = a / C64::new(2f64.powi(s as i32), 0.0);
    let mut term = Mat::identity(n, n);
    let mut sum = Mat::identity(n, n);
    let mut converged = false;
    for k in 1..60 {
        term = &term * &scaled / C64::new(k as f64, 0.0);
        sum += &term;
        if term.iter().map(|z| z.norm()).sum::<f64>() < 1e-18 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(OracleError::NoConvergence);
    }
    for _ in 0..s {
        sum = &sum * &sum;
    }
    Ok(sum)
}

/// `e^{−iHT} ρ₀ e^{iHT}` for time-independent `H`.
pub fn expm_propagate(h: &Mat, rho0: &Mat, t: f64) -> Result<OracleResult<Mat>, OracleError> {
    let u = expm(&(h * C64::new(0.0, -t)))?;
    Ok(OracleResult {
        value: &u * rho0 * u.adjoint(),
        method: Method::MatrixExponential,
    })
}

/// `−i[H,ρ] + Σ γ(JρJ† − ½J†Jρ − ½ρJ†J)`.
pub fn lindblad_rhs_reference(h: &Mat, channels: &[(f64, Mat)], rho: &Mat) -> Mat {
    let mut out = (h * rho - rho * h) * C64::new(0.0, -1.0);
    for (gamma, j) in channels {
        let jd = j.adjoint();
        let jdj = &jd * j;
        let term = j * rho * &jd - (&jdj * rho + rho * &jdj) * C64::new(0.5, 0.0);
        out += term * C64::new(*gamma, 0.0);
    }
    out
}

/// Classical fourth-order Runge–Kutta with a fixed step.
pub fn rk4_fixed(
    f: impl Fn(f64, &Mat) -> Mat,
    y0: &Mat,
    t0: f64,
    t1: f64,
    step: f64,
) -> Result<OracleResult<Mat>, OracleError> {
    if step.is_nan() || step <= 0.0 {
        return Err(OracleError::BadStep(step));
    }
    let n = ((t1 - t0) / step).ceil().max(1.0) as usize;
    let h = (t1 - t0) / n as f64;
    let half = C64::new(h / 2.0, 0.0);
    let full = C64::new(h, 0.0);
    let sixth = C64::new(h / 6.0, 0.0);
    let two = C64::new(2.0, 0.0);
    let mut y = y0.clone();
    for i in 0..n {
        let t = t0 + i as f64 * h;
        let k1 = f(t, &y);
        let k2 = f(t + h / 2.0, &(&y + &k1 * half));
        let k3 = f(t + h / 2.0, &(&y + &k2 * half));
        let k4 = f(t + h, &(&y + &k3 * full));
        y += (k1 + k2 * two + k3 * two + k4) * sixth;
    }
    if y.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(OracleError::NonFinite);
    }
    Ok(OracleResult {
        value: y,
        method: Method::FixedStepRk4,
    })
}

/// Central differences `(F(x+heₖ) − F(x−heₖ))/2h`.
pub fn fd_gradient(
    mut f: impl FnMut(&[f64]) -> f64,
    x: &[f64],
    h: f64,
) -> Result<OracleResult<Vec<f64>>, OracleError> {
    if h.is_nan() || h <= 0.0 {
        return Err(OracleError::BadStep(h));
    }
    let mut g = Vec::with_capacity(x.len());
    let mut xp = x.to_vec();
    for k in 0..x.len() {
        xp[k] = x[k] + h;
        let fp = f(&xp);
        xp[k] = x[k] - h;
        let fm = f(&xp);
        xp[k] = x[k];
        if !fp.is_finite() || !fm.is_finite() {
            return Err(OracleError::NonFinite);
        }
        g.push((fp - fm) / (2.0 * h));
    }
    Ok(OracleResult {
        value: g,
        method: Method::CentralFd,
    })
}

/// Ascending eigenvalues of a Hermitian matrix via the real symmetric
/// embedding `[[Re, −Im], [Im, Re]]`, whose spectrum is each eigenvalue
/// twice.
pub fn hermitian_eigenvalues(m: &Mat) -> Vec<f64> {
    let n = m.nrows();
    let sym = (m + m.adjoint()) * C64::new(0.5, 0.0);
    let mut real = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = sym[(i, j)];
            real[(i, j)] = z.re;
            real[(i + n, j + n)] = z.re;
            real[(i, j + n)] = -z.im;
            real[(i + n, j)] = z.im;
        }
    }
    let mut vals: Vec<f64> = real.symmetric_eigen().eigenvalues.iter().copied().collect();
    vals.sort_by(f64::total_cmp);
    vals.chunks(2).map(|p| 0.5 * (p[0] + p[1])).collect()
}

/// Groups sorted values whose neighbours differ by less than `tol`.
pub fn clusters(values: &[f64], tol: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for i in 0..values.len() {
        match out.last_mut() {
            Some(c) if values[i] - values[*c.last().unwrap()] < tol => c.push(i),
            _ => out.push(vec![i]),
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct EigFd {
    /// FD derivative of each sorted eigenvalue.
    pub values: Vec<f64>,
    /// Clusters of the unperturbed matrix (tolerance `1e-8·max(1, ‖ρ‖₂)`).
    pub clusters: Vec<Vec<usize>>,
    /// FD derivative of each cluster's mean eigenvalue.
    pub cluster_means: Vec<f64>,
    /// Cluster structure of `ρ + h∂ρ` differs from that of `ρ − h∂ρ`.
    pub structure_changed: bool,
}

/// Central differences of sorted eigenvalues and cluster means.
pub fn dense_eig_fd(rho: &Mat, drho: &Mat, h: f64) -> Result<OracleResult<EigFd>, OracleError> {
    if !(1e-7..=1e-4).contains(&h) {
        return Err(OracleError::BadStep(h));
    }
    let base = hermitian_eigenvalues(rho);
    let scale = base.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
    let tol = 1e-8 * scale;
    let cl = clusters(&base, tol);
    let hp = C64::new(h, 0.0);
    let plus = hermitian_eigenvalues(&(rho + drho * hp));
    let minus = hermitian_eigenvalues(&(rho - drho * hp));
    let values: Vec<f64> = plus.iter().zip(&minus).map(|(p, m)| (p - m) / (2.0 * h)).collect();
    let cluster_means = cl
        .iter()
        .map(|c| c.iter().map(|&i| values[i]).sum::<f64>() / c.len() as f64)
        .collect();
    let structure_changed = clusters(&plus, tol) != clusters(&minus, tol);
    Ok(OracleResult {
        value: EigFd {
            values,
            clusters: cl,
            cluster_means,
            structure_changed,
        },
        method: Method::CentralFd,
    })
}

/// `⟨ψ|G²|ψ⟩ − ⟨ψ|G|ψ⟩²`.
pub fn variance(g: &Mat, psi: &[C64]) -> f64 {
    let v = nalgebra::DVector::from_column_slice(psi);
    let gv = g * &v;
    let mean = v.dotc(&gv).re;
    gv.dotc(&gv).re - mean * mean
}

/// Literal spectral QFI sum, evaluated by enumerating all pairs of a full
/// Hermitian eigendecomposition (nalgebra on the real embedding).
pub fn qfi_enumerated(rho: &Mat, g: &Mat) -> OracleResult<f64> {
    let n = rho.nrows();
    let sym = (rho + rho.adjoint()) * C64::new(0.5, 0.0);
    let mut real = DMatrix::<f64>::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let z = sym[(i, j)];
            real[(i, j)] = z.re;
            real[(i + n, j + n)] = z.re;
            real[(i, j + n)] = -z.im;
            real[(i + n, j)] = z.im;
        }
    }
    let eig = real.symmetric_eigen();
    let mut idx: Vec<usize> = (0..2 * n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    // Each complex eigenvector (u + iv) appears as (u, v) and (−v, u);
    // select an orthonormal set of n complex vectors by Gram–Schmidt.
    let mut vals = Vec::new();
    let mut vecs: Vec<nalgebra::DVector<C64>> = Vec::new();
    for &k in &idx {
        let col = eig.eigenvectors.column(k);
        let mut z = nalgebra::DVector::from_fn(n, |i, _| C64::new(col[i], col[i + n]));
        for q in &vecs {
            let p = q.dotc(&z);
            z -= q * p;
        }
        let nz = z.norm();
        if nz > 1e-6 && vecs.len() < n {
            vecs.push(z / C64::new(nz, 0.0));
            vals.push(eig.eigenvalues[k]);
        }
    }
    let mut f = 0.0;
    for i in 0..n {
        for j in 0..i {
            let (a, b) = (vals[i].max(0.0), vals[j].max(0.0));
            if a + b <= 1e-12 {
                continue;
            }
            let gij = vecs[i].dotc(&(g * &vecs[j]));
            f += (a - b) * (a - b) / (a + b) * gij.norm_sqr();
        }
    }
    OracleResult {
        value: f,
        method: Method::HandEnumeration,
    }
}
