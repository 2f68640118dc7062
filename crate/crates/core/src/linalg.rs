//! Dense and compressed-sparse-row complex matrices.
//!
//! Every operator in the pipeline is square with dimension `2^n` for a small
//! number of qubits, so density operators are always dense. Hamiltonians and
//! jump operators may be stored sparsely; [`OperatorHandle`] hides the choice
//! behind one multiply/adjoint contract.

use std::ops::{Add, AddAssign, Index, IndexMut, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;

use crate::error::{Error, Result};

pub type C64 = Complex64;

pub const ZERO: C64 = C64::new(0.0, 0.0);
pub const ONE: C64 = C64::new(1.0, 0.0);
pub const I: C64 = C64::new(0.0, 1.0);

/// Dense complex matrix in row-major layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CMatrix {
    rows: usize,
    cols: usize,
    data: Vec<C64>,
}

impl CMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        CMatrix {
            rows,
            cols,
            data: vec![ZERO; rows * cols],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim, dim);
        for i in 0..dim {
            m.data[i * dim + i] = ONE;
        }
        m
    }

    /// Builds a matrix from row-major data, rejecting non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<C64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::InvalidLayout(format!(
                "{} entries for a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if !data.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(CMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<C64>]) -> Result<Self> {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != ncols) {
            return Err(Error::InvalidLayout("ragged rows".into()));
        }
        Self::from_vec(nrows, ncols, rows.concat())
    }

    /// Real-valued convenience constructor, mostly for tests and presets.
    pub fn from_real(rows: usize, cols: usize, data: &[f64]) -> Result<Self> {
        Self::from_vec(rows, cols, data.iter().map(|&x| C64::new(x, 0.0)).collect())
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> C64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        CMatrix { rows, cols, data }
    }

    pub fn diag_real(values: &[f64]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.data[i * n + i] = C64::new(v, 0.0);
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn as_slice(&self) -> &[C64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [C64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<C64> {
        self.data
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn row(&self, i: usize) -> &[C64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<C64> {
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[C64]) {
        for (i, v) in values.iter().enumerate() {
            self.data[i * self.cols + j] = *v;
        }
    }

    /// Conjugate transpose.
    pub fn adjoint(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j].conj();
            }
        }
        out
    }

    pub fn transpose(&self) -> CMatrix {
        let mut out = CMatrix::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }

    pub fn conj(&self) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn matmul(&self, other: &CMatrix) -> Result<CMatrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: other.shape(),
            });
        }
        let mut out = CMatrix::zeros(self.rows, other.cols);
        let n = other.cols;
        for i in 0..self.rows {
            let out_row = &mut out.data[i * n..(i + 1) * n];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == ZERO {
                    continue;
                }
                let b_row = &other.data[k * n..(k + 1) * n];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn scale(&self, s: C64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    pub fn scale_real(&self, s: f64) -> CMatrix {
        CMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|z| z * s).collect(),
        }
    }

    /// `self += s * other`. Shapes must agree (checked in debug builds).
    pub fn axpy(&mut self, s: C64, other: &CMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn axpy_real(&mut self, s: f64, other: &CMatrix) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b * s;
        }
    }

    pub fn trace(&self) -> Result<C64> {
        if !self.is_square() {
            return Err(Error::NotSquare {
                op: "trace",
                rows: self.rows,
                cols: self.cols,
            });
        }
        Ok((0..self.rows).map(|i| self.data[i * self.cols + i]).sum())
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// Hilbert–Schmidt inner product `Tr(self† other)`.
    pub fn inner(&self, other: &CMatrix) -> C64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// Real pairing `Re Tr(self† other)`, the inner product of the realified
    /// matrices.
    pub fn real_inner(&self, other: &CMatrix) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| a.re * b.re + a.im * b.im)
            .sum()
    }

    /// `‖A − A†‖_F`.
    pub fn hermiticity_residual(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let n = self.rows;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += (self.data[i * n + j] - self.data[j * n + i].conj()).norm_sqr();
            }
        }
        acc.sqrt()
    }

    /// `(A + A†)/2`.
    pub fn hermitian_part(&self) -> CMatrix {
        let n = self.rows;
        CMatrix::from_fn(n, n, |i, j| {
            (self.data[i * n + j] + self.data[j * n + i].conj()) * 0.5
        })
    }

    /// `[self, other] = self·other − other·self`.
    pub fn commutator(&self, other: &CMatrix) -> Result<CMatrix> {
        let mut out = self.matmul(other)?;
        out -= &other.matmul(self)?;
        Ok(out)
    }

    pub fn kron(&self, other: &CMatrix) -> CMatrix {
        let (r1, c1) = self.shape();
        let (r2, c2) = other.shape();
        CMatrix::from_fn(r1 * r2, c1 * c2, |i, j| {
            self.data[(i / r2) * c1 + j / c2] * other.data[(i % r2) * c2 + j % c2]
        })
    }

    /// Columns `cols` of `self` as a new `rows x cols.len()` block.
    pub fn select_columns(&self, cols: &[usize]) -> CMatrix {
        CMatrix::from_fn(self.rows, cols.len(), |i, j| {
            self.data[i * self.cols + cols[j]]
        })
    }
}

impl Index<(usize, usize)> for CMatrix {
    type Output = C64;

    fn index(&self, (i, j): (usize, usize)) -> &C64 {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for CMatrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut C64 {
        assert!(i < self.rows && j < self.cols, "index ({i}, {j}) out of bounds");
        &mut self.data[i * self.cols + j]
    }
}

impl AddAssign<&CMatrix> for CMatrix {
    fn add_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.shape(), rhs.shape(), "shape mismatch in +=");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a += b;
        }
    }
}

impl SubAssign<&CMatrix> for CMatrix {
    fn sub_assign(&mut self, rhs: &CMatrix) {
        assert_eq!(self.shape(), rhs.shape(), "shape mismatch in -=");
        for (a, b) in self.data.iter_mut().zip(&rhs.data) {
            *a -= b;
        }
    }
}

impl Add<&CMatrix> for &CMatrix {
    type Output = CMatrix;

    fn add(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out += rhs;
        out
    }
}

impl Sub<&CMatrix> for &CMatrix {
    type Output = CMatrix;

    fn sub(self, rhs: &CMatrix) -> CMatrix {
        let mut out = self.clone();
        out -= rhs;
        out
    }
}

impl Mul<C64> for &CMatrix {
    type Output = CMatrix;

    fn mul(self, rhs: C64) -> CMatrix {
        self.scale(rhs)
    }
}

impl Neg for &CMatrix {
    type Output = CMatrix;

    fn neg(self) -> CMatrix {
        self.scale_real(-1.0)
    }
}

/// Complex matrix in compressed sparse row layout.
#[derive(Clone, Debug, PartialEq)]
pub struct CSparse {
    rows: usize,
    cols: usize,
    row_offsets: Vec<usize>,
    col_indices: Vec<usize>,
    values: Vec<C64>,
}

impl CSparse {
    /// Validates and wraps raw CSR arrays. Column indices must be strictly
    /// increasing within each row.
    pub fn new(
        rows: usize,
        cols: usize,
        row_offsets: Vec<usize>,
        col_indices: Vec<usize>,
        values: Vec<C64>,
    ) -> Result<Self> {
        if row_offsets.len() != rows + 1 || row_offsets[0] != 0 {
            return Err(Error::InvalidLayout("row offsets must have rows + 1 entries starting at 0".into()));
        }
        if col_indices.len() != values.len() || *row_offsets.last().unwrap() != values.len() {
            return Err(Error::InvalidLayout("offsets, indices and values disagree in length".into()));
        }
        for r in 0..rows {
            let (a, b) = (row_offsets[r], row_offsets[r + 1]);
            if a > b {
                return Err(Error::InvalidLayout(format!("row offsets decrease at row {r}")));
            }
            let idx = &col_indices[a..b];
            if idx.iter().any(|&c| c >= cols) {
                return Err(Error::InvalidLayout(format!("column index out of range in row {r}")));
            }
            if idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::InvalidLayout(format!(
                    "column indices not strictly increasing in row {r}"
                )));
            }
        }
        if !values.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            return Err(Error::NonFinite("sparse values"));
        }
        Ok(CSparse {
            rows,
            cols,
            row_offsets,
            col_indices,
            values,
        })
    }

    /// Builds from `(row, col, value)` triplets; duplicates are summed.
    pub fn from_triplets(rows: usize, cols: usize, triplets: &[(usize, usize, C64)]) -> Result<Self> {
        let mut sorted: Vec<_> = triplets.to_vec();
        if let Some(&(i, j, _)) = sorted.iter().find(|&&(i, j, _)| i >= rows || j >= cols) {
            return Err(Error::InvalidLayout(format!(
                "triplet ({i}, {j}) outside {rows}x{cols}"
            )));
        }
        sorted.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_offsets = vec![0usize; rows + 1];
        let mut col_indices = Vec::with_capacity(sorted.len());
        let mut values: Vec<C64> = Vec::with_capacity(sorted.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in sorted {
            if last == Some((i, j)) {
                *values.last_mut().unwrap() += v;
            } else {
                col_indices.push(j);
                values.push(v);
                row_offsets[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for r in 0..rows {
            row_offsets[r + 1] += row_offsets[r];
        }
        Self::new(rows, cols, row_offsets, col_indices, values)
    }

    /// Stores every nonzero entry of `m`.
    pub fn from_dense(m: &CMatrix) -> Self {
        let mut triplets = Vec::new();
        for i in 0..m.rows() {
            for j in 0..m.cols() {
                let v = m[(i, j)];
                if v != ZERO {
                    triplets.push((i, j, v));
                }
            }
        }
        Self::from_triplets(m.rows(), m.cols(), &triplets).expect("dense matrix yields valid CSR")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row_entries(&self, r: usize) -> impl Iterator<Item = (usize, C64)> + '_ {
        let (a, b) = (self.row_offsets[r], self.row_offsets[r + 1]);
        self.col_indices[a..b]
            .iter()
            .copied()
            .zip(self.values[a..b].iter().copied())
    }

    pub fn to_dense(&self) -> CMatrix {
        let mut m = CMatrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (c, v) in self.row_entries(r) {
                m[(r, c)] = v;
            }
        }
        m
    }

    pub fn adjoint(&self) -> CSparse {
        let triplets: Vec<_> = (0..self.rows)
            .flat_map(|r| self.row_entries(r).map(move |(c, v)| (c, r, v.conj())))
            .collect();
        Self::from_triplets(self.cols, self.rows, &triplets).expect("adjoint of valid CSR is valid")
    }

    /// `self · b`.
    pub fn mul_dense(&self, b: &CMatrix) -> Result<CMatrix> {
        if self.cols != b.rows() {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let n = b.cols();
        let mut out = CMatrix::zeros(self.rows, n);
        let bs = b.as_slice();
        let os = out.as_mut_slice();
        for r in 0..self.rows {
            let out_row = &mut os[r * n..(r + 1) * n];
            for (k, v) in self.row_entries(r) {
                for (o, x) in out_row.iter_mut().zip(&bs[k * n..(k + 1) * n]) {
                    *o += v * x;
                }
            }
        }
        Ok(out)
    }

    /// `b · self`.
    pub fn dense_mul(&self, b: &CMatrix) -> Result<CMatrix> {
        if b.cols() != self.rows {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: b.shape(),
                right: self.shape(),
            });
        }
        let m = b.rows();
        let n = self.cols;
        let mut out = CMatrix::zeros(m, n);
        let bs = b.as_slice();
        let os = out.as_mut_slice();
        for i in 0..m {
            let out_row = &mut os[i * n..(i + 1) * n];
            for k in 0..self.rows {
                let x = bs[i * self.rows + k];
                if x == ZERO {
                    continue;
                }
                for (c, v) in self.row_entries(k) {
                    out_row[c] += x * v;
                }
            }
        }
        Ok(out)
    }
}

/// An operator stored either densely or in CSR form.
#[derive(Clone, Debug, PartialEq)]
pub enum OperatorHandle {
    Dense(CMatrix),
    Sparse(CSparse),
}

impl OperatorHandle {
    pub fn shape(&self) -> (usize, usize) {
        match self {
            OperatorHandle::Dense(m) => m.shape(),
            OperatorHandle::Sparse(s) => s.shape(),
        }
    }

    pub fn dim(&self) -> usize {
        self.shape().0
    }

    pub fn is_sparse(&self) -> bool {
        matches!(self, OperatorHandle::Sparse(_))
    }

    pub fn to_dense(&self) -> CMatrix {
        match self {
            OperatorHandle::Dense(m) => m.clone(),
            OperatorHandle::Sparse(s) => s.to_dense(),
        }
    }

    /// Same operator with dense storage.
    pub fn densified(&self) -> OperatorHandle {
        OperatorHandle::Dense(self.to_dense())
    }

    /// Same operator with CSR storage.
    pub fn sparsified(&self) -> OperatorHandle {
        match self {
            OperatorHandle::Dense(m) => OperatorHandle::Sparse(CSparse::from_dense(m)),
            OperatorHandle::Sparse(_) => self.clone(),
        }
    }

    /// `self · b`.
    pub fn apply(&self, b: &CMatrix) -> Result<CMatrix> {
        match self {
            OperatorHandle::Dense(m) => m.matmul(b),
            OperatorHandle::Sparse(s) => s.mul_dense(b),
        }
    }

    /// `b · self`.
    pub fn apply_right(&self, b: &CMatrix) -> Result<CMatrix> {
        match self {
            OperatorHandle::Dense(m) => b.matmul(m),
            OperatorHandle::Sparse(s) => s.dense_mul(b),
        }
    }

    pub fn adjoint(&self) -> OperatorHandle {
        match self {
            OperatorHandle::Dense(m) => OperatorHandle::Dense(m.adjoint()),
            OperatorHandle::Sparse(s) => OperatorHandle::Sparse(s.adjoint()),
        }
    }

    /// `self† · self`, stored like `self`.
    pub fn gram(&self) -> OperatorHandle {
        let dense = self
            .adjoint()
            .apply(&self.to_dense())
            .expect("square operator");
        match self {
            OperatorHandle::Dense(_) => OperatorHandle::Dense(dense),
            OperatorHandle::Sparse(_) => OperatorHandle::Sparse(CSparse::from_dense(&dense)),
        }
    }

    pub fn hermiticity_residual(&self) -> f64 {
        self.to_dense().hermiticity_residual()
    }
}

impl From<CMatrix> for OperatorHandle {
    fn from(m: CMatrix) -> Self {
        OperatorHandle::Dense(m)
    }
}

impl From<CSparse> for OperatorHandle {
    fn from(s: CSparse) -> Self {
        OperatorHandle::Sparse(s)
    }
}

pub fn matmul(a: &OperatorHandle, b: &CMatrix) -> Result<CMatrix> {
    a.apply(b)
}

pub fn hermitian_adjoint(a: &OperatorHandle) -> OperatorHandle {
    a.adjoint()
}

pub fn trace(a: &CMatrix) -> Result<C64> {
    a.trace()
}

pub fn frobenius_distance(a: &CMatrix, b: &CMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            op: "frobenius_distance",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(a.as_slice()
        .iter()
        .zip(b.as_slice())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum::<f64>()
        .sqrt())
}

/// Pauli matrices and single-qubit helpers.
pub mod pauli {
    use super::*;

    pub fn x() -> CMatrix {
        CMatrix::from_real(2, 2, &[0.0, 1.0, 1.0, 0.0]).unwrap()
    }

    pub fn y() -> CMatrix {
        CMatrix::from_vec(2, 2, vec![ZERO, -I, I, ZERO]).unwrap()
    }

    pub fn z() -> CMatrix {
        CMatrix::from_real(2, 2, &[1.0, 0.0, 0.0, -1.0]).unwrap()
    }

    /// `σ⁻ = |0⟩⟨1|`, lowering the excitation `|1⟩ → |0⟩`.
    pub fn lowering() -> CMatrix {
        CMatrix::from_real(2, 2, &[0.0, 1.0, 0.0, 0.0]).unwrap()
    }

    /// Embeds a single-qubit operator on qubit `site` of `n` (qubit 0 is the
    /// most significant tensor factor).
    pub fn on_site(op: &CMatrix, site: usize, n: usize) -> CMatrix {
        let mut out = CMatrix::identity(1);
        for q in 0..n {
            out = if q == site {
                out.kron(op)
            } else {
                out.kron(&CMatrix::identity(2))
            };
        }
        out
    }

    /// `½ Σ_i σ_i` for the given single-qubit Pauli.
    pub fn collective(op: &CMatrix, n: usize) -> CMatrix {
        let dim = 1 << n;
        let mut out = CMatrix::zeros(dim, dim);
        for q in 0..n {
            out.axpy_real(0.5, &on_site(op, q, n));
        }
        out
    }
}
