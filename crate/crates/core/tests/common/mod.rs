#![allow(dead_code)]

use lindbladiff::{CMatrix, C64};
use lindbladiff_oracles::Mat;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn to_oracle(m: &CMatrix) -> Mat {
    lindbladiff_oracles::from_row_major(m.rows(), m.as_slice())
}

pub fn from_oracle(m: &Mat) -> CMatrix {
    CMatrix::from_vec(m.nrows(), m.ncols(), lindbladiff_oracles::to_row_major(m)).unwrap()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_complex(d: usize, r: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(d, d, |_, _| C64::new(r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)))
}

pub fn random_hermitian(d: usize, r: &mut ChaCha8Rng) -> CMatrix {
    random_complex(d, r).hermitian_part()
}

/// `A A† / Tr(A A†)`: a random full-rank density matrix.
pub fn random_density(d: usize, r: &mut ChaCha8Rng) -> CMatrix {
    let a = random_complex(d, r);
    let p = a.matmul(&a.adjoint()).unwrap();
    let t = p.trace().unwrap().re;
    p.scale_real(1.0 / t)
}

/// A random unitary from the Gram–Schmidt orthonormalization of a random
/// complex matrix.
pub fn random_unitary(d: usize, r: &mut ChaCha8Rng) -> CMatrix {
    let a = random_complex(d, r);
    let mut cols: Vec<Vec<C64>> = Vec::new();
    for j in 0..d {
        let mut v = a.column(j);
        for q in &cols {
            let p: C64 = q.iter().zip(&v).map(|(qi, vi)| qi.conj() * vi).sum();
            for (vi, qi) in v.iter_mut().zip(q) {
                *vi -= p * qi;
            }
        }
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        cols.push(v.into_iter().map(|z| z / n).collect());
    }
    CMatrix::from_fn(d, d, |i, j| cols[j][i])
}

pub fn rel(a: f64, b: f64) -> f64 {
    let d = (a - b).abs();
    if d == 0.0 {
        0.0
    } else {
        d / a.abs().max(b.abs())
    }
}

use std::sync::Arc;

use lindbladiff::model::{Coefficient, JumpChannel, LindbladModel, LinearHamiltonian};
use lindbladiff::OperatorHandle;

/// `H(x) = H₀ + Σₖ xₖ Hₖ` with random Hermitian terms and `channels`
/// random jump operators at rates in `[0, 0.5)`.
pub fn random_model(d: usize, params: usize, channels: usize, r: &mut ChaCha8Rng) -> LindbladModel {
    let mut terms = vec![(Coefficient::Constant(1.0), OperatorHandle::Dense(random_hermitian(d, r)))];
    for k in 0..params {
        terms.push((Coefficient::Param(k), OperatorHandle::Dense(random_hermitian(d, r))));
    }
    let h = LinearHamiltonian::new(d, params, terms).unwrap();
    let chans = (0..channels)
        .map(|_| {
            let rate = r.random_range(0.0..0.5);
            JumpChannel::new(rate, OperatorHandle::Dense(random_complex(d, r))).unwrap()
        })
        .collect();
    LindbladModel::new(Arc::new(h), chans).unwrap()
}
