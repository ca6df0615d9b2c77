//! Small dense/sparse linear-algebra utilities shared by the solver modules:
//! a minimal CSR matrix, complex LU with partial pivoting (kept separate from
//! nalgebra so factors can be serialized), and a 3D FFT wrapper.

use crate::{CMat, CVec, C64};
use rustfft::FftPlanner;
use std::ops::{AddAssign, Mul};

/// Compressed sparse row matrix. Rows are built in order via a builder to
/// keep construction deterministic.
#[derive(Debug, Clone)]
pub struct Csr<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<usize>,
    pub values: Vec<T>,
}

impl<T: Copy + Default + AddAssign + Mul<Output = T>> Csr<T> {
    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let (a, b) = (self.row_ptr[i], self.row_ptr[i + 1]);
        (&self.col_idx[a..b], &self.values[a..b])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(p) => vals[p],
            Err(_) => T::default(),
        }
    }
}

impl Csr<f64> {
    /// y += alpha * A * x with complex x, real A.
    pub fn accumulate_mul_c(&self, x: &[C64], y: &mut [C64], alpha: f64) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = C64::new(0.0, 0.0);
            for (&j, &v) in cols.iter().zip(vals) {
                acc += x[j] * v;
            }
            y[i] += acc * alpha;
        }
    }

    /// y += alpha * A^T * x.
    pub fn accumulate_mul_transpose_c(&self, x: &[C64], y: &mut [C64], alpha: f64) {
        assert_eq!(x.len(), self.nrows);
        assert_eq!(y.len(), self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let xi = x[i] * alpha;
            for (&j, &v) in cols.iter().zip(vals) {
                y[j] += xi * v;
            }
        }
    }

    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.nrows, self.ncols);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (&j, &v) in cols.iter().zip(vals) {
                m[(i, j)] = v;
            }
        }
        m
    }
}

impl Csr<C64> {
    pub fn accumulate_mul(&self, x: &[C64], y: &mut [C64], alpha: C64) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            let mut acc = C64::new(0.0, 0.0);
            for (&j, &v) in cols.iter().zip(vals) {
                acc += x[j] * v;
            }
            y[i] += acc * alpha;
        }
    }
}

/// Row-by-row CSR builder. Entries within a row may be pushed in any order;
/// duplicates are summed.
pub struct CsrBuilder<T> {
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
    current: Vec<(usize, T)>,
}

impl<T: Copy + Default + AddAssign> CsrBuilder<T> {
    pub fn new(ncols: usize) -> Self {
        Self {
            ncols,
            row_ptr: vec![0],
            col_idx: Vec::new(),
            values: Vec::new(),
            current: Vec::new(),
        }
    }

    pub fn push(&mut self, col: usize, value: T) {
        debug_assert!(col < self.ncols);
        self.current.push((col, value));
    }

    pub fn finish_row(&mut self) {
        self.current.sort_by_key(|&(c, _)| c);
        let mut last: Option<usize> = None;
        for &(c, v) in &self.current {
            if last == Some(c) {
                *self.values.last_mut().unwrap() += v;
            } else {
                self.col_idx.push(c);
                self.values.push(v);
                last = Some(c);
            }
        }
        self.current.clear();
        self.row_ptr.push(self.col_idx.len());
    }

    pub fn build(self) -> Csr<T> {
        assert!(self.current.is_empty(), "finish_row not called");
        Csr {
            nrows: self.row_ptr.len() - 1,
            ncols: self.ncols,
            row_ptr: self.row_ptr,
            col_idx: self.col_idx,
            values: self.values,
        }
    }
}

/// LU factorization with partial pivoting of a dense complex matrix.
/// The packed factor and pivot vector are plain data so macromodels can be
/// dumped to disk and reloaded without refactorizing.
#[derive(Debug, Clone)]
pub struct LuFactors {
    pub lu: CMat,
    pub pivots: Vec<usize>,
}

#[derive(Debug, thiserror::Error)]
#[error("matrix is singular to working precision (pivot {pivot:.3e} at column {col})")]
pub struct SingularMatrix {
    pub col: usize,
    pub pivot: f64,
}

impl LuFactors {
    pub fn factor(a: &CMat) -> Result<Self, SingularMatrix> {
        assert_eq!(a.nrows(), a.ncols());
        let n = a.nrows();
        let mut lu = a.clone();
        let mut pivots = Vec::with_capacity(n);
        let scale = a.camax().max(f64::MIN_POSITIVE);
        for k in 0..n {
            let mut p = k;
            let mut pmax = lu[(k, k)].norm();
            for i in k + 1..n {
                let m = lu[(i, k)].norm();
                if m > pmax {
                    pmax = m;
                    p = i;
                }
            }
            if pmax <= scale * 1e-300 {
                return Err(SingularMatrix { col: k, pivot: pmax });
            }
            if p != k {
                lu.swap_rows(p, k);
            }
            pivots.push(p);
            let inv = C64::new(1.0, 0.0) / lu[(k, k)];
            for i in k + 1..n {
                let f = lu[(i, k)] * inv;
                lu[(i, k)] = f;
                for j in k + 1..n {
                    let v = lu[(k, j)] * f;
                    lu[(i, j)] -= v;
                }
            }
        }
        Ok(Self { lu, pivots })
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    pub fn solve_in_place(&self, x: &mut [C64]) {
        let n = self.dim();
        assert_eq!(x.len(), n);
        // The factor loop swaps whole rows, L part included, so all the
        // interchanges must hit the right-hand side before substitution.
        for k in 0..n {
            let p = self.pivots[k];
            if p != k {
                x.swap(p, k);
            }
        }
        for k in 0..n {
            let xk = x[k];
            for i in k + 1..n {
                x[i] -= self.lu[(i, k)] * xk;
            }
        }
        for k in (0..n).rev() {
            x[k] /= self.lu[(k, k)];
            let xk = x[k];
            for i in 0..k {
                x[i] -= self.lu[(i, k)] * xk;
            }
        }
    }

    pub fn solve_vec(&self, b: &CVec) -> CVec {
        let mut x = b.clone();
        self.solve_in_place(x.as_mut_slice());
        x
    }

    /// X = A^-1 B, column by column.
    pub fn solve_mat(&self, b: &CMat) -> CMat {
        let mut x = b.clone();
        for j in 0..x.ncols() {
            let mut col: Vec<C64> = x.column(j).iter().copied().collect();
            self.solve_in_place(&mut col);
            x.set_column(j, &CVec::from_vec(col));
        }
        x
    }

    /// Rough condition estimate: power iteration for the largest singular
    /// value of A, inverse power iteration (via the factors) for the smallest.
    pub fn condition_estimate(&self, a: &CMat, iters: usize) -> f64 {
        let n = self.dim();
        if n == 0 {
            return 1.0;
        }
        let smax = op_norm_estimate(n, iters, |x, y| {
            let v = a * CVec::from_column_slice(x);
            y.copy_from_slice(v.as_slice());
        });
        let smax_inv = op_norm_estimate(n, iters, |x, y| {
            y.copy_from_slice(x);
            self.solve_in_place(y);
        });
        smax * smax_inv
    }
}

/// Largest singular value of an implicitly defined operator via power
/// iteration on A^H A. Deterministic start vector.
pub fn op_norm_estimate<F: FnMut(&[C64], &mut [C64])>(n: usize, iters: usize, mut apply: F) -> f64 {
    // A^H A power iteration needs A^H; approximate with normal iteration on
    // x -> A x followed by renormalization, which estimates the spectral
    // radius. For condition diagnostics we instead iterate with the 2-norm of
    // A x over x, refreshing x by A^H-free re-projection: use x_{k+1} = A x_k
    // normalized; |A x| converges to the dominant |eigenvalue|, a lower bound
    // on the largest singular value. Good enough for diagnostics.
    let mut x: Vec<C64> = (0..n)
        .map(|i| C64::new(1.0 + (i as f64 * 0.7).sin(), (i as f64 * 1.3).cos()))
        .collect();
    let mut nrm = vec_norm(&x);
    for v in x.iter_mut() {
        *v /= nrm;
    }
    let mut y = vec![C64::new(0.0, 0.0); n];
    let mut est = 0.0;
    for _ in 0..iters {
        apply(&x, &mut y);
        est = vec_norm(&y);
        if est == 0.0 {
            return 0.0;
        }
        for (xi, yi) in x.iter_mut().zip(&y) {
            *xi = *yi / est;
        }
        nrm = est;
    }
    let _ = nrm;
    est
}

pub fn vec_norm(x: &[C64]) -> f64 {
    x.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn dotc(x: &[C64], y: &[C64]) -> C64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

/// In-place 3D FFT on a row-major array of shape (nx, ny, nz), z fastest.
pub struct Fft3 {
    dims: [usize; 3],
    forward: [std::sync::Arc<dyn rustfft::Fft<f64>>; 3],
    inverse: [std::sync::Arc<dyn rustfft::Fft<f64>>; 3],
}

impl Fft3 {
    pub fn new(dims: [usize; 3]) -> Self {
        let mut planner = FftPlanner::new();
        let forward = [
            planner.plan_fft_forward(dims[0]),
            planner.plan_fft_forward(dims[1]),
            planner.plan_fft_forward(dims[2]),
        ];
        let inverse = [
            planner.plan_fft_inverse(dims[0]),
            planner.plan_fft_inverse(dims[1]),
            planner.plan_fft_inverse(dims[2]),
        ];
        Self { dims, forward, inverse }
    }

    pub fn len(&self) -> usize {
        self.dims[0] * self.dims[1] * self.dims[2]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn transform(&self, data: &mut [C64], inverse: bool) {
        let [nx, ny, nz] = self.dims;
        assert_eq!(data.len(), nx * ny * nz);
        let plans = if inverse { &self.inverse } else { &self.forward };
        // z axis: contiguous rows
        for row in data.chunks_exact_mut(nz) {
            plans[2].process(row);
        }
        // y axis
        let mut buf = vec![C64::new(0.0, 0.0); ny];
        for ix in 0..nx {
            for iz in 0..nz {
                for iy in 0..ny {
                    buf[iy] = data[(ix * ny + iy) * nz + iz];
                }
                plans[1].process(&mut buf);
                for iy in 0..ny {
                    data[(ix * ny + iy) * nz + iz] = buf[iy];
                }
            }
        }
        // x axis
        let mut buf = vec![C64::new(0.0, 0.0); nx];
        for iy in 0..ny {
            for iz in 0..nz {
                for ix in 0..nx {
                    buf[ix] = data[(ix * ny + iy) * nz + iz];
                }
                plans[0].process(&mut buf);
                for ix in 0..nx {
                    data[(ix * ny + iy) * nz + iz] = buf[ix];
                }
            }
        }
    }

    pub fn forward(&self, data: &mut [C64]) {
        self.transform(data, false);
    }

    /// Unnormalized inverse; caller divides by len().
    pub fn inverse(&self, data: &mut [C64]) {
        self.transform(data, true);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn lu_roundtrip() {
        let n = 12;
        let a = CMat::from_fn(n, n, |i, j| {
            C64::new(
                ((i * 7 + j * 3) as f64 * 0.37).sin() + if i == j { 4.0 } else { 0.0 },
                ((i + 2 * j) as f64 * 0.21).cos(),
            )
        });
        let lu = LuFactors::factor(&a).unwrap();
        let b = CVec::from_fn(n, |i, _| C64::new(i as f64, 1.0 - i as f64));
        let x = lu.solve_vec(&b);
        let r = &a * &x - &b;
        assert!(vec_norm(r.as_slice()) / vec_norm(b.as_slice()) < 1e-12);
    }

    #[test]
    fn lu_pivoted_solve() {
        // no diagonal dominance, so row interchanges actually fire
        let n = 25;
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut unif = move || {
            state = state
                .wrapping_mul(6364136223846793005)
                .wrapping_add(1442695040888963407);
            ((state >> 11) as f64) / ((1u64 << 53) as f64) - 0.5
        };
        let a = CMat::from_fn(n, n, |_, _| C64::new(unif(), unif()));
        let lu = LuFactors::factor(&a).unwrap();
        assert!(
            lu.pivots.iter().enumerate().any(|(k, &p)| p != k),
            "test matrix should require pivoting"
        );
        let b = CVec::from_fn(n, |i, _| C64::new((i as f64 * 0.9).cos(), i as f64));
        let x = lu.solve_vec(&b);
        let r = &a * &x - &b;
        assert!(vec_norm(r.as_slice()) / vec_norm(b.as_slice()) < 1e-10);
        let xm = lu.solve_mat(&a);
        let mut eye_err: f64 = 0.0;
        for i in 0..n {
            for j in 0..n {
                let want = if i == j { 1.0 } else { 0.0 };
                eye_err = eye_err.max((xm[(i, j)] - C64::new(want, 0.0)).norm());
            }
        }
        assert!(eye_err < 1e-9, "A^-1 A far from identity: {eye_err:.3e}");
    }

    #[test]
    fn lu_singular_detected() {
        let a = CMat::zeros(3, 3);
        assert!(LuFactors::factor(&a).is_err());
    }

    #[test]
    fn csr_matvec_matches_dense() {
        let mut b = CsrBuilder::<f64>::new(4);
        b.push(1, 2.0);
        b.push(3, -1.0);
        b.finish_row();
        b.finish_row();
        b.push(0, 5.0);
        b.push(0, 1.0); // duplicate, summed
        b.finish_row();
        let m = b.build();
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.get(2, 0), 6.0);
        let x = vec![C64::new(1.0, 0.0); 4];
        let mut y = vec![C64::new(0.0, 0.0); 3];
        m.accumulate_mul_c(&x, &mut y, 1.0);
        assert_relative_eq!(y[0].re, 1.0);
        assert_relative_eq!(y[1].re, 0.0);
        assert_relative_eq!(y[2].re, 6.0);
    }

    #[test]
    fn fft3_roundtrip_and_delta() {
        let dims = [4, 3, 5];
        let fft = Fft3::new(dims);
        let n = fft.len();
        let mut data: Vec<C64> = (0..n)
            .map(|i| C64::new((i as f64 * 0.1).sin(), (i as f64 * 0.2).cos()))
            .collect();
        let orig = data.clone();
        fft.forward(&mut data);
        fft.inverse(&mut data);
        for (a, b) in data.iter().zip(&orig) {
            assert!((a / n as f64 - b).norm() < 1e-12);
        }
        // FFT of delta is all ones
        let mut d = vec![C64::new(0.0, 0.0); n];
        d[0] = C64::new(1.0, 0.0);
        fft.forward(&mut d);
        for v in &d {
            assert!((v - C64::new(1.0, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn condition_estimate_diagonal() {
        let a = CMat::from_diagonal(&CVec::from_vec(vec![
            C64::new(1.0, 0.0),
            C64::new(10.0, 0.0),
            C64::new(2.0, 0.0),
        ]));
        let lu = LuFactors::factor(&a).unwrap();
        let c = lu.condition_estimate(&a, 200);
        assert!((c - 10.0).abs() / 10.0 < 0.01, "cond estimate {c}");
    }
}
