//! Sparse storage and the iterative solvers used by the assembled systems.
//!
//! [`CsrMatrix`] is a plain compressed-row matrix. Symmetric positive-definite
//! systems go through preconditioned conjugate gradients ([`solve_spd`]),
//! everything else through restarted right-preconditioned GMRES
//! ([`solve_general`]). Both accept a [`BlockJacobi`] preconditioner built
//! from contiguous diagonal blocks. A small dense LU ([`DenseLu`]) covers the
//! block inverses and the reduced implicit-stage systems.

use std::ops::Range;

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, norm2, Real};

/// Anything that can compute `y = A x`.
pub trait LinearOperator<T: Real> {
    fn nrows(&self) -> usize;
    fn ncols(&self) -> usize;
    fn apply(&self, x: &[T], y: &mut [T]);
}

/// Approximate inverse applied as `z = P⁻¹ r`.
pub trait Preconditioner<T: Real> {
    fn apply(&self, r: &[T], z: &mut [T]);
}

/// No preconditioning.
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

impl<T: Real> Preconditioner<T> for Identity {
    fn apply(&self, r: &[T], z: &mut [T]) {
        z.copy_from_slice(r);
    }
}

/// Compressed sparse row matrix. Column indices are strictly increasing in
/// every row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

/// Triplet accumulator. Duplicate entries are summed in insertion order,
/// so assembly is deterministic.
#[derive(Debug, Clone)]
pub struct CooBuilder<T> {
    nrows: usize,
    ncols: usize,
    entries: Vec<(usize, usize, T)>,
}

impl<T: Real> CooBuilder<T> {
    pub fn new(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, entries: Vec::new() }
    }

    pub fn with_capacity(nrows: usize, ncols: usize, cap: usize) -> Self {
        Self { nrows, ncols, entries: Vec::with_capacity(cap) }
    }

    #[inline]
    pub fn push(&mut self, i: usize, j: usize, v: T) {
        debug_assert!(i < self.nrows && j < self.ncols, "({i},{j}) outside {}x{}", self.nrows, self.ncols);
        self.entries.push((i, j, v));
    }

    pub fn build(mut self) -> CsrMatrix<T> {
        // stable sort keeps insertion order among duplicates
        self.entries.sort_by_key(|&(i, j, _)| (i, j));
        let mut row_ptr = vec![0usize; self.nrows + 1];
        let mut col_idx = Vec::with_capacity(self.entries.len());
        let mut values: Vec<T> = Vec::with_capacity(self.entries.len());
        let mut last: Option<(usize, usize)> = None;
        for (i, j, v) in self.entries {
            if last == Some((i, j)) {
                let l = values.len() - 1;
                values[l] = values[l] + v;
            } else {
                col_idx.push(j);
                values.push(v);
                row_ptr[i + 1] += 1;
                last = Some((i, j));
            }
        }
        for i in 0..self.nrows {
            row_ptr[i + 1] += row_ptr[i];
        }
        CsrMatrix { nrows: self.nrows, ncols: self.ncols, row_ptr, col_idx, values }
    }
}

impl<T: Real> CsrMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, row_ptr: vec![0; nrows + 1], col_idx: Vec::new(), values: Vec::new() }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_diagonal(&vec![T::one(); n])
    }

    pub fn from_diagonal(d: &[T]) -> Self {
        let n = d.len();
        Self { nrows: n, ncols: n, row_ptr: (0..=n).collect(), col_idx: (0..n).collect(), values: d.to_vec() }
    }

    /// Builds from a dense row-major array, dropping exact zeros.
    pub fn from_dense(nrows: usize, ncols: usize, a: &[T]) -> Self {
        let mut b = CooBuilder::new(nrows, ncols);
        for i in 0..nrows {
            for j in 0..ncols {
                let v = a[i * ncols + j];
                if v != T::zero() {
                    b.push(i, j, v);
                }
            }
        }
        b.build()
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> (&[usize], &[T]) {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        (&self.col_idx[r.clone()], &self.values[r])
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        let (cols, vals) = self.row(i);
        match cols.binary_search(&j) {
            Ok(k) => vals[k],
            Err(_) => T::zero(),
        }
    }

    pub fn to_dense(&self) -> Vec<T> {
        let mut a = vec![T::zero(); self.nrows * self.ncols];
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (j, v) in cols.iter().zip(vals) {
                a[i * self.ncols + j] = *v;
            }
        }
        a
    }

    /// `y = A x`, summing each row left to right.
    pub fn spmv(&self, x: &[T], y: &mut [T]) -> Result<()> {
        if x.len() != self.ncols || y.len() != self.nrows {
            return Err(Error::DimensionMismatch(format!(
                "spmv: matrix {}x{}, x {}, y {}",
                self.nrows,
                self.ncols,
                x.len(),
                y.len()
            )));
        }
        self.spmv_unchecked(x, y);
        Ok(())
    }

    #[inline]
    fn spmv_unchecked(&self, x: &[T], y: &mut [T]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s = s + self.values[k] * x[self.col_idx[k]];
            }
            *yi = s;
        }
    }

    /// `y += alpha A x`
    pub fn spmv_add(&self, alpha: T, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        assert_eq!(y.len(), self.nrows);
        for (i, yi) in y.iter_mut().enumerate() {
            let mut s = T::zero();
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s = s + self.values[k] * x[self.col_idx[k]];
            }
            *yi = *yi + alpha * s;
        }
    }

    pub fn mul_vec(&self, x: &[T]) -> Vec<T> {
        let mut y = vec![T::zero(); self.nrows];
        self.spmv(x, &mut y).expect("dimension mismatch in mul_vec");
        y
    }

    pub fn transpose(&self) -> Self {
        let mut b = CooBuilder::with_capacity(self.ncols, self.nrows, self.nnz());
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (j, v) in cols.iter().zip(vals) {
                b.push(*j, i, *v);
            }
        }
        b.build()
    }

    pub fn scaled(&self, alpha: T) -> Self {
        let mut m = self.clone();
        m.values.iter_mut().for_each(|v| *v = *v * alpha);
        m
    }

    /// `alpha A + beta B`
    pub fn add(&self, alpha: T, other: &Self, beta: T) -> Self {
        assert_eq!((self.nrows, self.ncols), (other.nrows, other.ncols));
        let mut b = CooBuilder::with_capacity(self.nrows, self.ncols, self.nnz() + other.nnz());
        for i in 0..self.nrows {
            let (c, v) = self.row(i);
            for (j, x) in c.iter().zip(v) {
                b.push(i, *j, alpha * *x);
            }
            let (c, v) = other.row(i);
            for (j, x) in c.iter().zip(v) {
                b.push(i, *j, beta * *x);
            }
        }
        b.build()
    }

    /// Sparse product `A B`.
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.ncols, other.nrows);
        let mut b = CooBuilder::new(self.nrows, other.ncols);
        let mut acc = vec![T::zero(); other.ncols];
        let mut marker = vec![usize::MAX; other.ncols];
        let mut touched = Vec::new();
        for i in 0..self.nrows {
            touched.clear();
            let (ca, va) = self.row(i);
            for (k, a) in ca.iter().zip(va) {
                let (cb, vb) = other.row(*k);
                for (j, bv) in cb.iter().zip(vb) {
                    if marker[*j] != i {
                        marker[*j] = i;
                        acc[*j] = T::zero();
                        touched.push(*j);
                    }
                    acc[*j] = acc[*j] + *a * *bv;
                }
            }
            touched.sort_unstable();
            for &j in &touched {
                b.push(i, j, acc[j]);
            }
        }
        b.build()
    }

    /// Copies the dense diagonal block `rows x rows`.
    pub fn dense_block(&self, range: Range<usize>) -> DenseMatrix<T> {
        let n = range.len();
        let mut d = DenseMatrix::zeros(n, n);
        for (li, i) in range.clone().enumerate() {
            let (cols, vals) = self.row(i);
            for (j, v) in cols.iter().zip(vals) {
                if range.contains(j) {
                    d[(li, j - range.start)] = *v;
                }
            }
        }
        d
    }

    /// Largest absolute entry of `A - Aᵀ`.
    pub fn asymmetry(&self) -> T {
        let mut m = T::zero();
        for i in 0..self.nrows {
            let (cols, vals) = self.row(i);
            for (j, v) in cols.iter().zip(vals) {
                m = m.max((*v - self.get(*j, i)).abs());
            }
        }
        m
    }
}

impl<T: Real> LinearOperator<T> for CsrMatrix<T> {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        self.spmv_unchecked(x, y);
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    pub nrows: usize,
    pub ncols: usize,
    pub data: Vec<T>,
}

impl<T: Real> DenseMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self { nrows, ncols, data: vec![T::zero(); nrows * ncols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(nrows: usize, ncols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), nrows * ncols);
        Self { nrows, ncols, data }
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn mul_vec(&self, x: &[T], y: &mut [T]) {
        assert_eq!(x.len(), self.ncols);
        for (i, yi) in y.iter_mut().enumerate().take(self.nrows) {
            *yi = dot(self.row(i), x);
        }
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.ncols, self.nrows);
        for i in 0..self.nrows {
            for j in 0..self.ncols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    /// Replaces the matrix by `(A + Aᵀ)/2`; returns the largest entry of `|A - Aᵀ|` before.
    pub fn symmetrize(&mut self) -> T {
        assert_eq!(self.nrows, self.ncols);
        let half = T::lit(0.5);
        let mut worst = T::zero();
        for i in 0..self.nrows {
            for j in (i + 1)..self.ncols {
                let a = self[(i, j)];
                let b = self[(j, i)];
                worst = worst.max((a - b).abs());
                let m = half * (a + b);
                self[(i, j)] = m;
                self[(j, i)] = m;
            }
        }
        worst
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &T {
        &self.data[i * self.ncols + j]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut T {
        &mut self.data[i * self.ncols + j]
    }
}

impl<T: Real> LinearOperator<T> for DenseMatrix<T> {
    fn nrows(&self) -> usize {
        self.nrows
    }
    fn ncols(&self) -> usize {
        self.ncols
    }
    fn apply(&self, x: &[T], y: &mut [T]) {
        self.mul_vec(x, y);
    }
}

/// LU factorization with partial pivoting.
#[derive(Debug, Clone)]
pub struct DenseLu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Real> DenseLu<T> {
    pub fn factor(a: &DenseMatrix<T>) -> Result<Self> {
        if a.nrows != a.ncols {
            return Err(Error::DimensionMismatch(format!("LU of {}x{} matrix", a.nrows, a.ncols)));
        }
        let n = a.nrows;
        let mut lu = a.data.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = lu.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        for k in 0..n {
            let mut p = k;
            let mut best = lu[k * n + k].abs();
            for i in (k + 1)..n {
                let v = lu[i * n + k].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best <= scale * T::eps() * T::from_usize_lossy(n.max(1)) * T::lit(1e-3) || best == T::zero() {
                return Err(Error::Singular(k));
            }
            if p != k {
                for j in 0..n {
                    lu.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[k * n + k];
            let (head, tail) = lu.split_at_mut((k + 1) * n);
            let krow = &head[k * n..k * n + n];
            for i in 0..(n - k - 1) {
                let row = &mut tail[i * n..i * n + n];
                let l = row[k] / pivot;
                row[k] = l;
                if l != T::zero() {
                    for j in (k + 1)..n {
                        row[j] = row[j] - l * krow[j];
                    }
                }
            }
        }
        Ok(Self { n, lu, perm })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve_in_place(&self, b: &mut [T]) {
        let n = self.n;
        assert_eq!(b.len(), n);
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            let row = &self.lu[i * n..i * n + i];
            let s = dot(row, &x[..i]);
            x[i] = x[i] - s;
        }
        for i in (0..n).rev() {
            let row = &self.lu[i * n..(i + 1) * n];
            let mut s = x[i];
            for j in (i + 1)..n {
                s = s - row[j] * x[j];
            }
            x[i] = s / row[i];
        }
        b.copy_from_slice(&x);
    }

    pub fn solve(&self, b: &[T]) -> Vec<T> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    /// Overwrites every column of `b` with the solution for that column.
    pub fn solve_many_in_place(&self, b: &mut DenseMatrix<T>) {
        let n = self.n;
        assert_eq!(b.nrows, n);
        let m = b.ncols;
        let mut x = vec![T::zero(); n * m];
        for (i, &p) in self.perm.iter().enumerate() {
            x[i * m..(i + 1) * m].copy_from_slice(&b.data[p * m..(p + 1) * m]);
        }
        for i in 1..n {
            let (done, rest) = x.split_at_mut(i * m);
            let xi = &mut rest[..m];
            for (k, l) in self.lu[i * n..i * n + i].iter().enumerate() {
                if *l != T::zero() {
                    axpy(-*l, &done[k * m..(k + 1) * m], xi);
                }
            }
        }
        for i in (0..n).rev() {
            let (head, done) = x.split_at_mut((i + 1) * m);
            let xi = &mut head[i * m..];
            for (k, u) in self.lu[i * n + i + 1..(i + 1) * n].iter().enumerate() {
                if *u != T::zero() {
                    axpy(-*u, &done[k * m..(k + 1) * m], xi);
                }
            }
            let d = self.lu[i * n + i];
            xi.iter_mut().for_each(|v| *v = *v / d);
        }
        b.data = x;
    }
}

impl<T: Real> Preconditioner<T> for DenseLu<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        z.copy_from_slice(r);
        self.solve_in_place(z);
    }
}

/// Block-Jacobi preconditioner over contiguous diagonal blocks.
#[derive(Debug, Clone)]
pub struct BlockJacobi<T> {
    blocks: Vec<(Range<usize>, DenseLu<T>)>,
    n: usize,
}

impl<T: Real> BlockJacobi<T> {
    /// `blocks` must partition `0..A.nrows()`.
    pub fn new(a: &CsrMatrix<T>, blocks: &[Range<usize>]) -> Result<Self> {
        let mut covered = 0;
        let mut out = Vec::with_capacity(blocks.len());
        for r in blocks {
            if r.start != covered {
                return Err(Error::InvalidArgument("block-Jacobi blocks must be contiguous and ordered".into()));
            }
            covered = r.end;
            out.push((r.clone(), DenseLu::factor(&a.dense_block(r.clone()))?));
        }
        if covered != a.nrows() {
            return Err(Error::InvalidArgument("block-Jacobi blocks do not cover the matrix".into()));
        }
        Ok(Self { blocks: out, n: a.nrows() })
    }

    /// Uniform blocks of the given size (the last may be shorter).
    pub fn uniform(a: &CsrMatrix<T>, block: usize) -> Result<Self> {
        let n = a.nrows();
        let blocks: Vec<_> = (0..n).step_by(block.max(1)).map(|s| s..(s + block).min(n)).collect();
        Self::new(a, &blocks)
    }
}

impl<T: Real> Preconditioner<T> for BlockJacobi<T> {
    fn apply(&self, r: &[T], z: &mut [T]) {
        debug_assert_eq!(r.len(), self.n);
        for (range, lu) in &self.blocks {
            let zz = &mut z[range.clone()];
            zz.copy_from_slice(&r[range.clone()]);
            lu.solve_in_place(zz);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SolverOptions<T> {
    /// Relative residual target `‖b − A x‖ / ‖b‖`.
    pub tol: T,
    pub max_iter: usize,
    /// GMRES restart length.
    pub restart: usize,
}

impl<T: Real> Default for SolverOptions<T> {
    fn default() -> Self {
        Self { tol: T::lit(1e-13), max_iter: 5000, restart: 120 }
    }
}

impl<T: Real> SolverOptions<T> {
    pub fn with_tol(tol: T) -> Self {
        Self { tol, ..Self::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SolveStats {
    pub iterations: usize,
    /// Relative residual of the returned iterate, recomputed from scratch.
    pub residual: f64,
}

fn true_residual<T: Real, A: LinearOperator<T> + ?Sized>(a: &A, b: &[T], x: &[T], r: &mut [T]) -> T {
    a.apply(x, r);
    for (ri, bi) in r.iter_mut().zip(b) {
        *ri = *bi - *ri;
    }
    norm2(r)
}

fn check_dims<T: Real, A: LinearOperator<T> + ?Sized>(a: &A, b: &[T], x: &[T]) -> Result<()> {
    if a.nrows() != a.ncols() || b.len() != a.nrows() || x.len() != a.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "solve: operator {}x{}, b {}, x {}",
            a.nrows(),
            a.ncols(),
            b.len(),
            x.len()
        )));
    }
    Ok(())
}

/// Preconditioned conjugate gradients. `x` holds the initial guess on entry.
///
/// Non-positive curvature `pᵀAp ≤ 0` aborts with
/// [`Error::NotPositiveDefinite`]; this is how wrong penalty signs surface.
pub fn solve_spd<T, A, P>(a: &A, b: &[T], x: &mut [T], precond: &P, opts: &SolverOptions<T>) -> Result<SolveStats>
where
    T: Real,
    A: LinearOperator<T> + ?Sized,
    P: Preconditioner<T> + ?Sized,
{
    check_dims(a, b, x)?;
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let target = opts.tol * bnorm;
    let mut r = vec![T::zero(); n];
    let mut rnorm = true_residual(a, b, x, &mut r);
    if rnorm <= target {
        return Ok(SolveStats { iterations: 0, residual: (rnorm / bnorm).as_f64() });
    }
    let mut z = vec![T::zero(); n];
    let mut q = vec![T::zero(); n];
    precond.apply(&r, &mut z);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let mut it = 0;
    // Restart from the true residual a few times: the recursive residual can
    // drift below the attainable accuracy of the true one.
    for _refresh in 0..4 {
        while it < opts.max_iter {
            it += 1;
            a.apply(&p, &mut q);
            let pq = dot(&p, &q);
            if pq <= T::zero() {
                return Err(Error::NotPositiveDefinite { iteration: it, curvature: pq.as_f64() });
            }
            let alpha = rz / pq;
            axpy(alpha, &p, x);
            axpy(-alpha, &q, &mut r);
            rnorm = norm2(&r);
            if rnorm <= target {
                break;
            }
            precond.apply(&r, &mut z);
            let rz_new = dot(&r, &z);
            let beta = rz_new / rz;
            rz = rz_new;
            for (pi, zi) in p.iter_mut().zip(&z) {
                *pi = *zi + beta * *pi;
            }
        }
        rnorm = true_residual(a, b, x, &mut r);
        if rnorm <= target || it >= opts.max_iter {
            break;
        }
        precond.apply(&r, &mut z);
        p.copy_from_slice(&z);
        rz = dot(&r, &z);
    }
    let rel = (rnorm / bnorm).as_f64();
    if rnorm <= target {
        Ok(SolveStats { iterations: it, residual: rel })
    } else {
        Err(Error::NotConverged { iterations: it, residual: rel })
    }
}

/// Restarted GMRES with right preconditioning and modified Gram–Schmidt
/// (with one reorthogonalization pass). `x` holds the initial guess.
pub fn solve_general<T, A, P>(a: &A, b: &[T], x: &mut [T], precond: &P, opts: &SolverOptions<T>) -> Result<SolveStats>
where
    T: Real,
    A: LinearOperator<T> + ?Sized,
    P: Preconditioner<T> + ?Sized,
{
    check_dims(a, b, x)?;
    let n = b.len();
    let bnorm = norm2(b);
    if bnorm == T::zero() {
        x.iter_mut().for_each(|v| *v = T::zero());
        return Ok(SolveStats { iterations: 0, residual: 0.0 });
    }
    let target = opts.tol * bnorm;
    let m = opts.restart.max(1).min(n.max(1));
    let mut r = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let mut zt = vec![T::zero(); n];
    let mut basis: Vec<Vec<T>> = Vec::with_capacity(m + 1);
    let mut h = vec![T::zero(); (m + 1) * m];
    let mut cs = vec![T::zero(); m];
    let mut sn = vec![T::zero(); m];
    let mut g = vec![T::zero(); m + 1];
    let mut it = 0;
    let mut stagnant = 0;
    loop {
        let beta = true_residual(a, b, x, &mut r);
        if beta <= target {
            return Ok(SolveStats { iterations: it, residual: (beta / bnorm).as_f64() });
        }
        if it >= opts.max_iter || stagnant > 3 {
            return Err(Error::NotConverged { iterations: it, residual: (beta / bnorm).as_f64() });
        }
        basis.clear();
        basis.push(r.iter().map(|v| *v / beta).collect());
        g.iter_mut().for_each(|v| *v = T::zero());
        g[0] = beta;
        let mut k_used = 0;
        for k in 0..m {
            it += 1;
            precond.apply(&basis[k], &mut zt);
            a.apply(&zt, &mut w);
            for _pass in 0..2 {
                for (j, vj) in basis.iter().enumerate().take(k + 1) {
                    let hij = dot(&w, vj);
                    h[j * m + k] = h[j * m + k] + hij;
                    axpy(-hij, vj, &mut w);
                }
            }
            let hn = norm2(&w);
            h[(k + 1) * m + k] = hn;
            for j in 0..k {
                let t = cs[j] * h[j * m + k] + sn[j] * h[(j + 1) * m + k];
                h[(j + 1) * m + k] = -sn[j] * h[j * m + k] + cs[j] * h[(j + 1) * m + k];
                h[j * m + k] = t;
            }
            let (c, s) = givens(h[k * m + k], h[(k + 1) * m + k]);
            cs[k] = c;
            sn[k] = s;
            h[k * m + k] = c * h[k * m + k] + s * h[(k + 1) * m + k];
            h[(k + 1) * m + k] = T::zero();
            g[k + 1] = -s * g[k];
            g[k] = c * g[k];
            k_used = k + 1;
            if g[k + 1].abs() <= target || hn == T::zero() || it >= opts.max_iter {
                break;
            }
            basis.push(w.iter().map(|v| *v / hn).collect());
        }
        // back substitution for the Krylov coefficients
        let mut y = vec![T::zero(); k_used];
        for i in (0..k_used).rev() {
            let mut s = g[i];
            for j in (i + 1)..k_used {
                s = s - h[i * m + j] * y[j];
            }
            y[i] = s / h[i * m + i];
        }
        let mut upd = vec![T::zero(); n];
        for (j, yj) in y.iter().enumerate() {
            axpy(*yj, &basis[j], &mut upd);
        }
        precond.apply(&upd, &mut zt);
        axpy(T::one(), &zt, x);
        h.iter_mut().for_each(|v| *v = T::zero());
        let new_res = true_residual(a, b, x, &mut r);
        if new_res >= beta * T::lit(0.999) {
            stagnant += 1;
        } else {
            stagnant = 0;
        }
    }
}

fn givens<T: Real>(a: T, b: T) -> (T, T) {
    if b == T::zero() {
        (T::one(), T::zero())
    } else {
        let r = a.hypot(b);
        (a / r, b / r)
    }
}
