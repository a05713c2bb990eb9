//! Small dense linear algebra: a row-major matrix, a cyclic Jacobi
//! eigensolver for symmetric matrices and a one-sided Jacobi SVD.
//!
//! Everything here works on matrices with at most a few hundred rows
//! (centroid sets, Gram matrices); the transformer runtime uses the same
//! `Matrix` type for its weights.

use crate::error::{shape, Result};
use crate::scalar::Scalar;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(shape(format!(
                "buffer of {} elements cannot form a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, r) in rows.iter().enumerate() {
            if r.len() != cols {
                return Err(shape(format!("row {i} has {} columns, expected {cols}", r.len())));
            }
            data.extend_from_slice(r);
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: T) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [T] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl Iterator<Item = &[T]> + '_ {
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.row_iter().map(<[T]>::to_vec).collect()
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.set(j, i, self.get(i, j));
            }
        }
        t
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, other.rows, other.cols
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                if a == T::zero() {
                    continue;
                }
                let orow = other.row(k);
                let dst = out.row_mut(i);
                for (d, &b) in dst.iter_mut().zip(orow) {
                    *d += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `y = M x`.
    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        debug_assert_eq!(x.len(), self.cols);
        self.row_iter().map(|r| dot(r, x)).collect()
    }

    /// Gram matrix of the rows, `M Mᵀ`.
    pub fn gram(&self) -> Self {
        let n = self.rows;
        let mut g = Self::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = dot(self.row(i), self.row(j));
                g.set(i, j, v);
                g.set(j, i, v);
            }
        }
        g
    }

    pub fn frobenius_norm(&self) -> T {
        self.data.iter().map(|&x| x * x).sum::<T>().sqrt()
    }

    /// Mean over rows (one value per column).
    pub fn column_means(&self) -> Vec<T> {
        let mut mean = vec![T::zero(); self.cols];
        if self.rows == 0 {
            return mean;
        }
        for r in self.row_iter() {
            for (m, &x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        let n = T::lit(self.rows as f64);
        mean.iter_mut().for_each(|m| *m /= n);
        mean
    }

    /// Copy with every column centered to zero mean.
    pub fn centered(&self) -> Self {
        let mean = self.column_means();
        let mut out = self.clone();
        for i in 0..self.rows {
            for (x, &m) in out.row_mut(i).iter_mut().zip(&mean) {
                *x -= m;
            }
        }
        out
    }

    pub fn scale(&mut self, s: T) {
        self.data.iter_mut().for_each(|x| *x *= s);
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

#[inline]
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

#[inline]
pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// `y += alpha * x`
#[inline]
pub fn axpy<T: Scalar>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

/// Eigendecomposition of a symmetric matrix, eigenvalues in nonincreasing
/// order. Column `k` of `vectors` is the eigenvector for `values[k]`.
#[derive(Clone, Debug)]
pub struct SymmetricEigen<T> {
    pub values: Vec<T>,
    pub vectors: Matrix<T>,
}

impl<T: Scalar> SymmetricEigen<T> {
    pub fn vector(&self, k: usize) -> Vec<T> {
        (0..self.vectors.rows()).map(|i| self.vectors.get(i, k)).collect()
    }
}

const MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigensolver.
pub fn symmetric_eigen<T: Scalar>(m: &Matrix<T>) -> Result<SymmetricEigen<T>> {
    let n = m.rows();
    if m.cols() != n {
        return Err(shape(format!("eigensolver needs a square matrix, got {}x{}", n, m.cols())));
    }
    let mut a = m.clone();
    // symmetrize against round-off in the caller's construction
    for i in 0..n {
        for j in (i + 1)..n {
            let s = (a.get(i, j) + a.get(j, i)) * T::lit(0.5);
            a.set(i, j, s);
            a.set(j, i, s);
        }
    }
    let mut v = Matrix::identity(n);
    let scale = a.frobenius_norm();
    let tol = T::epsilon() * scale;

    for _ in 0..MAX_SWEEPS {
        let mut off = T::zero();
        for i in 0..n {
            for j in (i + 1)..n {
                off += a.get(i, j) * a.get(i, j);
            }
        }
        if off.sqrt() <= tol || scale == T::zero() {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a.get(p, q);
                if apq == T::zero() {
                    continue;
                }
                let app = a.get(p, p);
                let aqq = a.get(q, q);
                let theta = (aqq - app) / (T::lit(2.0) * apq);
                let sign = if theta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (theta.abs() + (theta * theta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a.get(k, p);
                    let akq = a.get(k, q);
                    a.set(k, p, c * akp - s * akq);
                    a.set(k, q, s * akp + c * akq);
                }
                for k in 0..n {
                    let apk = a.get(p, k);
                    let aqk = a.get(q, k);
                    a.set(p, k, c * apk - s * aqk);
                    a.set(q, k, s * apk + c * aqk);
                }
                for k in 0..n {
                    let vkp = v.get(k, p);
                    let vkq = v.get(k, q);
                    v.set(k, p, c * vkp - s * vkq);
                    v.set(k, q, s * vkp + c * vkq);
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| {
        a.get(j, j)
            .partial_cmp(&a.get(i, i))
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(i.cmp(&j))
    });
    let values = order.iter().map(|&i| a.get(i, i)).collect();
    let mut vectors = Matrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        for i in 0..n {
            vectors.set(i, k, v.get(i, src));
        }
    }
    Ok(SymmetricEigen { values, vectors })
}

/// Singular values (nonincreasing) by one-sided Jacobi orthogonalization of
/// the columns. Works directly on the matrix, so small singular values keep
/// full relative accuracy instead of being squared away.
pub fn singular_values<T: Scalar>(m: &Matrix<T>) -> Vec<T> {
    // operate on columns of the wider orientation's transpose so that the
    // number of columns is the smaller dimension
    let work = if m.cols() > m.rows() { m.clone() } else { m.transpose() };
    // rows of `work` are the vectors being orthogonalized
    let mut vecs = work.to_rows();
    let n = vecs.len();
    let eps = T::epsilon();
    for _ in 0..MAX_SWEEPS {
        let mut rotated = false;
        for p in 0..n {
            for q in (p + 1)..n {
                let alpha = dot(&vecs[p], &vecs[p]);
                let beta = dot(&vecs[q], &vecs[q]);
                let gamma = dot(&vecs[p], &vecs[q]);
                if gamma == T::zero() || gamma.abs() <= eps * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (T::lit(2.0) * gamma);
                let sign = if zeta >= T::zero() { T::one() } else { -T::one() };
                let t = sign / (zeta.abs() + (zeta * zeta + T::one()).sqrt());
                let c = T::one() / (t * t + T::one()).sqrt();
                let s = c * t;
                let (lo, hi) = vecs.split_at_mut(q);
                let vp = &mut lo[p];
                let vq = &mut hi[0];
                for (x, y) in vp.iter_mut().zip(vq.iter_mut()) {
                    let xp = *x;
                    let xq = *y;
                    *x = c * xp - s * xq;
                    *y = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }
    let mut sv: Vec<T> = vecs.iter().map(|v| norm(v)).collect();
    sv.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sv
}

/// Orthonormal basis for the span of `vectors` by modified Gram-Schmidt with
/// column pivoting: at each step the remaining vector with the largest
/// residual is taken. Vectors whose residual falls below
/// `rel_tol * max_input_norm` are treated as dependent.
pub fn pivoted_orthonormal_basis<T: Scalar>(vectors: &[Vec<T>], rel_tol: T) -> Vec<Vec<T>> {
    let mut residual: Vec<Vec<T>> = vectors.to_vec();
    let scale = residual.iter().map(|v| norm(v)).fold(T::zero(), T::max);
    let mut basis: Vec<Vec<T>> = Vec::new();
    if scale == T::zero() {
        return basis;
    }
    let threshold = rel_tol * scale;
    let mut alive: Vec<bool> = vec![true; residual.len()];
    loop {
        let pick = residual
            .iter()
            .enumerate()
            .filter(|(i, _)| alive[*i])
            .map(|(i, v)| (i, norm(v)))
            .fold(None::<(usize, T)>, |best, (i, n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((i, n)),
            });
        let Some((idx, nrm)) = pick else { break };
        if nrm <= threshold {
            break;
        }
        alive[idx] = false;
        let mut q: Vec<T> = residual[idx].iter().map(|&x| x / nrm).collect();
        // second pass against drift
        for b in &basis {
            let c = dot(b, &q);
            axpy(-c, b, &mut q);
        }
        let qn = norm(&q);
        q.iter_mut().for_each(|x| *x /= qn);
        for (i, r) in residual.iter_mut().enumerate() {
            if alive[i] {
                let c = dot(&q, r);
                axpy(-c, &q, r);
            }
        }
        basis.push(q);
    }
    basis
}
