//! Small row-major dense matrix and the LU kernel shared by the leaf
//! inversions and the direct reference solver.
//!
//! Every kernel that does floating-point work returns its dense operation
//! count: additions/subtractions plus multiplications/divisions. Sign flips
//! and copies are free.

use std::fmt;
use std::ops::{Index, IndexMut};

use crate::error::{Error, Result};

#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Builds a matrix from row slices; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let cols = rows.first().map_or(0, Vec::len);
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Self {
            rows: rows.len(),
            cols,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, &v) in values.iter().enumerate() {
            self[(i, j)] = v;
        }
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    /// Plain triple-loop product; only used by tests and oracles, so no tally.
    pub fn matmul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "matmul shape mismatch");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for p in 0..self.cols {
                let a = self[(i, p)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(p, j)];
                }
            }
        }
        out
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    /// `y = A x`. Returns the FLOP count `rows * (2 cols - 1)`.
    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) -> u64 {
        debug_assert_eq!(x.len(), self.cols);
        debug_assert_eq!(y.len(), self.rows);
        if self.cols == 0 {
            y.iter_mut().for_each(|v| *v = 0.0);
            return 0;
        }
        for (i, yi) in y.iter_mut().enumerate() {
            let row = self.row(i);
            let mut acc = row[0] * x[0];
            for j in 1..self.cols {
                acc += row[j] * x[j];
            }
            *yi = acc;
        }
        (self.rows * (2 * self.cols - 1)) as u64
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.rows];
        self.matvec_into(x, &mut y);
        y
    }

    /// Replaces the matrix by `(A + Aᵀ) / 2`, making it exactly symmetric.
    pub fn symmetrize(&mut self) -> u64 {
        assert_eq!(self.rows, self.cols);
        let n = self.rows;
        for i in 0..n {
            for j in i + 1..n {
                let avg = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = avg;
                self[(j, i)] = avg;
            }
        }
        (n * n.saturating_sub(1)) as u64
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols
            && (0..self.rows).all(|i| (i + 1..self.cols).all(|j| self[(i, j)] == self[(j, i)]))
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for i in 0..self.rows {
            writeln!(f, "  {:?}", self.row(i))?;
        }
        write!(f, "]")
    }
}

/// LU factors with row pivoting: `P A = L U`, `L` unit lower triangular,
/// both stored packed in one matrix.
#[derive(Clone, Debug)]
pub struct LuFactors {
    lu: Matrix,
    /// `perm[i]` is the original row placed at position `i`.
    perm: Vec<usize>,
    rcond_estimate: f64,
}

impl LuFactors {
    /// Factors `a` with partial pivoting. Returns the factors and the FLOP count.
    pub fn factor(a: &Matrix) -> Result<(Self, u64)> {
        assert_eq!(a.nrows(), a.ncols(), "LU needs a square matrix");
        let n = a.nrows();
        let mut lu = a.clone();
        let mut perm: Vec<usize> = (0..n).collect();
        let scale = a.max_abs();
        let tol = scale * f64::EPSILON * n.max(1) as f64;
        let mut flops = 0u64;
        let (mut pmin, mut pmax) = (f64::INFINITY, 0.0_f64);

        for k in 0..n {
            let mut p = k;
            let mut best = lu[(k, k)].abs();
            for i in k + 1..n {
                let v = lu[(i, k)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            pmin = pmin.min(best);
            pmax = pmax.max(best);
            if best <= tol || best == 0.0 {
                let rcond = if pmax > 0.0 { best / pmax } else { 0.0 };
                return Err(Error::Singular { rcond });
            }
            if p != k {
                for j in 0..n {
                    lu.data.swap(k * n + j, p * n + j);
                }
                perm.swap(k, p);
            }
            let pivot = lu[(k, k)];
            for i in k + 1..n {
                let l = lu[(i, k)] / pivot;
                lu[(i, k)] = l;
                if l != 0.0 {
                    for j in k + 1..n {
                        let u = lu[(k, j)];
                        lu[(i, j)] -= l * u;
                    }
                }
            }
            let m = (n - k - 1) as u64;
            flops += m + 2 * m * m;
        }
        let rcond_estimate = if n == 0 { 1.0 } else { pmin / pmax };
        Ok((
            Self {
                lu,
                perm,
                rcond_estimate,
            },
            flops,
        ))
    }

    pub fn dim(&self) -> usize {
        self.lu.nrows()
    }

    /// Ratio of smallest to largest pivot magnitude; a cheap reciprocal
    /// condition indicator.
    pub fn rcond_estimate(&self) -> f64 {
        self.rcond_estimate
    }

    pub fn packed(&self) -> &Matrix {
        &self.lu
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    /// Solves `A x = b` in place of `x`. FLOP count is `2n² − n`.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64]) -> u64 {
        let n = self.dim();
        debug_assert_eq!(b.len(), n);
        for (i, &p) in self.perm.iter().enumerate() {
            x[i] = b[p];
        }
        for i in 0..n {
            let row = self.lu.row(i);
            let mut acc = x[i];
            for j in 0..i {
                acc -= row[j] * x[j];
            }
            x[i] = acc;
        }
        for i in (0..n).rev() {
            let row = self.lu.row(i);
            let mut acc = x[i];
            for j in i + 1..n {
                acc -= row[j] * x[j];
            }
            x[i] = acc / row[i];
        }
        let n = n as u64;
        2 * n * n - n
    }

    /// Dense inverse by column solves against the identity.
    pub fn inverse(&self) -> (Matrix, u64) {
        let n = self.dim();
        let mut inv = Matrix::zeros(n, n);
        let mut e = vec![0.0; n];
        let mut col = vec![0.0; n];
        let mut flops = 0;
        for j in 0..n {
            e[j] = 1.0;
            flops += self.solve_into(&e, &mut col);
            inv.set_column(j, &col);
            e[j] = 0.0;
        }
        (inv, flops)
    }

    /// Number of structurally nonzero entries in `L` (strict lower) and `U`.
    pub fn factor_nonzeros(&self) -> usize {
        self.lu.as_slice().iter().filter(|v| **v != 0.0).count()
    }
}

/// Inverts a symmetric matrix: LU with partial pivoting, identity column
/// solves, then exact symmetrization. Returns `(inverse, rcond, flops)`.
pub fn invert_symmetric(a: &Matrix) -> Result<(Matrix, f64, u64)> {
    let (lu, mut flops) = LuFactors::factor(a)?;
    let (mut inv, f) = lu.inverse();
    flops += f;
    flops += inv.symmetrize();
    Ok((inv, lu.rcond_estimate(), flops))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lu_solves_two_by_two() {
        let g = Matrix::from_rows(&[vec![2.0, -1.0], vec![-1.0, 2.0]]);
        let (lu, _) = LuFactors::factor(&g).unwrap();
        let mut x = vec![0.0; 2];
        let flops = lu.solve_into(&[1.0, 0.0], &mut x);
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((x[1] - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(flops, 2 * 4 - 2);
    }

    #[test]
    fn lu_pivots_on_zero_diagonal() {
        let a = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
        let (lu, _) = LuFactors::factor(&a).unwrap();
        let mut x = vec![0.0; 2];
        lu.solve_into(&[3.0, 5.0], &mut x);
        assert_eq!(x, vec![5.0, 3.0]);
    }

    #[test]
    fn singular_matrix_is_rejected() {
        let a = Matrix::from_rows(&[vec![1.0, -1.0], vec![-1.0, 1.0]]);
        assert!(matches!(LuFactors::factor(&a), Err(Error::Singular { .. })));
    }

    #[test]
    fn factor_flops_match_closed_form() {
        // sum_{m=0}^{n-1} (m + 2 m^2)
        let n = 7;
        let a = Matrix::from_fn(n, n, |i, j| if i == j { 4.0 } else { 1.0 / (1 + i + j) as f64 });
        let (_, flops) = LuFactors::factor(&a).unwrap();
        let expected: u64 = (0..n as u64).map(|m| m + 2 * m * m).sum();
        assert_eq!(flops, expected);
    }

    #[test]
    fn matvec_flops() {
        let a = Matrix::identity(4);
        let mut y = vec![0.0; 4];
        assert_eq!(a.matvec_into(&[1.0, 2.0, 3.0, 4.0], &mut y), 28);
        assert_eq!(y, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn symmetric_inverse_is_exactly_symmetric() {
        let a = Matrix::from_fn(9, 9, |i, j| {
            if i == j {
                3.0 + i as f64
            } else {
                -1.0 / (1.0 + (i as f64 - j as f64).abs())
            }
        });
        let (inv, _, _) = invert_symmetric(&a).unwrap();
        assert!(inv.is_symmetric());
        let prod = a.matmul(&inv);
        assert!(prod.sub(&Matrix::identity(9)).max_abs() < 1e-13);
    }
}
