//! Direct dense factorization baseline and the error metrics used to
//! compare it against the hierarchical inverse.

use serde::{Deserialize, Serialize};

use crate::dense::{LuFactors, Matrix};
use crate::error::{Error, Result};
use crate::flops::{FlopCategory, FlopCounter, FlopSnapshot};
use crate::hinv::HInverse;
use crate::network::ConductanceMatrix;

/// Largest system the dense oracle accepts.
pub const DENSE_LIMIT: usize = 5000;

/// Floor on `|v_ref|` in the relative voltage error, in volts.
pub const VOLTAGE_FLOOR: f64 = 1e-9;

/// LU factors of `G` with factor/solve FLOP tallies. Construction cost is
/// charged to `construction`, substitutions to `apply`.
#[derive(Debug, Clone)]
pub struct DenseFactorization {
    lu: LuFactors,
    counter: FlopCounter,
}

impl DenseFactorization {
    pub fn factor(g: &ConductanceMatrix) -> Result<Self> {
        Self::factor_dense(&g.to_dense())
    }

    pub fn factor_dense(a: &Matrix) -> Result<Self> {
        let n = a.nrows();
        if n > DENSE_LIMIT {
            return Err(Error::TooLarge { n, limit: DENSE_LIMIT });
        }
        let (lu, f) = LuFactors::factor(a)?;
        let counter = FlopCounter::default();
        counter.add(FlopCategory::Construction, f);
        Ok(Self { lu, counter })
    }

    pub fn dim(&self) -> usize {
        self.lu.dim()
    }

    pub fn rcond_estimate(&self) -> f64 {
        self.lu.rcond_estimate()
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        self.solve_with_flops(b).map(|(x, _)| x)
    }

    pub fn solve_with_flops(&self, b: &[f64]) -> Result<(Vec<f64>, u64)> {
        if b.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: b.len(),
            });
        }
        let mut x = vec![0.0; b.len()];
        let f = self.lu.solve_into(b, &mut x);
        self.counter.add(FlopCategory::Apply, f);
        Ok((x, f))
    }

    /// Dense `G⁻¹` by column solves (not tallied).
    pub fn inverse(&self) -> Matrix {
        self.lu.inverse().0
    }

    /// Substitution cost if only structurally nonzero factor entries were
    /// touched: `2·nnz(L+U) − n`.
    pub fn sparse_solve_flops(&self) -> u64 {
        (2 * self.lu.factor_nonzeros()).saturating_sub(self.dim()) as u64
    }

    /// `L·U` with the row permutation undone; reproduces the factored matrix.
    pub fn reconstruct(&self) -> Matrix {
        let n = self.dim();
        let p = self.lu.packed();
        let mut out = Matrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut acc = 0.0;
                for k in 0..=i.min(j) {
                    let l = if k == i { 1.0 } else { p[(i, k)] };
                    acc += l * p[(k, j)];
                }
                out[(self.lu.permutation()[i], j)] = acc;
            }
        }
        out
    }

    pub fn flops(&self) -> FlopSnapshot {
        self.counter.snapshot()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorNorm {
    Frobenius,
    MaxRelativeEntry,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorReport {
    pub metric: String,
    pub value: f64,
    pub norm: ErrorNorm,
    pub operands: String,
}

/// `‖G̃⁻¹ − G⁻¹‖_F / ‖G⁻¹‖_F`, with `g` in the same (tree) order as `hinv`.
pub fn inverse_error(hinv: &HInverse, g: &ConductanceMatrix) -> Result<ErrorReport> {
    let approx = hinv.materialize()?;
    let exact = DenseFactorization::factor(g)?.inverse();
    Ok(ErrorReport {
        metric: "inverse_error".into(),
        value: approx.sub(&exact).frobenius_norm() / exact.frobenius_norm(),
        norm: ErrorNorm::Frobenius,
        operands: format!("hierarchical vs dense inverse, N={}", g.dim()),
    })
}

/// `max_i |v_test − v_ref| / max(|v_ref_i|, 1e-9)`.
pub fn voltage_error(v_test: &[f64], v_ref: &[f64]) -> ErrorReport {
    assert_eq!(v_test.len(), v_ref.len(), "voltage vectors differ in length");
    let value = v_test
        .iter()
        .zip(v_ref)
        .map(|(t, r)| (t - r).abs() / r.abs().max(VOLTAGE_FLOOR))
        .fold(0.0, f64::max);
    ErrorReport {
        metric: "voltage_error".into(),
        value,
        norm: ErrorNorm::MaxRelativeEntry,
        operands: format!("test vs reference voltages, N={}", v_ref.len()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_solve_is_identity() {
        let f = DenseFactorization::factor_dense(&Matrix::identity(3)).unwrap();
        assert_eq!(f.solve(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
        assert_eq!(f.solve(&[0.0; 3]).unwrap(), vec![0.0; 3]);
    }

    #[test]
    fn two_by_two_solve() {
        let g = ConductanceMatrix::from_upper_triplets(2, &[(0, 0, 2.0), (0, 1, -1.0), (1, 1, 2.0)]);
        let x = DenseFactorization::factor(&g).unwrap().solve(&[1.0, 0.0]).unwrap();
        assert!((x[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((x[1] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn solve_flops_are_tallied() {
        let f = DenseFactorization::factor_dense(&Matrix::identity(5)).unwrap();
        f.solve(&[1.0; 5]).unwrap();
        f.solve(&[1.0; 5]).unwrap();
        assert_eq!(f.flops().apply, 2 * (2 * 25 - 5));
    }

    #[test]
    fn reconstruct_reproduces_matrix() {
        let a = Matrix::from_rows(&[
            vec![1.0, 4.0, 2.0],
            vec![3.0, 1.0, 0.5],
            vec![2.0, 2.0, 5.0],
        ]);
        let f = DenseFactorization::factor_dense(&a).unwrap();
        assert!(f.reconstruct().sub(&a).max_abs() < 1e-14);
    }

    #[test]
    fn voltage_error_definition() {
        assert_eq!(voltage_error(&[1.0, 2.0], &[1.0, 2.0]).value, 0.0);
        let e = voltage_error(&[1.001, 2.0], &[1.0, 2.0]).value;
        assert!((e - 1e-3).abs() < 1e-12);
        // Floor applies near zero.
        let e = voltage_error(&[1e-12], &[0.0]).value;
        assert!((e - 1e-3).abs() < 1e-12);
    }
}
