//! Small dense helpers: symmetric factorizations and norms.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn, SymmetricEigen};

use crate::error::{Result, SolveError};
use crate::scalar::Scalar;

/// How symmetric systems `G z = r` are solved inside a Riccati sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GSolveMode {
    /// Cholesky factorization; failure means `G` is not positive definite.
    Strict,
    /// Eigen-decomposition pseudo-solve for PSD `G` that may be singular.
    /// Right-hand sides must lie in the numerical range of `G`.
    PseudoInverse,
}

/// A stored factorization of a symmetric matrix.
#[derive(Debug, Clone)]
pub enum SymFactor<T: Scalar> {
    Cholesky(Cholesky<T, Dyn>),
    Pseudo {
        vectors: DMatrix<T>,
        /// Reciprocal eigenvalues, zero on the numerical null space.
        inv_values: DVector<T>,
        lambda_max: T,
        stage: usize,
    },
}

/// Eigenvalues at or below this fraction of the largest one count as zero.
pub const PSEUDO_CUTOFF: f64 = 1e-12;
/// Maximum relative size of the out-of-range part of a right-hand side.
pub const RANGE_TOLERANCE: f64 = 1e-8;

impl<T: Scalar> SymFactor<T> {
    /// Factorizes the symmetric part of `g`. `stage` is only used for error reporting.
    pub fn new(g: &DMatrix<T>, mode: GSolveMode, stage: usize) -> Result<Self> {
        let g = symmetrize(g);
        match mode {
            GSolveMode::Strict => Cholesky::new(g).map(SymFactor::Cholesky).ok_or(SolveError::IndefiniteG { stage }),
            GSolveMode::PseudoInverse => {
                let n = g.nrows();
                if n == 0 {
                    return Ok(SymFactor::Pseudo {
                        vectors: DMatrix::zeros(0, 0),
                        inv_values: DVector::zeros(0),
                        lambda_max: T::zero(),
                        stage,
                    });
                }
                let eig = SymmetricEigen::new(g);
                let lambda_max = eig.eigenvalues.iter().fold(T::zero(), |m, v| if v.abs() > m { v.abs() } else { m });
                let cutoff = lambda_max * T::rel_tol(PSEUDO_CUTOFF, 64.0);
                let mut inv_values = DVector::zeros(n);
                for (i, &v) in eig.eigenvalues.iter().enumerate() {
                    if v > cutoff {
                        inv_values[i] = T::one() / v;
                    } else if v < -cutoff {
                        return Err(SolveError::IndefiniteG { stage });
                    }
                }
                Ok(SymFactor::Pseudo { vectors: eig.eigenvectors, inv_values, lambda_max, stage })
            }
        }
    }

    pub fn solve(&self, rhs: &DMatrix<T>) -> Result<DMatrix<T>> {
        match self {
            SymFactor::Cholesky(c) => Ok(c.solve(rhs)),
            SymFactor::Pseudo { vectors, inv_values, lambda_max, stage } => {
                let mut y = vectors.transpose() * rhs;
                let mut out_of_range = T::zero();
                for (i, &inv) in inv_values.iter().enumerate() {
                    let mut row = y.row_mut(i);
                    if inv == T::zero() {
                        out_of_range += row.norm_squared();
                        row.fill(T::zero());
                    } else {
                        row *= inv;
                    }
                }
                let z = vectors * y;
                let scale = rhs.norm() + *lambda_max * z.norm();
                let residual = out_of_range.sqrt();
                if scale > T::zero() && residual > scale * T::rel_tol(RANGE_TOLERANCE, 1e3) {
                    return Err(SolveError::InconsistentReducedSystem {
                        stage: *stage,
                        residual: (residual / scale).as_f64(),
                    });
                }
                Ok(z)
            }
        }
    }

    pub fn solve_vec(&self, rhs: &DVector<T>) -> Result<DVector<T>> {
        let m = DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice());
        let z = self.solve(&m)?;
        Ok(DVector::from_column_slice(z.as_slice()))
    }
}

/// `(M + Mᵀ) / 2`.
pub fn symmetrize<T: Scalar>(m: &DMatrix<T>) -> DMatrix<T> {
    (m + m.transpose()) * T::lit(0.5)
}

/// Largest absolute entry, zero for empty vectors.
pub fn inf_norm<T: Scalar>(v: &DVector<T>) -> T {
    v.iter().fold(T::zero(), |m, x| if x.abs() > m { x.abs() } else { m })
}

pub fn mat_inf_norm<T: Scalar>(m: &DMatrix<T>) -> T {
    m.iter().fold(T::zero(), |acc, x| if x.abs() > acc { x.abs() } else { acc })
}

/// Smallest eigenvalue of the symmetric part of `m` (zero for an empty matrix).
pub fn min_eigenvalue<T: Scalar>(m: &DMatrix<T>) -> T {
    if m.nrows() == 0 {
        return T::zero();
    }
    SymmetricEigen::new(symmetrize(m)).eigenvalues.min()
}

/// Relative asymmetry `‖M − Mᵀ‖_F / max(‖M‖_F, tiny)`.
pub fn asymmetry<T: Scalar>(m: &DMatrix<T>) -> T {
    let n = m.norm();
    if n == T::zero() {
        return T::zero();
    }
    (m - m.transpose()).norm() / n
}

/// Inverse of an SPD matrix through its Cholesky factor.
pub fn spd_inverse<T: Scalar>(m: &DMatrix<T>, what: &str) -> Result<DMatrix<T>> {
    let chol =
        Cholesky::new(symmetrize(m)).ok_or_else(|| SolveError::NotPositiveDefinite { what: what.to_string() })?;
    Ok(symmetrize(&chol.inverse()))
}

/// Block-diagonal matrix `diag(a, b)`.
pub fn block_diag<T: Scalar>(a: &DMatrix<T>, b: &DMatrix<T>) -> DMatrix<T> {
    let (ra, ca) = a.shape();
    let (rb, cb) = b.shape();
    let mut m = DMatrix::zeros(ra + rb, ca + cb);
    m.view_mut((0, 0), (ra, ca)).copy_from(a);
    m.view_mut((ra, ca), (rb, cb)).copy_from(b);
    m
}

/// Vertical concatenation of two vectors.
pub fn vstack<T: Scalar>(a: &DVector<T>, b: &DVector<T>) -> DVector<T> {
    DVector::from_iterator(a.len() + b.len(), a.iter().chain(b.iter()).copied())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn strict_rejects_singular() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert_eq!(SymFactor::new(&g, GSolveMode::Strict, 3).unwrap_err(), SolveError::IndefiniteG { stage: 3 });
    }

    #[test]
    fn pseudo_solve_returns_minimum_norm_solution() {
        let g: DMatrix<f64> = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let f = SymFactor::new(&g, GSolveMode::PseudoInverse, 0).unwrap();
        let z = f.solve_vec(&DVector::from_vec(vec![2.0, 2.0])).unwrap();
        assert!((z[0] - 1.0).abs() < 1e-14 && (z[1] - 1.0).abs() < 1e-14);
    }

    #[test]
    fn pseudo_solve_flags_out_of_range_rhs() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        let f = SymFactor::new(&g, GSolveMode::PseudoInverse, 4).unwrap();
        let err = f.solve_vec(&DVector::from_vec(vec![1.0, 1.0])).unwrap_err();
        assert!(matches!(err, SolveError::InconsistentReducedSystem { stage: 4, .. }));
    }

    #[test]
    fn pseudo_solve_of_zero_matrix_accepts_zero_rhs() {
        let g = DMatrix::<f64>::zeros(3, 3);
        let f = SymFactor::new(&g, GSolveMode::PseudoInverse, 0).unwrap();
        let z = f.solve(&DMatrix::zeros(3, 2)).unwrap();
        assert_eq!(z, DMatrix::zeros(3, 2));
    }

    #[test]
    fn pseudo_rejects_clearly_indefinite() {
        let g = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -1.0]);
        assert!(SymFactor::new(&g, GSolveMode::PseudoInverse, 0).is_err());
    }
}
