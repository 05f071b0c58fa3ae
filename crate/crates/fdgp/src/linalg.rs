//! Dense symmetric factorizations shared by the GP modules.
//!
//! Every `K^-1` application in this crate routes through [`CholFactor`];
//! no code path materializes an explicit matrix inverse. The [`solve_audit`]
//! counters let tests verify that claim at runtime.

use nalgebra::{DMatrix, DVector};
use std::sync::atomic::{AtomicU64, Ordering};
use thiserror::Error;

use crate::parallel;

static FACTORIZATIONS: AtomicU64 = AtomicU64::new(0);
static SOLVES: AtomicU64 = AtomicU64::new(0);

/// Runtime counters for the no-explicit-inverse audit.
///
/// `factorizations` counts Cholesky decompositions, `solves` counts
/// triangular-solve applications (one per solve call, not per column).
pub mod solve_audit {
    use super::{Ordering, FACTORIZATIONS, SOLVES};

    pub fn factorizations() -> u64 {
        FACTORIZATIONS.load(Ordering::Relaxed)
    }

    pub fn solves() -> u64 {
        SOLVES.load(Ordering::Relaxed)
    }

    pub fn reset() {
        FACTORIZATIONS.store(0, Ordering::Relaxed);
        SOLVES.store(0, Ordering::Relaxed);
    }
}

#[derive(Debug, Error)]
pub enum LinalgError {
    #[error("matrix not positive definite after jitter escalation up to {max_jitter:.3e} (dim {dim})")]
    NotPositiveDefinite { max_jitter: f64, dim: usize },
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("dimension mismatch: factor is {dim}x{dim}, rhs has {rhs_rows} rows")]
    DimensionMismatch { dim: usize, rhs_rows: usize },
}

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix,
/// built with the escalating-jitter policy: plain factorization first, then
/// diagonal jitter starting at `1e-8 * mean(diag)` and growing tenfold up to
/// `1e-2 * mean(diag)` before giving up.
#[derive(Debug, Clone)]
pub struct CholFactor {
    l: DMatrix<f64>,
    jitter: f64,
}

impl CholFactor {
    pub fn new(mat: &DMatrix<f64>) -> Result<Self, LinalgError> {
        if mat.nrows() != mat.ncols() {
            return Err(LinalgError::NotSquare {
                rows: mat.nrows(),
                cols: mat.ncols(),
            });
        }
        let dim = mat.nrows();
        let mean_diag = mat.diagonal().sum() / dim as f64;

        if let Some(chol) = nalgebra::Cholesky::new(mat.clone()) {
            FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
            return Ok(CholFactor {
                l: chol.unpack(),
                jitter: 0.0,
            });
        }

        if mean_diag > 0.0 {
            let max_jitter = 1e-2 * mean_diag;
            let mut jitter = 1e-8 * mean_diag;
            while jitter <= max_jitter {
                let mut jittered = mat.clone();
                for i in 0..dim {
                    jittered[(i, i)] += jitter;
                }
                if let Some(chol) = nalgebra::Cholesky::new(jittered) {
                    FACTORIZATIONS.fetch_add(1, Ordering::Relaxed);
                    return Ok(CholFactor {
                        l: chol.unpack(),
                        jitter,
                    });
                }
                jitter *= 10.0;
            }
        }
        Err(LinalgError::NotPositiveDefinite {
            max_jitter: 1e-2 * mean_diag.max(0.0),
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// Diagonal jitter that was added to make the factorization succeed.
    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// log det of the factored matrix: `2 * sum(log diag(L))`.
    pub fn log_det(&self) -> f64 {
        2.0 * self.l.diagonal().iter().map(|d| d.ln()).sum::<f64>()
    }

    fn check_rhs(&self, rhs_rows: usize) -> Result<(), LinalgError> {
        if rhs_rows != self.dim() {
            return Err(LinalgError::DimensionMismatch {
                dim: self.dim(),
                rhs_rows,
            });
        }
        Ok(())
    }

    /// `A^-1 rhs` via forward + back substitution.
    pub fn solve_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
        self.check_rhs(rhs.nrows())?;
        SOLVES.fetch_add(1, Ordering::Relaxed);
        let mut x = rhs.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        Ok(x)
    }

    /// `A^-1 rhs` column-wise, parallelized over fixed column chunks.
    pub fn solve_mat(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
        self.check_rhs(rhs.nrows())?;
        SOLVES.fetch_add(1, Ordering::Relaxed);
        let mut x = rhs.clone();
        let dim = self.dim();
        parallel::for_each_chunk_mut(x.as_mut_slice(), dim * parallel::COL_CHUNK, |_, chunk| {
            let cols = chunk.len() / dim;
            let mut block = nalgebra::DMatrixViewMut::from_slice(chunk, dim, cols);
            self.l.solve_lower_triangular_mut(&mut block);
            self.l.tr_solve_lower_triangular_mut(&mut block);
        });
        Ok(x)
    }

    /// `L^-1 rhs`, parallelized over fixed column chunks.
    pub fn solve_lower_mat(&self, rhs: &DMatrix<f64>) -> Result<DMatrix<f64>, LinalgError> {
        self.check_rhs(rhs.nrows())?;
        SOLVES.fetch_add(1, Ordering::Relaxed);
        let mut x = rhs.clone();
        let dim = self.dim();
        parallel::for_each_chunk_mut(x.as_mut_slice(), dim * parallel::COL_CHUNK, |_, chunk| {
            let cols = chunk.len() / dim;
            let mut block = nalgebra::DMatrixViewMut::from_slice(chunk, dim, cols);
            self.l.solve_lower_triangular_mut(&mut block);
        });
        Ok(x)
    }

    /// `L^-1 rhs` for a single vector.
    pub fn solve_lower_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
        self.check_rhs(rhs.nrows())?;
        SOLVES.fetch_add(1, Ordering::Relaxed);
        let mut x = rhs.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        Ok(x)
    }

    /// `L^-T rhs` for a single vector.
    pub fn solve_lower_tr_vec(&self, rhs: &DVector<f64>) -> Result<DVector<f64>, LinalgError> {
        self.check_rhs(rhs.nrows())?;
        SOLVES.fetch_add(1, Ordering::Relaxed);
        let mut x = rhs.clone();
        self.l.tr_solve_lower_triangular_mut(&mut x);
        Ok(x)
    }
}

/// `M M^T` accumulated over fixed column chunks so the summation order (and
/// therefore the floating-point result) is independent of thread count.
pub(crate) fn gramian(m: &DMatrix<f64>) -> DMatrix<f64> {
    let rows = m.nrows();
    let cols = m.ncols();
    let parts = parallel::map_chunks(cols, parallel::COL_CHUNK, |range| {
        let view = m.columns(range.start, range.end - range.start);
        view * view.transpose()
    });
    let mut out = DMatrix::zeros(rows, rows);
    for p in parts {
        out += p;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(dim: usize, seed: u64) -> DMatrix<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = DMatrix::from_fn(dim, dim, |_, _| rng.gen_range(-1.0..1.0));
        &m * m.transpose() + DMatrix::identity(dim, dim)
    }

    #[test]
    fn identity_solve_returns_rhs() {
        let eye = DMatrix::<f64>::identity(4, 4);
        let f = CholFactor::new(&eye).unwrap();
        let rhs = DVector::from_vec(vec![1.0, -2.0, 3.0, 0.5]);
        let x = f.solve_vec(&rhs).unwrap();
        assert_relative_eq!(x, rhs, epsilon = 1e-15);
        assert_eq!(f.jitter(), 0.0);
    }

    #[test]
    fn solve_matches_explicit_inverse_3x3() {
        // Oracle: 3x3 inverse by cofactor expansion, independent of the
        // Cholesky path under test.
        let a = random_spd(3, 7);
        let det = a[(0, 0)] * (a[(1, 1)] * a[(2, 2)] - a[(1, 2)] * a[(2, 1)])
            - a[(0, 1)] * (a[(1, 0)] * a[(2, 2)] - a[(1, 2)] * a[(2, 0)])
            + a[(0, 2)] * (a[(1, 0)] * a[(2, 1)] - a[(1, 1)] * a[(2, 0)]);
        let mut inv = DMatrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                let (r0, r1) = match i {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let (c0, c1) = match j {
                    0 => (1, 2),
                    1 => (0, 2),
                    _ => (0, 1),
                };
                let minor = a[(r0, c0)] * a[(r1, c1)] - a[(r0, c1)] * a[(r1, c0)];
                let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
                inv[(j, i)] = sign * minor / det;
            }
        }
        let rhs = DVector::from_vec(vec![0.3, -1.1, 2.2]);
        let expect = &inv * &rhs;
        let f = CholFactor::new(&a).unwrap();
        let got = f.solve_vec(&rhs).unwrap();
        assert_relative_eq!(got, expect, epsilon = 1e-8);
    }

    #[test]
    fn solve_then_multiply_roundtrip() {
        let a = random_spd(20, 3);
        let f = CholFactor::new(&a).unwrap();
        let rhs = DMatrix::from_fn(20, 3, |i, j| (i as f64 - j as f64) * 0.37);
        let x = f.solve_mat(&rhs).unwrap();
        let back = &a * &x;
        assert_relative_eq!(back, rhs, epsilon = 1e-8);
    }

    #[test]
    fn chol_solve_recovers_known_vector() {
        let a = random_spd(50, 11);
        let v = DVector::from_fn(50, |i, _| (i as f64 * 0.1).sin());
        let rhs = &a * &v;
        let f = CholFactor::new(&a).unwrap();
        let got = f.solve_vec(&rhs).unwrap();
        assert_relative_eq!(got, v, epsilon = 1e-8, max_relative = 1e-8);
    }

    #[test]
    fn jitter_escalation_handles_duplicate_rows() {
        // Rank-deficient: two identical rows/columns.
        let mut a = random_spd(5, 5);
        let col = a.column(0).into_owned();
        a.set_column(1, &col);
        let row = a.row(0).into_owned();
        a.set_row(1, &row);
        a[(1, 1)] = a[(0, 0)];
        let f = CholFactor::new(&a).expect("jitter should rescue the factorization");
        assert!(f.jitter() > 0.0);
    }

    #[test]
    fn non_square_rejected() {
        let a = DMatrix::<f64>::zeros(3, 4);
        assert!(matches!(
            CholFactor::new(&a),
            Err(LinalgError::NotSquare { .. })
        ));
    }

    #[test]
    fn hopeless_matrix_fails_after_escalation() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 4.0, 1.0]);
        assert!(matches!(
            CholFactor::new(&a),
            Err(LinalgError::NotPositiveDefinite { .. })
        ));
    }

    #[test]
    fn log_det_matches_dense_determinant() {
        let a = random_spd(6, 9);
        let f = CholFactor::new(&a).unwrap();
        assert_relative_eq!(f.log_det(), a.determinant().ln(), epsilon = 1e-9);
    }

    #[test]
    fn gramian_matches_direct_product() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let m = DMatrix::from_fn(8, 1000, |_, _| rng.gen_range(-2.0..2.0));
        let direct = &m * m.transpose();
        let chunked = gramian(&m);
        assert_relative_eq!(chunked, direct, epsilon = 1e-10);
    }

    #[test]
    fn audit_counters_increment() {
        solve_audit::reset();
        let a = random_spd(4, 1);
        let f = CholFactor::new(&a).unwrap();
        let _ = f.solve_vec(&DVector::zeros(4)).unwrap();
        assert_eq!(solve_audit::factorizations(), 1);
        assert_eq!(solve_audit::solves(), 1);
    }
}
