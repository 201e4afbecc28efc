//! Dense symmetric positive-definite factorization.
//!
//! nalgebra's Cholesky is unblocked; on the operator sizes used by the
//! concentration campaigns (a few thousand rows) a right-looking blocked
//! variant that pushes the trailing update through GEMM is several times
//! faster.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

const BLOCK: usize = 96;

/// Lower Cholesky factor of a symmetric positive-definite matrix.
#[derive(Debug, Clone)]
pub struct Cholesky {
    l: DMatrix<f64>,
}

impl Cholesky {
    /// Factor `a` (only the lower triangle is read). On failure the error
    /// carries the offending pivot, which is a lower bound proxy for the
    /// smallest eigenvalue; callers that need the exact smallest eigenvalue
    /// should compute it separately.
    pub fn new(mut a: DMatrix<f64>) -> Result<Self> {
        assert!(a.is_square(), "Cholesky needs a square matrix");
        let n = a.nrows();
        let mut k = 0;
        while k < n {
            let b = BLOCK.min(n - k);
            // Diagonal block.
            let diag = a.view((k, k), (b, b)).clone_owned();
            let l11 = match diag.cholesky() {
                Some(c) => c.unpack(),
                None => {
                    let pivot = pivot_failure(&a.view((k, k), (b, b)).clone_owned());
                    return Err(Error::NotPositiveDefinite {
                        smallest_eigenvalue: pivot,
                    });
                }
            };
            a.view_mut((k, k), (b, b)).copy_from(&l11);
            let rest = n - k - b;
            if rest > 0 {
                // Panel: L21 = A21 * L11^{-T}  <=>  L11 * L21^T = A21^T.
                let mut panel_t = a.view((k + b, k), (rest, b)).transpose();
                if !l11.solve_lower_triangular_mut(&mut panel_t) {
                    return Err(Error::LinearSolve("singular diagonal block".into()));
                }
                let panel = panel_t.transpose();
                a.view_mut((k + b, k), (rest, b)).copy_from(&panel);
                // Trailing update of the lower triangle, one block column at a time.
                let mut j = 0;
                while j < rest {
                    let w = BLOCK.min(rest - j);
                    let lower = panel.rows(j, rest - j);
                    let top = panel.rows(j, w);
                    let mut target = a.view_mut((k + b + j, k + b + j), (rest - j, w));
                    target.gemm(-1.0, &lower, &top.transpose(), 1.0);
                    j += w;
                }
            }
            k += b;
        }
        a.fill_upper_triangle(0.0, 1);
        Ok(Self { l: a })
    }

    pub fn l(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    /// `ln det A = 2 Σ ln L_ii`.
    pub fn log_det(&self) -> f64 {
        2.0 * crate::numeric::compensated_sum(self.l.diagonal().iter().map(|d| d.ln()))
    }

    /// Overwrite `b` with `L^{-1} b`.
    pub fn forward_solve_mut(&self, b: &mut DMatrix<f64>) {
        let ok = self.l.solve_lower_triangular_mut(b);
        debug_assert!(ok);
    }

    /// Solve `A x = b`.
    pub fn solve(&self, b: &DVector<f64>) -> DVector<f64> {
        let mut x = b.clone();
        self.l.solve_lower_triangular_mut(&mut x);
        self.l.tr_solve_lower_triangular_mut(&mut x);
        x
    }
}

fn pivot_failure(block: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(block.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Smallest eigenvalue of a symmetric matrix by full eigendecomposition.
pub fn smallest_eigenvalue(a: &DMatrix<f64>) -> f64 {
    nalgebra::SymmetricEigen::new(a.clone())
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}
