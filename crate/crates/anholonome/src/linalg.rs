//! Dense direct linear solves.
//!
//! All systems in this library are small (n <= ~12), so everything goes
//! through partial-pivot LU with an explicit singularity threshold on the
//! pivot magnitude.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// Pivot magnitudes at or below this are treated as singular.
pub const PIVOT_TOL: f64 = 1e-12;

fn check_pivots(lu: &nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>, context: &'static str) -> Result<()> {
    let u = lu.u();
    for i in 0..u.nrows().min(u.ncols()) {
        if u[(i, i)].abs() <= PIVOT_TOL {
            return Err(Error::SingularMatrix {
                context,
                tol: PIVOT_TOL,
            });
        }
    }
    Ok(())
}

/// Solve `A x = b` by partial-pivot LU.
pub fn solve(a: &DMatrix<f64>, b: &DVector<f64>, context: &'static str) -> Result<DVector<f64>> {
    debug_assert_eq!(a.nrows(), a.ncols());
    debug_assert_eq!(a.nrows(), b.len());
    if a.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    let lu = a.clone().lu();
    check_pivots(&lu, context)?;
    lu.solve(b).ok_or(Error::SingularMatrix {
        context,
        tol: PIVOT_TOL,
    })
}

/// Solve `A X = B` for a matrix of right-hand sides.
pub fn solve_matrix(
    a: &DMatrix<f64>,
    b: &DMatrix<f64>,
    context: &'static str,
) -> Result<DMatrix<f64>> {
    debug_assert_eq!(a.nrows(), a.ncols());
    debug_assert_eq!(a.nrows(), b.nrows());
    if a.nrows() == 0 {
        return Ok(DMatrix::zeros(0, b.ncols()));
    }
    let lu = a.clone().lu();
    check_pivots(&lu, context)?;
    lu.solve(b).ok_or(Error::SingularMatrix {
        context,
        tol: PIVOT_TOL,
    })
}

/// Determinant via LU.
pub fn det(a: &DMatrix<f64>) -> f64 {
    debug_assert_eq!(a.nrows(), a.ncols());
    if a.nrows() == 0 {
        return 1.0;
    }
    a.clone().lu().determinant()
}

/// Matrix inverse, failing on small pivots.
pub fn inverse(a: &DMatrix<f64>, context: &'static str) -> Result<DMatrix<f64>> {
    let n = a.nrows();
    solve_matrix(a, &DMatrix::identity(n, n), context)
}

/// Least-squares solution of the (tall, full-column-rank) system `A x = b`
/// via the normal equations. Returns the solution and the infinity norm of
/// the residual `A x - b`.
pub fn least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    context: &'static str,
) -> Result<(DVector<f64>, f64)> {
    debug_assert_eq!(a.nrows(), b.len());
    let ata = a.transpose() * a;
    let atb = a.transpose() * b;
    let x = solve(&ata, &atb, context)?;
    let residual = (a * &x - b).amax();
    Ok((x, residual))
}
