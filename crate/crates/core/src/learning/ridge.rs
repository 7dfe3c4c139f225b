//! Step 2: HR dictionaries by ridge regression,
//! `[psi_c_h, psi_h] = X_h G^T (G G^T + lambda I)^-1` with `G = [Z; U]`.

use nalgebra::DMatrix;

use super::CodeBatch;
use crate::error::{Error, Result};

fn check_lambda(lambda: f64) -> Result<()> {
    if !(lambda > 0.0) || !lambda.is_finite() {
        return Err(Error::NonPositiveLambda(lambda));
    }
    Ok(())
}

/// Solves `D (G + lambda I) = B` for `D`, with `G` symmetric PSD.
fn ridge_solve(mut gram: DMatrix<f64>, rhs: DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    for i in 0..gram.nrows() {
        gram[(i, i)] += lambda;
    }
    let chol = gram
        .cholesky()
        .ok_or_else(|| Error::NonFinite("ridge system is not positive definite".into()))?;
    Ok(chol.solve(&rhs.transpose()).transpose())
}

fn split(d: DMatrix<f64>, k: usize) -> (DMatrix<f64>, DMatrix<f64>) {
    let common = d.columns(0, k).into_owned();
    let unique = d.columns(k, k).into_owned();
    (common, unique)
}

/// Dense form: `z` and `u` are K x T code matrices.
pub fn solve_hr_dictionaries(
    x_h: &DMatrix<f64>,
    z: &DMatrix<f64>,
    u: &DMatrix<f64>,
    lambda: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_lambda(lambda)?;
    let k = z.nrows();
    if u.nrows() != k || z.ncols() != x_h.ncols() || u.ncols() != x_h.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "codes {}x{} and {}x{} against {} HR samples",
            z.nrows(),
            z.ncols(),
            u.nrows(),
            u.ncols(),
            x_h.ncols()
        )));
    }
    let mut gamma = DMatrix::zeros(2 * k, x_h.ncols());
    gamma.rows_mut(0, k).copy_from(z);
    gamma.rows_mut(k, k).copy_from(u);
    let gram = &gamma * gamma.transpose();
    let rhs = x_h * gamma.transpose();
    Ok(split(ridge_solve(gram, rhs, lambda)?, k))
}

/// Same solve accumulated directly from sparse codes.
pub fn solve_hr_from_codes(
    x_h: &DMatrix<f64>,
    codes: &CodeBatch,
    lambda: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    check_lambda(lambda)?;
    if codes.samples() != x_h.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} codes against {} HR samples",
            codes.samples(),
            x_h.ncols()
        )));
    }
    let k = codes.k;
    let columns: Vec<Vec<(usize, f64)>> = codes
        .codes
        .iter()
        .map(|c| {
            c.z.entries
                .iter()
                .copied()
                .chain(c.u.entries.iter().map(|&(j, v)| (k + j, v)))
                .collect()
        })
        .collect();
    let (gram, rhs) = sparse_normal_equations(x_h, &columns, 2 * k);
    Ok(split(ridge_solve(gram, rhs, lambda)?, k))
}

/// `(G G^T, X G^T)` for a code matrix `G` given as sparse columns.
pub(crate) fn sparse_normal_equations(
    x: &DMatrix<f64>,
    columns: &[Vec<(usize, f64)>],
    atoms: usize,
) -> (DMatrix<f64>, DMatrix<f64>) {
    let mut gram = DMatrix::zeros(atoms, atoms);
    let mut rhs = DMatrix::zeros(x.nrows(), atoms);
    for (i, col) in columns.iter().enumerate() {
        for &(a, ca) in col {
            for &(b, cb) in col {
                gram[(a, b)] += ca * cb;
            }
            rhs.column_mut(a).axpy(ca, &x.column(i), 1.0);
        }
    }
    (gram, rhs)
}

pub(crate) fn ridge_from_sparse(
    x: &DMatrix<f64>,
    columns: &[Vec<(usize, f64)>],
    atoms: usize,
    lambda: f64,
) -> Result<DMatrix<f64>> {
    check_lambda(lambda)?;
    let (gram, rhs) = sparse_normal_equations(x, columns, atoms);
    ridge_solve(gram, rhs, lambda)
}
