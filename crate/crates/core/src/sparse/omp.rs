//! Batch-OMP: correlations are updated through the Gram matrix and the
//! least-squares system through an incremental Cholesky factor. A
//! near-singular pivot switches the solve to a minimum-norm SVD solve on
//! the selected columns.

use nalgebra::{DMatrix, DVector};

use super::AtomDictionary;

/// Relative residual below which pursuit stops early.
pub const RESIDUAL_TOLERANCE: f64 = 1e-12;

/// Pivot ratio below which the selected columns are treated as dependent.
const PIVOT_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct OmpSolution {
    /// Selected atoms in selection order.
    pub support: Vec<usize>,
    /// Coefficients aligned with `support`.
    pub coefs: Vec<f64>,
    /// Final `||x - D c||_2`, computed from the explicit residual.
    pub residual_norm: f64,
}

/// Lower-triangular factor grown one row at a time.
struct Cholesky {
    rows: Vec<Vec<f64>>,
}

impl Cholesky {
    /// Solves `L w = b`.
    fn forward(&self, b: &[f64]) -> Vec<f64> {
        let mut w = Vec::with_capacity(b.len());
        for (i, row) in self.rows.iter().enumerate() {
            let s: f64 = row[..i].iter().zip(&w).map(|(a, b)| a * b).sum();
            w.push((b[i] - s) / row[i]);
        }
        w
    }

    /// Solves `L^T c = w`.
    fn backward(&self, w: &[f64]) -> Vec<f64> {
        let n = w.len();
        let mut c = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = ((i + 1)..n).map(|j| self.rows[j][i] * c[j]).sum();
            c[i] = (w[i] - s) / self.rows[i][i];
        }
        c
    }
}

fn min_norm_solve(dict: &AtomDictionary, support: &[usize], signal: &[f64]) -> Vec<f64> {
    let rows = dict.rows();
    let sub = DMatrix::from_fn(rows, support.len(), |r, c| dict.matrix()[(r, support[c])]);
    let svd = sub.svd(true, true);
    let smax = svd.singular_values.max();
    let eps = smax * 1e-12 * (rows.max(support.len()) as f64);
    let x = DVector::from_column_slice(signal);
    match svd.solve(&x, eps) {
        Ok(c) => c.as_slice().to_vec(),
        Err(_) => vec![0.0; support.len()],
    }
}

pub(super) fn solve(
    dict: &AtomDictionary,
    signal: &[f64],
    dtx: &[f64],
    budget: usize,
) -> OmpSolution {
    let signal_norm = signal.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut out = OmpSolution {
        support: Vec::with_capacity(budget),
        coefs: Vec::new(),
        residual_norm: signal_norm,
    };
    if signal_norm == 0.0 {
        return out;
    }
    let p = dict.atoms();
    let m = dict.rows();
    let gram = dict.gram().as_slice();
    let atoms = dict.matrix().as_slice();
    let inv_norms = &dict.inv_norms;
    let mut selected = vec![false; p];
    let mut alpha = dtx.to_vec();
    let mut chol = Cholesky {
        rows: Vec::with_capacity(budget),
    };
    let mut dependent = false;
    let mut rhs: Vec<f64> = Vec::with_capacity(budget);
    let mut residual = signal.to_vec();

    while out.support.len() < budget {
        let mut best = None;
        let mut best_score = 0.0;
        for (j, ((a, inv), sel)) in alpha.iter().zip(inv_norms).zip(&selected).enumerate() {
            let score = a.abs() * inv;
            if score > best_score && !sel {
                best_score = score;
                best = Some(j);
            }
        }
        let Some(j) = best else { break };
        let gj = &gram[j * p..(j + 1) * p];

        if !dependent {
            let g: Vec<f64> = out.support.iter().map(|&i| gj[i]).collect();
            let w = chol.forward(&g);
            let pivot = gj[j] - w.iter().map(|v| v * v).sum::<f64>();
            if pivot > PIVOT_TOLERANCE * gj[j] {
                let mut row = w;
                row.push(pivot.sqrt());
                chol.rows.push(row);
            } else {
                dependent = true;
            }
        }
        selected[j] = true;
        out.support.push(j);
        rhs.push(dtx[j]);

        out.coefs = if dependent {
            min_norm_solve(dict, &out.support, signal)
        } else {
            chol.backward(&chol.forward(&rhs))
        };

        residual.copy_from_slice(signal);
        for (&i, &c) in out.support.iter().zip(&out.coefs) {
            for (r, d) in residual.iter_mut().zip(&atoms[i * m..(i + 1) * m]) {
                *r -= d * c;
            }
        }
        out.residual_norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
        if out.residual_norm <= RESIDUAL_TOLERANCE * signal_norm || out.support.len() == budget {
            break;
        }

        alpha.copy_from_slice(dtx);
        for (&i, &c) in out.support.iter().zip(&out.coefs) {
            for (a, g) in alpha.iter_mut().zip(&gram[i * p..(i + 1) * p]) {
                *a -= g * c;
            }
        }
    }
    out
}
