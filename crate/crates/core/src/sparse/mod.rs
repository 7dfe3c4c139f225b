//! Sparse coding over a fixed dictionary.
//!
//! [`AtomDictionary`] is a plain dictionary with cached column norms and
//! Gram matrix. [`JointDictionary`] stacks the LR and guidance
//! dictionaries into the block layout
//!
//! ```text
//! [ psi_c_l  psi_l  0   ]
//! [ phi_c    0      phi ]
//! ```
//!
//! so that one solve over `[x_l; y]` yields the joint code `(z, u, v)`.

mod ista;
mod omp;

use std::sync::OnceLock;

use nalgebra::{DMatrix, DMatrixView, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{Dims, JointSparseCode};

pub use ista::{IstaOptions, IstaSolution};
pub use omp::{OmpSolution, RESIDUAL_TOLERANCE};

/// Samples per block when coding a batch. Fixed so that results do not
/// depend on the worker count.
const BATCH_CHUNK: usize = 256;

/// Below this many columns the matrix product switches to a different
/// kernel with a different summation order.
const MIN_PRODUCT_WIDTH: usize = 8;

/// Dictionary with cached column norms and Gram matrix.
#[derive(Debug, Clone)]
pub struct AtomDictionary {
    matrix: DMatrix<f64>,
    column_norms: Vec<f64>,
    inv_norms: Vec<f64>,
    gram: DMatrix<f64>,
    lipschitz: OnceLock<f64>,
}

impl AtomDictionary {
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dictionary".into()));
        }
        let column_norms: Vec<f64> = matrix.column_iter().map(|c| c.norm()).collect();
        if let Some(j) = column_norms.iter().position(|&n| n == 0.0) {
            return Err(Error::ZeroAtom(j));
        }
        let gram = matrix.transpose() * &matrix;
        let inv_norms = column_norms.iter().map(|n| 1.0 / n).collect();
        Ok(Self {
            matrix,
            column_norms,
            inv_norms,
            gram,
            lipschitz: OnceLock::new(),
        })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn column_norms(&self) -> &[f64] {
        &self.column_norms
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.gram
    }

    /// Largest squared singular value, computed on first use.
    pub fn lipschitz(&self) -> f64 {
        *self
            .lipschitz
            .get_or_init(|| ista::largest_squared_singular_value(self))
    }

    pub fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn atoms(&self) -> usize {
        self.matrix.ncols()
    }

    /// Largest usable budget: at most one coefficient per atom and per row.
    pub fn max_budget(&self) -> usize {
        self.atoms().min(self.rows())
    }

    fn check_budget(&self, budget: usize) -> Result<()> {
        let max = self.max_budget();
        if budget == 0 || budget > max {
            return Err(Error::BudgetOutOfRange { budget, max });
        }
        Ok(())
    }

    fn check_signal(&self, signal: &[f64]) -> Result<()> {
        if signal.len() != self.rows() {
            return Err(Error::DimensionMismatch(format!(
                "signal length {} but dictionary has {} rows",
                signal.len(),
                self.rows()
            )));
        }
        if signal.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal".into()));
        }
        Ok(())
    }

    /// `D^T X` for a block of signals. Narrow blocks are zero-padded so
    /// that every product goes through the same blocked kernel; a column's
    /// correlations then do not depend on how signals are grouped.
    fn correlations(&self, block: DMatrixView<'_, f64>) -> DMatrix<f64> {
        let width = block.ncols();
        if width >= MIN_PRODUCT_WIDTH {
            return self.matrix.transpose() * block;
        }
        let mut padded = DMatrix::zeros(block.nrows(), MIN_PRODUCT_WIDTH);
        padded.columns_mut(0, width).copy_from(&block);
        (self.matrix.transpose() * padded).columns(0, width).into_owned()
    }

    /// Orthogonal matching pursuit with at most `budget` atoms.
    pub fn omp(&self, signal: &[f64], budget: usize) -> Result<OmpSolution> {
        self.check_budget(budget)?;
        self.check_signal(signal)?;
        let x = DMatrix::from_column_slice(signal.len(), 1, signal);
        let dtx = self.correlations(x.as_view());
        Ok(omp::solve(self, signal, dtx.as_slice(), budget))
    }

    /// Codes every column of `signals` independently; parallel over columns.
    pub fn omp_batch(&self, signals: &DMatrix<f64>, budget: usize) -> Result<Vec<OmpSolution>> {
        self.check_budget(budget)?;
        if signals.nrows() != self.rows() {
            return Err(Error::DimensionMismatch(format!(
                "signals have {} rows but dictionary has {}",
                signals.nrows(),
                self.rows()
            )));
        }
        if signals.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signals".into()));
        }
        let t = signals.ncols();
        let starts: Vec<usize> = (0..t).step_by(BATCH_CHUNK).collect();
        let chunks: Vec<Vec<OmpSolution>> = starts
            .par_iter()
            .map(|&start| {
                let width = BATCH_CHUNK.min(t - start);
                let block = signals.columns(start, width);
                let dtx = self.correlations(block);
                (0..width)
                    .map(|c| {
                        omp::solve(
                            self,
                            block.column(c).as_slice(),
                            dtx.column(c).as_slice(),
                            budget,
                        )
                    })
                    .collect()
            })
            .collect();
        Ok(chunks.into_iter().flatten().collect())
    }

    /// Iterative soft-thresholding for `||x - D c||^2 + lambda ||c||_1`.
    pub fn ista(&self, signal: &[f64], opts: &IstaOptions) -> Result<IstaSolution> {
        self.check_signal(signal)?;
        ista::solve(self, signal, opts)
    }

    /// `||x - D c||_2` for a sparse coefficient list.
    pub fn residual_norm(&self, signal: &[f64], support: &[usize], coefs: &[f64]) -> f64 {
        let mut r = DVector::from_column_slice(signal);
        for (&j, &c) in support.iter().zip(coefs) {
            r.axpy(-c, &self.matrix.column(j), 1.0);
        }
        r.norm()
    }
}

/// Target LR patch and guidance patch, both with DC removed.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalPair {
    pub x_l: DVector<f64>,
    pub y: DVector<f64>,
}

impl SignalPair {
    pub fn new(x_l: DVector<f64>, y: DVector<f64>) -> Result<Self> {
        if x_l.iter().chain(y.iter()).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("signal pair".into()));
        }
        Ok(Self { x_l, y })
    }

    /// `[x_l; y]`.
    pub fn stacked(&self) -> DVector<f64> {
        let m = self.x_l.len();
        let mut out = DVector::zeros(m + self.y.len());
        out.rows_mut(0, m).copy_from(&self.x_l);
        out.rows_mut(m, self.y.len()).copy_from(&self.y);
        out
    }
}

/// The stacked `(M+N) x 3K` coupled dictionary.
#[derive(Debug, Clone)]
pub struct JointDictionary {
    dict: AtomDictionary,
    dims: Dims,
}

/// Builds the block matrix `[[psi_c_l, psi_l, 0], [phi_c, 0, phi]]`.
pub fn stack_joint_dictionary(
    psi_c_l: &DMatrix<f64>,
    psi_l: &DMatrix<f64>,
    phi_c: &DMatrix<f64>,
    phi: &DMatrix<f64>,
) -> Result<JointDictionary> {
    let (m, k) = psi_c_l.shape();
    let n = phi_c.nrows();
    for (name, mat, rows) in [("psi_l", psi_l, m), ("phi_c", phi_c, n), ("phi", phi, n)] {
        if mat.shape() != (rows, k) {
            return Err(Error::DimensionMismatch(format!(
                "{name} is {}x{}, expected {rows}x{k}",
                mat.nrows(),
                mat.ncols()
            )));
        }
    }
    for (name, mat) in [
        ("psi_c_l", psi_c_l),
        ("psi_l", psi_l),
        ("phi_c", phi_c),
        ("phi", phi),
    ] {
        if mat.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(name.into()));
        }
    }
    let mut stacked = DMatrix::zeros(m + n, 3 * k);
    stacked.view_mut((0, 0), (m, k)).copy_from(psi_c_l);
    stacked.view_mut((0, k), (m, k)).copy_from(psi_l);
    stacked.view_mut((m, 0), (n, k)).copy_from(phi_c);
    stacked.view_mut((m, 2 * k), (n, k)).copy_from(phi);
    Ok(JointDictionary {
        dict: AtomDictionary::new(stacked)?,
        dims: Dims { m, n, k },
    })
}

impl JointDictionary {
    pub fn stacked(&self) -> &DMatrix<f64> {
        self.dict.matrix()
    }

    pub fn column_norms(&self) -> &[f64] {
        self.dict.column_norms()
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn atom_dictionary(&self) -> &AtomDictionary {
        &self.dict
    }

    fn check_pair(&self, sig: &SignalPair) -> Result<()> {
        if sig.x_l.len() != self.dims.m || sig.y.len() != self.dims.n {
            return Err(Error::DimensionMismatch(format!(
                "signal pair is ({}, {}), dictionary expects ({}, {})",
                sig.x_l.len(),
                sig.y.len(),
                self.dims.m,
                self.dims.n
            )));
        }
        Ok(())
    }

    pub fn split(&self, solution: &OmpSolution) -> JointSparseCode {
        JointSparseCode::from_stacked(self.dims.k, &solution.support, &solution.coefs)
    }

    /// OMP over the stacked dictionary, returning the raw solution.
    pub fn omp(&self, sig: &SignalPair, budget: usize) -> Result<OmpSolution> {
        self.check_pair(sig)?;
        self.dict.omp(sig.stacked().as_slice(), budget)
    }

    /// Codes registered columns of `x_l` and `y` independently.
    pub fn omp_batch(
        &self,
        x_l: &DMatrix<f64>,
        y: &DMatrix<f64>,
        budget: usize,
    ) -> Result<Vec<OmpSolution>> {
        if x_l.nrows() != self.dims.m || y.nrows() != self.dims.n || x_l.ncols() != y.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "batch shapes {}x{} and {}x{} do not fit dictionary ({}, {})",
                x_l.nrows(),
                x_l.ncols(),
                y.nrows(),
                y.ncols(),
                self.dims.m,
                self.dims.n
            )));
        }
        let mut stacked = DMatrix::zeros(self.dims.m + self.dims.n, x_l.ncols());
        stacked.rows_mut(0, self.dims.m).copy_from(x_l);
        stacked.rows_mut(self.dims.m, self.dims.n).copy_from(y);
        self.dict.omp_batch(&stacked, budget)
    }
}

/// Greedy l0 joint coding of one patch pair.
pub fn omp_joint(sig: &SignalPair, jd: &JointDictionary, budget: usize) -> Result<JointSparseCode> {
    let sol = jd.omp(sig, budget)?;
    Ok(jd.split(&sol))
}

/// l1-regularized joint coding of one patch pair.
pub fn ista_joint(
    sig: &SignalPair,
    jd: &JointDictionary,
    opts: &IstaOptions,
) -> Result<(JointSparseCode, IstaSolution)> {
    jd.check_pair(sig)?;
    let sol = jd.dict.ista(sig.stacked().as_slice(), opts)?;
    let code = JointSparseCode::from_stacked(
        jd.dims.k,
        &(0..3 * jd.dims.k).collect::<Vec<_>>(),
        sol.coefs.as_slice(),
    );
    Ok((code, sol))
}

/// `||[x_l; y] - D [z; u; v]||_2`.
pub fn residual_norm(sig: &SignalPair, jd: &JointDictionary, code: &JointSparseCode) -> Result<f64> {
    jd.check_pair(sig)?;
    let k = jd.dims.k;
    for part in [&code.z, &code.u, &code.v] {
        if part.len != k || part.entries.iter().any(|&(i, _)| i >= k) {
            return Err(Error::DimensionMismatch(format!(
                "code part of length {} for K={k}",
                part.len
            )));
        }
    }
    let mut support = Vec::new();
    let mut coefs = Vec::new();
    for (offset, part) in [(0, &code.z), (k, &code.u), (2 * k, &code.v)] {
        for &(i, c) in &part.entries {
            support.push(offset + i);
            coefs.push(c);
        }
    }
    Ok(jd
        .dict
        .residual_norm(sig.stacked().as_slice(), &support, &coefs))
}
