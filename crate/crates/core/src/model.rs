//! Domain types shared by the learning and reconstruction stages.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};

/// Patch dimensions: `m` LR rows, `n` HR/guidance rows, `k` atoms per dictionary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Dims {
    pub m: usize,
    pub n: usize,
    pub k: usize,
}

/// The six coupled dictionaries.
///
/// `psi_c_l`/`psi_l` act on LR target patches, `psi_c_h`/`psi_h` on HR
/// target patches and `phi_c`/`phi` on guidance patches. The `*_c*`
/// dictionaries are driven by the common code, the others by the code
/// unique to their modality.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledDictionarySet {
    pub psi_c_l: DMatrix<f64>,
    pub psi_l: DMatrix<f64>,
    pub psi_c_h: DMatrix<f64>,
    pub psi_h: DMatrix<f64>,
    pub phi_c: DMatrix<f64>,
    pub phi: DMatrix<f64>,
    pub dims: Dims,
}

/// Block names in serialization order.
pub const BLOCK_NAMES: [&str; 6] = ["psi_c_l", "psi_l", "psi_c_h", "psi_h", "phi_c", "phi"];

impl CoupledDictionarySet {
    /// Assembles a set, checking that every block has the shape implied by
    /// `psi_c_l` (M rows) and `psi_c_h` (N rows).
    pub fn new(
        psi_c_l: DMatrix<f64>,
        psi_l: DMatrix<f64>,
        psi_c_h: DMatrix<f64>,
        psi_h: DMatrix<f64>,
        phi_c: DMatrix<f64>,
        phi: DMatrix<f64>,
    ) -> Result<Self> {
        let dims = Dims {
            m: psi_c_l.nrows(),
            n: psi_c_h.nrows(),
            k: psi_c_l.ncols(),
        };
        let set = Self {
            psi_c_l,
            psi_l,
            psi_c_h,
            psi_h,
            phi_c,
            phi,
            dims,
        };
        let issues = set.shape_issues();
        if let Some(first) = issues.into_iter().next() {
            return Err(Error::DimensionMismatch(first));
        }
        Ok(set)
    }

    /// Blocks paired with their names, in serialization order.
    pub fn blocks(&self) -> [(&'static str, &DMatrix<f64>); 6] {
        [
            (BLOCK_NAMES[0], &self.psi_c_l),
            (BLOCK_NAMES[1], &self.psi_l),
            (BLOCK_NAMES[2], &self.psi_c_h),
            (BLOCK_NAMES[3], &self.psi_h),
            (BLOCK_NAMES[4], &self.phi_c),
            (BLOCK_NAMES[5], &self.phi),
        ]
    }

    fn expected_rows(&self, block: &str) -> usize {
        match block {
            "psi_c_l" | "psi_l" => self.dims.m,
            _ => self.dims.n,
        }
    }

    fn shape_issues(&self) -> Vec<String> {
        let mut issues = Vec::new();
        if self.dims.m > self.dims.n {
            issues.push(format!(
                "LR rows M={} exceed HR rows N={}",
                self.dims.m, self.dims.n
            ));
        }
        for (name, mat) in self.blocks() {
            let rows = self.expected_rows(name);
            if mat.nrows() != rows || mat.ncols() != self.dims.k {
                issues.push(format!(
                    "{name} is {}x{}, expected {}x{}",
                    mat.nrows(),
                    mat.ncols(),
                    rows,
                    self.dims.k
                ));
            }
        }
        issues
    }
}

/// Sparse vector stored as `(index, value)` pairs in insertion order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SparseVec {
    pub len: usize,
    pub entries: Vec<(usize, f64)>,
}

impl SparseVec {
    pub fn zeros(len: usize) -> Self {
        Self {
            len,
            entries: Vec::new(),
        }
    }

    pub fn nnz(&self) -> usize {
        self.entries.iter().filter(|(_, v)| *v != 0.0).count()
    }

    pub fn to_dense(&self) -> DVector<f64> {
        let mut out = DVector::zeros(self.len);
        for &(i, v) in &self.entries {
            out[i] += v;
        }
        out
    }

    pub fn from_dense(dense: &DVector<f64>) -> Self {
        Self {
            len: dense.len(),
            entries: dense
                .iter()
                .enumerate()
                .filter(|(_, v)| **v != 0.0)
                .map(|(i, v)| (i, *v))
                .collect(),
        }
    }
}

/// Joint sparse code `(z, u, v)` of one registered patch pair.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct JointSparseCode {
    /// Common code.
    pub z: SparseVec,
    /// Code unique to the target modality.
    pub u: SparseVec,
    /// Code unique to the guidance modality.
    pub v: SparseVec,
}

impl JointSparseCode {
    pub fn zeros(k: usize) -> Self {
        Self {
            z: SparseVec::zeros(k),
            u: SparseVec::zeros(k),
            v: SparseVec::zeros(k),
        }
    }

    pub fn nnz(&self) -> usize {
        self.z.nnz() + self.u.nnz() + self.v.nnz()
    }

    /// Splits a coefficient vector over the stacked `3K` columns into
    /// its three blocks.
    pub fn from_stacked(k: usize, support: &[usize], coefs: &[f64]) -> Self {
        let mut code = Self::zeros(k);
        for (&j, &c) in support.iter().zip(coefs) {
            if c == 0.0 {
                continue;
            }
            match j / k {
                0 => code.z.entries.push((j, c)),
                1 => code.u.entries.push((j - k, c)),
                _ => code.v.entries.push((j - 2 * k, c)),
            }
        }
        code
    }

    /// Dense `3K` vector `[z; u; v]`.
    pub fn to_stacked(&self) -> DVector<f64> {
        let k = self.z.len;
        let mut out = DVector::zeros(3 * k);
        for (offset, part) in [(0, &self.z), (k, &self.u), (2 * k, &self.v)] {
            for &(i, c) in &part.entries {
                out[offset + i] += c;
            }
        }
        out
    }
}

/// Column-stacked registered patch triples.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub x_l: DMatrix<f64>,
    pub x_h: DMatrix<f64>,
    pub y: DMatrix<f64>,
}

impl TrainingBatch {
    pub fn new(x_l: DMatrix<f64>, x_h: DMatrix<f64>, y: DMatrix<f64>) -> Result<Self> {
        let t = x_l.ncols();
        if x_h.ncols() != t || y.ncols() != t {
            return Err(Error::DimensionMismatch(format!(
                "sample counts differ: x_l {t}, x_h {}, y {}",
                x_h.ncols(),
                y.ncols()
            )));
        }
        if x_h.nrows() != y.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "x_h has {} rows but y has {}",
                x_h.nrows(),
                y.nrows()
            )));
        }
        if x_l.nrows() > x_h.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "x_l has {} rows, more than x_h's {}",
                x_l.nrows(),
                x_h.nrows()
            )));
        }
        Ok(Self { x_l, x_h, y })
    }

    pub fn samples(&self) -> usize {
        self.x_l.ncols()
    }
}

/// Training hyper-parameters.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainConfig {
    /// Atoms per dictionary (K).
    pub atoms: usize,
    /// Total sparsity budget over (z, u, v).
    pub sparsity: usize,
    pub out_iter: usize,
    pub in_iter: usize,
    /// Ridge weight of the HR dictionary solve.
    pub lambda: f64,
    pub seed: u64,
    /// Worker threads for sparse coding; 0 uses every available CPU.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            atoms: 1024,
            sparsity: 8,
            out_iter: 10,
            in_iter: 20,
            lambda: 1e-3,
            seed: 0,
            workers: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.atoms == 0 {
            return Err(Error::InvalidConfig("atoms must be at least 1".into()));
        }
        if self.sparsity == 0 || self.sparsity > 3 * self.atoms {
            return Err(Error::InvalidConfig(format!(
                "sparsity {} outside [1, {}]",
                self.sparsity,
                3 * self.atoms
            )));
        }
        if self.out_iter == 0 || self.in_iter == 0 {
            return Err(Error::InvalidConfig(
                "iteration counts must be at least 1".into(),
            ));
        }
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be positive, got {}",
                self.lambda
            )));
        }
        Ok(())
    }
}

/// Tolerance on unit-norm atoms.
pub const NORM_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NormViolation {
    /// `"common"` for the stacked `[psi_c_l; phi_c]` pair, else the block name.
    pub block: String,
    pub column: usize,
    pub norm: f64,
}

/// Result of [`validate`].
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct Diagnostics {
    pub dimension_issues: Vec<String>,
    pub norm_violations: Vec<NormViolation>,
    pub max_norm_deviation: f64,
    /// Blocks containing NaN or infinite entries, with the offending count.
    pub non_finite: Vec<(String, usize)>,
}

impl Diagnostics {
    pub fn passed(&self) -> bool {
        self.dimension_issues.is_empty()
            && self.norm_violations.is_empty()
            && self.non_finite.is_empty()
    }
}

/// Checks shapes, finiteness and the unit-norm invariants of the LR and
/// guidance dictionaries. HR dictionaries are not norm-constrained.
pub fn validate(dset: &CoupledDictionarySet) -> Diagnostics {
    let mut diag = Diagnostics {
        dimension_issues: dset.shape_issues(),
        ..Default::default()
    };
    for (name, mat) in dset.blocks() {
        let bad = mat.iter().filter(|v| !v.is_finite()).count();
        if bad > 0 {
            diag.non_finite.push((name.to_string(), bad));
        }
    }

    let mut check = |block: &str, column: usize, norm: f64| {
        let dev = (norm - 1.0).abs();
        if dev.is_nan() || dev > diag.max_norm_deviation {
            diag.max_norm_deviation = if dev.is_nan() { f64::INFINITY } else { dev };
        }
        if !(dev <= NORM_TOLERANCE) {
            diag.norm_violations.push(NormViolation {
                block: block.to_string(),
                column,
                norm,
            });
        }
    };

    let common_cols = dset.psi_c_l.ncols().min(dset.phi_c.ncols());
    for j in 0..common_cols {
        let sq = dset.psi_c_l.column(j).norm_squared() + dset.phi_c.column(j).norm_squared();
        check("common", j, sq.sqrt());
    }
    for j in 0..dset.psi_l.ncols() {
        check("psi_l", j, dset.psi_l.column(j).norm());
    }
    for j in 0..dset.phi.ncols() {
        check("phi", j, dset.phi.column(j).norm());
    }
    diag
}
