//! Coupled dictionary learning.
//!
//! Step 1 alternates global sparse coding over the stacked dictionary with
//! K-SVD style rank-one atom updates: first the common atom pairs
//! `[psi_c_l; phi_c]`, then the unique atoms of `psi_l` and `phi`. Step 2
//! fits the HR dictionaries to the final codes by ridge regression and
//! never feeds back into Step 1, so HR patches play no part in coding.

mod ksvd;
mod ridge;
mod single;

use std::time::Instant;

use log::{debug, warn};
use nalgebra::DMatrix;
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{CoupledDictionarySet, Dims, JointSparseCode, SparseVec, TrainConfig, TrainingBatch};
use crate::rng::{gaussian_matrix, seeded};
use crate::sparse::{stack_joint_dictionary, JointDictionary, RESIDUAL_TOLERANCE};

pub use ksvd::top_singular_triplet;
pub use ridge::{solve_hr_dictionaries, solve_hr_from_codes};
pub use single::{learn_single_modality, SingleModalityDictionaries};
pub(crate) use single::learn_single_in_current_pool;

/// The four dictionaries learned in Step 1.
#[derive(Debug, Clone, PartialEq)]
pub struct Step1Dictionaries {
    pub psi_c_l: DMatrix<f64>,
    pub psi_l: DMatrix<f64>,
    pub phi_c: DMatrix<f64>,
    pub phi: DMatrix<f64>,
}

impl Step1Dictionaries {
    /// Gaussian initialization with unit-norm stacked common pairs and
    /// unit-norm unique atoms.
    pub fn random<R: Rng + ?Sized>(m: usize, n: usize, k: usize, rng: &mut R) -> Self {
        let mut psi_c_l = gaussian_matrix(m, k, rng);
        let mut phi_c = gaussian_matrix(n, k, rng);
        let mut psi_l = gaussian_matrix(m, k, rng);
        let mut phi = gaussian_matrix(n, k, rng);
        for j in 0..k {
            let norm = (psi_c_l.column(j).norm_squared() + phi_c.column(j).norm_squared()).sqrt();
            psi_c_l.column_mut(j).unscale_mut(norm);
            phi_c.column_mut(j).unscale_mut(norm);
        }
        crate::rng::normalize_columns(&mut psi_l);
        crate::rng::normalize_columns(&mut phi);
        Self {
            psi_c_l,
            psi_l,
            phi_c,
            phi,
        }
    }

    pub fn dims(&self) -> Dims {
        Dims {
            m: self.psi_c_l.nrows(),
            n: self.phi_c.nrows(),
            k: self.psi_c_l.ncols(),
        }
    }

    pub fn joint(&self) -> Result<JointDictionary> {
        stack_joint_dictionary(&self.psi_c_l, &self.psi_l, &self.phi_c, &self.phi)
    }
}

/// Codes of a whole batch; column `i` holds `(z_i, u_i, v_i)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeBatch {
    pub k: usize,
    pub codes: Vec<JointSparseCode>,
}

impl CodeBatch {
    pub fn samples(&self) -> usize {
        self.codes.len()
    }

    fn dense(&self, part: impl Fn(&JointSparseCode) -> &SparseVec) -> DMatrix<f64> {
        let mut out = DMatrix::zeros(self.k, self.codes.len());
        for (i, code) in self.codes.iter().enumerate() {
            for &(r, c) in &part(code).entries {
                out[(r, i)] += c;
            }
        }
        out
    }

    pub fn z_matrix(&self) -> DMatrix<f64> {
        self.dense(|c| &c.z)
    }

    pub fn u_matrix(&self) -> DMatrix<f64> {
        self.dense(|c| &c.u)
    }

    pub fn v_matrix(&self) -> DMatrix<f64> {
        self.dense(|c| &c.v)
    }

    pub fn max_nnz(&self) -> usize {
        self.codes.iter().map(JointSparseCode::nnz).max().unwrap_or(0)
    }
}

/// Which update followed a coding pass.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Common,
    Unique,
}

/// Per-pass training record. Entry `i` is measured right after coding
/// pass `i`.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TrainingTrace {
    pub phase: Vec<Phase>,
    pub rmse_x: Vec<f64>,
    pub rmse_y: Vec<f64>,
    /// Branch RMSEs after the last dictionary update.
    pub final_rmse_x: f64,
    pub final_rmse_y: f64,
    pub coding_seconds: f64,
    pub common_update_seconds: f64,
    pub unique_update_seconds: f64,
    pub hr_solve_seconds: f64,
}

/// Residual matrices `X - psi_c_l Z - psi_l U` and `Y - phi_c Z - phi V`.
#[derive(Debug, Clone)]
pub(crate) struct Residuals {
    pub x: DMatrix<f64>,
    pub y: DMatrix<f64>,
    /// Squared residual norm at or below which a sample counts as exactly
    /// represented and is not used to re-seed unused atoms.
    pub floor_sq: f64,
}

/// `(tol * max column norm)^2` over the stacked data columns.
pub(crate) fn replacement_floor(parts: &[&DMatrix<f64>]) -> f64 {
    let t = parts.first().map_or(0, |p| p.ncols());
    let max_sq = (0..t)
        .map(|i| parts.iter().map(|p| p.column(i).norm_squared()).sum::<f64>())
        .fold(0.0, f64::max);
    max_sq * RESIDUAL_TOLERANCE * RESIDUAL_TOLERANCE
}

pub(crate) fn subtract_sparse(
    residual: &mut DMatrix<f64>,
    dict: &DMatrix<f64>,
    sample: usize,
    code: &SparseVec,
) {
    let mut col = residual.column_mut(sample);
    for &(j, c) in &code.entries {
        col.axpy(-c, &dict.column(j), 1.0);
    }
}

pub(crate) fn residuals(
    x_l: &DMatrix<f64>,
    y: &DMatrix<f64>,
    dicts: &Step1Dictionaries,
    codes: &CodeBatch,
) -> Residuals {
    let mut rx = x_l.clone();
    let mut ry = y.clone();
    for (i, code) in codes.codes.iter().enumerate() {
        subtract_sparse(&mut rx, &dicts.psi_c_l, i, &code.z);
        subtract_sparse(&mut rx, &dicts.psi_l, i, &code.u);
        subtract_sparse(&mut ry, &dicts.phi_c, i, &code.z);
        subtract_sparse(&mut ry, &dicts.phi, i, &code.v);
    }
    Residuals {
        x: rx,
        y: ry,
        floor_sq: replacement_floor(&[x_l, y]),
    }
}

/// `sqrt(||R||_F^2 / #elements)`; zero for an empty matrix.
pub(crate) fn rmse_of(residual: &DMatrix<f64>) -> f64 {
    if residual.is_empty() {
        0.0
    } else {
        (residual.norm_squared() / residual.len() as f64).sqrt()
    }
}

fn check_pair_shapes(x_l: &DMatrix<f64>, y: &DMatrix<f64>, dims: Dims) -> Result<()> {
    if x_l.nrows() != dims.m || y.nrows() != dims.n || x_l.ncols() != y.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "data {}x{} / {}x{} against dictionaries with M={}, N={}",
            x_l.nrows(),
            x_l.ncols(),
            y.nrows(),
            y.ncols(),
            dims.m,
            dims.n
        )));
    }
    Ok(())
}

/// Codes every sample against the stacked dictionary with OMP.
pub fn global_sparse_coding(
    x_l: &DMatrix<f64>,
    y: &DMatrix<f64>,
    dicts: &Step1Dictionaries,
    sparsity: usize,
) -> Result<CodeBatch> {
    let dims = dicts.dims();
    check_pair_shapes(x_l, y, dims)?;
    let jd = dicts.joint()?;
    let solutions = jd.omp_batch(x_l, y, sparsity)?;
    Ok(CodeBatch {
        k: dims.k,
        codes: solutions.iter().map(|s| jd.split(s)).collect(),
    })
}

/// Rank-one update of every common atom pair, `k` ascending. The common
/// code row is refreshed together with its atom.
pub fn update_common_dictionaries(
    x_l: &DMatrix<f64>,
    y: &DMatrix<f64>,
    dicts: &mut Step1Dictionaries,
    codes: &mut CodeBatch,
) -> Result<()> {
    update_common_dictionaries_observed(x_l, y, dicts, codes, |_, _, _| {})
}

/// As [`update_common_dictionaries`], calling `observer(k, ..)` after
/// each atom.
pub fn update_common_dictionaries_observed(
    x_l: &DMatrix<f64>,
    y: &DMatrix<f64>,
    dicts: &mut Step1Dictionaries,
    codes: &mut CodeBatch,
    observer: impl FnMut(usize, &Step1Dictionaries, &CodeBatch),
) -> Result<()> {
    check_pair_shapes(x_l, y, dicts.dims())?;
    let mut res = residuals(x_l, y, dicts, codes);
    ksvd::update_common(dicts, codes, &mut res, observer);
    Ok(())
}

/// Rank-one update of every atom of `psi_l` (against `U`) and then of
/// `phi` (against `V`).
pub fn update_unique_dictionaries(
    x_l: &DMatrix<f64>,
    y: &DMatrix<f64>,
    dicts: &mut Step1Dictionaries,
    codes: &mut CodeBatch,
) -> Result<()> {
    update_unique_dictionaries_observed(x_l, y, dicts, codes, |_, _, _| {})
}

pub fn update_unique_dictionaries_observed(
    x_l: &DMatrix<f64>,
    y: &DMatrix<f64>,
    dicts: &mut Step1Dictionaries,
    codes: &mut CodeBatch,
    observer: impl FnMut(ksvd::UniqueAtom, &Step1Dictionaries, &CodeBatch),
) -> Result<()> {
    check_pair_shapes(x_l, y, dicts.dims())?;
    let mut res = residuals(x_l, y, dicts, codes);
    ksvd::update_unique(dicts, codes, &mut res, observer);
    Ok(())
}

pub use ksvd::UniqueAtom;

/// Output of Step 1.
#[derive(Debug, Clone)]
pub struct Step1Output {
    pub dicts: Step1Dictionaries,
    pub codes: CodeBatch,
    pub trace: TrainingTrace,
}

/// Runs `f` on a pool of `workers` threads (0: one per logical CPU).
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Step 1 from a random Gaussian initialization seeded by `cfg.seed`.
pub fn learn_lr_guidance_dictionaries(
    x_l: &DMatrix<f64>,
    y: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<Step1Output> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let init = Step1Dictionaries::random(x_l.nrows(), y.nrows(), cfg.atoms, &mut rng);
    learn_from(x_l, y, init, cfg)
}

/// Step 1 from explicit initial dictionaries.
pub fn learn_from(
    x_l: &DMatrix<f64>,
    y: &DMatrix<f64>,
    init: Step1Dictionaries,
    cfg: &TrainConfig,
) -> Result<Step1Output> {
    cfg.validate()?;
    let dims = init.dims();
    if dims.k != cfg.atoms {
        return Err(Error::InvalidConfig(format!(
            "initial dictionaries have {} atoms, config asks for {}",
            dims.k, cfg.atoms
        )));
    }
    check_pair_shapes(x_l, y, dims)?;
    if x_l.ncols() == 0 {
        return Err(Error::EmptyBatch);
    }
    if x_l.ncols() < dims.k {
        warn!(
            "training with T={} samples for K={} atoms; expect unused atoms",
            x_l.ncols(),
            dims.k
        );
    }
    with_workers(cfg.workers, move || run_step1(x_l, y, init, cfg))
}

/// [`learn_lr_guidance_dictionaries`] plus the HR solve, run on the
/// current thread pool instead of one sized by `cfg.workers`.
pub(crate) fn train_in_current_pool(
    batch: &TrainingBatch,
    cfg: &TrainConfig,
) -> Result<(CoupledDictionarySet, TrainingTrace)> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let init = Step1Dictionaries::random(batch.x_l.nrows(), batch.y.nrows(), cfg.atoms, &mut rng);
    check_pair_shapes(&batch.x_l, &batch.y, init.dims())?;
    if batch.samples() == 0 {
        return Err(Error::EmptyBatch);
    }
    let step1 = run_step1(&batch.x_l, &batch.y, init, cfg)?;
    assemble(batch, step1, cfg)
}

fn assemble(
    batch: &TrainingBatch,
    step1: Step1Output,
    cfg: &TrainConfig,
) -> Result<(CoupledDictionarySet, TrainingTrace)> {
    let started = Instant::now();
    let (psi_c_h, psi_h) = solve_hr_from_codes(&batch.x_h, &step1.codes, cfg.lambda)?;
    let mut trace = step1.trace;
    trace.hr_solve_seconds = started.elapsed().as_secs_f64();
    let d = step1.dicts;
    let set = CoupledDictionarySet::new(d.psi_c_l, d.psi_l, psi_c_h, psi_h, d.phi_c, d.phi)?;
    Ok((set, trace))
}

fn run_step1(
    x_l: &DMatrix<f64>,
    y: &DMatrix<f64>,
    mut dicts: Step1Dictionaries,
    cfg: &TrainConfig,
) -> Result<Step1Output> {
    let mut trace = TrainingTrace::default();
    let mut codes = CodeBatch {
        k: cfg.atoms,
        codes: Vec::new(),
    };
    for outer in 0..cfg.out_iter {
        for phase in [Phase::Common, Phase::Unique] {
            for _ in 0..cfg.in_iter {
                let started = Instant::now();
                codes = global_sparse_coding(x_l, y, &dicts, cfg.sparsity)?;
                trace.coding_seconds += started.elapsed().as_secs_f64();

                let started = Instant::now();
                let mut res = residuals(x_l, y, &dicts, &codes);
                trace.phase.push(phase);
                trace.rmse_x.push(rmse_of(&res.x));
                trace.rmse_y.push(rmse_of(&res.y));
                match phase {
                    Phase::Common => {
                        ksvd::update_common(&mut dicts, &mut codes, &mut res, |_, _, _| {});
                        trace.common_update_seconds += started.elapsed().as_secs_f64();
                    }
                    Phase::Unique => {
                        ksvd::update_unique(&mut dicts, &mut codes, &mut res, |_, _, _| {});
                        trace.unique_update_seconds += started.elapsed().as_secs_f64();
                    }
                }
            }
        }
        debug!(
            "outer iteration {}: rmse_x {:.5}, rmse_y {:.5}",
            outer + 1,
            trace.rmse_x.last().copied().unwrap_or(f64::NAN),
            trace.rmse_y.last().copied().unwrap_or(f64::NAN)
        );
    }
    let res = residuals(x_l, y, &dicts, &codes);
    trace.final_rmse_x = rmse_of(&res.x);
    trace.final_rmse_y = rmse_of(&res.y);
    Ok(Step1Output {
        dicts,
        codes,
        trace,
    })
}

/// Full two-step training. Step 1 sees only `x_l` and `y`.
pub fn train(batch: &TrainingBatch, cfg: &TrainConfig) -> Result<(CoupledDictionarySet, TrainingTrace)> {
    let step1 = learn_lr_guidance_dictionaries(&batch.x_l, &batch.y, cfg)?;
    assemble(batch, step1, cfg)
}

#[cfg(test)]
mod tests;
