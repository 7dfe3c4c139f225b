//! Synthetic experiments: ground-truth coupled dictionaries, data
//! synthesis, noise injection, dictionary recovery runs and measurement
//! sweeps, plus a paired two-modality image generator.

mod experiments;
mod images;
mod report;

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::learning::CodeBatch;
use crate::model::{CoupledDictionarySet, JointSparseCode, SparseVec, TrainingBatch};
use crate::rng::{derive_seed, gaussian_matrix, normalize_columns, seeded};

pub use experiments::{
    cdl_report, compare_step1, csr_report, find_point, run_cdl_recovery, run_cdl_trial, run_cdl_trials,
    run_csr_experiment, run_csr_sweep, CdlTrialResult, CsrArm, CsrModels, CsrOptions, CsrPoint, CsrSource,
    RecoveryRatios,
};
pub use images::{gen_paired_images, region_labels};
pub use report::{line_plot_svg, number, numbers, object, ExperimentReport, Series, SettingResult};

/// Per-column nonzero counts of `(z, u, v)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Sparsities {
    pub s_z: usize,
    pub s_u: usize,
    pub s_v: usize,
}

impl Sparsities {
    pub fn new(s_z: usize, s_u: usize, s_v: usize) -> Self {
        Self { s_z, s_u, s_v }
    }

    pub fn total(&self) -> usize {
        self.s_z + self.s_u + self.s_v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SynthConfig {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub sparsities: Sparsities,
    /// Input SNR in dB; `None` for noise-free data.
    pub input_snr_db: Option<f64>,
    pub trials: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n: 64,
            m: 16,
            k: 128,
            t: 10_000,
            sparsities: Sparsities::new(4, 1, 1),
            input_snr_db: None,
            trials: 10,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.m == 0 || self.m >= self.n {
            return Err(Error::InvalidConfig(format!(
                "need 0 < M < N, got M={} N={}",
                self.m, self.n
            )));
        }
        if self.k == 0 || self.t == 0 || self.trials == 0 {
            return Err(Error::InvalidConfig("K, T and trials must be at least 1".into()));
        }
        let s = self.sparsities;
        if s.s_z > self.k || s.s_u > self.k || s.s_v > self.k {
            return Err(Error::InvalidConfig(format!(
                "per-part sparsity {s:?} exceeds K={}",
                self.k
            )));
        }
        let cap = (self.m + self.n).min(3 * self.k);
        if s.total() == 0 || s.total() > cap {
            return Err(Error::InvalidConfig(format!(
                "total sparsity {} outside [1, {cap}]",
                s.total()
            )));
        }
        if let Some(snr) = self.input_snr_db {
            if snr.is_nan() {
                return Err(Error::InvalidConfig("input SNR is NaN".into()));
            }
        }
        Ok(())
    }
}

/// Row selector `A` given by the kept row indices of `I_N`, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct RowSelector {
    pub n: usize,
    pub rows: Vec<usize>,
}

impl RowSelector {
    pub fn random<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Self {
        let mut rows = sample(rng, n, m).into_vec();
        rows.sort_unstable();
        Self { n, rows }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut a = DMatrix::zeros(self.rows.len(), self.n);
        for (i, &r) in self.rows.iter().enumerate() {
            a[(i, r)] = 1.0;
        }
        a
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        x.select_rows(&self.rows)
    }
}

#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub dset: CoupledDictionarySet,
    pub selector: RowSelector,
    pub codes: CodeBatch,
}

impl GroundTruth {
    pub fn subsample_matrix(&self) -> DMatrix<f64> {
        self.selector.matrix()
    }
}

fn random_sparse<R: Rng + ?Sized>(k: usize, s: usize, rng: &mut R) -> SparseVec {
    let mut support = sample(rng, k, s).into_vec();
    support.sort_unstable();
    SparseVec {
        len: k,
        entries: support
            .into_iter()
            .map(|j| (j, rng.sample::<f64, _>(StandardNormal)))
            .collect(),
    }
}

/// Codes with exactly the configured number of nonzeros per part.
pub fn random_codes<R: Rng + ?Sized>(k: usize, t: usize, s: Sparsities, rng: &mut R) -> CodeBatch {
    let codes = (0..t)
        .map(|_| JointSparseCode {
            z: random_sparse(k, s.s_z, rng),
            u: random_sparse(k, s.s_u, rng),
            v: random_sparse(k, s.s_v, rng),
        })
        .collect();
    CodeBatch { k, codes }
}

/// Unit-norm Gaussian HR and guidance dictionaries, a random row
/// selector, LR dictionaries `A * HR`, and random sparse codes.
pub fn gen_ground_truth(cfg: &SynthConfig) -> Result<GroundTruth> {
    cfg.validate()?;
    let mut rng = seeded(cfg.seed);
    let mut draw = || {
        let mut d = gaussian_matrix(cfg.n, cfg.k, &mut rng);
        normalize_columns(&mut d);
        d
    };
    let psi_c_h = draw();
    let psi_h = draw();
    let phi_c = draw();
    let phi = draw();
    let selector = RowSelector::random(cfg.n, cfg.m, &mut rng);
    let codes = random_codes(cfg.k, cfg.t, cfg.sparsities, &mut rng);
    let dset = CoupledDictionarySet::new(
        selector.apply(&psi_c_h),
        selector.apply(&psi_h),
        psi_c_h,
        psi_h,
        phi_c,
        phi,
    )?;
    Ok(GroundTruth {
        dset,
        selector,
        codes,
    })
}

fn apply_sparse(out: &mut DMatrix<f64>, dict: &DMatrix<f64>, col: usize, code: &SparseVec) {
    let mut dst = out.column_mut(col);
    for &(j, c) in &code.entries {
        dst.axpy(c, &dict.column(j), 1.0);
    }
}

/// Data from the coupled model for the given dictionaries and codes.
pub fn synthesize_from(dset: &CoupledDictionarySet, codes: &CodeBatch) -> Result<TrainingBatch> {
    let d = dset.dims;
    if codes.k != d.k {
        return Err(Error::DimensionMismatch(format!(
            "codes over {} atoms, dictionaries have {}",
            codes.k, d.k
        )));
    }
    let t = codes.samples();
    let mut x_l = DMatrix::zeros(d.m, t);
    let mut x_h = DMatrix::zeros(d.n, t);
    let mut y = DMatrix::zeros(d.n, t);
    for (i, c) in codes.codes.iter().enumerate() {
        apply_sparse(&mut x_h, &dset.psi_c_h, i, &c.z);
        apply_sparse(&mut x_h, &dset.psi_h, i, &c.u);
        apply_sparse(&mut x_l, &dset.psi_c_l, i, &c.z);
        apply_sparse(&mut x_l, &dset.psi_l, i, &c.u);
        apply_sparse(&mut y, &dset.phi_c, i, &c.z);
        apply_sparse(&mut y, &dset.phi, i, &c.v);
    }
    TrainingBatch::new(x_l, x_h, y)
}

pub fn synthesize(gt: &GroundTruth) -> Result<TrainingBatch> {
    synthesize_from(&gt.dset, &gt.codes)
}

/// Adds white Gaussian noise so that the whole-matrix mean-square power
/// ratio equals `input_snr_db`. Infinite SNR returns the data unchanged.
pub fn add_awgn(data: &DMatrix<f64>, input_snr_db: f64, seed: u64) -> Result<DMatrix<f64>> {
    if input_snr_db.is_nan() {
        return Err(Error::InvalidConfig("input SNR is NaN".into()));
    }
    if input_snr_db == f64::INFINITY {
        return Ok(data.clone());
    }
    if data.is_empty() {
        return Err(Error::ZeroPower);
    }
    let power = data.norm_squared() / data.len() as f64;
    if power == 0.0 {
        return Err(Error::ZeroPower);
    }
    let sigma = (power / 10f64.powf(input_snr_db / 10.0)).sqrt();
    let mut rng = seeded(seed);
    let noise = gaussian_matrix(data.nrows(), data.ncols(), &mut rng);
    Ok(data + noise * sigma)
}

/// Noise on all three matrices, with independent streams derived from
/// `seed`.
pub fn add_awgn_batch(batch: &TrainingBatch, input_snr_db: f64, seed: u64) -> Result<TrainingBatch> {
    TrainingBatch::new(
        add_awgn(&batch.x_l, input_snr_db, derive_seed(seed, 0))?,
        add_awgn(&batch.x_h, input_snr_db, derive_seed(seed, 1))?,
        add_awgn(&batch.y, input_snr_db, derive_seed(seed, 2))?,
    )
}

#[cfg(test)]
mod tests;
