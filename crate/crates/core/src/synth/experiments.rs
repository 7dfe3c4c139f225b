//! Dictionary recovery runs and measurement sweeps on synthetic data.

use std::time::Instant;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use super::report::{number, numbers, object, ExperimentReport, SettingResult};
use super::{
    add_awgn, add_awgn_batch, gen_ground_truth, random_codes, synthesize, synthesize_from, GroundTruth,
    RowSelector, Sparsities, SynthConfig,
};
use crate::error::{Error, Result};
use crate::learning::{learn_single_in_current_pool, train_in_current_pool, with_workers, SingleModalityDictionaries, TrainingTrace};
use crate::metrics::{atom_correlation_ratio, atom_recovery_ratio, snr_db, RecoveryThreshold};
use crate::model::{CoupledDictionarySet, TrainConfig, TrainingBatch};
use crate::rng::{derive_seed, normalize_columns, seeded};
use crate::sr::{super_resolve_patches, super_resolve_patches_single, Solver};

// ------------------------------------------------------------ recovery

/// Recovery ratios of the four Step-1 dictionaries: the stacked common
/// pair `[psi_c_l; phi_c]`, `phi_c` alone, `psi_l` and `phi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RecoveryRatios {
    pub psi_c: f64,
    pub phi_c: f64,
    pub psi: f64,
    pub phi: f64,
}

impl RecoveryRatios {
    pub fn as_array(&self) -> [f64; 4] {
        [self.psi_c, self.phi_c, self.psi, self.phi]
    }

    pub fn mean(&self) -> f64 {
        self.as_array().iter().sum::<f64>() / 4.0
    }

    pub fn min(&self) -> f64 {
        self.as_array().into_iter().fold(f64::INFINITY, f64::min)
    }

    /// Entry-wise mean over trials.
    pub fn average(all: &[RecoveryRatios]) -> RecoveryRatios {
        let n = all.len().max(1) as f64;
        let sum = |f: fn(&RecoveryRatios) -> f64| all.iter().map(f).sum::<f64>() / n;
        RecoveryRatios {
            psi_c: sum(|r| r.psi_c),
            phi_c: sum(|r| r.phi_c),
            psi: sum(|r| r.psi),
            phi: sum(|r| r.phi),
        }
    }

    fn to_json(self) -> Value {
        json!({
            "psi_c": number(self.psi_c),
            "phi_c": number(self.phi_c),
            "psi": number(self.psi),
            "phi": number(self.phi),
        })
    }
}

fn unit_columns(d: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = d.clone();
    normalize_columns(&mut out);
    out
}

fn stack(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(top.nrows() + bottom.nrows(), top.ncols());
    out.rows_mut(0, top.nrows()).copy_from(top);
    out.rows_mut(top.nrows(), bottom.nrows()).copy_from(bottom);
    out
}

/// Compares learned Step-1 dictionaries with the truth. All columns are
/// normalized first, so the ratios measure direction only.
pub fn compare_step1(
    truth: &CoupledDictionarySet,
    learned: &CoupledDictionarySet,
    ratio: impl Fn(&DMatrix<f64>, &DMatrix<f64>, RecoveryThreshold) -> Result<f64>,
    threshold: RecoveryThreshold,
) -> Result<RecoveryRatios> {
    let pair = |t: &DMatrix<f64>, l: &DMatrix<f64>| ratio(&unit_columns(t), &unit_columns(l), threshold);
    Ok(RecoveryRatios {
        psi_c: pair(
            &stack(&truth.psi_c_l, &truth.phi_c),
            &stack(&learned.psi_c_l, &learned.phi_c),
        )?,
        phi_c: pair(&truth.phi_c, &learned.phi_c)?,
        psi: pair(&truth.psi_l, &learned.psi_l)?,
        phi: pair(&truth.phi, &learned.phi)?,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct CdlTrialResult {
    pub trial: usize,
    pub seed: u64,
    /// Euclidean-distance rule, the primary measure.
    pub ratios: RecoveryRatios,
    /// `1 - |cos| < epsilon` rule, reported alongside for comparison.
    pub correlation_ratios: RecoveryRatios,
    pub trace: TrainingTrace,
    pub seconds: f64,
}

fn check_train_config(cfg: &SynthConfig, train: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    train.validate()?;
    if train.atoms != cfg.k {
        return Err(Error::InvalidConfig(format!(
            "training uses K={} atoms but the ground truth has K={}",
            train.atoms, cfg.k
        )));
    }
    Ok(())
}

/// One recovery trial: truth from `derive_seed(cfg.seed, trial)`, noise
/// and dictionary initialization from seeds derived from that.
pub fn run_cdl_trial(cfg: &SynthConfig, train: &TrainConfig, trial: usize) -> Result<CdlTrialResult> {
    check_train_config(cfg, train)?;
    cdl_trial(cfg, train, trial)
}

fn cdl_trial(cfg: &SynthConfig, train: &TrainConfig, trial: usize) -> Result<CdlTrialResult> {
    let started = Instant::now();
    let seed = derive_seed(cfg.seed, trial as u64);
    let gt = gen_ground_truth(&SynthConfig { seed, ..cfg.clone() })?;
    let mut batch = synthesize(&gt)?;
    if let Some(snr) = cfg.input_snr_db {
        batch = add_awgn_batch(&batch, snr, derive_seed(seed, 1))?;
    }
    let train = TrainConfig {
        seed: derive_seed(seed, 2),
        ..train.clone()
    };
    let (learned, trace) = train_in_current_pool(&batch, &train)?;
    let threshold = RecoveryThreshold::default();
    Ok(CdlTrialResult {
        trial,
        seed,
        ratios: compare_step1(&gt.dset, &learned, atom_recovery_ratio, threshold)?,
        correlation_ratios: compare_step1(&gt.dset, &learned, atom_correlation_ratio, threshold)?,
        trace,
        seconds: started.elapsed().as_secs_f64(),
    })
}

/// All trials of a recovery experiment, in parallel on `train.workers`
/// threads. Results do not depend on the worker count.
pub fn run_cdl_trials(cfg: &SynthConfig, train: &TrainConfig) -> Result<Vec<CdlTrialResult>> {
    check_train_config(cfg, train)?;
    with_workers(train.workers, || {
        (0..cfg.trials)
            .into_par_iter()
            .map(|trial| cdl_trial(cfg, train, trial))
            .collect()
    })
}

fn mean(vs: impl Iterator<Item = f64>) -> f64 {
    let (sum, n) = vs.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn mean_curve(curves: &[&[f64]]) -> Vec<f64> {
    let len = curves.iter().map(|c| c.len()).min().unwrap_or(0);
    (0..len).map(|i| mean(curves.iter().map(|c| c[i]))).collect()
}

/// Report of a recovery experiment: one setting per trial, averages in
/// the aggregates.
pub fn cdl_report(cfg: &SynthConfig, train: &TrainConfig, trials: &[CdlTrialResult]) -> ExperimentReport {
    let per_setting = trials
        .iter()
        .map(|t| SettingResult {
            params: object([("trial", json!(t.trial)), ("seed", json!(t.seed))]),
            metrics: object([
                ("recovery", t.ratios.to_json()),
                ("correlation_recovery", t.correlation_ratios.to_json()),
                ("final_rmse_x", number(t.trace.final_rmse_x)),
                ("final_rmse_y", number(t.trace.final_rmse_y)),
                ("rmse_x", numbers(&t.trace.rmse_x)),
                ("rmse_y", numbers(&t.trace.rmse_y)),
            ]),
        })
        .collect();
    let ratios: Vec<RecoveryRatios> = trials.iter().map(|t| t.ratios).collect();
    let corr: Vec<RecoveryRatios> = trials.iter().map(|t| t.correlation_ratios).collect();
    let xs: Vec<&[f64]> = trials.iter().map(|t| t.trace.rmse_x.as_slice()).collect();
    let ys: Vec<&[f64]> = trials.iter().map(|t| t.trace.rmse_y.as_slice()).collect();
    ExperimentReport {
        config: json!({ "synth": synth_config_json(cfg), "train": train_config_json(train) }),
        per_setting,
        aggregates: object([
            ("recovery", RecoveryRatios::average(&ratios).to_json()),
            ("correlation_recovery", RecoveryRatios::average(&corr).to_json()),
            ("final_rmse_x", number(mean(trials.iter().map(|t| t.trace.final_rmse_x)))),
            ("final_rmse_y", number(mean(trials.iter().map(|t| t.trace.final_rmse_y)))),
            ("rmse_x", numbers(&mean_curve(&xs))),
            ("rmse_y", numbers(&mean_curve(&ys))),
        ]),
    }
}

/// Runs every trial and returns the report.
pub fn run_cdl_recovery(cfg: &SynthConfig, train: &TrainConfig) -> Result<ExperimentReport> {
    let trials = run_cdl_trials(cfg, train)?;
    Ok(cdl_report(cfg, train, &trials))
}

fn synth_config_json(cfg: &SynthConfig) -> Value {
    json!({
        "n": cfg.n,
        "m": cfg.m,
        "k": cfg.k,
        "t": cfg.t,
        "sparsities": [cfg.sparsities.s_z, cfg.sparsities.s_u, cfg.sparsities.s_v],
        "input_snr_db": cfg.input_snr_db.map_or(Value::Null, number),
        "trials": cfg.trials,
        "seed": cfg.seed,
    })
}

fn train_config_json(cfg: &TrainConfig) -> Value {
    // worker count is left out: it never changes results
    json!({
        "atoms": cfg.atoms,
        "sparsity": cfg.sparsity,
        "out_iter": cfg.out_iter,
        "in_iter": cfg.in_iter,
        "lambda": number(cfg.lambda),
        "seed": cfg.seed,
    })
}

// ------------------------------------------------------------ CSR sweep

/// Which dictionaries the sweep reconstructs with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CsrSource {
    /// Coupled and single-modality models trained on synthetic data.
    Learned,
    /// The ground-truth dictionaries; the baseline uses `[psi_c_h, psi_h]`.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsrOptions {
    /// Ground truth and training data. `m` is the LR size of the training
    /// data; test LR sizes come from `measurements`.
    pub synth: SynthConfig,
    pub measurements: Vec<usize>,
    /// Test signals per measurement count.
    pub test_trials: usize,
    /// Input SNR of the noisy variant, applied to the LR test signals.
    pub noisy_snr_db: Option<f64>,
    pub source: CsrSource,
    /// Learn the models from full-resolution training pairs (`x_h` as
    /// the LR input) instead of LR data with `synth.m` rows.
    pub train_on_hr: bool,
}

impl Default for CsrOptions {
    fn default() -> Self {
        Self {
            synth: SynthConfig {
                k: 256,
                trials: 1,
                ..SynthConfig::default()
            },
            measurements: (1..=32).map(|i| 2 * i).collect(),
            test_trials: 1000,
            noisy_snr_db: Some(5.0),
            source: CsrSource::Learned,
            train_on_hr: true,
        }
    }
}

impl CsrOptions {
    pub fn validate(&self) -> Result<()> {
        self.synth.validate()?;
        if self.test_trials == 0 {
            return Err(Error::InvalidConfig("test trials must be at least 1".into()));
        }
        if let Some(&m) = self.measurements.iter().find(|&&m| m == 0 || m > self.synth.n) {
            return Err(Error::InvalidConfig(format!(
                "measurement count {m} outside [1, {}]",
                self.synth.n
            )));
        }
        if self.noisy_snr_db.is_some_and(f64::is_nan) {
            return Err(Error::InvalidConfig("noisy SNR is NaN".into()));
        }
        Ok(())
    }
}

/// HR-side dictionaries the sweep projects to each measurement count.
#[derive(Debug, Clone)]
pub struct CsrModels {
    /// Only the HR and guidance blocks are used.
    pub coupled: CoupledDictionarySet,
    /// Only `hr` is used.
    pub single: SingleModalityDictionaries,
    pub coupled_trace: Option<TrainingTrace>,
    pub single_trace: Option<TrainingTrace>,
}

impl CsrModels {
    pub fn from_truth(gt: &GroundTruth) -> Self {
        Self {
            coupled: gt.dset.clone(),
            single: SingleModalityDictionaries::from_coupled(&gt.dset),
            coupled_trace: None,
            single_trace: None,
        }
    }

    /// Trains the coupled model and the single-modality baseline on data
    /// synthesized from `gt` with `train.seed`-derived initializations.
    /// The baseline uses the same atom count per part (2K in total), the
    /// budget `s_z + s_u` and the same number of coding passes. With
    /// `on_hr` the LR training input is `x_h` itself.
    pub fn train(gt: &GroundTruth, sparsities: Sparsities, train: &TrainConfig, on_hr: bool) -> Result<Self> {
        let mut batch = synthesize(gt)?;
        if on_hr {
            batch = TrainingBatch::new(batch.x_h.clone(), batch.x_h, batch.y)?;
        }
        with_workers(train.workers, || {
            let (coupled, coupled_trace) = train_in_current_pool(&batch, train)?;
            let single_cfg = TrainConfig {
                sparsity: sparsities.s_z + sparsities.s_u,
                seed: derive_seed(train.seed, 1),
                ..train.clone()
            };
            let (single, single_trace) = learn_single_in_current_pool(&batch.x_l, &batch.x_h, &single_cfg)?;
            Ok(Self {
                coupled,
                single,
                coupled_trace: Some(coupled_trace),
                single_trace: Some(single_trace),
            })
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CsrArm {
    WithSideInfo,
    WithoutSideInfo,
}

impl CsrArm {
    pub fn name(self) -> &'static str {
        match self {
            CsrArm::WithSideInfo => "with_side_info",
            CsrArm::WithoutSideInfo => "without_side_info",
        }
    }
}

/// Averages over the test signals of one `(M, noise, arm)` cell.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CsrPoint {
    pub m: usize,
    pub input_snr_db: Option<f64>,
    pub arm: CsrArm,
    pub mean_snr_db: f64,
    pub mean_rmse: f64,
}

fn per_column_scores(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<(f64, f64)> {
    let mut snr = Vec::with_capacity(truth.ncols());
    let mut rmse = Vec::with_capacity(truth.ncols());
    for (t, e) in truth.column_iter().zip(est.column_iter()) {
        snr.push(snr_db(t.as_slice(), e.as_slice())?);
        rmse.push(((t - e).norm_squared() / t.len() as f64).sqrt());
    }
    Ok((mean(snr.into_iter()), mean(rmse.into_iter())))
}

/// For each `M`: a fresh row selector and fresh test codes, LR test
/// signals `A x_h`, LR dictionaries `A` times the HR dictionaries of
/// `models`, then both arms with and without noise on the LR signals.
pub fn run_csr_sweep(opts: &CsrOptions, gt: &GroundTruth, models: &CsrModels, workers: usize) -> Result<Vec<CsrPoint>> {
    opts.validate()?;
    let s = opts.synth.sparsities;
    let cells: Vec<Result<Vec<CsrPoint>>> = with_workers(workers, || {
        opts.measurements
            .par_iter()
            .map(|&m| csr_cell(opts, gt, models, m, s))
            .collect()
    });
    let mut out = Vec::new();
    for cell in cells {
        out.extend(cell?);
    }
    Ok(out)
}

fn csr_cell(
    opts: &CsrOptions,
    gt: &GroundTruth,
    models: &CsrModels,
    m: usize,
    s: Sparsities,
) -> Result<Vec<CsrPoint>> {
    let cell_seed = derive_seed(opts.synth.seed, 1_000_000 + m as u64);
    let mut rng = seeded(cell_seed);
    let selector = RowSelector::random(opts.synth.n, m, &mut rng);
    let codes = random_codes(opts.synth.k, opts.test_trials, s, &mut rng);
    let test = synthesize_from(
        &CoupledDictionarySet::new(
            selector.apply(&gt.dset.psi_c_h),
            selector.apply(&gt.dset.psi_h),
            gt.dset.psi_c_h.clone(),
            gt.dset.psi_h.clone(),
            gt.dset.phi_c.clone(),
            gt.dset.phi.clone(),
        )?,
        &codes,
    )?;
    let c = &models.coupled;
    let coupled = CoupledDictionarySet::new(
        selector.apply(&c.psi_c_h),
        selector.apply(&c.psi_h),
        c.psi_c_h.clone(),
        c.psi_h.clone(),
        c.phi_c.clone(),
        c.phi.clone(),
    )?;
    let single = SingleModalityDictionaries::new(selector.apply(&models.single.hr), models.single.hr.clone())?;
    let with_budget = s.total().min(m + opts.synth.n);
    let without_budget = (s.s_z + s.s_u).min(m);

    let mut noise_levels = vec![None];
    if let Some(snr) = opts.noisy_snr_db {
        noise_levels.push(Some(snr));
    }
    let mut points = Vec::new();
    for level in noise_levels {
        let x_l = match level {
            Some(snr) => add_awgn(&test.x_l, snr, derive_seed(cell_seed, 1))?,
            None => test.x_l.clone(),
        };
        let with = super_resolve_patches(&x_l, &test.y, &coupled, &Solver::Omp, with_budget)?;
        let without = super_resolve_patches_single(&x_l, &single, &Solver::Omp, without_budget)?;
        for (arm, est) in [(CsrArm::WithSideInfo, with), (CsrArm::WithoutSideInfo, without)] {
            let (mean_snr_db, mean_rmse) = per_column_scores(&test.x_h, &est)?;
            points.push(CsrPoint {
                m,
                input_snr_db: level,
                arm,
                mean_snr_db,
                mean_rmse,
            });
        }
    }
    Ok(points)
}

/// Looks up one cell of a sweep.
pub fn find_point(points: &[CsrPoint], m: usize, noisy: bool, arm: CsrArm) -> Option<&CsrPoint> {
    points
        .iter()
        .find(|p| p.m == m && p.input_snr_db.is_some() == noisy && p.arm == arm)
}

pub fn csr_report(opts: &CsrOptions, train: &TrainConfig, models: &CsrModels, points: &[CsrPoint]) -> ExperimentReport {
    let per_setting = points
        .iter()
        .map(|p| SettingResult {
            params: object([
                ("m", json!(p.m)),
                ("input_snr_db", p.input_snr_db.map_or(Value::Null, number)),
                ("arm", json!(p.arm.name())),
            ]),
            metrics: object([
                ("mean_snr_db", number(p.mean_snr_db)),
                ("mean_rmse", number(p.mean_rmse)),
            ]),
        })
        .collect();
    let mut aggregates = serde_json::Map::new();
    if let Some(t) = &models.coupled_trace {
        aggregates.insert("coupled_final_rmse_x".into(), number(t.final_rmse_x));
        aggregates.insert("coupled_final_rmse_y".into(), number(t.final_rmse_y));
    }
    if let Some(t) = &models.single_trace {
        aggregates.insert("single_final_rmse".into(), number(t.final_rmse_x));
    }
    let crossover = opts
        .measurements
        .iter()
        .copied()
        .filter(|&m| {
            match (
                find_point(points, m, false, CsrArm::WithSideInfo),
                find_point(points, m, false, CsrArm::WithoutSideInfo),
            ) {
                (Some(a), Some(b)) => a.mean_snr_db > b.mean_snr_db,
                _ => false,
            }
        })
        .collect::<Vec<_>>();
    aggregates.insert("side_info_wins_at_m".into(), json!(crossover));
    ExperimentReport {
        config: json!({
            "synth": synth_config_json(&opts.synth),
            "train": train_config_json(train),
            "measurements": opts.measurements,
            "test_trials": opts.test_trials,
            "train_on_hr": opts.train_on_hr,
            "noisy_snr_db": opts.noisy_snr_db.map_or(Value::Null, number),
            "source": match opts.source {
                CsrSource::Learned => "learned",
                CsrSource::GroundTruth => "ground_truth",
            },
        }),
        per_setting,
        aggregates,
    }
}

/// Ground truth, models (trained or true per `opts.source`) and the sweep.
pub fn run_csr_experiment(opts: &CsrOptions, train: &TrainConfig) -> Result<(CsrModels, Vec<CsrPoint>)> {
    opts.validate()?;
    let gt = gen_ground_truth(&opts.synth)?;
    let models = match opts.source {
        CsrSource::Learned => {
            if train.atoms != opts.synth.k {
                return Err(Error::InvalidConfig(format!(
                    "training uses K={} atoms but the ground truth has K={}",
                    train.atoms, opts.synth.k
                )));
            }
            CsrModels::train(&gt, opts.synth.sparsities, train, opts.train_on_hr)?
        }
        CsrSource::GroundTruth => CsrModels::from_truth(&gt),
    };
    let points = run_csr_sweep(opts, &gt, &models, train.workers)?;
    Ok((models, points))
}
