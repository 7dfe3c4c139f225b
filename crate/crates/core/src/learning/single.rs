//! Single-modality baseline: one LR/HR dictionary pair with no guidance.

use std::collections::HashSet;
use std::time::Instant;

use nalgebra::DMatrix;

use super::ksvd::{replace_unused, update_atom, Branch};
use super::ridge::ridge_from_sparse;
use super::{replacement_floor, rmse_of, with_workers, Phase, TrainingTrace};
use crate::error::{Error, Result};
use crate::model::{CoupledDictionarySet, TrainConfig};
use crate::rng::{gaussian_matrix, normalize_columns, seeded};
use crate::sparse::AtomDictionary;

/// LR and HR dictionaries of a target-only model. Column `j` of `lr`
/// and of `hr` describe the same atom at the two resolutions.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleModalityDictionaries {
    pub lr: DMatrix<f64>,
    pub hr: DMatrix<f64>,
}

impl SingleModalityDictionaries {
    pub fn new(lr: DMatrix<f64>, hr: DMatrix<f64>) -> Result<Self> {
        if lr.ncols() != hr.ncols() || lr.nrows() > hr.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "LR {}x{} and HR {}x{}",
                lr.nrows(),
                lr.ncols(),
                hr.nrows(),
                hr.ncols()
            )));
        }
        Ok(Self { lr, hr })
    }

    /// Drops the guidance branch of a coupled set: `[psi_c_l, psi_l]`
    /// paired with `[psi_c_h, psi_h]`.
    pub fn from_coupled(set: &CoupledDictionarySet) -> Self {
        let concat = |a: &DMatrix<f64>, b: &DMatrix<f64>| {
            let mut out = DMatrix::zeros(a.nrows(), a.ncols() + b.ncols());
            out.columns_mut(0, a.ncols()).copy_from(a);
            out.columns_mut(a.ncols(), b.ncols()).copy_from(b);
            out
        };
        Self {
            lr: concat(&set.psi_c_l, &set.psi_l),
            hr: concat(&set.psi_c_h, &set.psi_h),
        }
    }

    pub fn atoms(&self) -> usize {
        self.lr.ncols()
    }
}

/// K-SVD on the LR patches alone with `2 * cfg.atoms` atoms and the same
/// number of coding passes as coupled training, then the ridge HR solve.
pub fn learn_single_modality(
    x_l: &DMatrix<f64>,
    x_h: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<(SingleModalityDictionaries, TrainingTrace)> {
    with_workers(cfg.workers, || learn_single_in_current_pool(x_l, x_h, cfg))
}

pub(crate) fn learn_single_in_current_pool(
    x_l: &DMatrix<f64>,
    x_h: &DMatrix<f64>,
    cfg: &TrainConfig,
) -> Result<(SingleModalityDictionaries, TrainingTrace)> {
    cfg.validate()?;
    if x_l.ncols() != x_h.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "{} LR samples but {} HR samples",
            x_l.ncols(),
            x_h.ncols()
        )));
    }
    if x_l.ncols() == 0 {
        return Err(Error::EmptyBatch);
    }
    let atoms = 2 * cfg.atoms;
    let mut rng = seeded(cfg.seed);
    let mut dict = gaussian_matrix(x_l.nrows(), atoms, &mut rng);
    normalize_columns(&mut dict);
    let budget = cfg.sparsity.min(atoms).min(x_l.nrows());
    let floor_sq = replacement_floor(&[x_l]);

    let mut trace = TrainingTrace::default();
    let mut columns: Vec<Vec<(usize, f64)>> = Vec::new();
    let passes = cfg.out_iter * 2 * cfg.in_iter;
    for _ in 0..passes {
        let started = Instant::now();
        let ad = AtomDictionary::new(dict.clone())?;
        columns = ad
            .omp_batch(x_l, budget)?
            .into_iter()
            .map(|s| s.support.into_iter().zip(s.coefs).collect())
            .collect();
        trace.coding_seconds += started.elapsed().as_secs_f64();

        let started = Instant::now();
        let mut residual = residual_of(x_l, &dict, &columns);
        trace.phase.push(Phase::Unique);
        trace.rmse_x.push(rmse_of(&residual));
        trace.rmse_y.push(0.0);
        ksvd_pass(&mut dict, &mut residual, &mut columns, floor_sq);
        trace.unique_update_seconds += started.elapsed().as_secs_f64();
    }
    trace.final_rmse_x = rmse_of(&residual_of(x_l, &dict, &columns));
    let started = Instant::now();
    let hr = ridge_from_sparse(x_h, &columns, atoms, cfg.lambda)?;
    trace.hr_solve_seconds = started.elapsed().as_secs_f64();
    Ok((SingleModalityDictionaries { lr: dict, hr }, trace))
}

fn residual_of(x: &DMatrix<f64>, dict: &DMatrix<f64>, columns: &[Vec<(usize, f64)>]) -> DMatrix<f64> {
    let mut r = x.clone();
    for (i, col) in columns.iter().enumerate() {
        let mut ri = r.column_mut(i);
        for &(j, c) in col {
            ri.axpy(-c, &dict.column(j), 1.0);
        }
    }
    r
}

fn ksvd_pass(
    dict: &mut DMatrix<f64>,
    residual: &mut DMatrix<f64>,
    columns: &mut [Vec<(usize, f64)>],
    floor_sq: f64,
) {
    let mut users = vec![Vec::new(); dict.ncols()];
    for (i, col) in columns.iter().enumerate() {
        for (slot, &(j, c)) in col.iter().enumerate() {
            if c != 0.0 {
                users[j].push((i, slot));
            }
        }
    }
    let mut claimed = HashSet::new();
    for (k, uses) in users.iter().enumerate() {
        let mut branches = [Branch {
            dict: &mut *dict,
            residual: &mut *residual,
        }];
        if uses.is_empty() {
            replace_unused(&mut branches, k, &mut claimed, floor_sq);
            continue;
        }
        let samples: Vec<usize> = uses.iter().map(|&(i, _)| i).collect();
        let mut coefs: Vec<f64> = uses.iter().map(|&(i, s)| columns[i][s].1).collect();
        update_atom(&mut branches, k, &samples, &mut coefs);
        for (&(i, s), c) in uses.iter().zip(coefs) {
            columns[i][s].1 = c;
        }
    }
}
