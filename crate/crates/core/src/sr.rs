//! Coupled super-resolution: joint coding of an LR patch with its
//! guidance patch, HR synthesis from the common and target-unique parts,
//! and the whole-image pipeline built around it.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imaging::{bicubic_resize, extract_patches, reassemble, Image, PatchGrid};
use crate::learning::SingleModalityDictionaries;
use crate::model::{CoupledDictionarySet, JointSparseCode};
use crate::sparse::{stack_joint_dictionary, AtomDictionary, IstaOptions, JointDictionary};

/// Sparse solver used at reconstruction time.
#[derive(Debug, Clone, PartialEq)]
pub enum Solver {
    /// Greedy l0 coding with the configured sparsity budget.
    Omp,
    /// l1-regularized coding; the sparsity budget is ignored.
    Ista(IstaOptions),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SrConfig {
    pub scale: usize,
    pub patch_side: usize,
    /// Pixels between adjacent patch origins.
    pub stride: usize,
    pub sparsity: usize,
    pub solver: Solver,
}

impl Default for SrConfig {
    fn default() -> Self {
        Self {
            scale: 4,
            patch_side: 8,
            stride: 1,
            sparsity: 8,
            solver: Solver::Omp,
        }
    }
}

impl SrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale < 2 {
            return Err(Error::InvalidConfig(format!("scale must be at least 2, got {}", self.scale)));
        }
        if self.patch_side == 0 {
            return Err(Error::InvalidConfig("patch side must be positive".into()));
        }
        if self.stride == 0 || self.stride > self.patch_side {
            return Err(Error::InvalidConfig(format!(
                "stride {} outside [1, {}]",
                self.stride, self.patch_side
            )));
        }
        if self.sparsity == 0 {
            return Err(Error::InvalidConfig("sparsity must be at least 1".into()));
        }
        if let Solver::Ista(opts) = &self.solver {
            if !(opts.lambda > 0.0) {
                return Err(Error::NonPositiveLambda(opts.lambda));
            }
        }
        Ok(())
    }
}

fn joint_dictionary(dset: &CoupledDictionarySet) -> Result<JointDictionary> {
    stack_joint_dictionary(&dset.psi_c_l, &dset.psi_l, &dset.phi_c, &dset.phi)
}

/// `psi_c_h z + psi_h u`.
pub fn reconstruct_hr(dset: &CoupledDictionarySet, code: &JointSparseCode) -> DVector<f64> {
    let mut out = DVector::zeros(dset.dims.n);
    for &(j, c) in &code.z.entries {
        out.axpy(c, &dset.psi_c_h.column(j), 1.0);
    }
    for &(j, c) in &code.u.entries {
        out.axpy(c, &dset.psi_h.column(j), 1.0);
    }
    out
}

/// HR estimate of one DC-free patch pair.
pub fn super_resolve_patch(
    x_l: &DVector<f64>,
    y: &DVector<f64>,
    dset: &CoupledDictionarySet,
    s: usize,
) -> Result<DVector<f64>> {
    let x = DMatrix::from_column_slice(x_l.len(), 1, x_l.as_slice());
    let g = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let out = super_resolve_patches(&x, &g, dset, &Solver::Omp, s)?;
    Ok(out.column(0).into_owned())
}

/// HR estimates of registered columns of `x_l` and `y`; parallel over
/// columns.
pub fn super_resolve_patches(
    x_l: &DMatrix<f64>,
    y: &DMatrix<f64>,
    dset: &CoupledDictionarySet,
    solver: &Solver,
    s: usize,
) -> Result<DMatrix<f64>> {
    let jd = joint_dictionary(dset)?;
    let k = dset.dims.k;
    let codes: Vec<JointSparseCode> = match solver {
        Solver::Omp => jd
            .omp_batch(x_l, y, s)?
            .iter()
            .map(|sol| jd.split(sol))
            .collect(),
        Solver::Ista(opts) => {
            let m = dset.dims.m;
            let mut stacked = DMatrix::zeros(m + dset.dims.n, x_l.ncols());
            stacked.rows_mut(0, m).copy_from(x_l);
            stacked.rows_mut(m, dset.dims.n).copy_from(y);
            let all: Vec<usize> = (0..3 * k).collect();
            let ad = jd.atom_dictionary();
            ad.lipschitz();
            (0..stacked.ncols())
                .into_par_iter()
                .map(|i| {
                    let sol = ad.ista(stacked.column(i).as_slice(), opts)?;
                    Ok(JointSparseCode::from_stacked(k, &all, sol.coefs.as_slice()))
                })
                .collect::<Result<_>>()?
        }
    };
    let mut out = DMatrix::zeros(dset.dims.n, codes.len());
    for (i, code) in codes.iter().enumerate() {
        out.column_mut(i).copy_from(&reconstruct_hr(dset, code));
    }
    Ok(out)
}

/// HR estimates from LR columns alone with a single-modality dictionary
/// pair.
pub fn super_resolve_patches_single(
    x_l: &DMatrix<f64>,
    dicts: &SingleModalityDictionaries,
    solver: &Solver,
    s: usize,
) -> Result<DMatrix<f64>> {
    if x_l.nrows() != dicts.lr.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "LR patches have {} rows, dictionary has {}",
            x_l.nrows(),
            dicts.lr.nrows()
        )));
    }
    let ad = AtomDictionary::new(dicts.lr.clone())?;
    let coefs: Vec<Vec<(usize, f64)>> = match solver {
        Solver::Omp => ad
            .omp_batch(x_l, s.min(ad.max_budget()))?
            .into_iter()
            .map(|sol| sol.support.into_iter().zip(sol.coefs).collect())
            .collect(),
        Solver::Ista(opts) => {
            ad.lipschitz();
            (0..x_l.ncols())
                .into_par_iter()
                .map(|i| {
                    let sol = ad.ista(x_l.column(i).as_slice(), opts)?;
                    Ok(sol
                        .coefs
                        .iter()
                        .enumerate()
                        .filter(|(_, c)| **c != 0.0)
                        .map(|(j, c)| (j, *c))
                        .collect())
                })
                .collect::<Result<_>>()?
        }
    };
    let mut out = DMatrix::zeros(dicts.hr.nrows(), coefs.len());
    for (i, col) in coefs.iter().enumerate() {
        let mut dst = out.column_mut(i);
        for &(j, c) in col {
            dst.axpy(c, &dicts.hr.column(j), 1.0);
        }
    }
    Ok(out)
}

fn check_lr_dims(lr: &Image, width: usize, height: usize, scale: usize) -> Result<()> {
    if width.div_ceil(scale) != lr.width() || height.div_ceil(scale) != lr.height() {
        return Err(Error::DimensionMismatch(format!(
            "LR image {}x{} does not match {width}x{height} at scale {scale}",
            lr.width(),
            lr.height()
        )));
    }
    Ok(())
}

fn check_patch_size(cfg: &SrConfig, n: usize, m: usize) -> Result<()> {
    let side_sq = cfg.patch_side * cfg.patch_side;
    if n != side_sq || m != side_sq {
        return Err(Error::DimensionMismatch(format!(
            "dictionary rows (M={m}, N={n}) do not match {0}x{0} patches",
            cfg.patch_side
        )));
    }
    Ok(())
}

/// Replaces the patch values of `lr_grid` with HR estimates and averages
/// them back into an image; the DC of each patch is the upscaled LR one.
fn assemble(mut lr_grid: PatchGrid, hr_patches: DMatrix<f64>, width: usize, height: usize) -> Result<Image> {
    lr_grid.patches = hr_patches;
    reassemble(&lr_grid, width, height)
}

/// Upscales `lr` to the guidance size and refines it patch by patch with
/// the coupled dictionaries.
pub fn super_resolve_image(
    lr: &Image,
    guide: &Image,
    dset: &CoupledDictionarySet,
    cfg: &SrConfig,
) -> Result<Image> {
    cfg.validate()?;
    let (width, height) = guide.dims();
    check_lr_dims(lr, width, height, cfg.scale)?;
    check_patch_size(cfg, dset.dims.n, dset.dims.m)?;
    let up = bicubic_resize(lr, width, height)?;
    let lr_grid = extract_patches(&up, cfg.patch_side, cfg.stride)?;
    let guide_grid = extract_patches(guide, cfg.patch_side, cfg.stride)?;
    let hr = super_resolve_patches(&lr_grid.patches, &guide_grid.patches, dset, &cfg.solver, cfg.sparsity)?;
    assemble(lr_grid, hr, width, height)
}

/// The same pipeline without guidance, coding over a single-modality
/// dictionary pair. The output size is `ceil(LR size * scale)` unless
/// `hr_dims` gives it explicitly.
pub fn super_resolve_without_side_info(
    lr: &Image,
    dicts: &SingleModalityDictionaries,
    cfg: &SrConfig,
    hr_dims: Option<(usize, usize)>,
) -> Result<Image> {
    cfg.validate()?;
    let (width, height) = hr_dims.unwrap_or((lr.width() * cfg.scale, lr.height() * cfg.scale));
    check_lr_dims(lr, width, height, cfg.scale)?;
    check_patch_size(cfg, dicts.hr.nrows(), dicts.lr.nrows())?;
    let up = bicubic_resize(lr, width, height)?;
    let lr_grid = extract_patches(&up, cfg.patch_side, cfg.stride)?;
    let hr = super_resolve_patches_single(&lr_grid.patches, dicts, &cfg.solver, cfg.sparsity)?;
    assemble(lr_grid, hr, width, height)
}
