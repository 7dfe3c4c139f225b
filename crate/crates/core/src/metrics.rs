//! Reconstruction quality and dictionary recovery measures.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::imaging::Image;

/// Default atom matching distance.
pub const DEFAULT_EPSILON: f64 = 0.01;

/// Distance bound under which a learned atom counts as a true atom.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecoveryThreshold {
    epsilon: f64,
}

impl RecoveryThreshold {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "recovery threshold must be positive, got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

impl Default for RecoveryThreshold {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

fn same_shape(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// `sqrt(||x - xhat||_F^2 / #elements)`.
pub fn rmse(x: &DMatrix<f64>, xhat: &DMatrix<f64>) -> Result<f64> {
    same_shape(x.shape(), xhat.shape(), "rmse")?;
    if x.is_empty() {
        return Ok(0.0);
    }
    Ok(((x - xhat).norm_squared() / x.len() as f64).sqrt())
}

/// Fraction of true atoms lying within `threshold` of some learned atom,
/// up to sign. A learned atom may match several true atoms.
pub fn atom_recovery_ratio(
    d_true: &DMatrix<f64>,
    d_learned: &DMatrix<f64>,
    threshold: RecoveryThreshold,
) -> Result<f64> {
    if d_true.nrows() != d_learned.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "atom lengths {} and {}",
            d_true.nrows(),
            d_learned.nrows()
        )));
    }
    if d_true.ncols() == 0 {
        return Ok(0.0);
    }
    let eps_sq = threshold.epsilon * threshold.epsilon;
    let learned_sq: Vec<f64> = d_learned.column_iter().map(|c| c.norm_squared()).collect();
    // |d - s*dh|^2 = |d|^2 + |dh|^2 - 2 |<d, dh>|  at the better sign
    let cross = d_true.tr_mul(d_learned);
    let mut recovered = 0usize;
    for (i, d) in d_true.column_iter().enumerate() {
        let d_sq = d.norm_squared();
        let hit = (0..d_learned.ncols()).any(|j| {
            let dist_sq = d_sq + learned_sq[j] - 2.0 * cross[(i, j)].abs();
            dist_sq < eps_sq
        });
        if hit {
            recovered += 1;
        }
    }
    Ok(recovered as f64 / d_true.ncols() as f64)
}

/// Fraction of true atoms with `1 - |cos(d, dh)| < epsilon` for some
/// learned atom, the matching rule of the reference K-SVD toolbox. Kept
/// as a diagnostic next to [`atom_recovery_ratio`].
pub fn atom_correlation_ratio(
    d_true: &DMatrix<f64>,
    d_learned: &DMatrix<f64>,
    threshold: RecoveryThreshold,
) -> Result<f64> {
    if d_true.nrows() != d_learned.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "atom lengths {} and {}",
            d_true.nrows(),
            d_learned.nrows()
        )));
    }
    if d_true.ncols() == 0 {
        return Ok(0.0);
    }
    let learned: Vec<f64> = d_learned.column_iter().map(|c| c.norm()).collect();
    let cross = d_true.tr_mul(d_learned);
    let recovered = d_true
        .column_iter()
        .enumerate()
        .filter(|(i, d)| {
            let norm = d.norm();
            (0..d_learned.ncols()).any(|j| {
                let denom = norm * learned[j];
                denom > 0.0 && 1.0 - cross[(*i, j)].abs() / denom < threshold.epsilon
            })
        })
        .count();
    Ok(recovered as f64 / d_true.ncols() as f64)
}

/// `10 log10(peak^2 / MSE)`; `+inf` for identical inputs.
pub fn psnr(reference: &Image, test: &Image, peak: f64) -> Result<f64> {
    same_shape(reference.dims(), test.dims(), "psnr")?;
    psnr_slices(reference.pixels(), test.pixels(), peak)
}

pub fn psnr_slices(reference: &[f64], test: &[f64], peak: f64) -> Result<f64> {
    if reference.len() != test.len() {
        return Err(Error::DimensionMismatch(format!(
            "psnr: {} vs {} values",
            reference.len(),
            test.len()
        )));
    }
    if reference.is_empty() {
        return Err(Error::DimensionMismatch("psnr of empty input".into()));
    }
    let mse = reference
        .iter()
        .zip(test)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (peak * peak / mse).log10())
}

/// `10 log10(||ref||^2 / ||ref - est||^2)`; `+inf` for identical inputs.
pub fn snr_db(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::DimensionMismatch(format!(
            "snr: {} vs {} values",
            reference.len(),
            estimate.len()
        )));
    }
    let signal: f64 = reference.iter().map(|v| v * v).sum();
    let error: f64 = reference
        .iter()
        .zip(estimate)
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    if error == 0.0 {
        return Ok(f64::INFINITY);
    }
    if signal == 0.0 {
        return Err(Error::ZeroPower);
    }
    Ok(10.0 * (signal / error).log10())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW];
    let centre = (SSIM_WINDOW / 2) as f64;
    for (i, v) in w.iter_mut().enumerate() {
        let d = i as f64 - centre;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean SSIM over all 11x11 windows inside the image, dynamic range 1.
pub fn ssim(reference: &Image, test: &Image) -> Result<f64> {
    same_shape(reference.dims(), test.dims(), "ssim")?;
    let (w, h) = reference.dims();
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::DimensionMismatch(format!(
            "ssim needs at least {SSIM_WINDOW}x{SSIM_WINDOW} pixels, got {w}x{h}"
        )));
    }
    let g = gaussian_window();
    let a = reference.pixels();
    let b = test.pixels();
    let mut total = 0.0;
    let mut count = 0usize;
    for r0 in 0..=h - SSIM_WINDOW {
        for c0 in 0..=w - SSIM_WINDOW {
            let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for (dr, gr) in g.iter().enumerate() {
                let row = (r0 + dr) * w + c0;
                for (dc, gc) in g.iter().enumerate() {
                    let wt = gr * gc;
                    let x = a[row + dc];
                    let y = b[row + dc];
                    ma += wt * x;
                    mb += wt * y;
                    saa += wt * x * x;
                    sbb += wt * y * y;
                    sab += wt * x * y;
                }
            }
            let va = saa - ma * ma;
            let vb = sbb - mb * mb;
            let cov = sab - ma * mb;
            let num = (2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2);
            let den = (ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}
