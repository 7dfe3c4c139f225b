//! Paired two-modality test images: random regions shared by both
//! modalities, independent per-region intensities, and texture present in
//! the second modality only.

use rand::Rng;

use crate::error::{Error, Result};
use crate::imaging::Image;
use crate::rng::seeded;

const MIN_SIDE: usize = 64;

/// Region index of every pixel (row-major): nearest of a set of random
/// sites, i.e. a Voronoi partition.
pub fn region_labels(width: usize, height: usize, seed: u64) -> Vec<usize> {
    let mut rng = seeded(seed);
    let count = 8 + width * height / 1024;
    let sites: Vec<(f64, f64)> = (0..count)
        .map(|_| (rng.random_range(0.0..height as f64), rng.random_range(0.0..width as f64)))
        .collect();
    let mut labels = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let (mut best, mut best_d) = (0, f64::INFINITY);
            for (i, &(sr, sc)) in sites.iter().enumerate() {
                let d = (r as f64 - sr).powi(2) + (c as f64 - sc).powi(2);
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            labels.push(best);
        }
    }
    labels
}

struct Stripes {
    amplitude: f64,
    angle: f64,
    period: f64,
}

/// Returns `(a, b)`: `a` is the target modality, `b` the guidance. Both
/// share the region map of [`region_labels`] with the same seed.
pub fn gen_paired_images(width: usize, height: usize, seed: u64) -> Result<(Image, Image)> {
    if width < MIN_SIDE || height < MIN_SIDE {
        return Err(Error::InvalidConfig(format!(
            "paired images need both sides >= {MIN_SIDE}, got {width}x{height}"
        )));
    }
    let labels = region_labels(width, height, seed);
    let regions = labels.iter().max().map_or(0, |m| m + 1);
    let mut rng = seeded(seed ^ 0x5EED_1A6E);
    let a_level: Vec<f64> = (0..regions).map(|_| rng.random_range(0.1..0.9)).collect();
    let b_level: Vec<f64> = (0..regions).map(|_| rng.random_range(0.1..0.9)).collect();
    let texture: Vec<Option<Stripes>> = (0..regions)
        .map(|_| {
            rng.random_bool(0.5).then(|| Stripes {
                amplitude: rng.random_range(0.05..0.1),
                angle: rng.random_range(0.0..std::f64::consts::PI),
                period: rng.random_range(4.0..8.0),
            })
        })
        .collect();

    let mut a = Vec::with_capacity(width * height);
    let mut b = Vec::with_capacity(width * height);
    for r in 0..height {
        for c in 0..width {
            let k = labels[r * width + c];
            a.push(a_level[k]);
            let t = texture[k].as_ref().map_or(0.0, |s| {
                let phase = (c as f64 * s.angle.cos() + r as f64 * s.angle.sin()) / s.period;
                s.amplitude * (std::f64::consts::TAU * phase).sin()
            });
            b.push((b_level[k] + t).clamp(0.0, 1.0));
        }
    }
    Ok((Image::new(width, height, a)?, Image::new(width, height, b)?))
}
