//! Grayscale images, file formats, bicubic resampling and patch handling.

use std::fs;
use std::io::Write;
use std::path::Path;

use nalgebra::DMatrix;
use rand::seq::index::sample;

use crate::error::{Error, Result};
use crate::model::TrainingBatch;
use crate::rng::seeded;

/// Row-major single-channel image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, pixels: Vec<f64>) -> Result<Self> {
        if width * height != pixels.len() {
            return Err(Error::DimensionMismatch(format!(
                "{width}x{height} image with {} pixels",
                pixels.len()
            )));
        }
        if pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("image pixels".into()));
        }
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// `(width, height)`.
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<f64> {
        self.pixels
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.pixels[row * self.width + col]
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(self.width, self.height, self.pixels.iter().map(|&v| f(v)).collect())
    }
}

// ---------------------------------------------------------------- formats

fn header_tokens(data: &[u8], count: usize) -> Result<(Vec<String>, usize)> {
    let mut tokens = Vec::with_capacity(count);
    let mut pos = 0;
    while tokens.len() < count {
        while pos < data.len() && data[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < data.len() && data[pos] == b'#' {
            while pos < data.len() && data[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < data.len() && !data[pos].is_ascii_whitespace() && data[pos] != b'#' {
            pos += 1;
        }
        if start == pos {
            return Err(Error::MalformedHeader("header ended early".into()));
        }
        tokens.push(String::from_utf8_lossy(&data[start..pos]).into_owned());
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= data.len() || !data[pos].is_ascii_whitespace() {
        return Err(Error::MalformedHeader("missing separator after header".into()));
    }
    Ok((tokens, pos + 1))
}

fn parse_dim(tok: &str, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| Error::MalformedHeader(format!("bad {what} '{tok}'")))
}

/// Decodes an 8-bit binary PGM (`P5`) or PPM (`P6`, converted to luma).
pub fn decode_netpbm(data: &[u8]) -> Result<Image> {
    let (tokens, start) = header_tokens(data, 4)?;
    let channels = match tokens[0].as_str() {
        "P5" => 1,
        "P6" => 3,
        other => return Err(Error::BadMagic {
            expected: "P5".into(),
            found: other.into(),
        }),
    };
    let width = parse_dim(&tokens[1], "width")?;
    let height = parse_dim(&tokens[2], "height")?;
    let maxval = parse_dim(&tokens[3], "maxval")?;
    if maxval != 255 {
        return Err(Error::UnsupportedFormat(format!(
            "maxval {maxval}; only 8-bit images with maxval 255 are supported"
        )));
    }
    let expected = width * height * channels;
    let raster = &data[start..];
    if raster.len() != expected {
        return Err(Error::Truncated {
            block: "raster".into(),
            expected,
            found: raster.len(),
        });
    }
    let pixels = if channels == 1 {
        raster.iter().map(|&v| v as f64 / 255.0).collect()
    } else {
        raster
            .chunks_exact(3)
            .map(|p| luma(p[0] as f64 / 255.0, p[1] as f64 / 255.0, p[2] as f64 / 255.0))
            .collect()
    };
    Image::new(width, height, pixels)
}

pub fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| quantize(v)));
    out
}

/// `[0,1] -> {0..255}`, round half up, clamped.
pub fn quantize(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

pub const MAT_MAGIC: &str = "MAT1";

pub fn decode_mat(data: &[u8]) -> Result<Image> {
    let nl = data
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::MalformedHeader("missing header line".into()))?;
    let line = std::str::from_utf8(&data[..nl])
        .map_err(|_| Error::MalformedHeader("header is not ASCII".into()))?;
    let parts: Vec<&str> = line.split_whitespace().collect();
    if parts.first() != Some(&MAT_MAGIC) {
        return Err(Error::BadMagic {
            expected: MAT_MAGIC.into(),
            found: parts.first().unwrap_or(&"").to_string(),
        });
    }
    if parts.len() != 3 {
        return Err(Error::MalformedHeader(format!("expected 'MAT1 rows cols', got '{line}'")));
    }
    let rows = parse_dim(parts[1], "rows")?;
    let cols = parse_dim(parts[2], "cols")?;
    let payload = &data[nl + 1..];
    let expected = rows * cols * 8;
    if payload.len() != expected {
        return Err(Error::Truncated {
            block: "matrix".into(),
            expected,
            found: payload.len(),
        });
    }
    let pixels = payload
        .chunks_exact(8)
        .map(|b| f64::from_le_bytes(b.try_into().expect("8-byte chunk")))
        .collect();
    Image::new(cols, rows, pixels)
}

pub fn encode_mat(img: &Image) -> Vec<u8> {
    let mut out = format!("{MAT_MAGIC} {} {}\n", img.height, img.width).into_bytes();
    for v in &img.pixels {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

/// Reads a PGM/PPM or MAT1 file, chosen by its magic bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let data = fs::read(path)?;
    if data.starts_with(MAT_MAGIC.as_bytes()) {
        decode_mat(&data)
    } else if data.starts_with(b"P") {
        decode_netpbm(&data)
    } else {
        let head = String::from_utf8_lossy(&data[..data.len().min(4)]).into_owned();
        Err(Error::UnsupportedFormat(format!("unknown magic '{head}'")))
    }
}

/// Writes PGM for `.pgm` paths and MAT1 for `.mat`/`.mat1` paths.
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let ext = path
        .extension()
        .and_then(|e| e.to_str())
        .map(str::to_ascii_lowercase)
        .unwrap_or_default();
    let bytes = match ext.as_str() {
        "pgm" => encode_pgm(img),
        "mat" | "mat1" => encode_mat(img),
        _ => {
            return Err(Error::UnsupportedFormat(format!(
                "cannot infer image format from '{}'",
                path.display()
            )))
        }
    };
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

// ------------------------------------------------------------- resampling

fn luma(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

pub fn rgb_to_gray(r: &Image, g: &Image, b: &Image) -> Result<Image> {
    if r.dims() != g.dims() || r.dims() != b.dims() {
        return Err(Error::DimensionMismatch(format!(
            "channel sizes {:?}, {:?}, {:?}",
            r.dims(),
            g.dims(),
            b.dims()
        )));
    }
    let px = r
        .pixels
        .iter()
        .zip(&g.pixels)
        .zip(&b.pixels)
        .map(|((&r, &g), &b)| luma(r, g, b))
        .collect();
    Image::new(r.width, r.height, px)
}

/// Cubic convolution kernel with `a = -0.5`.
fn cubic(x: f64) -> f64 {
    let ax = x.abs();
    let ax2 = ax * ax;
    let ax3 = ax2 * ax;
    if ax <= 1.0 {
        1.5 * ax3 - 2.5 * ax2 + 1.0
    } else if ax <= 2.0 {
        -0.5 * ax3 + 2.5 * ax2 - 4.0 * ax + 2.0
    } else {
        0.0
    }
}

/// Per output sample: source indices (clamped) and normalized weights.
fn resample_weights(in_len: usize, out_len: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = out_len as f64 / in_len as f64;
    let (kscale, width) = if scale < 1.0 {
        (scale, 4.0 / scale)
    } else {
        (1.0, 4.0)
    };
    let taps = width.ceil() as isize + 2;
    (0..out_len)
        .map(|x| {
            let u = (x as f64 + 0.5) / scale - 0.5;
            let left = (u - width / 2.0).floor() as isize;
            let mut w: Vec<(usize, f64)> = Vec::with_capacity(taps as usize);
            for p in 0..taps {
                let j = left + p;
                let wt = kscale * cubic(kscale * (u - j as f64));
                if wt != 0.0 {
                    let idx = j.clamp(0, in_len as isize - 1) as usize;
                    w.push((idx, wt));
                }
            }
            let total: f64 = w.iter().map(|(_, v)| v).sum();
            for entry in &mut w {
                entry.1 /= total;
            }
            w
        })
        .collect()
}

/// Separable bicubic resize; antialiased when shrinking, output clamped
/// to `[0, 1]`.
pub fn bicubic_resize(img: &Image, out_width: usize, out_height: usize) -> Result<Image> {
    if out_width == 0 || out_height == 0 || img.width == 0 || img.height == 0 {
        return Err(Error::DimensionMismatch(format!(
            "cannot resize {}x{} to {out_width}x{out_height}",
            img.width, img.height
        )));
    }
    let wx = resample_weights(img.width, out_width);
    let wy = resample_weights(img.height, out_height);
    let mut horiz = vec![0.0; out_width * img.height];
    for r in 0..img.height {
        let src = &img.pixels[r * img.width..(r + 1) * img.width];
        for (c, taps) in wx.iter().enumerate() {
            horiz[r * out_width + c] = taps.iter().map(|&(j, w)| w * src[j]).sum();
        }
    }
    let mut out = vec![0.0; out_width * out_height];
    for (r, taps) in wy.iter().enumerate() {
        for c in 0..out_width {
            let v: f64 = taps.iter().map(|&(j, w)| w * horiz[j * out_width + c]).sum();
            out[r * out_width + c] = v.clamp(0.0, 1.0);
        }
    }
    Image::new(out_width, out_height, out)
}

/// HR size for an integer scale factor.
pub fn scaled_dims(width: usize, height: usize, scale: f64) -> (usize, usize) {
    (
        (width as f64 * scale).ceil() as usize,
        (height as f64 * scale).ceil() as usize,
    )
}

/// Bicubic downscale by `scale`, the LR degradation operator.
pub fn degrade(img: &Image, scale: usize) -> Result<Image> {
    let w = img.width.div_ceil(scale);
    let h = img.height.div_ceil(scale);
    bicubic_resize(img, w, h)
}

// ---------------------------------------------------------------- patches

/// Mean-removed patches with their origins and DC values.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub patch_side: usize,
    /// `(row, col)` of each patch's top-left pixel.
    pub origins: Vec<(usize, usize)>,
    /// `side^2 x P`; entry `c * side + r` is pixel `(r, c)` of the patch.
    pub patches: DMatrix<f64>,
    pub dc_means: Vec<f64>,
}

/// `0, stride, 2*stride, ...` plus a final origin flush with the edge.
pub fn axis_origins(len: usize, side: usize, stride: usize) -> Vec<usize> {
    let last = len - side;
    let mut out: Vec<usize> = (0..=last).step_by(stride).collect();
    if out.last() != Some(&last) {
        out.push(last);
    }
    out
}

fn grid_origins(img: &Image, side: usize, stride: usize) -> Result<Vec<(usize, usize)>> {
    if side == 0 || stride == 0 {
        return Err(Error::InvalidConfig("patch side and stride must be positive".into()));
    }
    if side > img.width || side > img.height {
        return Err(Error::DimensionMismatch(format!(
            "patch side {side} exceeds image {}x{}",
            img.width, img.height
        )));
    }
    let rows = axis_origins(img.height, side, stride);
    let cols = axis_origins(img.width, side, stride);
    Ok(rows
        .iter()
        .flat_map(|&r| cols.iter().map(move |&c| (r, c)))
        .collect())
}

fn read_patch(img: &Image, (r0, c0): (usize, usize), side: usize, out: &mut [f64]) {
    for c in 0..side {
        for r in 0..side {
            out[c * side + r] = img.get(r0 + r, c0 + c);
        }
    }
}

fn remove_mean(col: &mut [f64]) -> f64 {
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    col.iter_mut().for_each(|v| *v -= mean);
    mean
}

pub fn extract_patches(img: &Image, patch_side: usize, stride: usize) -> Result<PatchGrid> {
    let origins = grid_origins(img, patch_side, stride)?;
    let n = patch_side * patch_side;
    let mut patches = DMatrix::zeros(n, origins.len());
    let mut dc_means = Vec::with_capacity(origins.len());
    for (j, &o) in origins.iter().enumerate() {
        let col = patches.column_mut(j).data.into_slice_mut();
        read_patch(img, o, patch_side, col);
        dc_means.push(remove_mean(col));
    }
    Ok(PatchGrid {
        patch_side,
        origins,
        patches,
        dc_means,
    })
}

/// Averages overlapping patch values (plus their DC) back into an image.
pub fn reassemble(grid: &PatchGrid, width: usize, height: usize) -> Result<Image> {
    let side = grid.patch_side;
    if grid.patches.nrows() != side * side
        || grid.patches.ncols() != grid.origins.len()
        || grid.dc_means.len() != grid.origins.len()
    {
        return Err(Error::DimensionMismatch("inconsistent patch grid".into()));
    }
    let mut sum = vec![0.0; width * height];
    let mut count = vec![0u32; width * height];
    for (j, &(r0, c0)) in grid.origins.iter().enumerate() {
        if r0 + side > height || c0 + side > width {
            return Err(Error::DimensionMismatch(format!(
                "patch at ({r0}, {c0}) leaves the {width}x{height} image"
            )));
        }
        let col = grid.patches.column(j);
        let dc = grid.dc_means[j];
        for c in 0..side {
            for r in 0..side {
                let idx = (r0 + r) * width + c0 + c;
                sum[idx] += col[c * side + r] + dc;
                count[idx] += 1;
            }
        }
    }
    let mut px = Vec::with_capacity(width * height);
    for (i, (s, n)) in sum.iter().zip(&count).enumerate() {
        if *n == 0 {
            return Err(Error::UncoveredPixel {
                row: i / width,
                col: i % width,
            });
        }
        px.push(s / *n as f64);
    }
    Image::new(width, height, px)
}

fn population_variance(col: &[f64]) -> f64 {
    let mean = col.iter().sum::<f64>() / col.len() as f64;
    col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / col.len() as f64
}

/// Settings for cutting a training batch out of registered images.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchSpec {
    pub patch_side: usize,
    pub scale: usize,
    pub stride: usize,
    /// Patches whose upscaled-LR variance is below this are dropped.
    pub variance_threshold: f64,
    pub max_t: usize,
    pub seed: u64,
}

impl Default for BatchSpec {
    fn default() -> Self {
        Self {
            patch_side: 8,
            scale: 4,
            stride: 1,
            variance_threshold: 0.02,
            max_t: 100_000,
            seed: 0,
        }
    }
}

/// Aligned, mean-removed `(upscaled LR, HR, guidance)` patch triples.
pub fn build_training_batch(
    lr_imgs: &[Image],
    hr_imgs: &[Image],
    guide_imgs: &[Image],
    spec: &BatchSpec,
) -> Result<TrainingBatch> {
    if lr_imgs.len() != hr_imgs.len() || lr_imgs.len() != guide_imgs.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} LR, {} HR and {} guidance images",
            lr_imgs.len(),
            hr_imgs.len(),
            guide_imgs.len()
        )));
    }
    let side = spec.patch_side;
    let n = side * side;
    let mut kept: Vec<[Vec<f64>; 3]> = Vec::new();
    for ((lr, hr), guide) in lr_imgs.iter().zip(hr_imgs).zip(guide_imgs) {
        if hr.dims() != guide.dims() {
            return Err(Error::DimensionMismatch(format!(
                "HR {:?} and guidance {:?} differ",
                hr.dims(),
                guide.dims()
            )));
        }
        let up = bicubic_resize(lr, hr.width, hr.height)?;
        for origin in grid_origins(hr, side, spec.stride)? {
            let mut xl = vec![0.0; n];
            read_patch(&up, origin, side, &mut xl);
            if population_variance(&xl) < spec.variance_threshold {
                continue;
            }
            let mut xh = vec![0.0; n];
            let mut y = vec![0.0; n];
            read_patch(hr, origin, side, &mut xh);
            read_patch(guide, origin, side, &mut y);
            for v in [&mut xl, &mut xh, &mut y] {
                remove_mean(v);
            }
            kept.push([xl, xh, y]);
        }
    }
    if kept.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let chosen: Vec<usize> = if kept.len() > spec.max_t {
        let mut rng = seeded(spec.seed);
        let mut idx = sample(&mut rng, kept.len(), spec.max_t).into_vec();
        idx.sort_unstable();
        idx
    } else {
        (0..kept.len()).collect()
    };
    let t = chosen.len();
    let mut mats = [DMatrix::zeros(n, t), DMatrix::zeros(n, t), DMatrix::zeros(n, t)];
    for (j, &i) in chosen.iter().enumerate() {
        for (m, v) in mats.iter_mut().zip(&kept[i]) {
            m.column_mut(j).copy_from_slice(v);
        }
    }
    let [x_l, x_h, y] = mats;
    TrainingBatch::new(x_l, x_h, y)
}
