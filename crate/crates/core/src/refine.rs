//! Pixel-level saliency masks and edge-aware refinement.
//!
//! Refinement is a fast bilateral solver: pixels are splatted onto a sparse
//! 5-D bilateral grid over `(x, y, luma, u, v)`, the grid is bistochastized,
//! and the smoothness-plus-fidelity system
//!
//! ```text
//! (λ (Dm − Dn B Dn) + diag(S c)) ŷ = S (c ⊙ t)
//! ```
//!
//! is solved with Jacobi-preconditioned conjugate gradients before slicing
//! back to pixels.

use std::collections::HashMap;

use image::RgbImage;
use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMask {
    pub width: usize,
    pub height: usize,
    /// Row-major per-pixel confidence in `[0, 1]`.
    pub confidence: Vec<f64>,
    /// `confidence > 0.5`.
    pub binary: Vec<bool>,
}

impl SaliencyMask {
    pub fn from_confidence(width: usize, height: usize, confidence: Vec<f64>) -> Result<Self> {
        if confidence.len() != width * height {
            return Err(Error::Input(format!(
                "{} confidence values for a {width}x{height} mask",
                confidence.len()
            )));
        }
        if let Some(v) = confidence.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("confidence {v} outside [0, 1]")));
        }
        let binary = confidence.iter().map(|&c| c > 0.5).collect();
        Ok(SaliencyMask {
            width,
            height,
            confidence,
            binary,
        })
    }

    /// 8-bit grayscale rendering of the binary mask (0 or 255).
    pub fn to_gray_image(&self) -> image::GrayImage {
        let pixels = self.binary.iter().map(|&b| if b { 255 } else { 0 }).collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, pixels)
            .expect("buffer matches mask dimensions")
    }
}

/// Replicates each patch value over its `K × K` pixel block, cropped to the image.
fn upsample<T: Copy>(values: &[T], cols: usize, patch_size: usize, height: usize, width: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = y / patch_size;
        for x in 0..width {
            out.push(values[row * cols + x / patch_size]);
        }
    }
    out
}

fn check_grid(len: usize, rows: usize, cols: usize, patch_size: usize, height: usize, width: usize) -> Result<()> {
    if len != rows * cols {
        return Err(Error::Input(format!(
            "patch values have {len} entries for a {rows}x{cols} grid"
        )));
    }
    if patch_size == 0 || rows * patch_size < height || cols * patch_size < width {
        return Err(Error::Input(format!(
            "{rows}x{cols} grid with K={patch_size} does not cover a {width}x{height} image"
        )));
    }
    Ok(())
}

/// Nearest-neighbor upsampling of a patch mask to pixel resolution.
pub fn upsample_mask(
    patch_mask: &[bool],
    (rows, cols): (usize, usize),
    patch_size: usize,
    (height, width): (usize, usize),
) -> Result<SaliencyMask> {
    check_grid(patch_mask.len(), rows, cols, patch_size, height, width)?;
    let confidence = upsample(patch_mask, cols, patch_size, height, width)
        .into_iter()
        .map(|b| if b { 1.0 } else { 0.0 })
        .collect();
    SaliencyMask::from_confidence(width, height, confidence)
}

/// Soft target from eigenvector magnitudes: `|y1|` rescaled to `[0, 1]` and replicated per patch.
pub fn upsample_scores(
    y1: &[f64],
    (rows, cols): (usize, usize),
    patch_size: usize,
    (height, width): (usize, usize),
) -> Result<SaliencyMask> {
    check_grid(y1.len(), rows, cols, patch_size, height, width)?;
    let peak = y1.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let scaled: Vec<f64> = y1
        .iter()
        .map(|v| if peak > 0.0 { (v.abs() / peak).clamp(0.0, 1.0) } else { 0.0 })
        .collect();
    let confidence = upsample(&scaled, cols, patch_size, height, width);
    SaliencyMask::from_confidence(width, height, confidence)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RefineConfig {
    pub sigma_spatial: f64,
    pub sigma_luma: f64,
    pub sigma_chroma: f64,
    /// Smoothness weight λ.
    pub smoothing_weight: f64,
    /// Conjugate-gradient iteration cap.
    pub iterations: usize,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            sigma_spatial: 16.0,
            sigma_luma: 16.0,
            sigma_chroma: 8.0,
            smoothing_weight: 30.0,
            iterations: 25,
        }
    }
}

impl RefineConfig {
    pub fn validate(&self) -> Result<()> {
        let sigmas = [self.sigma_spatial, self.sigma_luma, self.sigma_chroma, self.smoothing_weight];
        if sigmas.iter().any(|v| !(v.is_finite() && *v > 0.0)) || self.iterations == 0 {
            return Err(Error::Input(format!("refine parameters must be positive: {self:?}")));
        }
        Ok(())
    }
}

const BISTOCHASTIC_ITERS: usize = 10;
const CG_TOLERANCE: f64 = 1e-5;
const MIN_DIAGONAL: f64 = 1e-5;
const GRID_DIMS: usize = 5;

/// Sparse bilateral grid: pixel-to-vertex assignment plus vertex neighbor lists.
struct BilateralGrid {
    vertex_of: Vec<usize>,
    vertices: usize,
    /// Per dimension, `[minus, plus]` neighbor of each vertex when it exists.
    neighbors: Vec<[Vec<Option<usize>>; 2]>,
}

impl BilateralGrid {
    fn new(image: &RgbImage, cfg: &RefineConfig) -> Self {
        let mut index: HashMap<[i64; GRID_DIMS], usize> = HashMap::new();
        let mut coords: Vec<[i64; GRID_DIMS]> = Vec::new();
        let mut vertex_of = Vec::with_capacity((image.width() * image.height()) as usize);
        for (x, y, px) in image.enumerate_pixels() {
            let [r, g, b] = px.0.map(f64::from);
            let luma = 0.299 * r + 0.587 * g + 0.114 * b;
            let u = -0.168_736 * r - 0.331_264 * g + 0.5 * b + 128.0;
            let v = 0.5 * r - 0.418_688 * g - 0.081_312 * b + 128.0;
            let key = [
                (f64::from(x) / cfg.sigma_spatial).round() as i64,
                (f64::from(y) / cfg.sigma_spatial).round() as i64,
                (luma / cfg.sigma_luma).round() as i64,
                (u / cfg.sigma_chroma).round() as i64,
                (v / cfg.sigma_chroma).round() as i64,
            ];
            let id = *index.entry(key).or_insert_with(|| {
                coords.push(key);
                coords.len() - 1
            });
            vertex_of.push(id);
        }
        let neighbors = (0..GRID_DIMS)
            .map(|d| {
                [-1i64, 1].map(|offset| {
                    coords
                        .iter()
                        .map(|c| {
                            let mut k = *c;
                            k[d] += offset;
                            index.get(&k).copied()
                        })
                        .collect()
                })
            })
            .collect();
        BilateralGrid {
            vertex_of,
            vertices: coords.len(),
            neighbors,
        }
    }

    fn splat(&self, values: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.vertices];
        for (&v, &x) in self.vertex_of.iter().zip(values) {
            out[v] += x;
        }
        out
    }

    fn slice(&self, values: &[f64]) -> Vec<f64> {
        self.vertex_of.iter().map(|&v| values[v]).collect()
    }

    /// `[1, 2, 1]` blur along each dimension, summed over dimensions.
    fn blur(&self, values: &[f64]) -> Vec<f64> {
        let mut out: Vec<f64> = values.iter().map(|v| 2.0 * GRID_DIMS as f64 * v).collect();
        for pair in &self.neighbors {
            for side in pair {
                for (o, nb) in out.iter_mut().zip(side) {
                    if let Some(j) = nb {
                        *o += values[*j];
                    }
                }
            }
        }
        out
    }

    /// Normalizations `(m, n)` making `diag(n) B diag(n)` approximately row-stochastic w.r.t. `m`.
    fn bistochastize(&self) -> (Vec<f64>, Vec<f64>) {
        let m = self.splat(&vec![1.0; self.vertex_of.len()]);
        let mut n = vec![1.0; self.vertices];
        for _ in 0..BISTOCHASTIC_ITERS {
            let bn = self.blur(&n);
            for ((ni, mi), b) in n.iter_mut().zip(&m).zip(&bn) {
                *ni = (*ni * mi / b).sqrt();
            }
        }
        let bn = self.blur(&n);
        let m = n.iter().zip(&bn).map(|(a, b)| a * b).collect();
        (m, n)
    }
}

/// Solves the bilateral system for `target` with per-pixel `confidence`.
fn bilateral_solve(
    grid: &BilateralGrid,
    target: &[f64],
    confidence: &[f64],
    cfg: &RefineConfig,
) -> Option<Vec<f64>> {
    let (m, n) = grid.bistochastize();
    let lambda = cfg.smoothing_weight;
    let weight = grid.splat(confidence);
    let weighted: Vec<f64> = target.iter().zip(confidence).map(|(t, c)| t * c).collect();
    let rhs = grid.splat(&weighted);

    let apply = |y: &[f64]| -> Vec<f64> {
        let ny: Vec<f64> = n.iter().zip(y).map(|(a, b)| a * b).collect();
        let bny = grid.blur(&ny);
        (0..y.len())
            .map(|i| lambda * (m[i] * y[i] - n[i] * bny[i]) + weight[i] * y[i])
            .collect()
    };
    let self_weight = 2.0 * GRID_DIMS as f64;
    let inv_diag: Vec<f64> = (0..m.len())
        .map(|i| 1.0 / (lambda * (m[i] - n[i] * n[i] * self_weight) + weight[i]).max(MIN_DIAGONAL))
        .collect();

    let mut y: Vec<f64> = rhs
        .iter()
        .zip(&weight)
        .map(|(b, w)| if *w > 0.0 { b / w } else { 0.0 })
        .collect();
    let ay = apply(&y);
    let mut r: Vec<f64> = rhs.iter().zip(&ay).map(|(b, a)| b - a).collect();
    let rhs_norm = dot(&rhs, &rhs).sqrt().max(f64::MIN_POSITIVE);
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);

    for _ in 0..cfg.iterations {
        if dot(&r, &r).sqrt() <= CG_TOLERANCE * rhs_norm {
            break;
        }
        let ap = apply(&p);
        let pap = dot(&p, &ap);
        if !(pap > 0.0) {
            break;
        }
        let alpha = rz / pap;
        for i in 0..y.len() {
            y[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = r.iter().zip(&inv_diag).map(|(a, b)| a * b).collect();
        let rz_next = dot(&r, &z);
        let beta = rz_next / rz;
        rz = rz_next;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }

    let out = grid.slice(&y);
    out.iter().all(|v| v.is_finite()).then_some(out)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Edge-aware refinement of `mask` against `image`.
///
/// Falls back to the input mask, with a warning, when the solve yields non-finite values.
pub fn refine(mask: &SaliencyMask, image: &RgbImage, cfg: &RefineConfig) -> Result<SaliencyMask> {
    cfg.validate()?;
    if image.width() as usize != mask.width || image.height() as usize != mask.height {
        return Err(Error::Input(format!(
            "image is {}x{}, mask is {}x{}",
            image.width(),
            image.height(),
            mask.width,
            mask.height
        )));
    }
    let grid = BilateralGrid::new(image, cfg);
    let confidence = vec![1.0; mask.confidence.len()];
    let Some(solved) = bilateral_solve(&grid, &mask.confidence, &confidence, cfg) else {
        warn!("bilateral solve produced non-finite values; keeping the unrefined mask");
        return Ok(mask.clone());
    };
    // The exact solution is a convex combination of target values; clamp away CG round-off.
    let (lo, hi) = mask
        .confidence
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let refined = solved.into_iter().map(|v| v.clamp(lo, hi)).collect();
    SaliencyMask::from_confidence(mask.width, mask.height, refined)
}
