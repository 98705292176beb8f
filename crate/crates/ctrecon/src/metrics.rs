//! Quantitative evaluation: RMSE over an ROI in Hounsfield units and a
//! masked structural-similarity index.

use crate::error::{Error, Result};
use rayon::prelude::*;

/// A boolean region-of-interest mask over an nx x ny image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoiMask {
    pub nx: usize,
    pub ny: usize,
    pub mask: Vec<bool>,
}

impl RoiMask {
    pub fn new(nx: usize, ny: usize, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != nx * ny {
            return Err(Error::Shape("mask length mismatch".into()));
        }
        Ok(RoiMask { nx, ny, mask })
    }

    pub fn count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    pub fn full(nx: usize, ny: usize) -> Self {
        RoiMask {
            nx,
            ny,
            mask: vec![true; nx * ny],
        }
    }

    /// Intersection with another mask of the same shape.
    pub fn and(&self, other: &RoiMask) -> RoiMask {
        RoiMask {
            nx: self.nx,
            ny: self.ny,
            mask: self
                .mask
                .iter()
                .zip(&other.mask)
                .map(|(&a, &b)| a && b)
                .collect(),
        }
    }
}

/// Circular mask of the given radius (mm) around the grid center.
pub fn circular_mask(nx: usize, ny: usize, dx: f64, dy: f64, radius_mm: f64) -> RoiMask {
    let mut mask = vec![false; nx * ny];
    for iy in 0..ny {
        let y = (iy as f64 - 0.5 * (ny as f64 - 1.0)) * dy;
        for ix in 0..nx {
            let x = (ix as f64 - 0.5 * (nx as f64 - 1.0)) * dx;
            mask[iy * nx + ix] = x * x + y * y <= radius_mm * radius_mm;
        }
    }
    RoiMask { nx, ny, mask }
}

/// Circular ROI inscribed in the grid.
pub fn inscribed_mask(nx: usize, ny: usize, dx: f64, dy: f64) -> RoiMask {
    let r = 0.5 * (nx as f64 * dx).min(ny as f64 * dy);
    circular_mask(nx, ny, dx, dy, r)
}

/// `sqrt(sum (a_i - b_i)^2 / N_roi)` over masked pixels; inputs in HU.
pub fn rmse_hu(recon: &[f64], truth: &[f64], roi: &RoiMask) -> Result<f64> {
    if recon.len() != roi.mask.len() || truth.len() != roi.mask.len() {
        return Err(Error::Shape("image/mask length mismatch".into()));
    }
    let mut n = 0usize;
    let mut ss = 0.0;
    for ((&a, &b), &m) in recon.iter().zip(truth).zip(&roi.mask) {
        if m {
            let d = a - b;
            ss += d * d;
            n += 1;
        }
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok((ss / n as f64).sqrt())
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean local SSIM over masked pixels (11x11 Gaussian window, sigma 1.5,
/// K1 = 0.01, K2 = 0.03). Window weights are renormalized over the
/// in-bounds masked pixels, so two images identical on the mask score
/// exactly 1 regardless of values outside it.
pub fn ssim(recon: &[f64], truth: &[f64], roi: &RoiMask, dynamic_range: f64) -> Result<f64> {
    if recon.len() != roi.mask.len() || truth.len() != roi.mask.len() {
        return Err(Error::Shape("image/mask length mismatch".into()));
    }
    if !(dynamic_range > 0.0) {
        return Err(Error::Config("SSIM dynamic range must be > 0".into()));
    }
    if roi.count() == 0 {
        return Err(Error::EmptyMask);
    }
    let (nx, ny) = (roi.nx, roi.ny);
    let half = SSIM_WINDOW as isize / 2;
    let g: Vec<f64> = (-half..=half)
        .map(|o| (-(o * o) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let c1 = (SSIM_K1 * dynamic_range) * (SSIM_K1 * dynamic_range);
    let c2 = (SSIM_K2 * dynamic_range) * (SSIM_K2 * dynamic_range);

    let local: Vec<f64> = (0..nx * ny)
        .into_par_iter()
        .map(|p| {
            if !roi.mask[p] {
                return 0.0;
            }
            let (cx, cy) = ((p % nx) as isize, (p / nx) as isize);
            let (mut wsum, mut sx, mut sy, mut sxx, mut syy, mut sxy) =
                (0.0, 0.0, 0.0, 0.0, 0.0, 0.0);
            for oy in -half..=half {
                let iy = cy + oy;
                if iy < 0 || iy >= ny as isize {
                    continue;
                }
                let gy = g[(oy + half) as usize];
                for ox in -half..=half {
                    let ix = cx + ox;
                    if ix < 0 || ix >= nx as isize {
                        continue;
                    }
                    let q = iy as usize * nx + ix as usize;
                    if !roi.mask[q] {
                        continue;
                    }
                    let wgt = gy * g[(ox + half) as usize];
                    let (a, b) = (recon[q], truth[q]);
                    wsum += wgt;
                    sx += wgt * a;
                    sy += wgt * b;
                    sxx += wgt * a * a;
                    syy += wgt * b * b;
                    sxy += wgt * a * b;
                }
            }
            let (mx, my) = (sx / wsum, sy / wsum);
            let vx = (sxx / wsum - mx * mx).max(0.0);
            let vy = (syy / wsum - my * my).max(0.0);
            let cov = sxy / wsum - mx * my;
            ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (vx + vy + c2))
        })
        .collect();
    let n = roi.count();
    Ok(local
        .iter()
        .zip(&roi.mask)
        .filter(|(_, &m)| m)
        .map(|(&v, _)| v)
        .sum::<f64>()
        / n as f64)
}
