//! Low-dose measurement simulation under the Poisson+Gaussian model,
//! post-log conversion with statistical weights, and the per-pixel kappa
//! map used for patch-based weighting.

use crate::error::{Error, Result};
use crate::geom::{ScanGeometry, Sinogram};
use crate::grid::ImageGrid;
use crate::projector::{forward_project, GridSpec, RayProjector, SystemOp};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Poisson+Gaussian measurement model:
/// `counts_i = k_gain * Poisson{I0 exp(-l_i)} + Normal{0, sigma2}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    /// Incident photons per ray.
    pub i0: f64,
    /// Photon-to-electron conversion gain.
    pub k_gain: f64,
    /// Electronic noise variance (electrons^2).
    pub sigma2: f64,
    pub rng_seed: u64,
}

impl NoiseModel {
    pub fn new(i0: f64, k_gain: f64, sigma2: f64, rng_seed: u64) -> Result<Self> {
        if !(i0 > 0.0) || !(k_gain > 0.0) || !(sigma2 >= 0.0) {
            return Err(Error::Config(
                "noise model needs I0 > 0, k_gain > 0, sigma2 >= 0".into(),
            ));
        }
        Ok(NoiseModel {
            i0,
            k_gain,
            sigma2,
            rng_seed,
        })
    }
}

impl Default for NoiseModel {
    /// Conversion gain 1000 electrons/photon and 330^2 electronic noise
    /// variance, at a low-dose incident intensity of 1e4 photons per ray.
    fn default() -> Self {
        NoiseModel {
            i0: 1e4,
            k_gain: 1000.0,
            sigma2: 330.0 * 330.0,
            rng_seed: 0,
        }
    }
}

/// Raw detector counts for a scan of `truth`.
///
/// Each ray draws from its own counter-based RNG stream, so results are
/// independent of evaluation order and reproducible from the seed. With
/// `deterministic` set, the noiseless mean `k_gain * I0 * exp(-l_i)` is
/// returned instead.
pub fn simulate_counts(
    truth: &ImageGrid,
    geom: &ScanGeometry,
    noise: &NoiseModel,
    deterministic: bool,
) -> Result<Vec<f64>> {
    let line_integrals = forward_project(truth, geom)?;
    Ok(counts_from_line_integrals(
        &line_integrals,
        noise,
        deterministic,
    ))
}

/// Counts simulation on precomputed line integrals.
pub fn counts_from_line_integrals(
    line_integrals: &[f64],
    noise: &NoiseModel,
    deterministic: bool,
) -> Vec<f64> {
    line_integrals
        .par_iter()
        .enumerate()
        .map(|(ray, &l)| {
            let lambda = noise.i0 * (-l).exp();
            if deterministic {
                return noise.k_gain * lambda;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
            rng.set_stream(ray as u64);
            let photons = if lambda > 0.0 {
                Poisson::new(lambda).map(|p| p.sample(&mut rng)).unwrap_or(0.0)
            } else {
                0.0
            };
            let electronic = if noise.sigma2 > 0.0 {
                Normal::new(0.0, noise.sigma2.sqrt())
                    .map(|n| n.sample(&mut rng))
                    .unwrap_or(0.0)
            } else {
                0.0
            };
            noise.k_gain * photons + electronic
        })
        .collect()
}

/// Post-log clamp floor, in raw count units. Nonpositive counts (possible
/// from the additive Gaussian term) are clamped here before the log.
pub const COUNT_CLAMP_MIN: f64 = 1.0;

/// Converts raw counts to a post-log sinogram with delta-method
/// inverse-variance weights:
/// `y_i = ln(k_gain * I0 / max(c_i, 1))`,
/// `w_i = c_i^2 / (k_gain * c_i + sigma2)`.
pub fn counts_to_sinogram(
    counts: &[f64],
    geom: &ScanGeometry,
    noise: &NoiseModel,
) -> Result<Sinogram> {
    if counts.iter().any(|c| !c.is_finite()) {
        return Err(Error::Numerical("counts must be finite".into()));
    }
    let full = noise.k_gain * noise.i0;
    let mut values = Vec::with_capacity(counts.len());
    let mut weights = Vec::with_capacity(counts.len());
    for &c in counts {
        let ch = c.max(COUNT_CLAMP_MIN);
        values.push((full / ch).ln());
        weights.push(ch * ch / (noise.k_gain * ch + noise.sigma2));
    }
    Sinogram::new(geom.clone(), values, weights)
}

/// Per-pixel statistical weight map
/// `kappa_j = sqrt(sum_i a_ij w_i / sum_i a_ij)`, computed with two back
/// projections. Pixels outside every ray (zero column sum) get the minimum
/// positive kappa of the grid.
pub fn kappa_map(geom: &ScanGeometry, weights: &[f64], spec: &GridSpec) -> Result<Vec<f64>> {
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Numerical("weights must be finite and >= 0".into()));
    }
    let proj = RayProjector::new(geom, spec)?;
    if weights.len() != proj.n_rays() {
        return Err(Error::Shape(format!(
            "weight length {} != {} rays",
            weights.len(),
            proj.n_rays()
        )));
    }
    let num = proj.back(weights)?;
    let den = proj.back(&vec![1.0; weights.len()])?;
    kappa_from_backprojections(&num, &den)
}

/// Kappa map from precomputed back projections of the weights and of ones.
pub fn kappa_from_backprojections(num: &[f64], den: &[f64]) -> Result<Vec<f64>> {
    let mut kappa: Vec<f64> = num
        .iter()
        .zip(den.iter())
        .map(|(&n, &d)| if d > 0.0 { (n / d).max(0.0).sqrt() } else { 0.0 })
        .collect();
    let min_pos = kappa
        .iter()
        .zip(den.iter())
        .filter(|(_, &d)| d > 0.0)
        .map(|(&k, _)| k)
        .filter(|&k| k > 0.0)
        .fold(f64::INFINITY, f64::min);
    if den.iter().all(|&d| d == 0.0) {
        return Err(Error::Numerical(
            "kappa map undefined: all system-matrix column sums are zero".into(),
        ));
    }
    if min_pos.is_finite() {
        for (k, &d) in kappa.iter_mut().zip(den.iter()) {
            if d == 0.0 {
                *k = min_pos;
            }
        }
    }
    Ok(kappa)
}
