//! PWLS baseline with a nonadaptive edge-preserving regularizer
//! `R(x) = sum_j sum_{k in N_j} kappa_j kappa_k phi(x_j - x_k)` over the
//! 8-neighborhood, solved with relaxed OS-LALM.

use crate::error::{Error, Result};
use crate::geom::{Sinogram, SubsetPartition};
use crate::grid::ImageGrid;
use crate::oslalm::{data_cost, image_update};
use crate::projector::{build_da, GridSpec, RayProjector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `phi(t) = delta^2 (sqrt(1 + |t/delta|^2) - 1)` (2D default).
    Hyperbola2d,
    /// `phi(t) = delta^2 (|t/delta| - log(1 + |t/delta|))`.
    Fair3d,
}

/// Potential value and derivative at `t` (same units as `delta`).
/// Both are continuous with `phi(0) = 0` and `phi'(0) = 0`; the curvature
/// is maximal at 0 where `phi''(0) = 1`.
pub fn ep_potential(t: f64, delta: f64, kind: PotentialKind) -> (f64, f64) {
    let a = (t / delta).abs();
    match kind {
        PotentialKind::Hyperbola2d => {
            let root = (1.0 + a * a).sqrt();
            (delta * delta * (root - 1.0), t / root)
        }
        PotentialKind::Fair3d => {
            let val = delta * delta * (a - a.ln_1p());
            (val, t / (1.0 + a))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpParams {
    /// Regularization weight.
    pub beta: f64,
    /// Potential width in HU.
    pub delta_hu: f64,
    pub kind: PotentialKind,
    /// OS-LALM passes and subsets.
    pub iters: usize,
    pub subsets: usize,
    pub alpha: f64,
}

impl Default for EpParams {
    fn default() -> Self {
        EpParams {
            beta: 1.0,
            delta_hu: 10.0,
            kind: PotentialKind::Hyperbola2d,
            iters: 20,
            subsets: 4,
            alpha: 1.999,
        }
    }
}

/// Offsets of the 8-neighborhood.
const NEIGHBORS: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Edge-preserving regularizer value (including beta). The image is in
/// attenuation units; differences are converted to HU with `hu_slope`.
pub fn ep_cost(x: &[f64], nx: usize, ny: usize, kappa: &[f64], p: &EpParams, hu_slope: f64) -> f64 {
    let total: f64 = (0..ny)
        .into_par_iter()
        .map(|iy| {
            let mut acc = 0.0;
            for ix in 0..nx {
                let j = iy * nx + ix;
                for (oy, ox) in NEIGHBORS {
                    let (ky, kx) = (iy as isize + oy, ix as isize + ox);
                    if ky < 0 || ky >= ny as isize || kx < 0 || kx >= nx as isize {
                        continue;
                    }
                    let k = ky as usize * nx + kx as usize;
                    let t = hu_slope * (x[j] - x[k]);
                    acc += kappa[j] * kappa[k] * ep_potential(t, p.delta_hu, p.kind).0;
                }
            }
            acc
        })
        .sum();
    p.beta * total
}

/// Gradient of the edge-preserving term (including beta), in attenuation
/// units.
fn ep_grad(x: &[f64], nx: usize, ny: usize, kappa: &[f64], p: &EpParams, hu_slope: f64) -> Vec<f64> {
    let mut g = vec![0.0; nx * ny];
    g.par_chunks_mut(nx).enumerate().for_each(|(iy, row)| {
        for (ix, slot) in row.iter_mut().enumerate() {
            let j = iy * nx + ix;
            let mut acc = 0.0;
            for (oy, ox) in NEIGHBORS {
                let (ky, kx) = (iy as isize + oy, ix as isize + ox);
                if ky < 0 || ky >= ny as isize || kx < 0 || kx >= nx as isize {
                    continue;
                }
                let k = ky as usize * nx + kx as usize;
                let t = hu_slope * (x[j] - x[k]);
                acc += kappa[j] * kappa[k] * ep_potential(t, p.delta_hu, p.kind).1;
            }
            // both orderings of each pair contribute, and d/dx_j picks up
            // the HU scale
            *slot = 2.0 * p.beta * hu_slope * acc;
        }
    });
    g
}

/// Diagonal majorizer of the EP Hessian: per-pair curvature bound
/// `phi''(0) = 1` (in HU) gives `4 beta slope^2 sum_k kappa_j kappa_k`.
fn ep_majorizer(nx: usize, ny: usize, kappa: &[f64], p: &EpParams, hu_slope: f64) -> Vec<f64> {
    let mut d = vec![0.0; nx * ny];
    for iy in 0..ny {
        for ix in 0..nx {
            let j = iy * nx + ix;
            let mut acc = 0.0;
            for (oy, ox) in NEIGHBORS {
                let (ky, kx) = (iy as isize + oy, ix as isize + ox);
                if ky < 0 || ky >= ny as isize || kx < 0 || kx >= nx as isize {
                    continue;
                }
                acc += kappa[j] * kappa[ky as usize * nx + kx as usize];
            }
            d[j] = 4.0 * p.beta * hu_slope * hu_slope * acc;
        }
    }
    d
}

/// PWLS reconstruction with the edge-preserving regularizer, solved by
/// relaxed OS-LALM from `init`. Returns the image and the per-pass cost
/// trace; aborts if the cost exceeds 10x its initial value.
pub fn pwls_ep(
    sino: &Sinogram,
    kappa: &[f64],
    params: &EpParams,
    init: &ImageGrid,
) -> Result<(ImageGrid, Vec<f64>)> {
    let spec = GridSpec::from(init);
    let op = RayProjector::new(&sino.geometry, &spec)?;
    if kappa.len() != spec.n_pixels() {
        return Err(Error::Shape("kappa length does not match the grid".into()));
    }
    if !(params.delta_hu > 0.0) {
        return Err(Error::Config("EP delta must be > 0".into()));
    }
    let (nx, ny) = (init.nx, init.ny);
    let slope = init.hu_slope;
    let part = SubsetPartition::bit_reversed(sino.geometry.n_views, params.subsets)?;
    let d_a = build_da(&op, &sino.weights)?;
    let d_r = ep_majorizer(nx, ny, kappa, params, slope);

    let mut x = init.values.clone();
    let cost_of = |x: &[f64]| -> Result<f64> {
        Ok(data_cost(&op, x, &sino.values, &sino.weights)?
            + ep_cost(x, nx, ny, kappa, params, slope))
    };
    let cost0 = cost_of(&x)?;
    let mut trace = vec![cost0];
    {
        let mut observer = |_n: usize, xs: &[f64]| -> Result<()> {
            let c = cost_of(xs)?;
            trace.push(c);
            if c > 10.0 * cost0.abs().max(1e-300) {
                return Err(Error::Numerical(format!(
                    "PWLS-EP diverged: cost {c} exceeds 10x initial {cost0}"
                )));
            }
            Ok(())
        };
        image_update(
            &op,
            &mut x,
            &sino.values,
            &sino.weights,
            &part,
            &d_a,
            &d_r,
            params.iters,
            params.alpha,
            |xs| Ok(ep_grad(xs, nx, ny, kappa, params, slope)),
            Some(&mut observer),
        )?;
    }
    let mut out = init.clone();
    out.values = x;
    Ok((out, trace))
}
