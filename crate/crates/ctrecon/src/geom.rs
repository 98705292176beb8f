//! Scan geometries, sinograms, and ordered-subset partitions of the views.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BeamKind {
    Parallel,
    Fan,
}

/// Ray geometry of a 2D CT scan.
///
/// Rays are ordered view-major: ray `v * n_det + d` is detector cell `d`
/// of view `v`. For a view at angle `theta`, the central ray direction is
/// `(cos theta, sin theta)` and the detector axis is `(-sin theta, cos theta)`.
/// Fan beams place the source at distance `source_to_iso` behind the
/// isocenter and a flat detector at `source_to_det` from the source.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanGeometry {
    pub kind: BeamKind,
    pub n_views: usize,
    pub n_det: usize,
    /// Detector cell spacing in mm (at the physical detector for fan beam).
    pub det_spacing: f64,
    /// View angles in radians, strictly increasing, spanning less than 2 pi.
    pub angles: Vec<f64>,
    /// Source-to-isocenter distance in mm (fan beam only).
    pub source_to_iso: f64,
    /// Source-to-detector distance in mm (fan beam only).
    pub source_to_det: f64,
}

impl ScanGeometry {
    /// Parallel-beam geometry with `n_views` angles uniformly covering
    /// `[0, angular_span)`.
    pub fn parallel(n_views: usize, n_det: usize, det_spacing: f64, angular_span: f64) -> Result<Self> {
        let g = ScanGeometry {
            kind: BeamKind::Parallel,
            n_views,
            n_det,
            det_spacing,
            angles: uniform_angles(n_views, angular_span),
            source_to_iso: 0.0,
            source_to_det: 0.0,
        };
        g.validate()?;
        Ok(g)
    }

    /// Fan-beam geometry with a flat detector, views uniformly covering
    /// `[0, angular_span)`.
    pub fn fan(
        n_views: usize,
        n_det: usize,
        det_spacing: f64,
        angular_span: f64,
        source_to_iso: f64,
        source_to_det: f64,
    ) -> Result<Self> {
        let g = ScanGeometry {
            kind: BeamKind::Fan,
            n_views,
            n_det,
            det_spacing,
            angles: uniform_angles(n_views, angular_span),
            source_to_iso,
            source_to_det,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_views < 1 || self.n_det < 1 {
            return Err(Error::Geometry("n_views and n_det must be >= 1".into()));
        }
        if !(self.det_spacing > 0.0) {
            return Err(Error::Geometry("det_spacing must be > 0".into()));
        }
        if self.angles.len() != self.n_views {
            return Err(Error::Geometry(format!(
                "angle count {} != n_views {}",
                self.angles.len(),
                self.n_views
            )));
        }
        if self.angles.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Geometry("angles must be strictly increasing".into()));
        }
        if self.n_views > 1 {
            let span = self.angles[self.n_views - 1] - self.angles[0];
            if span >= 2.0 * std::f64::consts::PI {
                return Err(Error::Geometry("angles must span less than 2 pi".into()));
            }
        }
        if self.kind == BeamKind::Fan {
            if !(self.source_to_iso > 0.0) || !(self.source_to_det > self.source_to_iso) {
                return Err(Error::Geometry(
                    "fan beam needs 0 < source_to_iso < source_to_det".into(),
                ));
            }
        }
        Ok(())
    }

    /// Total ray count `N_d = n_views * n_det`.
    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_det
    }

    /// Signed detector coordinate of cell `d`, centered on the array.
    pub fn det_coord(&self, d: usize) -> f64 {
        (d as f64 - 0.5 * (self.n_det as f64 - 1.0)) * self.det_spacing
    }

    /// World-space endpoints (start, end) of ray `(view, det)`.
    ///
    /// Parallel rays are clipped to a segment long enough to cross any
    /// grid; fan rays run from the source to the detector cell center.
    pub fn ray_endpoints(&self, view: usize, det: usize, half_span: f64) -> ([f64; 2], [f64; 2]) {
        let theta = self.angles[view];
        let (sin_t, cos_t) = theta.sin_cos();
        let dir = [cos_t, sin_t];
        let axis = [-sin_t, cos_t];
        let t = self.det_coord(det);
        match self.kind {
            BeamKind::Parallel => {
                let p = [t * axis[0], t * axis[1]];
                (
                    [p[0] - half_span * dir[0], p[1] - half_span * dir[1]],
                    [p[0] + half_span * dir[0], p[1] + half_span * dir[1]],
                )
            }
            BeamKind::Fan => {
                let src = [-self.source_to_iso * dir[0], -self.source_to_iso * dir[1]];
                let det_center = [
                    (self.source_to_det - self.source_to_iso) * dir[0],
                    (self.source_to_det - self.source_to_iso) * dir[1],
                ];
                let p = [det_center[0] + t * axis[0], det_center[1] + t * axis[1]];
                (src, p)
            }
        }
    }
}

fn uniform_angles(n_views: usize, angular_span: f64) -> Vec<f64> {
    (0..n_views)
        .map(|v| v as f64 * angular_span / n_views as f64)
        .collect()
}

/// Post-log projection data with per-ray statistical weights.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    pub geometry: ScanGeometry,
    /// Post-log line integrals, view-major.
    pub values: Vec<f64>,
    /// Per-ray inverse-variance weights, all finite and nonnegative.
    pub weights: Vec<f64>,
}

impl Sinogram {
    pub fn new(geometry: ScanGeometry, values: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let n = geometry.n_rays();
        if values.len() != n || weights.len() != n {
            return Err(Error::Shape(format!(
                "sinogram length {} / weight length {} != n_rays {n}",
                values.len(),
                weights.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Numerical("weights must be finite and >= 0".into()));
        }
        Ok(Sinogram {
            geometry,
            values,
            weights,
        })
    }
}

/// Disjoint view-index lists covering all views, in processing order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubsetPartition {
    pub view_lists: Vec<Vec<usize>>,
}

impl SubsetPartition {
    /// Partition `n_views` views into `m` subsets by view index modulo `m`,
    /// with the subsets ordered by the bit-reversal permutation of their
    /// residues. Subset sizes differ by at most one.
    pub fn bit_reversed(n_views: usize, m: usize) -> Result<Self> {
        if m < 1 || m > n_views {
            return Err(Error::Geometry(format!(
                "subset count {m} must be in 1..={n_views}"
            )));
        }
        let order = bit_reversal_order(m);
        let view_lists = order
            .into_iter()
            .map(|res| (res..n_views).step_by(m).collect())
            .collect();
        Ok(SubsetPartition { view_lists })
    }

    pub fn n_subsets(&self) -> usize {
        self.view_lists.len()
    }

    pub fn views(&self, m: usize) -> Result<&[usize]> {
        self.view_lists
            .get(m)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Geometry(format!("subset index {m} out of range")))
    }
}

/// Bit-reversal permutation of `0..m`: reverse the bits of each index in
/// the next power-of-two space and keep values below `m`.
fn bit_reversal_order(m: usize) -> Vec<usize> {
    if m == 1 {
        return vec![0];
    }
    let bits = usize::BITS - (m - 1).leading_zeros();
    let n = 1usize << bits;
    (0..n)
        .map(|i| {
            let mut r = 0usize;
            for b in 0..bits {
                if i & (1 << b) != 0 {
                    r |= 1 << (bits - 1 - b);
                }
            }
            r
        })
        .filter(|&r| r < m)
        .collect()
}
