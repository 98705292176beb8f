//! System operator A: Siddon ray-traced forward projection, its exact
//! adjoint, ordered-subset views of both, and the diagonal majorizer
//! `D_A = diag{A^T W A 1}`.
//!
//! Forward and back projection share one traversal routine, so the pair is
//! matched (adjoint by construction). All operations are deterministic:
//! parallel scatter reductions use a fixed chunk count and sum partials in
//! index order, independent of the worker thread count.

use crate::error::{Error, Result};
use crate::geom::{ScanGeometry, SubsetPartition};
use crate::grid::ImageGrid;
use rayon::prelude::*;

/// Geometry of an image grid without pixel data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridSpec {
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
    pub offset_x: f64,
    pub offset_y: f64,
}

impl From<&ImageGrid> for GridSpec {
    fn from(g: &ImageGrid) -> Self {
        GridSpec {
            nx: g.nx,
            ny: g.ny,
            dx: g.dx,
            dy: g.dy,
            offset_x: g.offset_x,
            offset_y: g.offset_y,
        }
    }
}

impl GridSpec {
    pub fn n_pixels(&self) -> usize {
        self.nx * self.ny
    }

    fn x_min(&self) -> f64 {
        self.offset_x - 0.5 * self.nx as f64 * self.dx
    }

    fn y_min(&self) -> f64 {
        self.offset_y - 0.5 * self.ny as f64 * self.dy
    }

    /// Half-length long enough for a clipped parallel ray to cross the grid.
    fn half_span(&self) -> f64 {
        let w = self.nx as f64 * self.dx;
        let h = self.ny as f64 * self.dy;
        (w * w + h * h).sqrt() + self.offset_x.abs() + self.offset_y.abs() + self.dx + self.dy
    }
}

/// Linear system operator with view-structured rays.
///
/// Rays are grouped into views of `rays_per_view` each; ordered-subset
/// solvers address the operator by lists of view indices. Implementations
/// must be linear and have `back_views` the exact adjoint of
/// `forward_views` on the same view list.
pub trait SystemOp: Sync {
    fn n_views(&self) -> usize;
    fn rays_per_view(&self) -> usize;
    fn n_pixels(&self) -> usize;

    /// Line integrals for all rays of the given views, in view-list order.
    fn forward_views(&self, views: &[usize], x: &[f64]) -> Result<Vec<f64>>;

    /// Adjoint: accumulate ray values of the given views into an image.
    fn back_views(&self, views: &[usize], vals: &[f64]) -> Result<Vec<f64>>;

    fn n_rays(&self) -> usize {
        self.n_views() * self.rays_per_view()
    }

    fn all_views(&self) -> Vec<usize> {
        (0..self.n_views()).collect()
    }

    /// Full forward projection.
    fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.forward_views(&self.all_views(), x)
    }

    /// Full back projection.
    fn back(&self, vals: &[f64]) -> Result<Vec<f64>> {
        self.back_views(&self.all_views(), vals)
    }
}

/// Gather the full-sinogram entries belonging to `views` (view-major order),
/// matching the output layout of [`SystemOp::forward_views`].
pub fn gather_rays(views: &[usize], rays_per_view: usize, full: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(views.len() * rays_per_view);
    for &v in views {
        out.extend_from_slice(&full[v * rays_per_view..(v + 1) * rays_per_view]);
    }
    out
}

/// Fixed chunk count for deterministic parallel scatter reductions.
const SCATTER_CHUNKS: usize = 16;

/// Siddon ray-traced projector: exact per-pixel intersection lengths.
pub struct RayProjector {
    geom: ScanGeometry,
    spec: GridSpec,
    half_span: f64,
}

impl RayProjector {
    /// Builds the projector, verifying that at least one ray crosses the grid.
    pub fn new(geom: &ScanGeometry, spec: &GridSpec) -> Result<Self> {
        geom.validate()?;
        let p = RayProjector {
            geom: geom.clone(),
            spec: *spec,
            half_span: spec.half_span(),
        };
        let any_hit = (0..p.geom.n_views).any(|v| {
            (0..p.geom.n_det).any(|d| {
                let (p0, p1) = p.geom.ray_endpoints(v, d, p.half_span);
                p.ray_hits(p0, p1)
            })
        });
        if !any_hit {
            return Err(Error::Geometry("empty field of view".into()));
        }
        Ok(p)
    }

    fn ray_hits(&self, p0: [f64; 2], p1: [f64; 2]) -> bool {
        let mut hit = false;
        self.trace_ray(p0, p1, &mut |_, _| hit = true);
        hit
    }

    /// Walks the ray from `p0` to `p1` and calls `visit(pixel, length_mm)`
    /// for each crossed pixel. Rays that miss the grid visit nothing.
    fn trace_ray(&self, p0: [f64; 2], p1: [f64; 2], visit: &mut impl FnMut(usize, f64)) {
        let s = &self.spec;
        let (x_min, y_min) = (s.x_min(), s.y_min());
        let dxr = p1[0] - p0[0];
        let dyr = p1[1] - p0[1];
        let len = (dxr * dxr + dyr * dyr).sqrt();
        if len == 0.0 {
            return;
        }

        // Clip the parameter range [0,1] against the grid slab on each axis.
        let mut t0 = 0.0f64;
        let mut t1 = 1.0f64;
        for (p0a, da, lo, hi) in [
            (p0[0], dxr, x_min, x_min + s.nx as f64 * s.dx),
            (p0[1], dyr, y_min, y_min + s.ny as f64 * s.dy),
        ] {
            if da == 0.0 {
                if p0a < lo || p0a > hi {
                    return;
                }
            } else {
                let (a, b) = ((lo - p0a) / da, (hi - p0a) / da);
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if !(t1 > t0) {
            return;
        }

        // Next plane crossings after t0 on each axis.
        let inv_dx = 1.0 / s.dx;
        let inv_dy = 1.0 / s.dy;
        let (mut tx, dtx, step_x) = if dxr > 0.0 {
            let i = ((p0[0] + t0 * dxr - x_min) * inv_dx).floor() + 1.0;
            ((x_min + i * s.dx - p0[0]) / dxr, s.dx / dxr, 1isize)
        } else if dxr < 0.0 {
            let i = ((p0[0] + t0 * dxr - x_min) * inv_dx).ceil() - 1.0;
            ((x_min + i * s.dx - p0[0]) / dxr, s.dx / -dxr, -1isize)
        } else {
            (f64::INFINITY, f64::INFINITY, 0isize)
        };
        let (mut ty, dty, step_y) = if dyr > 0.0 {
            let i = ((p0[1] + t0 * dyr - y_min) * inv_dy).floor() + 1.0;
            ((y_min + i * s.dy - p0[1]) / dyr, s.dy / dyr, 1isize)
        } else if dyr < 0.0 {
            let i = ((p0[1] + t0 * dyr - y_min) * inv_dy).ceil() - 1.0;
            ((y_min + i * s.dy - p0[1]) / dyr, s.dy / -dyr, -1isize)
        } else {
            (f64::INFINITY, f64::INFINITY, 0isize)
        };

        // Indices of the first crossed pixel, from the first segment midpoint.
        let t_first = tx.min(ty).min(t1);
        let mid = 0.5 * (t0 + t_first);
        let mut ix = (((p0[0] + mid * dxr) - x_min) * inv_dx).floor() as isize;
        let mut iy = (((p0[1] + mid * dyr) - y_min) * inv_dy).floor() as isize;

        let (nx, ny) = (s.nx as isize, s.ny as isize);
        let mut t = t0;
        loop {
            let tn = tx.min(ty).min(t1);
            let seg = (tn - t) * len;
            if seg > 0.0 && ix >= 0 && ix < nx && iy >= 0 && iy < ny {
                visit((iy * nx + ix) as usize, seg);
            }
            if tn >= t1 {
                break;
            }
            if tx <= tn {
                ix += step_x;
                tx += dtx;
            }
            if ty <= tn {
                iy += step_y;
                ty += dty;
            }
            t = tn;
        }
    }
}

impl SystemOp for RayProjector {
    fn n_views(&self) -> usize {
        self.geom.n_views
    }

    fn rays_per_view(&self) -> usize {
        self.geom.n_det
    }

    fn n_pixels(&self) -> usize {
        self.spec.n_pixels()
    }

    fn forward_views(&self, views: &[usize], x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.n_pixels() {
            return Err(Error::Shape(format!(
                "image length {} != {} pixels",
                x.len(),
                self.n_pixels()
            )));
        }
        if let Some(&v) = views.iter().find(|&&v| v >= self.geom.n_views) {
            return Err(Error::Geometry(format!("view index {v} out of range")));
        }
        let nd = self.geom.n_det;
        let mut out = vec![0.0; views.len() * nd];
        out.par_chunks_mut(nd)
            .zip(views.par_iter())
            .for_each(|(row, &v)| {
                for (d, slot) in row.iter_mut().enumerate() {
                    let (p0, p1) = self.geom.ray_endpoints(v, d, self.half_span);
                    let mut acc = 0.0;
                    self.trace_ray(p0, p1, &mut |pix, w| acc += w * x[pix]);
                    *slot = acc;
                }
            });
        Ok(out)
    }

    fn back_views(&self, views: &[usize], vals: &[f64]) -> Result<Vec<f64>> {
        let nd = self.geom.n_det;
        if vals.len() != views.len() * nd {
            return Err(Error::Shape(format!(
                "ray value length {} != {} views x {} detectors",
                vals.len(),
                views.len(),
                nd
            )));
        }
        if let Some(&v) = views.iter().find(|&&v| v >= self.geom.n_views) {
            return Err(Error::Geometry(format!("view index {v} out of range")));
        }
        let npix = self.n_pixels();
        if views.is_empty() {
            return Ok(vec![0.0; npix]);
        }
        // Fixed-count view chunks, partial images summed in chunk order.
        let chunk = views.len().div_ceil(SCATTER_CHUNKS);
        let partials: Vec<Vec<f64>> = views
            .par_chunks(chunk)
            .enumerate()
            .map(|(ci, vchunk)| {
                let mut img = vec![0.0; npix];
                for (vi, &v) in vchunk.iter().enumerate() {
                    let base = (ci * chunk + vi) * nd;
                    for d in 0..nd {
                        let val = vals[base + d];
                        if val == 0.0 {
                            continue;
                        }
                        let (p0, p1) = self.geom.ray_endpoints(v, d, self.half_span);
                        self.trace_ray(p0, p1, &mut |pix, w| img[pix] += w * val);
                    }
                }
                img
            })
            .collect();
        let mut out = vec![0.0; npix];
        for img in &partials {
            for (o, &p) in out.iter_mut().zip(img.iter()) {
                *o += p;
            }
        }
        Ok(out)
    }
}

/// Diagonal system `A = diag{coeffs}` with one ray per pixel. Degenerate
/// geometry used for separable problems and solver tests.
pub struct DiagonalSystem {
    coeffs: Vec<f64>,
}

impl DiagonalSystem {
    pub fn new(coeffs: Vec<f64>) -> Self {
        DiagonalSystem { coeffs }
    }

    pub fn identity(n: usize) -> Self {
        DiagonalSystem {
            coeffs: vec![1.0; n],
        }
    }
}

impl SystemOp for DiagonalSystem {
    fn n_views(&self) -> usize {
        self.coeffs.len()
    }

    fn rays_per_view(&self) -> usize {
        1
    }

    fn n_pixels(&self) -> usize {
        self.coeffs.len()
    }

    fn forward_views(&self, views: &[usize], x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.coeffs.len() {
            return Err(Error::Shape("image length mismatch".into()));
        }
        views
            .iter()
            .map(|&v| {
                self.coeffs
                    .get(v)
                    .map(|c| c * x[v])
                    .ok_or_else(|| Error::Geometry(format!("view index {v} out of range")))
            })
            .collect()
    }

    fn back_views(&self, views: &[usize], vals: &[f64]) -> Result<Vec<f64>> {
        if vals.len() != views.len() {
            return Err(Error::Shape("ray value length mismatch".into()));
        }
        let mut out = vec![0.0; self.coeffs.len()];
        for (&v, &val) in views.iter().zip(vals.iter()) {
            if v >= self.coeffs.len() {
                return Err(Error::Geometry(format!("view index {v} out of range")));
            }
            out[v] += self.coeffs[v] * val;
        }
        Ok(out)
    }
}

/// Full forward projection of an image.
pub fn forward_project(grid: &ImageGrid, geom: &ScanGeometry) -> Result<Vec<f64>> {
    if grid.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("image values must be finite".into()));
    }
    RayProjector::new(geom, &GridSpec::from(grid))?.forward(&grid.values)
}

/// Full back projection of ray values onto a grid.
pub fn back_project(vals: &[f64], geom: &ScanGeometry, spec: &GridSpec) -> Result<Vec<f64>> {
    RayProjector::new(geom, spec)?.back(vals)
}

/// Forward projection restricted to subset `m` of the partition.
pub fn subset_project(
    grid: &ImageGrid,
    geom: &ScanGeometry,
    part: &SubsetPartition,
    m: usize,
) -> Result<Vec<f64>> {
    let views = part.views(m)?;
    RayProjector::new(geom, &GridSpec::from(grid))?.forward_views(views, &grid.values)
}

/// Back projection of subset `m` ray values (view-major within the subset).
pub fn subset_backproject(
    vals: &[f64],
    geom: &ScanGeometry,
    spec: &GridSpec,
    part: &SubsetPartition,
    m: usize,
) -> Result<Vec<f64>> {
    let views = part.views(m)?;
    RayProjector::new(geom, spec)?.back_views(views, vals)
}

/// Diagonal majorizer `D_A = diag{A^T W A 1}` of `A^T W A`.
///
/// Valid as a majorizer because all footprint weights and `W` entries are
/// nonnegative. Entries are all >= 0; pixels outside every ray get 0.
pub fn build_da(op: &impl SystemOp, weights: &[f64]) -> Result<Vec<f64>> {
    if weights.len() != op.n_rays() {
        return Err(Error::Shape(format!(
            "weight length {} != {} rays",
            weights.len(),
            op.n_rays()
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Numerical("weights must be finite and >= 0".into()));
    }
    let ones = vec![1.0; op.n_pixels()];
    let mut proj = op.forward(&ones)?;
    for (p, &w) in proj.iter_mut().zip(weights.iter()) {
        *p *= w;
    }
    op.back(&proj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::BeamKind;
    use nalgebra::DMatrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn spec_sq(n: usize, d: f64) -> GridSpec {
        GridSpec {
            nx: n,
            ny: n,
            dx: d,
            dy: d,
            offset_x: 0.0,
            offset_y: 0.0,
        }
    }

    /// Dense matrix of the operator, one forward projection per pixel.
    fn dense_matrix(op: &impl SystemOp) -> DMatrix<f64> {
        let (nr, np) = (op.n_rays(), op.n_pixels());
        let mut a = DMatrix::zeros(nr, np);
        for p in 0..np {
            let mut x = vec![0.0; np];
            x[p] = 1.0;
            let col = op.forward(&x).unwrap();
            for r in 0..nr {
                a[(r, p)] = col[r];
            }
        }
        a
    }

    #[test]
    fn disk_chord_through_center() {
        // 255^2 grid so a pixel-center row passes through the isocenter
        let n = 255;
        let mu = 0.02;
        let r = 64.4;
        let mut img = ImageGrid::zeros(n, n, 1.0, 1.0).unwrap();
        for iy in 0..n {
            for ix in 0..n {
                let (x, y) = (img.pixel_x(ix), img.pixel_y(iy));
                if x * x + y * y <= r * r {
                    img.values[iy * n + ix] = mu;
                }
            }
        }
        let geom = ScanGeometry::parallel(2, 255, 1.0, PI).unwrap();
        let sino = forward_project(&img, &geom).unwrap();
        // central detector of view 0 passes through the disk center
        let central = sino[127];
        let expect = 2.0 * r * mu;
        assert!(
            (central - expect).abs() / expect < 0.005,
            "chord {central} vs {expect}"
        );
    }

    #[test]
    fn zero_image_projects_to_zero() {
        let img = ImageGrid::zeros(16, 16, 1.0, 1.0).unwrap();
        let geom = ScanGeometry::parallel(8, 24, 1.0, PI).unwrap();
        let sino = forward_project(&img, &geom).unwrap();
        assert!(sino.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_is_linear() {
        let geom = ScanGeometry::fan(6, 20, 2.0, 2.0 * PI * 0.99, 200.0, 400.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 12;
        let u: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>()).collect();
        let v: Vec<f64> = (0..n * n).map(|_| rng.gen::<f64>()).collect();
        let (a, b) = (0.7, -1.3);
        let proj = RayProjector::new(&geom, &spec_sq(n, 1.0)).unwrap();
        let lhs = proj
            .forward(&u.iter().zip(&v).map(|(x, y)| a * x + b * y).collect::<Vec<_>>())
            .unwrap();
        let pu = proj.forward(&u).unwrap();
        let pv = proj.forward(&v).unwrap();
        for i in 0..lhs.len() {
            let rhs = a * pu[i] + b * pv[i];
            assert!(
                (lhs[i] - rhs).abs() <= 1e-12 * rhs.abs().max(1.0),
                "linearity at ray {i}: {} vs {rhs}",
                lhs[i]
            );
        }
    }

    #[test]
    fn adjoint_dot_product() {
        for kind in [BeamKind::Parallel, BeamKind::Fan] {
            let geom = match kind {
                BeamKind::Parallel => ScanGeometry::parallel(12, 20, 1.5, PI).unwrap(),
                BeamKind::Fan => ScanGeometry::fan(12, 20, 1.5, 2.0 * PI * 0.98, 60.0, 120.0).unwrap(),
            };
            let spec = spec_sq(16, 1.0);
            let proj = RayProjector::new(&geom, &spec).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            for _ in 0..5 {
                let x: Vec<f64> = (0..spec.n_pixels()).map(|_| rng.gen::<f64>() - 0.5).collect();
                let y: Vec<f64> = (0..geom.n_rays()).map(|_| rng.gen::<f64>() - 0.5).collect();
                let ax = proj.forward(&x).unwrap();
                let aty = proj.back(&y).unwrap();
                let lhs: f64 = ax.iter().zip(&y).map(|(a, b)| a * b).sum();
                let rhs: f64 = x.iter().zip(&aty).map(|(a, b)| a * b).sum();
                let nax = ax.iter().map(|v| v * v).sum::<f64>().sqrt();
                let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
                assert!(
                    (lhs - rhs).abs() <= 1e-10 * nax * ny,
                    "{kind:?}: <Ax,y>={lhs} vs <x,Aty>={rhs}"
                );
            }
        }
    }

    #[test]
    fn zero_sinogram_backprojects_to_zero() {
        let geom = ScanGeometry::parallel(4, 8, 1.0, PI).unwrap();
        let img = back_project(&vec![0.0; 32], &geom, &spec_sq(8, 1.0)).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn one_hot_ray_matches_dense_row() {
        let geom = ScanGeometry::parallel(6, 10, 1.1, PI).unwrap();
        let spec = spec_sq(8, 1.0);
        let proj = RayProjector::new(&geom, &spec).unwrap();
        let a = dense_matrix(&proj);
        for ray in [0usize, 17, 33, 59] {
            let mut y = vec![0.0; geom.n_rays()];
            y[ray] = 1.0;
            let img = proj.back(&y).unwrap();
            for p in 0..spec.n_pixels() {
                assert!(
                    (img[p] - a[(ray, p)]).abs() < 1e-12,
                    "ray {ray} pixel {p}: {} vs {}",
                    img[p],
                    a[(ray, p)]
                );
            }
        }
    }

    #[test]
    fn footprints_nonnegative() {
        let geom = ScanGeometry::fan(8, 12, 1.0, 2.0 * PI * 0.9, 30.0, 70.0).unwrap();
        let proj = RayProjector::new(&geom, &spec_sq(8, 1.0)).unwrap();
        let a = dense_matrix(&proj);
        assert!(a.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn subsets_sum_to_full_operator() {
        let geom = ScanGeometry::parallel(8, 12, 1.0, PI).unwrap();
        let spec = spec_sq(10, 1.0);
        let proj = RayProjector::new(&geom, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let y: Vec<f64> = (0..geom.n_rays()).map(|_| rng.gen::<f64>()).collect();
        let full = proj.back(&y).unwrap();
        let part = SubsetPartition::bit_reversed(8, 4).unwrap();
        let mut acc = vec![0.0; spec.n_pixels()];
        for m in 0..4 {
            let views = part.views(m).unwrap();
            let sub = gather_rays(views, geom.n_det, &y);
            let img = proj.back_views(views, &sub).unwrap();
            for (a, b) in acc.iter_mut().zip(img) {
                *a += b;
            }
        }
        for (m, f) in acc.iter().zip(&full) {
            assert!((m - f).abs() <= 1e-12 * f.abs().max(1.0));
        }
        // M=1 is the full operator
        let p1 = SubsetPartition::bit_reversed(8, 1).unwrap();
        let same = proj.back_views(p1.views(0).unwrap(), &y).unwrap();
        assert_eq!(same, full);
    }

    #[test]
    fn da_identity_system_equals_weights() {
        let w = vec![0.5, 2.0, 0.0, 3.5];
        let op = DiagonalSystem::identity(4);
        let da = build_da(&op, &w).unwrap();
        assert_eq!(da, w);
    }

    #[test]
    fn da_zero_weights_zero_majorizer() {
        let geom = ScanGeometry::parallel(4, 6, 1.0, PI).unwrap();
        let proj = RayProjector::new(&geom, &spec_sq(6, 1.0)).unwrap();
        let da = build_da(&proj, &vec![0.0; geom.n_rays()]).unwrap();
        assert!(da.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn da_dominates_atwa() {
        let geom = ScanGeometry::parallel(6, 10, 1.0, PI).unwrap();
        let spec = spec_sq(8, 1.0);
        let proj = RayProjector::new(&geom, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w: Vec<f64> = (0..geom.n_rays()).map(|_| rng.gen::<f64>()).collect();
        let da = build_da(&proj, &w).unwrap();
        assert!(da.iter().all(|&v| v >= 0.0));
        let a = dense_matrix(&proj);
        let wm = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(w));
        let atwa = a.transpose() * wm * a;
        for _ in 0..100 {
            let x: Vec<f64> = (0..spec.n_pixels()).map(|_| rng.gen::<f64>()).collect();
            let xv = nalgebra::DVector::from_vec(x.clone());
            let quad = (xv.transpose() * &atwa * &xv)[(0, 0)];
            let diag: f64 = x.iter().zip(&da).map(|(xi, di)| di * xi * xi).sum();
            assert!(
                diag + 1e-10 * quad.abs().max(1.0) >= quad,
                "majorizer violated: {diag} < {quad}"
            );
        }
    }

    #[test]
    fn all_rays_missing_is_an_error() {
        // grid displaced perpendicular to the single view's rays
        let spec = GridSpec {
            nx: 4,
            ny: 4,
            dx: 1.0,
            dy: 1.0,
            offset_x: 0.0,
            offset_y: 1e5,
        };
        let geom = ScanGeometry::parallel(1, 4, 1.0, PI).unwrap();
        match RayProjector::new(&geom, &spec) {
            Err(Error::Geometry(msg)) => assert!(msg.contains("empty field of view")),
            Err(other) => panic!("expected empty-FOV error, got {other:?}"),
            Ok(_) => panic!("expected empty-FOV error, got a projector"),
        }
    }

    #[test]
    fn backproject_shape_mismatch_errors() {
        let geom = ScanGeometry::parallel(4, 4, 1.0, PI).unwrap();
        assert!(back_project(&vec![0.0; 15], &geom, &spec_sq(4, 1.0)).is_err());
    }

    #[test]
    fn determinism_across_thread_pools() {
        let geom = ScanGeometry::fan(16, 24, 1.0, 2.0 * PI * 0.95, 40.0, 90.0).unwrap();
        let spec = spec_sq(20, 0.8);
        let proj = RayProjector::new(&geom, &spec).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x: Vec<f64> = (0..spec.n_pixels()).map(|_| rng.gen::<f64>()).collect();
        let y: Vec<f64> = (0..geom.n_rays()).map(|_| rng.gen::<f64>()).collect();
        let (f1, b1) = (proj.forward(&x).unwrap(), proj.back(&y).unwrap());
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let (f2, b2) = pool.install(|| (proj.forward(&x).unwrap(), proj.back(&y).unwrap()));
        assert_eq!(f1, f2, "forward projection depends on thread count");
        assert_eq!(b1, b2, "back projection depends on thread count");
    }
}
