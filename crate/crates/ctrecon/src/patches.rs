//! Patch extraction operators, their exact adjoints, patch-based weights,
//! and the diagonal regularizer majorizer `D_R`.
//!
//! Patches are dimension-generic (shapes are per-axis slices, row-major
//! layout); the reconstruction pipeline uses them in 2D. Columns of the
//! patch matrix hold patch pixels in fixed raster order.

use crate::error::{Error, Result};
use crate::transform::lambda_max_gram;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Boundary {
    /// Patch start positions are clamped so every patch lies in bounds.
    ClampInside,
    /// Patches wrap around at image boundaries.
    Wrap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    /// Per-axis patch sizes; product is the patch length l.
    pub patch_shape: Vec<usize>,
    /// Per-axis step between patch starts.
    pub stride: Vec<usize>,
    pub boundary: Boundary,
}

impl PatchConfig {
    pub fn new(patch_shape: Vec<usize>, stride: Vec<usize>, boundary: Boundary) -> Result<Self> {
        if patch_shape.is_empty() || patch_shape.len() != stride.len() {
            return Err(Error::Config(
                "patch_shape and stride must be non-empty and the same length".into(),
            ));
        }
        for (&p, &s) in patch_shape.iter().zip(&stride) {
            if p < 1 || s < 1 || s > p {
                return Err(Error::Config(format!(
                    "need 1 <= stride <= patch size per axis, got patch {p} stride {s}"
                )));
            }
        }
        Ok(PatchConfig {
            patch_shape,
            stride,
            boundary,
        })
    }

    /// Patch length l = product of the per-axis sizes.
    pub fn patch_len(&self) -> usize {
        self.patch_shape.iter().product()
    }
}

/// Derived list of patch start positions for one image shape.
#[derive(Debug, Clone)]
pub struct PatchIndex {
    pub cfg: PatchConfig,
    pub image_shape: Vec<usize>,
    /// Start coordinates along each axis; patches enumerate their
    /// cartesian product with the last axis fastest.
    axis_starts: Vec<Vec<usize>>,
    /// Linear in-patch offsets (valid for every clamp-inside patch).
    rel_offsets: Vec<usize>,
    count: usize,
}

impl PatchIndex {
    pub fn build(cfg: &PatchConfig, image_shape: &[usize]) -> Result<Self> {
        if image_shape.len() != cfg.patch_shape.len() {
            return Err(Error::Shape(format!(
                "image rank {} != patch rank {}",
                image_shape.len(),
                cfg.patch_shape.len()
            )));
        }
        for (&n, &p) in image_shape.iter().zip(&cfg.patch_shape) {
            if n < p {
                return Err(Error::Shape(format!(
                    "image extent {n} smaller than patch extent {p}"
                )));
            }
        }
        let axis_starts: Vec<Vec<usize>> = image_shape
            .iter()
            .zip(cfg.patch_shape.iter().zip(&cfg.stride))
            .map(|(&n, (&p, &s))| match cfg.boundary {
                Boundary::ClampInside => {
                    let mut starts: Vec<usize> = (0..).map(|i| i * s).take_while(|&x| x + p <= n).collect();
                    if *starts.last().unwrap() != n - p {
                        starts.push(n - p);
                    }
                    starts
                }
                Boundary::Wrap => (0..).map(|i| i * s).take_while(|&x| x < n).collect(),
            })
            .collect();
        let count = axis_starts.iter().map(Vec::len).product();
        // row-major strides of the image
        let mut strides = vec![1usize; image_shape.len()];
        for a in (0..image_shape.len() - 1).rev() {
            strides[a] = strides[a + 1] * image_shape[a + 1];
        }
        let mut rel_offsets = Vec::with_capacity(cfg.patch_len());
        let mut coord = vec![0usize; cfg.patch_shape.len()];
        loop {
            rel_offsets.push(coord.iter().zip(&strides).map(|(c, s)| c * s).sum());
            if !increment(&mut coord, &cfg.patch_shape) {
                break;
            }
        }
        Ok(PatchIndex {
            cfg: cfg.clone(),
            image_shape: image_shape.to_vec(),
            axis_starts,
            rel_offsets,
            count,
        })
    }

    /// Number of patches.
    pub fn count(&self) -> usize {
        self.count
    }

    pub fn patch_len(&self) -> usize {
        self.cfg.patch_len()
    }

    pub fn n_pixels(&self) -> usize {
        self.image_shape.iter().product()
    }

    /// Start coordinates of patch `j` (last axis fastest).
    pub fn start_of(&self, j: usize, out: &mut [usize]) {
        let mut rem = j;
        for a in (0..self.axis_starts.len()).rev() {
            let n = self.axis_starts[a].len();
            out[a] = self.axis_starts[a][rem % n];
            rem /= n;
        }
    }

    /// Absolute linear pixel indices of patch `j`, in raster order.
    pub fn pixel_indices(&self, j: usize, out: &mut Vec<usize>) {
        out.clear();
        let rank = self.image_shape.len();
        let mut start = vec![0usize; rank];
        self.start_of(j, &mut start);
        match self.cfg.boundary {
            Boundary::ClampInside => {
                let mut strides = vec![1usize; rank];
                for a in (0..rank - 1).rev() {
                    strides[a] = strides[a + 1] * self.image_shape[a + 1];
                }
                let base: usize = start.iter().zip(&strides).map(|(c, s)| c * s).sum();
                out.extend(self.rel_offsets.iter().map(|&r| base + r));
            }
            Boundary::Wrap => {
                let mut coord = vec![0usize; rank];
                loop {
                    let mut lin = 0usize;
                    for a in 0..rank {
                        let n = self.image_shape[a];
                        lin = lin * n + (start[a] + coord[a]) % n;
                    }
                    out.push(lin);
                    if !increment(&mut coord, &self.cfg.patch_shape) {
                        break;
                    }
                }
            }
        }
    }
}

fn increment(coord: &mut [usize], shape: &[usize]) -> bool {
    for a in (0..coord.len()).rev() {
        coord[a] += 1;
        if coord[a] < shape[a] {
            return true;
        }
        coord[a] = 0;
    }
    false
}

/// Extracts all patches of `image` as columns of an l x N matrix.
pub fn extract_patches(image: &[f64], index: &PatchIndex) -> Result<DMatrix<f64>> {
    if image.len() != index.n_pixels() {
        return Err(Error::Shape(format!(
            "image length {} != {} pixels",
            image.len(),
            index.n_pixels()
        )));
    }
    let l = index.patch_len();
    let n = index.count();
    let mut data = vec![0.0; l * n];
    data.par_chunks_mut(l).enumerate().for_each(|(j, col)| {
        let mut idx = Vec::with_capacity(l);
        index.pixel_indices(j, &mut idx);
        for (slot, &pix) in col.iter_mut().zip(&idx) {
            *slot = image[pix];
        }
    });
    Ok(DMatrix::from_vec(l, n, data))
}

/// Fixed chunk count for the deterministic scatter reduction.
const SCATTER_CHUNKS: usize = 16;

/// Adjoint of [`extract_patches`] with per-patch scaling:
/// `sum_j scale_j P_j^T cols_j`. Column count must match the index.
pub fn accumulate_patches(
    cols: &DMatrix<f64>,
    scale: &[f64],
    index: &PatchIndex,
) -> Result<Vec<f64>> {
    if cols.ncols() != index.count() || scale.len() != index.count() {
        return Err(Error::Shape(format!(
            "column count {} / scale count {} != patch count {}",
            cols.ncols(),
            scale.len(),
            index.count()
        )));
    }
    if cols.nrows() != index.patch_len() {
        return Err(Error::Shape(format!(
            "column length {} != patch length {}",
            cols.nrows(),
            index.patch_len()
        )));
    }
    scatter_patches(index, |j, buf| {
        let col = cols.column(j);
        let s = scale[j];
        for (b, c) in buf.iter_mut().zip(col.iter()) {
            *b = s * c;
        }
    })
}

/// Scatter `scale_j` onto every pixel of patch `j`:
/// the diagonal of `sum_j scale_j P_j^T P_j`.
pub fn accumulate_constant(scale: &[f64], index: &PatchIndex) -> Result<Vec<f64>> {
    if scale.len() != index.count() {
        return Err(Error::Shape(format!(
            "scale count {} != patch count {}",
            scale.len(),
            index.count()
        )));
    }
    scatter_patches(index, |j, buf| buf.fill(scale[j]))
}

/// Deterministic parallel scatter: fixed patch chunks produce partial
/// images that are summed in chunk order.
fn scatter_patches(
    index: &PatchIndex,
    fill: impl Fn(usize, &mut [f64]) + Sync,
) -> Result<Vec<f64>> {
    let npix = index.n_pixels();
    let n = index.count();
    let l = index.patch_len();
    let chunk = n.div_ceil(SCATTER_CHUNKS);
    let partials: Vec<Vec<f64>> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(chunk)
        .map(|patch_ids| {
            let mut img = vec![0.0; npix];
            let mut idx = Vec::with_capacity(l);
            let mut buf = vec![0.0; l];
            for &j in patch_ids {
                fill(j, &mut buf);
                index.pixel_indices(j, &mut idx);
                for (&pix, &v) in idx.iter().zip(&buf) {
                    img[pix] += v;
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

/// Patch weights `tau_j = ||P_j kappa||_1 / l`, the mean of |kappa| over
/// each patch.
pub fn tau_weights(kappa: &[f64], index: &PatchIndex) -> Result<Vec<f64>> {
    if kappa.len() != index.n_pixels() {
        return Err(Error::Shape(format!(
            "kappa length {} != {} pixels",
            kappa.len(),
            index.n_pixels()
        )));
    }
    let l = index.patch_len() as f64;
    let out: Vec<f64> = (0..index.count())
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(index.patch_len()),
            |idx, j| {
                index.pixel_indices(j, idx);
                idx.iter().map(|&p| kappa[p].abs()).sum::<f64>() / l
            },
        )
        .collect();
    Ok(out)
}

/// Diagonal majorizer of the transform-regularizer Hessian:
/// `D_R = 2 beta {max_k lambda_max(O_k^T O_k)} sum_j tau_j P_j^T P_j`.
///
/// The sum runs over all patches, so the same `D_R` majorizes the Hessian
/// for every cluster assignment; it is precomputed once per reconstruction.
pub fn build_dr(
    index: &PatchIndex,
    tau: &[f64],
    transforms: &[DMatrix<f64>],
    beta: f64,
) -> Result<Vec<f64>> {
    if transforms.is_empty() {
        return Err(Error::Config("need at least one transform".into()));
    }
    let mut max_eig = 0.0f64;
    for t in transforms {
        if t.nrows() != t.ncols() {
            return Err(Error::Shape("transforms must be square".into()));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("transforms must be finite".into()));
        }
        max_eig = max_eig.max(lambda_max_gram(t));
    }
    let mut dr = accumulate_constant(tau, index)?;
    let scale = 2.0 * beta * max_eig;
    for v in &mut dr {
        *v *= scale;
    }
    Ok(dr)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg2(p: usize, s: usize, b: Boundary) -> PatchConfig {
        PatchConfig::new(vec![p, p], vec![s, s], b).unwrap()
    }

    #[test]
    fn whole_image_patch_is_vectorized_image() {
        let cfg = PatchConfig::new(vec![3, 4], vec![2, 3], Boundary::ClampInside).unwrap();
        let index = PatchIndex::build(&cfg, &[3, 4]).unwrap();
        assert_eq!(index.count(), 1);
        let image: Vec<f64> = (0..12).map(|v| v as f64).collect();
        let cols = extract_patches(&image, &index).unwrap();
        assert_eq!(cols.ncols(), 1);
        assert_eq!(cols.column(0).iter().copied().collect::<Vec<_>>(), image);
    }

    #[test]
    fn disjoint_tiling_stride_equals_patch() {
        let cfg = cfg2(2, 2, Boundary::ClampInside);
        let index = PatchIndex::build(&cfg, &[4, 4]).unwrap();
        assert_eq!(index.count(), 4);
        let image: Vec<f64> = (0..16).map(|v| v as f64).collect();
        let cols = extract_patches(&image, &index).unwrap();
        // patch 0 is the top-left 2x2 block in raster order
        assert_eq!(
            cols.column(0).iter().copied().collect::<Vec<_>>(),
            vec![0.0, 1.0, 4.0, 5.0]
        );
        // each pixel appears exactly once
        let cover = accumulate_constant(&vec![1.0; 4], &index).unwrap();
        assert!(cover.iter().all(|&c| c == 1.0));
    }

    #[test]
    fn wrap_stride1_covers_each_pixel_l_times() {
        let cfg = cfg2(2, 1, Boundary::Wrap);
        let index = PatchIndex::build(&cfg, &[8, 8]).unwrap();
        assert_eq!(index.count(), 64);
        let cover = accumulate_constant(&vec![1.0; 64], &index).unwrap();
        assert!(cover.iter().all(|&c| c == 4.0), "cover {cover:?}");
    }

    #[test]
    fn accumulate_is_exact_adjoint_of_extract() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for boundary in [Boundary::ClampInside, Boundary::Wrap] {
            let cfg = PatchConfig::new(vec![3, 2], vec![2, 2], boundary).unwrap();
            let index = PatchIndex::build(&cfg, &[7, 6]).unwrap();
            let npix = index.n_pixels();
            let (l, n) = (index.patch_len(), index.count());
            let x: Vec<f64> = (0..npix).map(|_| rng.gen::<f64>() - 0.5).collect();
            let y = DMatrix::from_fn(l, n, |_, _| rng.gen::<f64>() - 0.5);
            let tau: Vec<f64> = (0..n).map(|_| rng.gen::<f64>() + 0.1).collect();
            let px = extract_patches(&x, &index).unwrap();
            // <P x, diag(tau) Y> = <x, sum_j tau_j P_j^T Y_j>
            let lhs: f64 = (0..n)
                .map(|j| tau[j] * px.column(j).dot(&y.column(j)))
                .sum();
            let back = accumulate_patches(&y, &tau, &index).unwrap();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!(
                (lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0),
                "{boundary:?}: {lhs} vs {rhs}"
            );
        }
    }

    #[test]
    fn all_ones_wrap_accumulates_to_l() {
        let cfg = cfg2(3, 1, Boundary::Wrap);
        let index = PatchIndex::build(&cfg, &[6, 6]).unwrap();
        let ones = DMatrix::from_element(9, index.count(), 1.0);
        let img = accumulate_patches(&ones, &vec![1.0; index.count()], &index).unwrap();
        assert!(img.iter().all(|&v| v == 9.0));
    }

    #[test]
    fn zero_patches_accumulate_to_zero() {
        let cfg = cfg2(2, 1, Boundary::ClampInside);
        let index = PatchIndex::build(&cfg, &[5, 5]).unwrap();
        let zeros = DMatrix::zeros(4, index.count());
        let img = accumulate_patches(&zeros, &vec![1.0; index.count()], &index).unwrap();
        assert!(img.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn tau_constant_kappa() {
        let cfg = cfg2(2, 1, Boundary::ClampInside);
        let index = PatchIndex::build(&cfg, &[6, 6]).unwrap();
        let tau = tau_weights(&vec![1.0; 36], &index).unwrap();
        assert!(tau.iter().all(|&t| (t - 1.0).abs() < 1e-15));
        let tau_c = tau_weights(&vec![2.5; 36], &index).unwrap();
        assert!(tau_c.iter().all(|&t| (t - 2.5).abs() < 1e-14));
    }

    #[test]
    fn tau_matches_direct_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let kappa: Vec<f64> = (0..64).map(|_| rng.gen::<f64>() * 3.0).collect();
        let cfg = cfg2(3, 2, Boundary::ClampInside);
        let index = PatchIndex::build(&cfg, &[8, 8]).unwrap();
        let tau = tau_weights(&kappa, &index).unwrap();
        let mut idx = Vec::new();
        for j in 0..index.count() {
            index.pixel_indices(j, &mut idx);
            let direct: f64 = idx.iter().map(|&p| kappa[p].abs()).sum::<f64>() / 9.0;
            assert!((tau[j] - direct).abs() < 1e-14);
        }
    }

    #[test]
    fn dr_identity_transform_wrap_is_l() {
        let cfg = cfg2(2, 1, Boundary::Wrap);
        let index = PatchIndex::build(&cfg, &[8, 8]).unwrap();
        let eye = DMatrix::<f64>::identity(4, 4);
        let tau = vec![1.0; index.count()];
        let dr = build_dr(&index, &tau, &[eye.clone()], 0.5).unwrap();
        assert!(dr.iter().all(|&v| (v - 4.0).abs() < 1e-10), "dr {dr:?}");
        // linear in beta
        let dr2 = build_dr(&index, &tau, &[eye], 1.0).unwrap();
        for (a, b) in dr.iter().zip(&dr2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dr_dominates_regularizer_hessian() {
        // explicit Hessian sum tau_j P_j^T O_k^T O_k P_j on a 16x16 image
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let cfg = cfg2(3, 2, Boundary::ClampInside);
        let index = PatchIndex::build(&cfg, &[16, 16]).unwrap();
        let npix = index.n_pixels();
        let l = index.patch_len();
        let k = 3usize;
        let beta = 0.8;
        let transforms: Vec<DMatrix<f64>> = (0..k)
            .map(|_| DMatrix::from_fn(l, l, |_, _| rng.gen::<f64>() - 0.5))
            .collect();
        let tau: Vec<f64> = (0..index.count()).map(|_| rng.gen::<f64>() + 0.05).collect();
        let dr = build_dr(&index, &tau, &transforms, beta).unwrap();
        let grams: Vec<DMatrix<f64>> = transforms.iter().map(|t| t.transpose() * t).collect();
        for trial in 0..4 {
            // random clustering
            let labels: Vec<usize> = (0..index.count()).map(|_| rng.gen_range(0..k)).collect();
            let mut hess = DMatrix::<f64>::zeros(npix, npix);
            let mut idx = Vec::new();
            for j in 0..index.count() {
                index.pixel_indices(j, &mut idx);
                let g = &grams[labels[j]];
                for a in 0..l {
                    for b in 0..l {
                        hess[(idx[a], idx[b])] += 2.0 * beta * tau[j] * g[(a, b)];
                    }
                }
            }
            for _ in 0..25 {
                let x: Vec<f64> = (0..npix).map(|_| rng.gen::<f64>() - 0.5).collect();
                let xv = nalgebra::DVector::from_vec(x.clone());
                let quad = (xv.transpose() * &hess * &xv)[(0, 0)];
                let diag: f64 = x.iter().zip(&dr).map(|(xi, di)| di * xi * xi).sum();
                assert!(
                    diag + 1e-10 * quad.abs().max(1.0) >= quad,
                    "trial {trial}: D_R {diag} < Hessian {quad}"
                );
            }
        }
    }

    #[test]
    fn image_smaller_than_patch_errors() {
        let cfg = cfg2(4, 2, Boundary::ClampInside);
        assert!(PatchIndex::build(&cfg, &[3, 8]).is_err());
    }

    #[test]
    fn shape_mismatches_error() {
        let cfg = cfg2(2, 2, Boundary::ClampInside);
        let index = PatchIndex::build(&cfg, &[4, 4]).unwrap();
        assert!(extract_patches(&vec![0.0; 15], &index).is_err());
        let bad = DMatrix::zeros(4, 3);
        assert!(accumulate_patches(&bad, &vec![1.0; 3], &index).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn adjointness_holds_for_random_configs(
            ny in 3usize..10,
            nx in 3usize..10,
            py in 1usize..4,
            px in 1usize..4,
            sy in 1usize..4,
            sx in 1usize..4,
            wrap in proptest::bool::ANY,
            seed in 0u64..1000,
        ) {
            let py = py.min(ny);
            let px = px.min(nx);
            let sy = sy.min(py);
            let sx = sx.min(px);
            let boundary = if wrap { Boundary::Wrap } else { Boundary::ClampInside };
            let cfg = PatchConfig::new(vec![py, px], vec![sy, sx], boundary).unwrap();
            let index = PatchIndex::build(&cfg, &[ny, nx]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<f64> = (0..ny * nx).map(|_| rng.gen::<f64>() - 0.5).collect();
            let y = DMatrix::from_fn(index.patch_len(), index.count(), |_, _| rng.gen::<f64>() - 0.5);
            let ones = vec![1.0; index.count()];
            let px_mat = extract_patches(&x, &index).unwrap();
            let lhs: f64 = (0..index.count()).map(|j| px_mat.column(j).dot(&y.column(j))).sum();
            let back = accumulate_patches(&y, &ones, &index).unwrap();
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            prop_assert!((lhs - rhs).abs() <= 1e-12 * lhs.abs().max(1.0));
            // every pixel covered by at least one patch
            let cover = accumulate_constant(&ones, &index).unwrap();
            prop_assert!(cover.iter().all(|&c| c >= 1.0));
        }
    }
}
