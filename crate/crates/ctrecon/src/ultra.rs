//! PWLS reconstruction regularized by a union of learned sparsifying
//! transforms: the alternation of a relaxed OS-LALM image update with
//! closed-form sparse coding and clustering. `K = 1` is the
//! single-transform path (the clustering degenerates).

use crate::error::{Error, Result};
use crate::geom::SubsetPartition;
use crate::oslalm::{data_cost, image_update};
use crate::patches::{accumulate_patches, build_dr, extract_patches, PatchIndex};
use crate::projector::SystemOp;
use crate::transform::TransformUnion;
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

#[derive(Debug, Clone, PartialEq)]
pub struct UltraParams {
    /// Regularization weight.
    pub beta: f64,
    /// Sparsity threshold; the effective per-patch threshold is
    /// `gamma / sqrt(tau_j)`.
    pub gamma: f64,
    /// Outer iterations.
    pub t_outer: usize,
    /// Inner image-update passes per outer iteration.
    pub n_inner: usize,
    /// Ordered subsets.
    pub subsets: usize,
    /// Over-relaxation, in [1, 2).
    pub alpha: f64,
    /// Re-cluster every this many outer iterations (codes update every
    /// iteration).
    pub cluster_every: usize,
    /// Fixed cluster labels (e.g. estimated from a reference image);
    /// skips adaptive clustering entirely.
    pub oracle_labels: Option<Vec<usize>>,
    /// Stop when the image change drops below this (0 = run all T).
    pub eps: f64,
    /// Record the full PWLS cost per outer iteration (disable for speed).
    pub log_cost: bool,
}

impl UltraParams {
    pub fn new(beta: f64, gamma: f64) -> Self {
        UltraParams {
            beta,
            gamma,
            t_outer: 20,
            n_inner: 2,
            subsets: 4,
            alpha: 1.999,
            cluster_every: 1,
            oracle_labels: None,
            eps: 0.0,
            log_cost: true,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0) || !(self.gamma > 0.0) {
            return Err(Error::Config("need beta > 0 and gamma > 0".into()));
        }
        if !(1.0..2.0).contains(&self.alpha) {
            return Err(Error::Config("alpha must be in [1, 2)".into()));
        }
        if self.subsets < 1 || self.cluster_every < 1 || self.t_outer < 1 || self.n_inner < 1 {
            return Err(Error::Config(
                "iteration counts and subsets must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-outer-iteration record of the reconstruction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuterTraceRow {
    pub outer_iter: usize,
    /// Full PWLS cost after the image update (NaN when cost logging is off).
    pub cost_after_image: f64,
    /// Full PWLS cost after sparse coding/clustering.
    pub cost_after_coding: f64,
    /// Image change `||x_t+1 - x_t||_2`.
    pub step_norm: f64,
}

#[derive(Debug, Clone)]
pub struct UltraResult {
    pub image: Vec<f64>,
    pub labels: Vec<usize>,
    pub trace: Vec<OuterTraceRow>,
}

/// Sparse codes and cluster labels for the patches of the current image:
/// per patch, the transform minimizing
/// `||O_k p - H(O_k p)||^2 + (gamma^2/tau_j) ||H(O_k p)||_0`
/// at threshold `gamma/sqrt(tau_j)`, ties to the smallest k.
pub fn recon_sparse_code_cluster(
    patches: &DMatrix<f64>,
    transforms: &[DMatrix<f64>],
    gamma: f64,
    tau: &[f64],
) -> Result<(DMatrix<f64>, Vec<usize>)> {
    let (l, n) = (patches.nrows(), patches.ncols());
    if tau.len() != n {
        return Err(Error::Shape("tau length != patch count".into()));
    }
    if tau.iter().any(|&t| !(t > 0.0)) {
        return Err(Error::Numerical("tau weights must be > 0".into()));
    }
    let mut code_data = vec![0.0f64; l * n];
    let mut labels = vec![0usize; n];
    code_data
        .par_chunks_mut(l)
        .zip(labels.par_iter_mut())
        .enumerate()
        .for_each(|(j, (code, label))| {
            let threshold = gamma / tau[j].sqrt();
            let col = patches.column(j);
            let mut w = DVector::<f64>::zeros(l);
            let mut best = DVector::<f64>::zeros(l);
            let mut best_cost = f64::INFINITY;
            let mut best_k = 0usize;
            for (k, omega) in transforms.iter().enumerate() {
                omega.mul_to(&col, &mut w);
                let (err, nnz) = crate::transform::threshold_stats(w.as_slice(), threshold);
                let cost = err + gamma * gamma / tau[j] * nnz as f64;
                if cost < best_cost {
                    best_cost = cost;
                    best_k = k;
                    best.copy_from(&w);
                }
            }
            *label = best_k;
            for (slot, &v) in code.iter_mut().zip(best.iter()) {
                *slot = if v.abs() >= threshold { v } else { 0.0 };
            }
        });
    Ok((DMatrix::from_vec(l, n, code_data), labels))
}

/// Sparse codes at fixed labels (thresholding only, no clustering).
pub fn recon_sparse_code_fixed_labels(
    patches: &DMatrix<f64>,
    transforms: &[DMatrix<f64>],
    gamma: f64,
    tau: &[f64],
    labels: &[usize],
) -> Result<DMatrix<f64>> {
    let (l, n) = (patches.nrows(), patches.ncols());
    if labels.len() != n || tau.len() != n {
        return Err(Error::Shape("labels/tau length != patch count".into()));
    }
    if let Some(&bad) = labels.iter().find(|&&k| k >= transforms.len()) {
        return Err(Error::Config(format!("label {bad} out of range")));
    }
    let mut code_data = vec![0.0f64; l * n];
    code_data.par_chunks_mut(l).enumerate().for_each(|(j, code)| {
        let threshold = gamma / tau[j].sqrt();
        let w = &transforms[labels[j]] * patches.column(j);
        for (slot, &v) in code.iter_mut().zip(w.iter()) {
            *slot = if v.abs() >= threshold { v } else { 0.0 };
        }
    });
    Ok(DMatrix::from_vec(l, n, code_data))
}

/// Gradient of the transform regularizer at fixed codes and labels:
/// `2 beta sum_j tau_j P_j^T O_{k_j}^T (O_{k_j} P_j x - z_j)`.
pub fn grad_r2(
    x: &[f64],
    index: &PatchIndex,
    codes: &DMatrix<f64>,
    labels: &[usize],
    transforms: &[DMatrix<f64>],
    tau: &[f64],
    beta: f64,
) -> Result<Vec<f64>> {
    let patches = extract_patches(x, index)?;
    let (l, n) = (patches.nrows(), patches.ncols());
    if codes.ncols() != n || labels.len() != n || tau.len() != n {
        return Err(Error::Shape("codes/labels/tau do not match the patch count".into()));
    }
    let mut col_data = vec![0.0f64; l * n];
    col_data.par_chunks_mut(l).enumerate().for_each(|(j, out)| {
        let omega = &transforms[labels[j]];
        let mut v = omega * patches.column(j);
        v -= codes.column(j);
        let back = omega.transpose() * v;
        out.copy_from_slice(back.as_slice());
    });
    let cols = DMatrix::from_vec(l, n, col_data);
    let scale: Vec<f64> = tau.iter().map(|&t| 2.0 * beta * t).collect();
    accumulate_patches(&cols, &scale, index)
}

/// Transform-regularizer value at fixed codes/labels (including beta):
/// `beta sum_j [tau_j ||O_{k_j} P_j x - z_j||^2 + gamma^2 ||z_j||_0]`.
pub fn regularizer_cost(
    x: &[f64],
    index: &PatchIndex,
    codes: &DMatrix<f64>,
    labels: &[usize],
    transforms: &[DMatrix<f64>],
    tau: &[f64],
    beta: f64,
    gamma: f64,
) -> Result<f64> {
    let patches = extract_patches(x, index)?;
    let n = patches.ncols();
    let total: f64 = (0..n)
        .into_par_iter()
        .map(|j| {
            let omega = &transforms[labels[j]];
            let resid = omega * patches.column(j) - codes.column(j);
            let nnz = codes.column(j).iter().filter(|&&v| v != 0.0).count();
            tau[j] * resid.norm_squared() + gamma * gamma * nnz as f64
        })
        .sum();
    Ok(beta * total)
}

/// PWLS-ULTRA reconstruction (Algorithm: alternate the OS-LALM image
/// update with sparse coding and clustering). Initial labels come from
/// the oracle if provided, otherwise from coding the initial image.
#[allow(clippy::too_many_arguments)]
pub fn pwls_ultra<S: SystemOp>(
    op: &S,
    y: &[f64],
    weights: &[f64],
    model: &TransformUnion,
    params: &UltraParams,
    init: &[f64],
    tau: &[f64],
    index: &PatchIndex,
) -> Result<UltraResult> {
    params.validate()?;
    model.validate()?;
    if model.patch_len() != index.patch_len() {
        return Err(Error::Model(format!(
            "model patch length {} does not match the patch config ({})",
            model.patch_len(),
            index.patch_len()
        )));
    }
    if init.len() != op.n_pixels() || init.len() != index.n_pixels() {
        return Err(Error::Shape("initial image does not match operator/patch grid".into()));
    }
    if let Some(oracle) = &params.oracle_labels {
        if oracle.len() != index.count() {
            return Err(Error::Shape("oracle label count != patch count".into()));
        }
        if oracle.iter().any(|&k| k >= model.k()) {
            return Err(Error::Config("oracle label out of range".into()));
        }
    }

    let transforms = &model.transforms;
    let part = SubsetPartition::bit_reversed(op.n_views(), params.subsets)?;
    let d_a = crate::projector::build_da(op, weights)?;
    let d_r = build_dr(index, tau, transforms, params.beta)?;

    let mut x = init.to_vec();
    let patches0 = extract_patches(&x, index)?;
    let (mut codes, mut labels) = match &params.oracle_labels {
        Some(oracle) => (
            recon_sparse_code_fixed_labels(&patches0, transforms, params.gamma, tau, oracle)?,
            oracle.clone(),
        ),
        None => recon_sparse_code_cluster(&patches0, transforms, params.gamma, tau)?,
    };

    let full_cost = |x: &[f64], codes: &DMatrix<f64>, labels: &[usize]| -> Result<f64> {
        Ok(data_cost(op, x, y, weights)?
            + regularizer_cost(x, index, codes, labels, transforms, tau, params.beta, params.gamma)?)
    };

    let mut trace = Vec::with_capacity(params.t_outer);
    for t in 0..params.t_outer {
        let x_prev = x.clone();
        image_update(
            op,
            &mut x,
            y,
            weights,
            &part,
            &d_a,
            &d_r,
            params.n_inner,
            params.alpha,
            |xs| grad_r2(xs, index, &codes, &labels, transforms, tau, params.beta),
            None,
        )?;
        let cost_after_image = if params.log_cost {
            full_cost(&x, &codes, &labels)?
        } else {
            f64::NAN
        };

        let patches = extract_patches(&x, index)?;
        if params.oracle_labels.is_some() {
            codes = recon_sparse_code_fixed_labels(&patches, transforms, params.gamma, tau, &labels)?;
        } else if model.k() > 1 && (t + 1) % params.cluster_every == 0 {
            let (c, l) = recon_sparse_code_cluster(&patches, transforms, params.gamma, tau)?;
            codes = c;
            labels = l;
        } else {
            codes = recon_sparse_code_fixed_labels(&patches, transforms, params.gamma, tau, &labels)?;
        }
        let cost_after_coding = if params.log_cost {
            full_cost(&x, &codes, &labels)?
        } else {
            f64::NAN
        };

        let step_norm = x
            .iter()
            .zip(&x_prev)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        trace.push(OuterTraceRow {
            outer_iter: t,
            cost_after_image,
            cost_after_coding,
            step_norm,
        });
        if params.eps > 0.0 && step_norm < params.eps {
            break;
        }
    }

    Ok(UltraResult {
        image: x,
        labels,
        trace,
    })
}

/// Per-pixel cluster labels by majority vote among the patches that
/// overlap each pixel; ties go to the smallest label.
pub fn pixel_cluster_map(
    labels: &[usize],
    index: &PatchIndex,
    k: usize,
) -> Result<Vec<usize>> {
    if labels.len() != index.count() {
        return Err(Error::Shape("label count != patch count".into()));
    }
    if labels.iter().any(|&l| l >= k) {
        return Err(Error::Config("label out of range".into()));
    }
    let npix = index.n_pixels();
    let mut counts = vec![0u32; npix * k];
    let mut idx = Vec::with_capacity(index.patch_len());
    for j in 0..index.count() {
        index.pixel_indices(j, &mut idx);
        for &p in &idx {
            counts[p * k + labels[j]] += 1;
        }
    }
    Ok((0..npix)
        .map(|p| {
            let row = &counts[p * k..(p + 1) * k];
            let mut best = 0usize;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            best
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::patches::{Boundary, PatchConfig};
    use crate::transform::{init_transforms, Provenance, TransformInit};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn toy_model(k: usize, shape: &[usize], seed: u64) -> TransformUnion {
        let mut m = TransformUnion {
            transforms: init_transforms(k, shape, TransformInit::RandomOrthonormal, seed).unwrap(),
            eta: 0.1,
            lambda0: 31.0,
            provenance: Provenance {
                patch_shape: shape.to_vec(),
                iterations: 0,
                seed,
            },
        };
        m.quantize_to_f32();
        m
    }

    fn index_for(shape: &[usize]) -> PatchIndex {
        let cfg = PatchConfig::new(vec![2, 2], vec![1, 1], Boundary::ClampInside).unwrap();
        PatchIndex::build(&cfg, shape).unwrap()
    }

    #[test]
    fn coding_k1_is_pure_thresholding_with_scaled_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = toy_model(1, &[2, 2], 3);
        let index = index_for(&[6, 6]);
        let x: Vec<f64> = (0..36).map(|_| rng.gen::<f64>()).collect();
        let patches = extract_patches(&x, &index).unwrap();
        let gamma = 0.4;
        let tau: Vec<f64> = (0..index.count()).map(|_| 0.5 + rng.gen::<f64>()).collect();
        let (codes, labels) =
            recon_sparse_code_cluster(&patches, &model.transforms, gamma, &tau).unwrap();
        assert!(labels.iter().all(|&l| l == 0));
        for j in 0..index.count() {
            let thr = gamma / tau[j].sqrt();
            let w = &model.transforms[0] * patches.column(j);
            for r in 0..4 {
                let expect = if w[r].abs() >= thr { w[r] } else { 0.0 };
                assert_eq!(codes[(r, j)], expect);
            }
        }
        // tau = 1 reduces the threshold to gamma itself
        let ones = vec![1.0; index.count()];
        let (codes1, _) =
            recon_sparse_code_cluster(&patches, &model.transforms, gamma, &ones).unwrap();
        for j in 0..index.count() {
            let w = &model.transforms[0] * patches.column(j);
            for r in 0..4 {
                let expect = if w[r].abs() >= gamma { w[r] } else { 0.0 };
                assert_eq!(codes1[(r, j)], expect);
            }
        }
    }

    #[test]
    fn clustering_matches_brute_force() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = toy_model(5, &[2, 2], 7);
        let index = index_for(&[7, 7]);
        let x: Vec<f64> = (0..49).map(|_| rng.gen::<f64>()).collect();
        let patches = extract_patches(&x, &index).unwrap();
        let gamma = 0.3;
        let tau: Vec<f64> = (0..index.count()).map(|_| 0.3 + rng.gen::<f64>()).collect();
        let (codes, labels) =
            recon_sparse_code_cluster(&patches, &model.transforms, gamma, &tau).unwrap();
        for j in 0..index.count() {
            let thr = gamma / tau[j].sqrt();
            let mut best = (f64::INFINITY, usize::MAX);
            for (k, omega) in model.transforms.iter().enumerate() {
                let w = omega * patches.column(j);
                let thresholded = crate::transform::hard_threshold(w.as_slice(), thr);
                let err: f64 = w
                    .iter()
                    .zip(&thresholded)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                let nnz = thresholded.iter().filter(|&&v| v != 0.0).count();
                let cost = err + gamma * gamma / tau[j] * nnz as f64;
                if cost < best.0 {
                    best = (cost, k);
                }
            }
            assert_eq!(labels[j], best.1, "patch {j}");
            let w = &model.transforms[labels[j]] * patches.column(j);
            for r in 0..4 {
                let expect = if w[r].abs() >= thr { w[r] } else { 0.0 };
                assert_eq!(codes[(r, j)], expect);
            }
        }
    }

    #[test]
    fn grad_r2_zero_at_exact_codes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let model = toy_model(2, &[2, 2], 13);
        let index = index_for(&[5, 5]);
        let x: Vec<f64> = (0..25).map(|_| rng.gen::<f64>()).collect();
        let patches = extract_patches(&x, &index).unwrap();
        let labels: Vec<usize> = (0..index.count()).map(|j| j % 2).collect();
        // z_j = O_k P_j x exactly
        let mut code_data = Vec::new();
        for j in 0..index.count() {
            let w = &model.transforms[labels[j]] * patches.column(j);
            code_data.extend(w.iter());
        }
        let codes = DMatrix::from_vec(4, index.count(), code_data);
        let tau = vec![1.0; index.count()];
        let g = grad_r2(&x, &index, &codes, &labels, &model.transforms, &tau, 2.0).unwrap();
        assert!(g.iter().all(|&v| v.abs() < 1e-12), "gradient not zero: {g:?}");
    }

    #[test]
    fn grad_r2_matches_finite_differences_and_scales_with_beta() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let model = toy_model(3, &[2, 2], 19);
        let cfg = PatchConfig::new(vec![2, 2], vec![2, 2], Boundary::ClampInside).unwrap();
        let index = PatchIndex::build(&cfg, &[16, 16]).unwrap();
        let x: Vec<f64> = (0..256).map(|_| rng.gen::<f64>()).collect();
        let n = index.count();
        let labels: Vec<usize> = (0..n).map(|_| rng.gen_range(0..3)).collect();
        let codes = DMatrix::from_fn(4, n, |_, _| rng.gen::<f64>() - 0.5);
        let tau: Vec<f64> = (0..n).map(|_| 0.2 + rng.gen::<f64>()).collect();
        let beta = 1.7;
        let g = grad_r2(&x, &index, &codes, &labels, &model.transforms, &tau, beta).unwrap();
        let cost = |x: &[f64]| {
            regularizer_cost(x, &index, &codes, &labels, &model.transforms, &tau, beta, 1.0)
                .unwrap()
        };
        let h = 1e-6;
        for p in [0usize, 33, 128, 255] {
            let mut xp = x.clone();
            xp[p] += h;
            let mut xm = x.clone();
            xm[p] -= h;
            let fd = (cost(&xp) - cost(&xm)) / (2.0 * h);
            assert!(
                (g[p] - fd).abs() <= 1e-5 * fd.abs().max(1.0),
                "pixel {p}: analytic {} vs FD {fd}",
                g[p]
            );
        }
        let g2 = grad_r2(&x, &index, &codes, &labels, &model.transforms, &tau, 2.0 * beta).unwrap();
        for (a, b) in g.iter().zip(&g2) {
            assert!((2.0 * a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn pixel_map_constant_for_k1() {
        let index = index_for(&[5, 5]);
        let labels = vec![0usize; index.count()];
        let map = pixel_cluster_map(&labels, &index, 1).unwrap();
        assert!(map.iter().all(|&m| m == 0));
    }

    #[test]
    fn pixel_map_disjoint_tiling_inherits_patch_label() {
        let cfg = PatchConfig::new(vec![2, 2], vec![2, 2], Boundary::ClampInside).unwrap();
        let index = PatchIndex::build(&cfg, &[4, 4]).unwrap();
        // patch order: (rows 0-1, cols 0-1), (0-1, 2-3), (2-3, 0-1), (2-3, 2-3)
        let labels = vec![2usize, 0, 1, 3];
        let map = pixel_cluster_map(&labels, &index, 4).unwrap();
        assert_eq!(map[0], 2);
        assert_eq!(map[1], 2);
        assert_eq!(map[2], 0);
        assert_eq!(map[5], 2);
        assert_eq!(map[8], 1);
        assert_eq!(map[10], 3);
        assert_eq!(map[15], 3);
    }

    #[test]
    fn pixel_map_matches_tally_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let cfg = PatchConfig::new(vec![2, 2], vec![1, 1], Boundary::ClampInside).unwrap();
        let index = PatchIndex::build(&cfg, &[8, 8]).unwrap();
        let k = 4;
        let labels: Vec<usize> = (0..index.count()).map(|_| rng.gen_range(0..k)).collect();
        let map = pixel_cluster_map(&labels, &index, k).unwrap();
        // direct per-pixel tally
        let mut tally = vec![[0u32; 4]; 64];
        let mut idx = Vec::new();
        for j in 0..index.count() {
            index.pixel_indices(j, &mut idx);
            for &p in &idx {
                tally[p][labels[j]] += 1;
            }
        }
        for p in 0..64 {
            let mut best = 0usize;
            for c in 1..k {
                if tally[p][c] > tally[p][best] {
                    best = c;
                }
            }
            assert_eq!(map[p], best, "pixel {p}: tally {:?}", tally[p]);
        }
    }

    #[test]
    fn model_patch_length_mismatch_errors() {
        let model = toy_model(2, &[2, 2], 1);
        let cfg = PatchConfig::new(vec![3, 3], vec![1, 1], Boundary::ClampInside).unwrap();
        let index = PatchIndex::build(&cfg, &[8, 8]).unwrap();
        let op = crate::projector::DiagonalSystem::identity(64);
        let params = UltraParams::new(1.0, 0.1);
        let tau = vec![1.0; index.count()];
        let err = pwls_ultra(
            &op,
            &vec![0.0; 64],
            &vec![1.0; 64],
            &model,
            &params,
            &vec![0.0; 64],
            &tau,
            &index,
        );
        assert!(err.is_err());
    }
}
