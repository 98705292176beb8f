//! Relaxed linearized augmented Lagrangian image update with ordered
//! subsets: the inner solver shared by the PWLS reconstructions.
//!
//! One call runs N passes over M subsets. The iterate sequence is, for
//! inner counter r = n*M + m and rho = rho_schedule(r, alpha):
//!
//! ```text
//! s     = rho (D_A x - h) + (1 - rho) g
//! x     = [x - (rho D_A + D_R)^{-1} (s + grad_reg(x))]_+
//! zeta  = M A_m^T W_m (A_m x - y_m)
//! g     = rho/(rho+1) (alpha zeta + (1-alpha) g) + 1/(rho+1) g
//! h     = alpha (D_A x - zeta) + (1-alpha) h
//! ```
//!
//! with g = zeta initialized from the last subset and h = D_A x - zeta.

use crate::error::{Error, Result};
use crate::geom::SubsetPartition;
use crate::projector::{gather_rays, SystemOp};

/// Relaxation-dependent step-size schedule, decreasing from 1:
/// `rho_0 = 1`, `rho_r = pi/(alpha (r+1)) sqrt(1 - (pi/(2 alpha (r+1)))^2)`.
pub fn rho_schedule(r: usize, alpha: f64) -> f64 {
    if r == 0 {
        return 1.0;
    }
    let t = std::f64::consts::PI / (alpha * (r as f64 + 1.0));
    t * (1.0 - (t / 2.0) * (t / 2.0)).sqrt()
}

/// Observer invoked after each full pass over the subsets; returning an
/// error aborts the update (used for cost traces and divergence guards).
pub type PassObserver<'a> = &'a mut dyn FnMut(usize, &[f64]) -> Result<()>;

/// Runs `n_inner` passes of relaxed OS-LALM on
/// `min_x 0.5 ||y - A x||_W^2 + reg(x)`, `x >= 0`, updating `x` in place.
///
/// `grad_reg` evaluates the full regularizer gradient (including its
/// weight); `d_r` must majorize the regularizer Hessian. Pixels where
/// `rho d_a + d_r` is zero (outside every ray and patch) are left
/// unchanged. Aborts with a diagnostic if an iterate goes non-finite.
#[allow(clippy::too_many_arguments)]
pub fn image_update<S: SystemOp>(
    op: &S,
    x: &mut [f64],
    y: &[f64],
    w: &[f64],
    part: &SubsetPartition,
    d_a: &[f64],
    d_r: &[f64],
    n_inner: usize,
    alpha: f64,
    mut grad_reg: impl FnMut(&[f64]) -> Result<Vec<f64>>,
    mut on_pass: Option<PassObserver<'_>>,
) -> Result<()> {
    let npix = op.n_pixels();
    let nrays = op.n_rays();
    if x.len() != npix || d_a.len() != npix || d_r.len() != npix {
        return Err(Error::Shape("image-sized vectors do not match the operator".into()));
    }
    if y.len() != nrays || w.len() != nrays {
        return Err(Error::Shape("sinogram vectors do not match the operator".into()));
    }
    if !(1.0..2.0).contains(&alpha) {
        return Err(Error::Config(format!("relaxation alpha {alpha} must be in [1, 2)")));
    }
    let m_subsets = part.n_subsets();
    let rpv = op.rays_per_view();
    let subset_y: Vec<Vec<f64>> = (0..m_subsets)
        .map(|m| Ok(gather_rays(part.views(m)?, rpv, y)))
        .collect::<Result<_>>()?;
    let subset_w: Vec<Vec<f64>> = (0..m_subsets)
        .map(|m| Ok(gather_rays(part.views(m)?, rpv, w)))
        .collect::<Result<_>>()?;

    let zeta_of = |m: usize, x: &[f64]| -> Result<Vec<f64>> {
        let views = part.views(m)?;
        let mut proj = op.forward_views(views, x)?;
        for (p, (&yv, &wv)) in proj.iter_mut().zip(subset_y[m].iter().zip(&subset_w[m])) {
            *p = wv * (*p - yv);
        }
        let mut img = op.back_views(views, &proj)?;
        let scale = m_subsets as f64;
        img.iter_mut().for_each(|v| *v *= scale);
        Ok(img)
    };

    let mut zeta = zeta_of(m_subsets - 1, x)?;
    let mut g = zeta.clone();
    let mut h: Vec<f64> = d_a.iter().zip(x.iter()).zip(&zeta).map(|((&d, &xv), &z)| d * xv - z).collect();

    let mut r = 0usize;
    for n in 0..n_inner {
        for m in 0..m_subsets {
            let rho = rho_schedule(r, alpha);
            let grad = grad_reg(x)?;
            if grad.len() != npix {
                return Err(Error::Shape("regularizer gradient has wrong length".into()));
            }
            for j in 0..npix {
                let s = rho * (d_a[j] * x[j] - h[j]) + (1.0 - rho) * g[j];
                let denom = rho * d_a[j] + d_r[j];
                if denom > 0.0 {
                    x[j] = (x[j] - (s + grad[j]) / denom).max(0.0);
                }
            }
            if x.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numerical(format!(
                    "non-finite iterate at inner iteration {r} (subset {m})"
                )));
            }
            zeta = zeta_of(m, x)?;
            for j in 0..npix {
                g[j] = rho / (rho + 1.0) * (alpha * zeta[j] + (1.0 - alpha) * g[j])
                    + 1.0 / (rho + 1.0) * g[j];
                h[j] = alpha * (d_a[j] * x[j] - zeta[j]) + (1.0 - alpha) * h[j];
            }
            r += 1;
        }
        if let Some(obs) = on_pass.as_deref_mut() {
            obs(n, x)?;
        }
    }
    Ok(())
}

/// Weighted data-fidelity term `0.5 ||y - A x||_W^2`.
pub fn data_cost<S: SystemOp>(op: &S, x: &[f64], y: &[f64], w: &[f64]) -> Result<f64> {
    let proj = op.forward(x)?;
    Ok(proj
        .iter()
        .zip(y)
        .zip(w)
        .map(|((&p, &yv), &wv)| 0.5 * wv * (p - yv) * (p - yv))
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::projector::DiagonalSystem;

    #[test]
    fn rho_starts_at_one() {
        assert_eq!(rho_schedule(0, 1.999), 1.0);
        assert_eq!(rho_schedule(0, 1.0), 1.0);
    }

    #[test]
    fn rho_first_decrement_value() {
        // direct evaluation of the schedule at r=1, alpha=1.999
        let rho = rho_schedule(1, 1.999);
        assert!(
            (rho - 0.7226001886537752).abs() < 1e-5,
            "rho(1, 1.999) = {rho}"
        );
    }

    #[test]
    fn rho_strictly_decreasing() {
        for alpha in [1.0, 1.5, 1.999] {
            let mut prev = rho_schedule(1, alpha);
            assert!(prev < 1.0 && prev > 0.0);
            for r in 2..10_000 {
                let rho = rho_schedule(r, alpha);
                assert!(rho < prev, "rho not decreasing at r={r}, alpha={alpha}");
                assert!(rho > 0.0);
                prev = rho;
            }
        }
    }

    #[test]
    fn separable_identity_recovers_clamped_data() {
        // A = I, W = I, no regularizer: minimizer of 0.5||y - x||^2, x >= 0
        let n = 24;
        let y: Vec<f64> = (0..n).map(|i| (i as f64) - 10.5).collect();
        let op = DiagonalSystem::identity(n);
        let part = SubsetPartition::bit_reversed(n, 1).unwrap();
        let d_a = vec![1.0; n];
        let d_r = vec![0.0; n];
        let w = vec![1.0; n];
        let mut x = vec![3.0; n];
        image_update(
            &op,
            &mut x,
            &y,
            &w,
            &part,
            &d_a,
            &d_r,
            60,
            1.999,
            |_x| Ok(vec![0.0; n]),
            None,
        )
        .unwrap();
        for (xi, yi) in x.iter().zip(&y) {
            let expect = yi.max(0.0);
            // the rho schedule gives an O(1/r^2) tail on this quadratic
            assert!(
                (xi - expect).abs() < 1e-5,
                "did not converge to the clamp: {xi} vs {expect}"
            );
        }
        // clamp(y, 0) is a fixed point of the iteration (up to rounding in
        // the alpha-mixing updates)
        let mut fixed: Vec<f64> = y.iter().map(|v| v.max(0.0)).collect();
        let expect = fixed.clone();
        image_update(
            &op,
            &mut fixed,
            &y,
            &w,
            &part,
            &d_a,
            &d_r,
            5,
            1.999,
            |_x| Ok(vec![0.0; n]),
            None,
        )
        .unwrap();
        for (a, b) in fixed.iter().zip(&expect) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0), "{a} vs {b}");
        }
    }

    #[test]
    fn frozen_pixels_outside_coverage_keep_values() {
        // second pixel has zero system coefficient and zero majorizers
        let op = DiagonalSystem::new(vec![1.0, 0.0, 2.0]);
        let part = SubsetPartition::bit_reversed(3, 1).unwrap();
        let d_a = crate::projector::build_da(&op, &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!(d_a[1], 0.0);
        let mut x = vec![0.5, 7.0, 0.5];
        image_update(
            &op,
            &mut x,
            &[2.0, 0.0, 4.0],
            &[1.0, 1.0, 1.0],
            &part,
            &d_a,
            &vec![0.0; 3],
            40,
            1.5,
            |_x| Ok(vec![0.0; 3]),
            None,
        )
        .unwrap();
        assert_eq!(x[1], 7.0, "uncovered pixel moved");
        assert!((x[0] - 2.0).abs() < 1e-8);
        assert!((x[2] - 2.0).abs() < 1e-8);
    }

    #[test]
    fn rejects_bad_alpha() {
        let op = DiagonalSystem::identity(2);
        let part = SubsetPartition::bit_reversed(2, 1).unwrap();
        let mut x = vec![0.0; 2];
        let err = image_update(
            &op,
            &mut x,
            &[0.0; 2],
            &[1.0; 2],
            &part,
            &[1.0; 2],
            &[0.0; 2],
            1,
            2.0,
            |_x| Ok(vec![0.0; 2]),
            None,
        );
        assert!(err.is_err());
    }

    #[test]
    fn observer_sees_every_pass_and_can_abort() {
        let op = DiagonalSystem::identity(4);
        let part = SubsetPartition::bit_reversed(4, 2).unwrap();
        let mut x = vec![0.0; 4];
        let mut passes = Vec::new();
        let mut obs = |n: usize, _x: &[f64]| {
            passes.push(n);
            if n == 2 {
                return Err(Error::Numerical("stop".into()));
            }
            Ok(())
        };
        let res = image_update(
            &op,
            &mut x,
            &[1.0; 4],
            &[1.0; 4],
            &part,
            &[1.0; 4],
            &[0.0; 4],
            10,
            1.999,
            |_x| Ok(vec![0.0; 4]),
            Some(&mut obs),
        );
        assert!(res.is_err());
        assert_eq!(passes, vec![0, 1, 2]);
    }
}
