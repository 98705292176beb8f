//! Filtered back projection with a Hanning-apodized ramp filter, for
//! parallel-beam and flat-detector fan-beam geometries.

use crate::error::{Error, Result};
use crate::geom::{BeamKind, ScanGeometry, Sinogram};
use crate::projector::GridSpec;
use rayon::prelude::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;
use std::sync::Arc;

/// Reconstructs an attenuation image from a post-log sinogram. Linear in
/// the sinogram values.
pub fn fbp(sino: &Sinogram, spec: &GridSpec) -> Result<Vec<f64>> {
    let geom = &sino.geometry;
    geom.validate()?;
    match geom.kind {
        BeamKind::Parallel => fbp_parallel(geom, &sino.values, spec),
        BeamKind::Fan => fbp_fan(geom, &sino.values, spec),
    }
}

/// Hanning-apodized ramp transfer function on `nfft` FFT bins for detector
/// spacing `dt`, from the band-limited spatial ramp kernel
/// (`h[0] = 1/(4 dt^2)`, `h[n] = -1/(pi n dt)^2` for odd n, else 0).
fn ramp_hanning_transfer(nfft: usize, dt: f64, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let mut kernel = vec![Complex64::new(0.0, 0.0); nfft];
    kernel[0].re = 1.0 / (4.0 * dt * dt);
    let mut n = 1usize;
    while n <= nfft / 2 {
        let v = -1.0 / (std::f64::consts::PI * n as f64 * dt).powi(2);
        kernel[n].re = v;
        kernel[nfft - n].re = v;
        n += 2;
    }
    let fft = planner.plan_fft_forward(nfft);
    fft.process(&mut kernel);
    (0..nfft)
        .map(|k| {
            let cycles = k.min(nfft - k) as f64 / nfft as f64; // in [0, 0.5]
            let hann = 0.5 * (1.0 + (2.0 * std::f64::consts::PI * cycles).cos());
            kernel[k].re * dt * hann
        })
        .collect()
}

/// Convolves every detector row with the apodized ramp filter.
fn filter_rows(rows: &[f64], n_det: usize, dt: f64) -> Vec<f64> {
    let nfft = (2 * n_det).next_power_of_two();
    let mut planner = FftPlanner::new();
    let transfer = ramp_hanning_transfer(nfft, dt, &mut planner);
    let fwd = planner.plan_fft_forward(nfft);
    let inv = planner.plan_fft_inverse(nfft);
    let mut out = vec![0.0; rows.len()];
    out.par_chunks_mut(n_det)
        .zip(rows.par_chunks(n_det))
        .for_each_init(
            || {
                (
                    vec![Complex64::new(0.0, 0.0); nfft],
                    vec![
                        Complex64::new(0.0, 0.0);
                        fwd.get_inplace_scratch_len().max(inv.get_inplace_scratch_len())
                    ],
                )
            },
            |(buf, scratch), (orow, irow)| {
                buf.fill(Complex64::new(0.0, 0.0));
                for (b, &v) in buf.iter_mut().zip(irow.iter()) {
                    b.re = v;
                }
                Arc::clone(&fwd).process_with_scratch(buf, scratch);
                for (b, &t) in buf.iter_mut().zip(&transfer) {
                    *b *= t;
                }
                Arc::clone(&inv).process_with_scratch(buf, scratch);
                for (o, b) in orow.iter_mut().zip(buf.iter()) {
                    *o = b.re / nfft as f64;
                }
            },
        );
    out
}

fn mean_angle_step(geom: &ScanGeometry) -> f64 {
    if geom.n_views > 1 {
        (geom.angles[geom.n_views - 1] - geom.angles[0]) / (geom.n_views - 1) as f64
    } else {
        std::f64::consts::PI
    }
}

/// Half the weight when the views cover a full circle (every line is
/// measured twice).
fn coverage_factor(geom: &ScanGeometry) -> f64 {
    let span = mean_angle_step(geom) * geom.n_views as f64;
    if span > 1.5 * std::f64::consts::PI {
        0.5
    } else {
        1.0
    }
}

fn fbp_parallel(geom: &ScanGeometry, values: &[f64], spec: &GridSpec) -> Result<Vec<f64>> {
    let (nv, nd) = (geom.n_views, geom.n_det);
    if values.len() != nv * nd {
        return Err(Error::Shape("sinogram length mismatch".into()));
    }
    let dt = geom.det_spacing;
    let q = filter_rows(values, nd, dt);
    let t0 = geom.det_coord(0);
    let scale = mean_angle_step(geom) * coverage_factor(geom);
    let trig: Vec<(f64, f64)> = geom.angles.iter().map(|a| a.sin_cos()).collect();

    let mut img = vec![0.0; spec.n_pixels()];
    img.par_chunks_mut(spec.nx).enumerate().for_each(|(iy, row)| {
        let y = (iy as f64 - 0.5 * (spec.ny as f64 - 1.0)) * spec.dy + spec.offset_y;
        for (ix, pix) in row.iter_mut().enumerate() {
            let x = (ix as f64 - 0.5 * (spec.nx as f64 - 1.0)) * spec.dx + spec.offset_x;
            let mut acc = 0.0;
            for (v, &(sin_t, cos_t)) in trig.iter().enumerate() {
                let t = -x * sin_t + y * cos_t;
                let u = (t - t0) / dt;
                let i0 = u.floor();
                if i0 < 0.0 || i0 as usize + 1 >= nd {
                    continue;
                }
                let i = i0 as usize;
                let frac = u - i0;
                acc += (1.0 - frac) * q[v * nd + i] + frac * q[v * nd + i + 1];
            }
            *pix = scale * acc;
        }
    });
    Ok(img)
}

fn fbp_fan(geom: &ScanGeometry, values: &[f64], spec: &GridSpec) -> Result<Vec<f64>> {
    let (nv, nd) = (geom.n_views, geom.n_det);
    if values.len() != nv * nd {
        return Err(Error::Shape("sinogram length mismatch".into()));
    }
    let dso = geom.source_to_iso;
    let dsd = geom.source_to_det;
    // detector coordinates rescaled to a virtual detector through the
    // isocenter
    let mag = dso / dsd;
    let ds = geom.det_spacing * mag;
    let s0 = geom.det_coord(0) * mag;
    // cosine pre-weighting before ramp filtering
    let mut weighted = vec![0.0; values.len()];
    for v in 0..nv {
        for d in 0..nd {
            let s = s0 + d as f64 * ds;
            weighted[v * nd + d] = values[v * nd + d] * dso / (dso * dso + s * s).sqrt();
        }
    }
    let q = filter_rows(&weighted, nd, ds);
    let scale = mean_angle_step(geom) * coverage_factor(geom);
    let trig: Vec<(f64, f64)> = geom.angles.iter().map(|a| a.sin_cos()).collect();

    let mut img = vec![0.0; spec.n_pixels()];
    img.par_chunks_mut(spec.nx).enumerate().for_each(|(iy, row)| {
        let y = (iy as f64 - 0.5 * (spec.ny as f64 - 1.0)) * spec.dy + spec.offset_y;
        for (ix, pix) in row.iter_mut().enumerate() {
            let x = (ix as f64 - 0.5 * (spec.nx as f64 - 1.0)) * spec.dx + spec.offset_x;
            let mut acc = 0.0;
            for (v, &(sin_t, cos_t)) in trig.iter().enumerate() {
                // distance from the source plane along the central ray
                let dw = dso + x * cos_t + y * sin_t;
                if dw <= 1e-9 {
                    continue;
                }
                let s = dso * (-x * sin_t + y * cos_t) / dw;
                let u = (s - s0) / ds;
                let i0 = u.floor();
                if i0 < 0.0 || i0 as usize + 1 >= nd {
                    continue;
                }
                let i = i0 as usize;
                let frac = u - i0;
                let qv = (1.0 - frac) * q[v * nd + i] + frac * q[v * nd + i + 1];
                acc += qv * (dso / dw) * (dso / dw);
            }
            *pix = scale * acc;
        }
    });
    Ok(img)
}
