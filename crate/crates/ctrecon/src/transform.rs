//! Square sparsifying transforms: the union type, the training
//! regularizer Q, hard thresholding, the closed-form transform update,
//! initializations, and the versioned model file format.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;

/// Training metadata carried by a learned model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub patch_shape: Vec<usize>,
    pub iterations: usize,
    pub seed: u64,
}

/// A union of K square sparsifying transforms with the hyperparameters
/// they were trained with. `K = 1` degenerates to a single transform.
///
/// Transform entries are f32-representable: training quantizes the final
/// matrices so that the f32 model file round-trips losslessly.
#[derive(Debug, Clone, PartialEq)]
pub struct TransformUnion {
    pub transforms: Vec<DMatrix<f64>>,
    /// Training sparsity threshold (absolute).
    pub eta: f64,
    /// Training regularizer constant.
    pub lambda0: f64,
    pub provenance: Provenance,
}

impl TransformUnion {
    pub fn k(&self) -> usize {
        self.transforms.len()
    }

    /// Patch length l (transforms are l x l).
    pub fn patch_len(&self) -> usize {
        self.transforms.first().map_or(0, DMatrix::nrows)
    }

    pub fn validate(&self) -> Result<()> {
        if self.transforms.is_empty() {
            return Err(Error::Model("model has no transforms".into()));
        }
        let l = self.patch_len();
        for (k, t) in self.transforms.iter().enumerate() {
            if t.nrows() != l || t.ncols() != l {
                return Err(Error::Model(format!("transform {k} is not {l}x{l}")));
            }
            if t.iter().any(|v| !v.is_finite()) {
                return Err(Error::Model(format!("transform {k} has non-finite entries")));
            }
            if log_abs_det(t).is_none() {
                return Err(Error::Model(format!("transform {k} is singular")));
            }
        }
        Ok(())
    }

    /// Rounds all transform entries through f32, the model-file precision.
    pub fn quantize_to_f32(&mut self) {
        for t in &mut self.transforms {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }
}

/// `ln |det M|` via LU, or `None` for a singular matrix.
pub fn log_abs_det(m: &DMatrix<f64>) -> Option<f64> {
    let lu = m.clone().lu();
    let u = lu.u();
    let mut acc = 0.0;
    for i in 0..u.nrows().min(u.ncols()) {
        let d = u[(i, i)].abs();
        if d == 0.0 || !d.is_finite() {
            return None;
        }
        acc += d.ln();
    }
    Some(acc)
}

/// Training regularizer `Q(O) = ||O||_F^2 - ln|det O|`.
/// Returns +infinity for a singular transform.
pub fn regularizer_q(omega: &DMatrix<f64>) -> f64 {
    let fro2: f64 = omega.iter().map(|v| v * v).sum();
    match log_abs_det(omega) {
        Some(lad) => fro2 - lad,
        None => f64::INFINITY,
    }
}

/// Hard thresholding: zeroes entries with magnitude strictly below
/// `theta`; entries with |v| exactly equal to `theta` are kept.
pub fn hard_threshold(v: &[f64], theta: f64) -> Vec<f64> {
    v.iter()
        .map(|&x| if x.abs() >= theta { x } else { 0.0 })
        .collect()
}

/// In-place hard thresholding returning the surviving-entry count.
pub fn hard_threshold_mut(v: &mut [f64], theta: f64) -> usize {
    let mut nnz = 0;
    for x in v.iter_mut() {
        if x.abs() >= theta {
            nnz += 1;
        } else {
            *x = 0.0;
        }
    }
    nnz
}

/// Sparsification error and code size of thresholding `w` at `theta`:
/// `(sum of squared zeroed entries, count of kept entries)`.
pub fn threshold_stats(w: &[f64], theta: f64) -> (f64, usize) {
    let mut err = 0.0;
    let mut nnz = 0;
    for &x in w {
        if x.abs() >= theta {
            nnz += 1;
        } else {
            err += x * x;
        }
    }
    (err, nnz)
}

/// Largest eigenvalue of `O^T O` by power iteration (relative tolerance
/// 1e-10, 1000-iteration cap).
pub fn lambda_max_gram(omega: &DMatrix<f64>) -> f64 {
    let l = omega.ncols();
    let mut v = DVector::from_fn(l, |i, _| 1.0 + 0.01 * (i as f64 + 1.0) / l as f64);
    v /= v.norm();
    let mut eig = 0.0f64;
    for _ in 0..1000 {
        let w = omega.transpose() * (omega * &v);
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - eig).abs() <= 1e-10 * next.abs().max(1e-300) {
            return next;
        }
        eig = next;
    }
    eig
}

/// Objective of the single-transform update subproblem:
/// `||O X - Z||_F^2 + lambda Q(O)`.
pub fn transform_update_objective(
    omega: &DMatrix<f64>,
    x: &DMatrix<f64>,
    z: &DMatrix<f64>,
    lambda: f64,
) -> f64 {
    let resid = omega * x - z;
    resid.iter().map(|v| v * v).sum::<f64>() + lambda * regularizer_q(omega)
}

/// Closed-form minimizer of `||O X - Z||_F^2 + lambda Q(O)`:
/// with `L L^T = X X^T + lambda I` and `Q S R^T` the full SVD of
/// `L^{-1} X Z^T`, the minimizer is
/// `O = 0.5 R (S + (S^2 + 2 lambda I)^{1/2}) Q^T L^{-1}`.
///
/// `lambda > 0` keeps the problem well posed even for an empty cluster
/// (`X`, `Z` with zero columns). The result is always nonsingular.
pub fn transform_update(x: &DMatrix<f64>, z: &DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    let l = x.nrows();
    if z.nrows() != l || z.ncols() != x.ncols() {
        return Err(Error::Shape(format!(
            "codes {}x{} do not match data {}x{}",
            z.nrows(),
            z.ncols(),
            l,
            x.ncols()
        )));
    }
    if !(lambda > 0.0) {
        return Err(Error::Numerical("transform update needs lambda > 0".into()));
    }
    // symmetric square root of the Gram matrix (robust when lambda is tiny)
    let mut gram = x * x.transpose();
    for i in 0..l {
        gram[(i, i)] += lambda;
    }
    let eig = gram.symmetric_eigen();
    if eig.eigenvalues.iter().any(|&e| e <= 0.0) {
        return Err(Error::Numerical(
            "Gram matrix not positive definite in transform update".into(),
        ));
    }
    let u = &eig.eigenvectors;
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|e| 1.0 / e.sqrt()));
    let l_inv = u * inv_sqrt * u.transpose();

    let b = &l_inv * (x * z.transpose());
    let svd = b.svd(true, true);
    let (q, vt) = match (svd.u, svd.v_t) {
        (Some(q), Some(vt)) => (q, vt),
        _ => return Err(Error::Numerical("SVD failed in transform update".into())),
    };
    let gains =
        DMatrix::from_diagonal(&svd.singular_values.map(|s| 0.5 * (s + (s * s + 2.0 * lambda).sqrt())));
    Ok(vt.transpose() * gains * q.transpose() * l_inv)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TransformInit {
    /// Separable orthonormal DCT, replicated K times.
    Dct,
    /// Seeded random orthonormal matrices.
    RandomOrthonormal,
}

/// Initial transforms for training.
pub fn init_transforms(
    k: usize,
    patch_shape: &[usize],
    mode: TransformInit,
    seed: u64,
) -> Result<Vec<DMatrix<f64>>> {
    if k < 1 || patch_shape.is_empty() {
        return Err(Error::Config("need K >= 1 and a non-empty patch shape".into()));
    }
    let l: usize = patch_shape.iter().product();
    match mode {
        TransformInit::Dct => {
            let d = separable_dct(patch_shape);
            Ok(vec![d; k])
        }
        TransformInit::RandomOrthonormal => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            Ok((0..k)
                .map(|_| {
                    let g = DMatrix::from_fn(l, l, |_, _| {
                        // Box-Muller from two uniforms keeps the stream simple
                        let u1: f64 = rng.gen::<f64>().max(1e-12);
                        let u2: f64 = rng.gen();
                        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
                    });
                    g.qr().q()
                })
                .collect())
        }
    }
}

/// Orthonormal DCT-II matrix of size n.
pub fn dct_matrix_1d(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |j, i| {
        let s = if j == 0 {
            (1.0 / n as f64).sqrt()
        } else {
            (2.0 / n as f64).sqrt()
        };
        s * (std::f64::consts::PI * (2.0 * i as f64 + 1.0) * j as f64 / (2.0 * n as f64)).cos()
    })
}

/// Separable DCT over an N-d patch shape (Kronecker product, axes in
/// raster order so rows match vectorized patches).
pub fn separable_dct(patch_shape: &[usize]) -> DMatrix<f64> {
    let mut acc = DMatrix::from_element(1, 1, 1.0);
    for &n in patch_shape {
        acc = acc.kronecker(&dct_matrix_1d(n));
    }
    acc
}

const MODEL_MAGIC: &[u8; 4] = b"ULTR";
const MODEL_VERSION: u32 = 1;

/// Writes the model: magic, version, K, l, eta, lambda0, provenance,
/// then K row-major f32 matrices. Values beyond f32 precision are
/// quantized; trained models are already f32-representable.
pub fn save_model(model: &TransformUnion, path: &Path) -> Result<()> {
    model.validate()?;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    w.write_all(MODEL_MAGIC)?;
    w.write_all(&MODEL_VERSION.to_le_bytes())?;
    w.write_all(&(model.k() as u32).to_le_bytes())?;
    w.write_all(&(model.patch_len() as u32).to_le_bytes())?;
    w.write_all(&model.eta.to_le_bytes())?;
    w.write_all(&model.lambda0.to_le_bytes())?;
    let prov = &model.provenance;
    w.write_all(&(prov.patch_shape.len() as u32).to_le_bytes())?;
    for &d in &prov.patch_shape {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    w.write_all(&(prov.iterations as u64).to_le_bytes())?;
    w.write_all(&prov.seed.to_le_bytes())?;
    for t in &model.transforms {
        for r in 0..t.nrows() {
            for c in 0..t.ncols() {
                w.write_all(&(t[(r, c)] as f32).to_le_bytes())?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<TransformUnion> {
    let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
    let mut magic = [0u8; 4];
    read_exact(&mut r, &mut magic)?;
    if &magic != MODEL_MAGIC {
        return Err(Error::Model("bad magic bytes".into()));
    }
    let version = read_u32(&mut r)?;
    if version != MODEL_VERSION {
        return Err(Error::Model(format!("unsupported model version {version}")));
    }
    let k = read_u32(&mut r)? as usize;
    let l = read_u32(&mut r)? as usize;
    let eta = read_f64(&mut r)?;
    let lambda0 = read_f64(&mut r)?;
    if k == 0 || l == 0 || k > 1 << 16 || l > 1 << 16 {
        return Err(Error::Model(format!("implausible model header: K={k}, l={l}")));
    }
    let rank = read_u32(&mut r)? as usize;
    if rank > 8 {
        return Err(Error::Model(format!("implausible patch rank {rank}")));
    }
    let mut patch_shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        patch_shape.push(read_u32(&mut r)? as usize);
    }
    let iterations = read_u64(&mut r)? as usize;
    let seed = read_u64(&mut r)?;
    let mut transforms = Vec::with_capacity(k);
    for _ in 0..k {
        let mut data = Vec::with_capacity(l * l);
        for _ in 0..l * l {
            let mut buf = [0u8; 4];
            read_exact(&mut r, &mut buf)?;
            data.push(f32::from_le_bytes(buf) as f64);
        }
        // stored row-major; DMatrix::from_vec is column-major
        transforms.push(DMatrix::from_vec(l, l, data).transpose());
    }
    let mut trailing = [0u8; 1];
    if r.read(&mut trailing)? != 0 {
        return Err(Error::Model("trailing bytes after model data".into()));
    }
    let model = TransformUnion {
        transforms,
        eta,
        lambda0,
        provenance: Provenance {
            patch_shape,
            iterations,
            seed,
        },
    };
    model.validate()?;
    Ok(model)
}

fn read_exact(r: &mut impl Read, buf: &mut [u8]) -> Result<()> {
    r.read_exact(buf)
        .map_err(|_| Error::Model("model file truncated".into()))
}

fn read_u32(r: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    read_exact(r, &mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> Result<u64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn read_f64(r: &mut impl Read) -> Result<f64> {
    let mut b = [0u8; 8];
    read_exact(r, &mut b)?;
    Ok(f64::from_le_bytes(b))
}
