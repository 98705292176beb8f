//! Training a single square transform or a union of K transforms with
//! clustering, by alternating exact transform updates with closed-form
//! sparse coding and clustering.

use crate::error::{Error, Result};
use crate::kmeans::kmeans_labels;
use crate::transform::{
    init_transforms, regularizer_q, threshold_stats, transform_update, Provenance, TransformInit,
    TransformUnion,
};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Vectorized training patches (columns) with cached squared column norms.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub data: DMatrix<f64>,
    pub col_norms_sq: Vec<f64>,
}

impl TrainingSet {
    pub fn new(data: DMatrix<f64>) -> Self {
        if data.ncols() < data.nrows() {
            log::warn!(
                "training set has fewer patches ({}) than the patch length ({})",
                data.ncols(),
                data.nrows()
            );
        }
        let col_norms_sq = (0..data.ncols())
            .map(|i| data.column(i).norm_squared())
            .collect();
        TrainingSet { data, col_norms_sq }
    }

    pub fn patch_len(&self) -> usize {
        self.data.nrows()
    }

    pub fn n_patches(&self) -> usize {
        self.data.ncols()
    }

    pub fn frobenius_sq(&self) -> f64 {
        self.col_norms_sq.iter().sum()
    }
}

/// A 0-based cluster assignment for a set of patches.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clustering {
    pub labels: Vec<usize>,
    pub k: usize,
}

impl Clustering {
    pub fn new(labels: Vec<usize>, k: usize) -> Result<Self> {
        if labels.iter().any(|&l| l >= k) {
            return Err(Error::Config(format!("cluster label out of range 0..{k}")));
        }
        Ok(Clustering { labels, k })
    }

    /// Per-cluster column index lists, in ascending order.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut m = vec![Vec::new(); self.k];
        for (i, &l) in self.labels.iter().enumerate() {
            m[l].push(i);
        }
        m
    }
}

/// Sparsity threshold: absolute, or relative as `eta0 * ||X||_F`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EtaSpec {
    Absolute(f64),
    RelativeToData(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ClusterInit {
    KMeans,
    Random,
}

#[derive(Debug, Clone)]
pub struct LearnOptions {
    pub k: usize,
    pub patch_shape: Vec<usize>,
    pub eta: EtaSpec,
    pub lambda0: f64,
    pub iters: usize,
    pub transform_init: TransformInit,
    pub cluster_init: ClusterInit,
    pub seed: u64,
}

impl LearnOptions {
    pub fn new(k: usize, patch_shape: Vec<usize>) -> Self {
        LearnOptions {
            k,
            patch_shape,
            eta: EtaSpec::RelativeToData(1e-4),
            lambda0: 31.0,
            iters: 1000,
            transform_init: TransformInit::Dct,
            cluster_init: ClusterInit::KMeans,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct LearnOutcome {
    pub model: TransformUnion,
    pub clustering: Clustering,
    /// Full training objective after initialization and after each
    /// alternation; nonincreasing.
    pub objective_trace: Vec<f64>,
}

/// One sparse coding and clustering pass: for each training column pick
/// the transform minimizing
/// `||O_k x - H_eta(O_k x)||^2 + eta^2 ||H_eta(O_k x)||_0 + lambda0 ||x||^2 Q(O_k)`
/// (ties to the smallest k) and threshold under the winner.
pub fn train_sparse_code_cluster(
    x: &TrainingSet,
    transforms: &[DMatrix<f64>],
    eta: f64,
    lambda0: f64,
) -> (DMatrix<f64>, Vec<usize>)
{
    let l = x.patch_len();
    let n = x.n_patches();
    let q: Vec<f64> = transforms.iter().map(regularizer_q).collect();
    let mut code_data = vec![0.0f64; l * n];
    let mut labels = vec![0usize; n];
    code_data
        .par_chunks_mut(l)
        .zip(labels.par_iter_mut())
        .enumerate()
        .for_each(|(i, (code, label))| {
            let col = x.data.column(i);
            let mut best_cost = f64::INFINITY;
            let mut best_k = 0usize;
            let mut w = DVector::<f64>::zeros(l);
            let mut best_w = DVector::<f64>::zeros(l);
            for (k, omega) in transforms.iter().enumerate() {
                omega.mul_to(&col, &mut w);
                let (err, nnz) = threshold_stats(w.as_slice(), eta);
                let cost = err + eta * eta * nnz as f64 + lambda0 * x.col_norms_sq[i] * q[k];
                if cost < best_cost {
                    best_cost = cost;
                    best_k = k;
                    best_w.copy_from(&w);
                }
            }
            *label = best_k;
            for (slot, &v) in code.iter_mut().zip(best_w.iter()) {
                *slot = if v.abs() >= eta { v } else { 0.0 };
            }
        });
    (DMatrix::from_vec(l, n, code_data), labels)
}

/// Full training objective at the current iterates, with per-cluster
/// regularizer weights `lambda_k = lambda0 ||X_{C_k}||_F^2` recomputed from
/// the clustering (zero for empty clusters, whose transforms the objective
/// does not see).
pub fn training_objective(
    x: &TrainingSet,
    transforms: &[DMatrix<f64>],
    codes: &DMatrix<f64>,
    labels: &[usize],
    eta: f64,
    lambda0: f64,
) -> f64 {
    let mut cluster_energy = vec![0.0f64; transforms.len()];
    let data_term: f64 = (0..x.n_patches())
        .into_par_iter()
        .map(|i| {
            let omega = &transforms[labels[i]];
            let resid = omega * x.data.column(i) - codes.column(i);
            let nnz = codes.column(i).iter().filter(|&&v| v != 0.0).count();
            resid.norm_squared() + eta * eta * nnz as f64
        })
        .sum();
    for i in 0..x.n_patches() {
        cluster_energy[labels[i]] += x.col_norms_sq[i];
    }
    let reg_term: f64 = transforms
        .iter()
        .zip(&cluster_energy)
        .map(|(t, &e)| {
            if e > 0.0 {
                lambda0 * e * regularizer_q(t)
            } else {
                0.0
            }
        })
        .sum();
    data_term + reg_term
}

/// Learns a union of K transforms and a clustering from training patches.
/// `K = 1` reproduces single-transform learning (the clustering is
/// degenerate and skipped).
pub fn learn_union(x: &TrainingSet, opts: &LearnOptions) -> Result<LearnOutcome> {
    let l = x.patch_len();
    if opts.k < 1 || opts.iters < 1 {
        return Err(Error::Config("need K >= 1 and iters >= 1".into()));
    }
    if opts.k > x.n_patches() {
        return Err(Error::Config(format!(
            "K = {} exceeds the number of training patches {}",
            opts.k,
            x.n_patches()
        )));
    }
    if opts.patch_shape.iter().product::<usize>() != l {
        return Err(Error::Config(format!(
            "patch shape {:?} does not match patch length {l}",
            opts.patch_shape
        )));
    }
    let eta = match opts.eta {
        EtaSpec::Absolute(e) => e,
        EtaSpec::RelativeToData(e0) => e0 * x.frobenius_sq().sqrt(),
    };
    if !(eta > 0.0) {
        return Err(Error::Config("training threshold eta must be > 0".into()));
    }

    let mut transforms = init_transforms(opts.k, &opts.patch_shape, opts.transform_init, opts.seed)?;
    let mut labels = if opts.k == 1 {
        vec![0usize; x.n_patches()]
    } else {
        match opts.cluster_init {
            ClusterInit::KMeans => kmeans_labels(&x.data, opts.k, opts.seed),
            ClusterInit::Random => {
                use rand::{Rng, SeedableRng};
                let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(opts.seed);
                (0..x.n_patches()).map(|_| rng.gen_range(0..opts.k)).collect()
            }
        }
    };
    // codes consistent with the initial transforms and clusters
    let mut codes = DMatrix::zeros(l, x.n_patches());
    for i in 0..x.n_patches() {
        let w = &transforms[labels[i]] * x.data.column(i);
        for (r, &v) in w.iter().enumerate() {
            codes[(r, i)] = if v.abs() >= eta { v } else { 0.0 };
        }
    }

    let mean_energy = x.frobenius_sq() / opts.k as f64;
    let mut trace =
        vec![training_objective(x, &transforms, &codes, &labels, eta, opts.lambda0)];

    for _ in 0..opts.iters {
        // transform update: K independent subproblems
        let members = Clustering::new(labels.clone(), opts.k)?.members();
        let updated: Result<Vec<DMatrix<f64>>> = members
            .par_iter()
            .map(|cols| {
                let xk = gather_columns(&x.data, cols);
                let zk = gather_columns(&codes, cols);
                let energy: f64 = cols.iter().map(|&i| x.col_norms_sq[i]).sum();
                let lambda = if energy > 0.0 {
                    opts.lambda0 * energy
                } else {
                    // empty or zero-energy cluster: the objective does not
                    // depend on this transform, but Eq. (6) needs lambda > 0
                    opts.lambda0 * mean_energy.max(f64::MIN_POSITIVE)
                };
                transform_update(&xk, &zk, lambda)
            })
            .collect();
        transforms = updated?;
        if members.iter().any(Vec::is_empty) {
            log::warn!("transform training produced an empty cluster this iteration");
        }

        // sparse coding and clustering
        let (new_codes, new_labels) =
            train_sparse_code_cluster(x, &transforms, eta, opts.lambda0);
        codes = new_codes;
        if opts.k > 1 {
            labels = new_labels;
        }

        trace.push(training_objective(x, &transforms, &codes, &labels, eta, opts.lambda0));
    }

    let mut model = TransformUnion {
        transforms,
        eta,
        lambda0: opts.lambda0,
        provenance: Provenance {
            patch_shape: opts.patch_shape.clone(),
            iterations: opts.iters,
            seed: opts.seed,
        },
    };
    model.quantize_to_f32();
    model.validate()?;
    Ok(LearnOutcome {
        model,
        clustering: Clustering::new(labels, opts.k)?,
        objective_trace: trace,
    })
}

fn gather_columns(m: &DMatrix<f64>, cols: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(m.nrows(), cols.len());
    for (j, &c) in cols.iter().enumerate() {
        out.set_column(j, &m.column(c));
    }
    out
}
