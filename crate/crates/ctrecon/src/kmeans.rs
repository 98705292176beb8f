//! Seeded Lloyd k-means with k-means++ initialization, used to initialize
//! the training clusters. Operates on columns of a data matrix.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MAX_ITERS: usize = 50;

/// Cluster the columns of `data` into `k` groups; returns 0-based labels.
/// Deterministic for a fixed seed.
pub fn kmeans_labels(data: &DMatrix<f64>, k: usize, seed: u64) -> Vec<usize> {
    let n = data.ncols();
    if k <= 1 || n == 0 {
        return vec![0; n];
    }
    let k = k.min(n);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // k-means++ seeding
    let mut centers: Vec<DVector<f64>> = Vec::with_capacity(k);
    centers.push(data.column(rng.gen_range(0..n)).into_owned());
    let mut d2: Vec<f64> = (0..n)
        .map(|i| (data.column(i) - &centers[0]).norm_squared())
        .collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let idx = if total > 0.0 {
            let mut target = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if target < w {
                    pick = i;
                    break;
                }
                target -= w;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        let c = data.column(idx).into_owned();
        for i in 0..n {
            d2[i] = d2[i].min((data.column(i) - &c).norm_squared());
        }
        centers.push(c);
    }

    let mut labels = vec![0usize; n];
    for _ in 0..MAX_ITERS {
        let mut changed = false;
        for i in 0..n {
            let col = data.column(i);
            let mut best = (f64::INFINITY, 0usize);
            for (c, center) in centers.iter().enumerate() {
                let dist = (col - center).norm_squared();
                if dist < best.0 {
                    best = (dist, c);
                }
            }
            if labels[i] != best.1 {
                labels[i] = best.1;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        // recompute centers; an emptied cluster takes the farthest point
        let mut counts = vec![0usize; k];
        let mut sums = vec![DVector::<f64>::zeros(data.nrows()); k];
        for i in 0..n {
            counts[labels[i]] += 1;
            sums[labels[i]] += data.column(i);
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = &sums[c] / counts[c] as f64;
            } else {
                let far = (0..n)
                    .max_by(|&a, &b| {
                        let da = (data.column(a) - &centers[labels[a]]).norm_squared();
                        let db = (data.column(b) - &centers[labels[b]]).norm_squared();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap_or(0);
                centers[c] = data.column(far).into_owned();
            }
        }
    }
    labels
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_clouds_recovered() {
        // two well-separated Gaussian patch clouds
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (dim, per) = (8, 200);
        let mut data = DMatrix::zeros(dim, 2 * per);
        for i in 0..2 * per {
            let center = if i < per { -5.0 } else { 5.0 };
            for r in 0..dim {
                data[(r, i)] = center + rng.gen::<f64>() - 0.5;
            }
        }
        let labels = kmeans_labels(&data, 2, 1);
        let first = labels[0];
        let mut errors = 0usize;
        for (i, &l) in labels.iter().enumerate() {
            let expect = if i < per { first } else { 1 - first };
            if l != expect {
                errors += 1;
            }
        }
        assert!(
            errors as f64 <= 0.05 * (2 * per) as f64,
            "{errors} label errors out of {}",
            2 * per
        );
    }

    #[test]
    fn deterministic_for_seed() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let data = DMatrix::from_fn(4, 60, |_, _| rng.gen::<f64>());
        assert_eq!(kmeans_labels(&data, 3, 7), kmeans_labels(&data, 3, 7));
    }
}
