//! Scratch diagnostics for the ULTRA solver (not part of the toolkit).

use ctrecon::config::ExperimentConfig;
use ctrecon::metrics::{inscribed_mask, rmse_hu};
use ctrecon::noise::kappa_map;
use ctrecon::patches::{extract_patches, PatchIndex};
use ctrecon::pipeline::{self, Method};
use ctrecon::projector::{GridSpec, RayProjector};
use ctrecon::transform::lambda_max_gram;
use ctrecon::ultra::{pwls_ultra, recon_sparse_code_cluster, UltraParams};

fn main() {
    let n = 128;
    let d = 256.0 / n as f64;
    let text = format!(
        "
[phantom]
builtin = desk
nx = {n}
ny = {n}
dx = {d}
dy = {d}

[geometry]
n_views = 180
n_det = 160
det_spacing = 2.0
angular_span_deg = 360

[noise]
i0 = 1e4

[patches]
patch_shape = 8 8
stride = 1 1

[training]
k = 5
iters = 60
eta0 = 1e-4
variants = 101 102
stride = 2 2
seed = 1

[solver]
ep_beta = 5e-7
ep_iters = 30

[evaluation]
"
    );
    let cfg = ExperimentConfig::from_str(&text).unwrap();
    let truth = pipeline::truth_image(&cfg);
    let truth_hu = truth.to_hu();
    let roi = inscribed_mask(n, n, d, d);
    let sino = pipeline::simulate(&cfg, &truth).unwrap();
    let model = pipeline::train_model(&cfg, 5).unwrap();
    for (k, t) in model.transforms.iter().enumerate() {
        println!(
            "transform {k}: lambda_max(O^T O) = {:.4}, |det| = {:.3e}, fro = {:.4}",
            lambda_max_gram(t),
            t.determinant().abs(),
            t.iter().map(|v| v * v).sum::<f64>().sqrt()
        );
    }

    let ep = pipeline::reconstruct(&cfg, Method::Ep, &sino, None, None).unwrap();
    println!(
        "EP init RMSE = {:.3}",
        rmse_hu(&ep.image.to_hu(), &truth_hu, &roi).unwrap()
    );

    let spec = GridSpec::from(&truth);
    let index = PatchIndex::build(&cfg.patches, &[n, n]).unwrap();
    let tau = vec![1.0; index.count()];
    let gamma = 2e-3;
    let patches = extract_patches(&ep.image.values, &index).unwrap();
    let (codes, labels) =
        recon_sparse_code_cluster(&patches, &model.transforms, gamma, &tau).unwrap();
    let nnz: usize = codes.iter().filter(|&&v| v != 0.0).count();
    println!(
        "codes nnz fraction = {:.4} ({} / {})",
        nnz as f64 / (codes.nrows() * codes.ncols()) as f64,
        nnz,
        codes.nrows() * codes.ncols()
    );
    let mut hist = vec![0usize; 5];
    for &l in &labels {
        hist[l] += 1;
    }
    println!("label histogram: {hist:?}");

    // sparse-code the TRUTH patches: how well do the learned transforms
    // sparsify the target?
    let tp = extract_patches(&truth.values, &index).unwrap();
    let (tc, _) = recon_sparse_code_cluster(&tp, &model.transforms, gamma, &tau).unwrap();
    let resid: f64 = (0..index.count())
        .map(|j| {
            let w = &model.transforms[labels[j]] * tp.column(j);
            let r: f64 = w
                .iter()
                .zip(tc.column(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum();
            r
        })
        .sum::<f64>()
        / index.count() as f64;
    println!("truth sparsification residual per patch = {resid:.3e}");

    let op = RayProjector::new(&sino.geometry, &spec).unwrap();
    let kappa = kappa_map(&sino.geometry, &sino.weights, &spec).unwrap();
    let _ = kappa;
    let d_a = ctrecon::projector::build_da(&op, &sino.weights).unwrap();
    let da_mid = d_a[(n / 2) * n + n / 2];
    println!("D_A center = {da_mid:.3e}");

    for beta in [5e3, 2e4, 8e4] {
        let mut params = UltraParams::new(beta, gamma);
        params.t_outer = 15;
        params.n_inner = 2;
        params.subsets = 4;
        params.log_cost = true;
        let res = pwls_ultra(
            &op,
            &sino.values,
            &sino.weights,
            &model,
            &params,
            &ep.image.values,
            &tau,
            &index,
        )
        .unwrap();
        let hu: Vec<f64> = res.image.iter().map(|&v| truth.hu_from_att(v)).collect();
        println!(
            "beta={beta:.1e}: RMSE {:.3}, first/last cost {:.4e} / {:.4e}",
            rmse_hu(&hu, &truth_hu, &roi).unwrap(),
            res.trace.first().unwrap().cost_after_coding,
            res.trace.last().unwrap().cost_after_coding,
        );
    }
}
