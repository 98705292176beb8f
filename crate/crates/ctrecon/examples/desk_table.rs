//! Runs the desk-scale method comparison (FBP / PWLS-EP / PWLS-ST /
//! PWLS-ULTRA) and prints one RMSE/SSIM row per (method, dose, seed) plus
//! per-method means. Environment variables override the experiment scale
//! and solver parameters, e.g.:
//!
//! ```text
//! N=128 VIEWS=180 SEEDS=3 BETA=2000 GAMMA=2e-3 EP_BETA=40 \
//!     cargo run --release -p ctrecon --example desk_table
//! ```

use ctrecon::config::ExperimentConfig;
use ctrecon::pipeline::{run_sweep, Method};

fn env_f64(key: &str, default: f64) -> f64 {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn env_usize(key: &str, default: usize) -> usize {
    std::env::var(key).ok().and_then(|v| v.parse().ok()).unwrap_or(default)
}

fn main() {
    let n = env_usize("N", 128);
    let views = env_usize("VIEWS", 180);
    let ndet = env_usize("NDET", (n * 5) / 4);
    let seeds: Vec<u64> = (0..env_usize("SEEDS", 3) as u64).collect();
    let i0 = env_f64("I0", 1e4);
    let fov = 256.0;
    let d = fov / n as f64;
    let det_spacing = 1.25 * fov / ndet as f64;

    let text = format!(
        "
[phantom]
builtin = desk
nx = {n}
ny = {n}
dx = {d}
dy = {d}

[geometry]
kind = parallel
n_views = {views}
n_det = {ndet}
det_spacing = {det_spacing}
angular_span_deg = 360

[noise]
i0 = {i0}

[patches]
patch_shape = 8 8
stride = {rstride} {rstride}

[training]
k = {k}
iters = {titers}
eta0 = {eta0}
variants = 101 102
stride = {tstride} {tstride}
seed = 1

[solver]
beta = {beta}
gamma = {gamma}
t_outer = {touter}
n_inner = {ninner}
subsets = {subsets}
cluster_every = {cluster_every}
log_cost = false
ep_beta = {ep_beta}
ep_iters = {ep_iters}
ep_subsets = {ep_subsets}

[evaluation]
",
        rstride = env_usize("RSTRIDE", 1),
        k = env_usize("K", 5),
        titers = env_usize("TITERS", 60),
        eta0 = env_f64("ETA0", 1e-4),
        tstride = env_usize("TSTRIDE", 2),
        beta = env_f64("BETA", 2e3),
        gamma = env_f64("GAMMA", 2e-3),
        touter = env_usize("TOUTER", 15),
        ninner = env_usize("NINNER", 2),
        subsets = env_usize("SUBSETS", 4),
        cluster_every = env_usize("CLUSTER_EVERY", 1),
        ep_beta = env_f64("EP_BETA", 40.0),
        ep_iters = env_usize("EP_ITERS", 20),
        ep_subsets = env_usize("EP_SUBSETS", 4),
    );
    let cfg = ExperimentConfig::from_str(&text).expect("config");

    let methods: Vec<Method> = std::env::var("METHODS")
        .unwrap_or_else(|_| "fbp,ep,st,ultra".into())
        .split(',')
        .map(|m| Method::parse(m.trim()).expect("method"))
        .collect();

    let start = std::time::Instant::now();
    let table = run_sweep(&cfg, &methods, &[i0], &seeds).expect("sweep");
    println!("method,i0,seed,rmse_hu,ssim,runtime_s,iterations");
    for r in &table.rows {
        println!(
            "{},{},{},{:.4},{:.5},{:.2},{}",
            r.method, r.i0, r.seed, r.rmse_hu, r.ssim, r.runtime_s, r.iterations
        );
    }
    println!("-- means over {} seeds --", seeds.len());
    for m in &methods {
        if let Some(mean) = table.mean_rmse(m.name(), i0) {
            println!("{}: {:.4} HU", m.name(), mean);
        }
    }
    println!("total {:.1} s", start.elapsed().as_secs_f64());
}
