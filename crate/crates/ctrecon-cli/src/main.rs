//! Command-line front end: phantom generation, scan simulation, transform
//! training, reconstruction, evaluation, and image/plot export.
//!
//! Exit codes: 1 usage/config, 2 I/O, 3 numerical failure. Errors print a
//! machine-readable line on stderr: `error: code=N kind=K msg="..."`.

use clap::{Args, Parser, Subcommand};
use ctrecon::config::ExperimentConfig;
use ctrecon::io;
use ctrecon::metrics::{circular_mask, inscribed_mask, rmse_hu, ssim, RoiMask};
use ctrecon::pipeline::{self, Method, MethodTrace};
use ctrecon::transform::{load_model, save_model};
use ctrecon::ultra::pixel_cluster_map;
use ctrecon::{Error, Result};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(name = "ctrecon", version, about = "Low-dose CT reconstruction toolkit")]
struct Cli {
    /// Cap the worker thread count (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rasterize the configured phantom to a ground-truth image.
    Phantom(PhantomArgs),
    /// Simulate a low-dose scan: counts, post-log sinogram, weights.
    Simulate(SimulateArgs),
    /// Train a (union of) sparsifying transform(s) from phantom patches.
    Train(TrainArgs),
    /// Reconstruct an image from a sinogram.
    Reconstruct(ReconstructArgs),
    /// RMSE/SSIM of a reconstruction against a ground truth.
    Evaluate(EvaluateArgs),
    /// Export images or CSV traces as PGM/PNG.
    Export(ExportArgs),
}

#[derive(Args)]
struct PhantomArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output prefix; writes <out>.img.bin/.json.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output prefix; writes <out>.sino.bin/.json, weights and truth.
    #[arg(long)]
    out: PathBuf,
    /// Override the config RNG seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the incident photons per ray.
    #[arg(long)]
    i0: Option<f64>,
    /// Override the electronic noise variance.
    #[arg(long)]
    sigma2: Option<f64>,
    /// Noise-free mean counts (regression mode).
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Override the config cluster count.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Args)]
struct ReconstructArgs {
    /// fbp | ep | st | ultra
    #[arg(long)]
    method: String,
    #[arg(long)]
    config: PathBuf,
    /// Post-log sinogram binary (weights found via its sidecar).
    #[arg(long)]
    sino: PathBuf,
    /// Transform model (required for st/ultra).
    #[arg(long)]
    model: Option<PathBuf>,
    /// Output prefix; writes <out>.img.bin, labels, trace CSV.
    #[arg(long)]
    out: PathBuf,
    /// Fix cluster labels from this reference image.
    #[arg(long)]
    oracle_from: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    recon: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    /// circle (default) or file.
    #[arg(long, default_value = "circle")]
    mask: String,
    /// Mask binary (values > 0.5) when --mask file.
    #[arg(long)]
    mask_file: Option<PathBuf>,
    /// Circle radius in mm (default: inscribed).
    #[arg(long)]
    roi_radius: Option<f64>,
    /// SSIM dynamic range in HU.
    #[arg(long, default_value_t = 2000.0)]
    range: f64,
}

#[derive(Args)]
struct ExportArgs {
    /// Image binary to window into 8-bit gray.
    #[arg(long, conflicts_with = "plot")]
    input: Option<PathBuf>,
    /// CSV trace to render as a line plot.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Column(s) to plot (default: all numeric columns).
    #[arg(long)]
    column: Vec<String>,
    /// Output .pgm or .png path.
    #[arg(long)]
    output: PathBuf,
    /// HU display window.
    #[arg(long, num_args = 2, default_values_t = [800.0, 1200.0])]
    window: Vec<f64>,
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap's own help/version output goes to stdout with success
            if e.use_stderr() {
                eprintln!("error: code=1 kind=usage msg={:?}", e.to_string());
                std::process::exit(1);
            }
            e.print().ok();
            std::process::exit(0);
        }
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    if cli.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cli.threads)
            .build_global()
            .ok();
    }
    if let Err(e) = run(cli.command) {
        let (code, kind) = match &e {
            Error::Io(_) | Error::Json(_) => (2, "io"),
            Error::Numerical(_) => (3, "numerical"),
            _ => (1, "usage"),
        };
        eprintln!("error: code={code} kind={kind} msg={:?}", e.to_string());
        std::process::exit(code);
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Phantom(a) => cmd_phantom(&a),
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Reconstruct(a) => cmd_reconstruct(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Export(a) => cmd_export(&a),
    }
}

fn with_suffix(prefix: &Path, suffix: &str) -> PathBuf {
    let mut name = prefix.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    prefix.with_file_name(name)
}

/// Writes the fully-resolved config next to the outputs so every artifact
/// is reproducible from it.
fn log_resolved(cfg: &ExperimentConfig, prefix: &Path) -> Result<()> {
    std::fs::write(with_suffix(prefix, ".resolved.cfg"), cfg.to_resolved_string())?;
    Ok(())
}

fn cmd_phantom(a: &PhantomArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_path(&a.config)?;
    let truth = pipeline::truth_image(&cfg);
    io::save_image(&with_suffix(&a.out, ".img.bin"), &truth)?;
    log_resolved(&cfg, &a.out)?;
    println!("phantom: {}x{} image written", truth.nx, truth.ny);
    Ok(())
}

fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    let mut cfg = ExperimentConfig::from_path(&a.config)?;
    if let Some(seed) = a.seed {
        cfg.noise.seed = seed;
    }
    if let Some(i0) = a.i0 {
        cfg.noise.i0 = i0;
    }
    if let Some(s2) = a.sigma2 {
        cfg.noise.sigma2 = s2;
    }
    if a.deterministic {
        cfg.noise.deterministic = true;
    }
    let truth = pipeline::truth_image(&cfg);
    let sino = pipeline::simulate(&cfg, &truth)?;
    io::save_image(&with_suffix(&a.out, ".truth.bin"), &truth)?;
    io::save_sinogram(&with_suffix(&a.out, ".sino.bin"), &sino)?;
    log_resolved(&cfg, &a.out)?;
    println!(
        "simulate: {} views x {} detectors at I0={} seed={}",
        sino.geometry.n_views, sino.geometry.n_det, cfg.noise.i0, cfg.noise.seed
    );
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_path(&a.config)?;
    let k = a.k.unwrap_or(cfg.training.k);
    let model = pipeline::train_model(&cfg, k)?;
    save_model(&model, &a.out)?;
    println!(
        "train: K={} l={} model written to {}",
        model.k(),
        model.patch_len(),
        a.out.display()
    );
    Ok(())
}

fn cmd_reconstruct(a: &ReconstructArgs) -> Result<()> {
    let cfg = ExperimentConfig::from_path(&a.config)?;
    let method = Method::parse(&a.method)?;
    let sino = io::load_sinogram(&a.sino, &cfg.geometry)?;
    let model = match &a.model {
        Some(p) => Some(load_model(p)?),
        None => None,
    };
    let oracle = match &a.oracle_from {
        Some(p) => Some(io::load_image(p)?),
        None => None,
    };
    let out = pipeline::reconstruct(&cfg, method, &sino, model.as_ref(), oracle.as_ref())?;
    io::save_image(&with_suffix(&a.out, ".img.bin"), &out.image)?;
    if let Some(labels) = &out.patch_labels {
        let index = ctrecon::patches::PatchIndex::build(
            &cfg.patches,
            &[cfg.phantom.ny, cfg.phantom.nx],
        )?;
        let k = model.as_ref().map(|m| m.k()).unwrap_or(1);
        let pixel_labels = pixel_cluster_map(labels, &index, k)?;
        io::save_labels(
            &with_suffix(&a.out, ".labels.bin"),
            &pixel_labels,
            cfg.phantom.nx,
            cfg.phantom.ny,
        )?;
    }
    let trace_rows: Vec<Vec<String>> = match &out.trace {
        MethodTrace::None => Vec::new(),
        MethodTrace::Cost(costs) => costs
            .iter()
            .enumerate()
            .map(|(i, c)| vec![format!("{i}"), format!("{c:.9e}"), String::new(), String::new()])
            .collect(),
        MethodTrace::Outer(rows) => rows
            .iter()
            .map(|r| {
                vec![
                    format!("{}", r.outer_iter),
                    format!("{:.9e}", r.cost_after_image),
                    format!("{:.9e}", r.cost_after_coding),
                    format!("{:.9e}", r.step_norm),
                ]
            })
            .collect(),
    };
    io::write_csv(
        &with_suffix(&a.out, ".trace.csv"),
        &["iteration", "cost_after_image", "cost_after_coding", "step_norm"],
        &trace_rows,
    )?;
    log_resolved(&cfg, &a.out)?;
    println!("reconstruct: method={} done", method.name());
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    let recon = io::load_image(&a.recon)?;
    let truth = io::load_image(&a.truth)?;
    let roi = match a.mask.as_str() {
        "circle" => match a.roi_radius {
            Some(r) => circular_mask(truth.nx, truth.ny, truth.dx, truth.dy, r),
            None => inscribed_mask(truth.nx, truth.ny, truth.dx, truth.dy),
        },
        "file" => {
            let path = a
                .mask_file
                .as_ref()
                .ok_or_else(|| Error::Config("--mask file needs --mask-file".into()))?;
            let vals = io::read_f32_bin(path)?;
            RoiMask::new(truth.nx, truth.ny, vals.iter().map(|&v| v > 0.5).collect())?
        }
        other => return Err(Error::Config(format!("unknown mask kind '{other}'"))),
    };
    let e = rmse_hu(&recon.to_hu(), &truth.to_hu(), &roi)?;
    let s = ssim(&recon.to_hu(), &truth.to_hu(), &roi, a.range)?;
    println!("rmse_hu={e:.4} ssim={s:.6}");
    Ok(())
}

fn cmd_export(a: &ExportArgs) -> Result<()> {
    match (&a.input, &a.plot) {
        (Some(input), None) => {
            let sc_path = io::sidecar_path(input);
            let values = io::read_f32_bin(input)?;
            let sc: io::Sidecar = serde_json::from_str(&std::fs::read_to_string(&sc_path)?)?;
            if sc.shape.len() != 2 {
                return Err(Error::Shape("can only export 2D rasters".into()));
            }
            let (ny, nx) = (sc.shape[0], sc.shape[1]);
            let display: Vec<f64> = if sc.kind == "image" {
                let slope = sc.hu_slope.unwrap_or(1.0);
                let icpt = sc.hu_intercept.unwrap_or(0.0);
                values.iter().map(|&v| slope * v + icpt).collect()
            } else {
                values
            };
            let gray = io::window_to_gray(&display, (a.window[0], a.window[1]));
            io::write_gray_image(&a.output, &gray, nx, ny)?;
        }
        (None, Some(plot)) => {
            let (header, rows) = io::read_csv(plot)?;
            let wanted: Vec<usize> = if a.column.is_empty() {
                (1..header.len()).collect()
            } else {
                a.column
                    .iter()
                    .map(|c| {
                        header.iter().position(|h| h == c).ok_or_else(|| {
                            Error::Config(format!("column '{c}' not in {header:?}"))
                        })
                    })
                    .collect::<Result<_>>()?
            };
            let mut series: Vec<Vec<f64>> = Vec::new();
            for &col in &wanted {
                let vals: Vec<f64> = rows
                    .iter()
                    .filter_map(|r| r.get(col).and_then(|v| v.parse().ok()))
                    .collect();
                if vals.len() >= 2 {
                    series.push(vals);
                }
            }
            let refs: Vec<&[f64]> = series.iter().map(Vec::as_slice).collect();
            let (w, h) = (640, 400);
            let gray = io::render_line_plot(&refs, w, h);
            io::write_gray_image(&a.output, &gray, w, h)?;
        }
        _ => {
            return Err(Error::Config(
                "export needs exactly one of --input or --plot".into(),
            ))
        }
    }
    println!("export: wrote {}", a.output.display());
    Ok(())
}
