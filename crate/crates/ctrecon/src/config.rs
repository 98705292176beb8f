//! Experiment configuration: a plain-text `key = value` format with
//! `[section]` headers. Unknown sections and keys are rejected; every
//! value is typed at parse time. A run's fully-resolved configuration can
//! be serialized back out for reproducibility.

use crate::ep::{EpParams, PotentialKind};
use crate::error::{Error, Result};
use crate::geom::{BeamKind, ScanGeometry};
use crate::patches::{Boundary, PatchConfig};
use crate::phantom::{desk_phantom, Phantom, Primitive};
use crate::training::{ClusterInit, EtaSpec};
use crate::transform::TransformInit;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSection {
    pub phantom: Phantom,
    /// Builtin family and variant, when used instead of explicit primitives.
    pub builtin: Option<(String, u64)>,
    pub nx: usize,
    pub ny: usize,
    pub dx: f64,
    pub dy: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSection {
    pub i0: f64,
    pub k_gain: f64,
    pub sigma2: f64,
    pub seed: u64,
    pub deterministic: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingSection {
    pub k: usize,
    pub eta: EtaSpec,
    pub lambda0: f64,
    pub iters: usize,
    pub transform_init: TransformInit,
    pub cluster_init: ClusterInit,
    pub seed: u64,
    /// Desk-phantom variant seeds supplying the training images.
    pub variants: Vec<u64>,
    /// Patch extraction stride for training (may be coarser than the
    /// reconstruction stride).
    pub stride: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverSection {
    pub method: String,
    pub beta: f64,
    pub gamma: f64,
    pub t_outer: usize,
    pub n_inner: usize,
    pub subsets: usize,
    pub alpha: f64,
    pub cluster_every: usize,
    pub eps: f64,
    pub use_tau: bool,
    pub log_cost: bool,
    pub ep: EpParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationSection {
    /// "circle" (inscribed or explicit radius) is the default ROI.
    pub roi: String,
    pub roi_radius_mm: Option<f64>,
    pub window: (f64, f64),
    pub ssim_range: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub phantom: PhantomSection,
    pub geometry: ScanGeometry,
    pub noise: NoiseSection,
    pub patches: PatchConfig,
    pub training: TrainingSection,
    pub solver: SolverSection,
    pub evaluation: EvaluationSection,
}

impl ExperimentConfig {
    pub fn from_path(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_str(&text)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn from_str(text: &str) -> Result<Self> {
        let mut sections = parse_sections(text)?;
        let cfg = ExperimentConfig {
            phantom: parse_phantom(sections.remove("phantom"))?,
            geometry: parse_geometry(sections.remove("geometry"))?,
            noise: parse_noise(sections.remove("noise"))?,
            patches: parse_patches(sections.remove("patches"))?,
            training: parse_training(sections.remove("training"))?,
            solver: parse_solver(sections.remove("solver"))?,
            evaluation: parse_evaluation(sections.remove("evaluation"))?,
        };
        if let Some(name) = sections.keys().next() {
            return Err(Error::Config(format!("unknown config section '{name}'")));
        }
        Ok(cfg)
    }

    /// The fully-resolved configuration in the input format; parsing it
    /// back reproduces this config.
    pub fn to_resolved_string(&self) -> String {
        let mut s = String::new();
        let p = &self.phantom;
        writeln!(s, "[phantom]").unwrap();
        if let Some((name, variant)) = &p.builtin {
            writeln!(s, "builtin = {name}").unwrap();
            writeln!(s, "variant = {variant}").unwrap();
        } else {
            writeln!(s, "background = {}", p.phantom.background_hu).unwrap();
            for prim in &p.phantom.primitives {
                match prim {
                    Primitive::Ellipse { cx, cy, rx, ry, angle_deg, value_hu } => {
                        writeln!(s, "ellipse = {cx} {cy} {rx} {ry} {angle_deg} {value_hu}").unwrap()
                    }
                    Primitive::Rect { cx, cy, width, height, angle_deg, value_hu } => {
                        writeln!(s, "rect = {cx} {cy} {width} {height} {angle_deg} {value_hu}").unwrap()
                    }
                }
            }
        }
        writeln!(s, "nx = {}\nny = {}\ndx = {}\ndy = {}", p.nx, p.ny, p.dx, p.dy).unwrap();
        let g = &self.geometry;
        writeln!(s, "\n[geometry]").unwrap();
        let kind = match g.kind {
            BeamKind::Parallel => "parallel",
            BeamKind::Fan => "fan",
        };
        writeln!(s, "kind = {kind}").unwrap();
        writeln!(s, "n_views = {}\nn_det = {}\ndet_spacing = {}", g.n_views, g.n_det, g.det_spacing).unwrap();
        let span = if g.n_views > 1 {
            (g.angles[g.n_views - 1] - g.angles[0]) * g.n_views as f64 / (g.n_views - 1) as f64
        } else {
            std::f64::consts::PI
        };
        writeln!(s, "angular_span_deg = {}", span.to_degrees()).unwrap();
        if g.kind == BeamKind::Fan {
            writeln!(s, "source_to_iso = {}\nsource_to_det = {}", g.source_to_iso, g.source_to_det).unwrap();
        }
        let n = &self.noise;
        writeln!(s, "\n[noise]").unwrap();
        writeln!(s, "i0 = {}\nk_gain = {}\nsigma2 = {}\nseed = {}\ndeterministic = {}",
            n.i0, n.k_gain, n.sigma2, n.seed, n.deterministic).unwrap();
        let pc = &self.patches;
        writeln!(s, "\n[patches]").unwrap();
        writeln!(s, "patch_shape = {}", join_usizes(&pc.patch_shape)).unwrap();
        writeln!(s, "stride = {}", join_usizes(&pc.stride)).unwrap();
        let b = match pc.boundary {
            Boundary::ClampInside => "clamp-inside",
            Boundary::Wrap => "wrap",
        };
        writeln!(s, "boundary = {b}").unwrap();
        let t = &self.training;
        writeln!(s, "\n[training]").unwrap();
        writeln!(s, "k = {}", t.k).unwrap();
        match t.eta {
            EtaSpec::Absolute(e) => writeln!(s, "eta = {e}").unwrap(),
            EtaSpec::RelativeToData(e0) => writeln!(s, "eta0 = {e0}").unwrap(),
        }
        let ti = match t.transform_init {
            TransformInit::Dct => "dct",
            TransformInit::RandomOrthonormal => "random-orthonormal",
        };
        let ci = match t.cluster_init {
            ClusterInit::KMeans => "kmeans",
            ClusterInit::Random => "random",
        };
        writeln!(s, "lambda0 = {}\niters = {}\ntransform_init = {ti}\ncluster_init = {ci}\nseed = {}",
            t.lambda0, t.iters, t.seed).unwrap();
        writeln!(s, "variants = {}", t.variants.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" ")).unwrap();
        writeln!(s, "stride = {}", join_usizes(&t.stride)).unwrap();
        let sv = &self.solver;
        writeln!(s, "\n[solver]").unwrap();
        writeln!(s, "method = {}", sv.method).unwrap();
        writeln!(s, "beta = {}\ngamma = {}\nt_outer = {}\nn_inner = {}\nsubsets = {}\nalpha = {}",
            sv.beta, sv.gamma, sv.t_outer, sv.n_inner, sv.subsets, sv.alpha).unwrap();
        writeln!(s, "cluster_every = {}\neps = {}\nuse_tau = {}\nlog_cost = {}",
            sv.cluster_every, sv.eps, sv.use_tau, sv.log_cost).unwrap();
        let pk = match sv.ep.kind {
            PotentialKind::Hyperbola2d => "hyperbola-2d",
            PotentialKind::Fair3d => "fair-3d",
        };
        writeln!(s, "ep_beta = {}\nep_delta_hu = {}\nep_potential = {pk}\nep_iters = {}\nep_subsets = {}",
            sv.ep.beta, sv.ep.delta_hu, sv.ep.iters, sv.ep.subsets).unwrap();
        let e = &self.evaluation;
        writeln!(s, "\n[evaluation]").unwrap();
        writeln!(s, "roi = {}", e.roi).unwrap();
        if let Some(r) = e.roi_radius_mm {
            writeln!(s, "roi_radius = {r}").unwrap();
        }
        writeln!(s, "window = {} {}", e.window.0, e.window.1).unwrap();
        writeln!(s, "ssim_range = {}", e.ssim_range).unwrap();
        s
    }
}

fn join_usizes(v: &[usize]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ")
}

/// One parsed section: key -> list of values (repeated keys allowed where
/// the section parser accepts them).
struct Section {
    name: String,
    entries: BTreeMap<String, Vec<String>>,
}

impl Section {
    fn empty(name: &str) -> Self {
        Section {
            name: name.into(),
            entries: BTreeMap::new(),
        }
    }

    fn take(&mut self, key: &str) -> Option<String> {
        self.entries.remove(key).map(|mut v| v.swap_remove(0))
    }

    fn take_all(&mut self, key: &str) -> Vec<String> {
        self.entries.remove(key).unwrap_or_default()
    }

    fn finish(self) -> Result<()> {
        if let Some(key) = self.entries.keys().next() {
            return Err(Error::Config(format!(
                "unknown config key '{}.{key}'",
                self.name
            )));
        }
        Ok(())
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v.parse().map_err(|_| {
                Error::Config(format!("invalid value '{v}' for '{}.{key}'", self.name))
            }),
        }
    }

    fn parse_list<T: std::str::FromStr>(&mut self, key: &str, default: Vec<T>) -> Result<Vec<T>> {
        match self.take(key) {
            None => Ok(default),
            Some(v) => v
                .split_whitespace()
                .map(|tok| {
                    tok.parse().map_err(|_| {
                        Error::Config(format!("invalid value '{v}' for '{}.{key}'", self.name))
                    })
                })
                .collect(),
        }
    }
}

fn parse_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if !line.ends_with(']') {
                return Err(Error::Config(format!(
                    "malformed section header on line {}",
                    lineno + 1
                )));
            }
            let name = line[1..line.len() - 1].trim().to_string();
            sections
                .entry(name.clone())
                .or_insert_with(|| Section::empty(&name));
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Config(format!(
                "expected 'key = value' on line {}",
                lineno + 1
            )));
        };
        let section = current.as_ref().ok_or_else(|| {
            Error::Config(format!("key outside any [section] on line {}", lineno + 1))
        })?;
        sections
            .get_mut(section)
            .unwrap()
            .entries
            .entry(key.trim().to_string())
            .or_default()
            .push(value.trim().to_string());
    }
    Ok(sections)
}

fn floats(v: &str, n: usize, what: &str) -> Result<Vec<f64>> {
    let parts: Vec<f64> = v
        .split_whitespace()
        .map(|tok| tok.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Config(format!("invalid numbers in {what}: '{v}'")))?;
    if parts.len() != n {
        return Err(Error::Config(format!(
            "{what} needs {n} numbers, got {}: '{v}'",
            parts.len()
        )));
    }
    Ok(parts)
}

fn parse_phantom(sec: Option<Section>) -> Result<PhantomSection> {
    let mut s = sec.unwrap_or_else(|| Section::empty("phantom"));
    let nx = s.parse("nx", 256usize)?;
    let ny = s.parse("ny", 256usize)?;
    let dx = s.parse("dx", 1.0f64)?;
    let dy = s.parse("dy", 1.0f64)?;
    let builtin_name = s.take("builtin");
    let variant = s.parse("variant", 0u64)?;
    let background = s.parse("background", 0.0f64)?;
    let mut primitives = Vec::new();
    for e in s.take_all("ellipse") {
        let v = floats(&e, 6, "phantom.ellipse")?;
        primitives.push(Primitive::Ellipse {
            cx: v[0],
            cy: v[1],
            rx: v[2],
            ry: v[3],
            angle_deg: v[4],
            value_hu: v[5],
        });
    }
    for e in s.take_all("rect") {
        let v = floats(&e, 6, "phantom.rect")?;
        primitives.push(Primitive::Rect {
            cx: v[0],
            cy: v[1],
            width: v[2],
            height: v[3],
            angle_deg: v[4],
            value_hu: v[5],
        });
    }
    s.finish()?;
    let (phantom, builtin) = match builtin_name {
        Some(name) => {
            if name != "desk" {
                return Err(Error::Config(format!("unknown builtin phantom '{name}'")));
            }
            if !primitives.is_empty() {
                return Err(Error::Config(
                    "phantom: give either builtin or explicit primitives, not both".into(),
                ));
            }
            (desk_phantom(variant), Some((name, variant)))
        }
        None => (
            Phantom {
                background_hu: background,
                primitives,
            },
            None,
        ),
    };
    Ok(PhantomSection {
        phantom,
        builtin,
        nx,
        ny,
        dx,
        dy,
    })
}

fn parse_geometry(sec: Option<Section>) -> Result<ScanGeometry> {
    let mut s = sec.unwrap_or_else(|| Section::empty("geometry"));
    let kind = s.take("kind").unwrap_or_else(|| "parallel".into());
    let n_views = s.parse("n_views", 360usize)?;
    let n_det = s.parse("n_det", 300usize)?;
    let det_spacing = s.parse("det_spacing", 1.0f64)?;
    let span_deg = s.parse("angular_span_deg", 360.0f64)?;
    let source_to_iso = s.parse("source_to_iso", 600.0f64)?;
    let source_to_det = s.parse("source_to_det", 1100.0f64)?;
    s.finish()?;
    let span = span_deg.to_radians();
    match kind.as_str() {
        "parallel" => ScanGeometry::parallel(n_views, n_det, det_spacing, span),
        "fan" => ScanGeometry::fan(n_views, n_det, det_spacing, span, source_to_iso, source_to_det),
        other => Err(Error::Config(format!("unknown geometry kind '{other}'"))),
    }
}

fn parse_noise(sec: Option<Section>) -> Result<NoiseSection> {
    let mut s = sec.unwrap_or_else(|| Section::empty("noise"));
    let out = NoiseSection {
        i0: s.parse("i0", 1e4)?,
        k_gain: s.parse("k_gain", 1000.0)?,
        sigma2: s.parse("sigma2", 330.0 * 330.0)?,
        seed: s.parse("seed", 0u64)?,
        deterministic: s.parse("deterministic", false)?,
    };
    s.finish()?;
    if !(out.i0 > 0.0) || !(out.k_gain > 0.0) || !(out.sigma2 >= 0.0) {
        return Err(Error::Config(
            "noise: need i0 > 0, k_gain > 0, sigma2 >= 0".into(),
        ));
    }
    Ok(out)
}

fn parse_patches(sec: Option<Section>) -> Result<PatchConfig> {
    let mut s = sec.unwrap_or_else(|| Section::empty("patches"));
    let shape = s.parse_list("patch_shape", vec![8usize, 8])?;
    let stride = s.parse_list("stride", vec![1usize, 1])?;
    let boundary = match s.take("boundary").as_deref() {
        None | Some("clamp-inside") => Boundary::ClampInside,
        Some("wrap") => Boundary::Wrap,
        Some(other) => {
            return Err(Error::Config(format!("unknown patches.boundary '{other}'")))
        }
    };
    s.finish()?;
    PatchConfig::new(shape, stride, boundary)
}

fn parse_training(sec: Option<Section>) -> Result<TrainingSection> {
    let mut s = sec.unwrap_or_else(|| Section::empty("training"));
    let eta_abs = s.take("eta");
    let eta0 = s.take("eta0");
    let eta = match (eta_abs, eta0) {
        (Some(_), Some(_)) => {
            return Err(Error::Config("training: give eta or eta0, not both".into()))
        }
        (Some(e), None) => EtaSpec::Absolute(e.parse().map_err(|_| {
            Error::Config(format!("invalid value '{e}' for 'training.eta'"))
        })?),
        (None, Some(e0)) => EtaSpec::RelativeToData(e0.parse().map_err(|_| {
            Error::Config(format!("invalid value '{e0}' for 'training.eta0'"))
        })?),
        (None, None) => EtaSpec::RelativeToData(1e-4),
    };
    let transform_init = match s.take("transform_init").as_deref() {
        None | Some("dct") => TransformInit::Dct,
        Some("random-orthonormal") => TransformInit::RandomOrthonormal,
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown training.transform_init '{other}'"
            )))
        }
    };
    let cluster_init = match s.take("cluster_init").as_deref() {
        None | Some("kmeans") => ClusterInit::KMeans,
        Some("random") => ClusterInit::Random,
        Some(other) => {
            return Err(Error::Config(format!(
                "unknown training.cluster_init '{other}'"
            )))
        }
    };
    let out = TrainingSection {
        k: s.parse("k", 5usize)?,
        eta,
        lambda0: s.parse("lambda0", 31.0)?,
        iters: s.parse("iters", 1000usize)?,
        transform_init,
        cluster_init,
        seed: s.parse("seed", 0u64)?,
        variants: s.parse_list("variants", vec![101u64, 102])?,
        stride: s.parse_list("stride", vec![3usize, 3])?,
    };
    s.finish()?;
    Ok(out)
}

fn parse_solver(sec: Option<Section>) -> Result<SolverSection> {
    let mut s = sec.unwrap_or_else(|| Section::empty("solver"));
    let ep_potential = match s.take("ep_potential").as_deref() {
        None | Some("hyperbola-2d") => PotentialKind::Hyperbola2d,
        Some("fair-3d") => PotentialKind::Fair3d,
        Some(other) => {
            return Err(Error::Config(format!("unknown solver.ep_potential '{other}'")))
        }
    };
    let alpha = s.parse("alpha", 1.999f64)?;
    let out = SolverSection {
        method: s.take("method").unwrap_or_else(|| "ultra".into()),
        beta: s.parse("beta", 5e3)?,
        gamma: s.parse("gamma", 8e-4)?,
        t_outer: s.parse("t_outer", 20usize)?,
        n_inner: s.parse("n_inner", 2usize)?,
        subsets: s.parse("subsets", 4usize)?,
        alpha,
        cluster_every: s.parse("cluster_every", 1usize)?,
        eps: s.parse("eps", 0.0f64)?,
        use_tau: s.parse("use_tau", false)?,
        log_cost: s.parse("log_cost", true)?,
        ep: EpParams {
            beta: s.parse("ep_beta", 40.0)?,
            delta_hu: s.parse("ep_delta_hu", 10.0)?,
            kind: ep_potential,
            iters: s.parse("ep_iters", 20usize)?,
            subsets: s.parse("ep_subsets", 4usize)?,
            alpha,
        },
    };
    s.finish()?;
    match out.method.as_str() {
        "fbp" | "ep" | "st" | "ultra" => {}
        other => return Err(Error::Config(format!("unknown solver.method '{other}'"))),
    }
    Ok(out)
}

fn parse_evaluation(sec: Option<Section>) -> Result<EvaluationSection> {
    let mut s = sec.unwrap_or_else(|| Section::empty("evaluation"));
    let roi = s.take("roi").unwrap_or_else(|| "circle".into());
    let roi_radius_mm = match s.take("roi_radius") {
        None => None,
        Some(v) => Some(v.parse().map_err(|_| {
            Error::Config(format!("invalid value '{v}' for 'evaluation.roi_radius'"))
        })?),
    };
    let window = match s.take("window") {
        None => (800.0, 1200.0),
        Some(v) => {
            let w = floats(&v, 2, "evaluation.window")?;
            (w[0], w[1])
        }
    };
    let out = EvaluationSection {
        roi,
        roi_radius_mm,
        window,
        ssim_range: s.parse("ssim_range", 2000.0)?,
    };
    s.finish()?;
    if out.roi != "circle" && out.roi != "file" {
        return Err(Error::Config(format!("unknown evaluation.roi '{}'", out.roi)));
    }
    Ok(out)
}
