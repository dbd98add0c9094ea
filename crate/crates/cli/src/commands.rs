//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use log::info;
use serde::{Deserialize, Serialize};

use simrecon_core::estimation::{estimate_all, estimate_object, widefield_average, PeResult};
use simrecon_core::io::{self, mtf_csv, FileKind, StackFile};
use simrecon_core::metrics::{mtf_curve, resolution_at, ContrastOptions, MtfCurve, Sweep};
use simrecon_core::optics::Kernels;
use simrecon_core::phantoms::StarGeometry;
use simrecon_core::reassignment::sims_pr_reconstruct;
use simrecon_core::sims::sims_reconstruct;
use simrecon_core::simulate::simulate as run_simulation;
use simrecon_core::{Error, Image, ImageStack};

use crate::config::{Pipeline, RunConfig};
use crate::{CompareArgs, InputArgs, MtfArgs, ReconstructArgs, RunArgs};

pub const MANIFEST: &str = "manifest.json";
pub const DIAGNOSTICS: &str = "diagnostics.json";

/// Provenance record written next to every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    /// λ_det/(2·NA), µm.
    pub abbe: f64,
    pub star: Option<StarGeometry>,
    pub config: RunConfig,
    pub files: Vec<String>,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct Timings {
    pub estimate: f64,
    pub sims: f64,
    pub pr: Option<f64>,
    pub total: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Diagnostics {
    pub status: String,
    pub error: Option<String>,
    pub pipeline: Pipeline,
    pub ground_truth_patterns: bool,
    pub step_size: Option<f64>,
    pub pe_mean_seconds: Option<f64>,
    pub kernel_warning: Option<String>,
    pub seconds: Timings,
    /// Data residual per FISTA iteration, one row per pattern.
    pub traces: Vec<Vec<f64>>,
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(Error::from)?;
        Ok(Self {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn path(&mut self, name: &str) -> PathBuf {
        self.files.push(name.to_string());
        self.dir.join(name)
    }

    fn stack(&mut self, name: &str, s: &ImageStack) -> Result<()> {
        Ok(io::write_stack(&self.path(name), s)?)
    }

    fn image(&mut self, name: &str, img: &Image) -> Result<()> {
        Ok(io::write_image(&self.path(name), img)?)
    }

    fn kernel(&mut self, name: &str, psf: &Image) -> Result<()> {
        Ok(StackFile::from_image(psf, FileKind::Kernel).write(&self.path(name))?)
    }

    fn pgm(&mut self, name: &str, img: &Image) -> Result<()> {
        Ok(io::write_pgm(&self.path(name), img)?)
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
        Ok(io::write_atomic(&self.path(name), text.as_bytes())?)
    }

    fn manifest(mut self, command: &str, cfg: &RunConfig, star: Option<StarGeometry>) -> Result<()> {
        let mut files = self.files.clone();
        files.push(MANIFEST.to_string());
        let m = Manifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: cfg.pattern.seed,
            abbe: cfg.optical()?.abbe(),
            star,
            config: cfg.clone(),
            files,
        };
        self.json(MANIFEST, &m)
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new(".")).join(name)
}

pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let text = fs::read_to_string(path)
        .map_err(Error::from)
        .with_context(|| format!("reading {}", path.display()))?;
    Ok(serde_json::from_str(&text).map_err(Error::from)?)
}

fn read_manifest_if_present(path: &Path) -> Result<Option<Manifest>> {
    if path.exists() {
        read_manifest(path).map(Some)
    } else {
        Ok(None)
    }
}

/// `--config` file, else the given fallback, else defaults; then flag overrides.
fn load_config(args: &RunArgs, fallback: Option<&RunConfig>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path)
                .map_err(Error::from)
                .with_context(|| format!("reading {}", path.display()))?;
            RunConfig::from_json(&text)?
        }
        None => fallback.cloned().unwrap_or_default(),
    };
    if let Some(s) = args.seed {
        cfg.pattern.seed = s;
    }
    let r = &mut cfg.regularizers;
    r.beta = args.beta.unwrap_or(r.beta);
    r.delta = args.delta.unwrap_or(r.delta);
    r.xi = args.xi.unwrap_or(r.xi);
    r.eps = args.eps.unwrap_or(r.eps);
    if let Some(p) = args.pipeline {
        cfg.pipeline = p;
    }
    if let Some(k) = args.kernel_mode {
        cfg.kernel_mode = k.into();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn check_grid(stack: &ImageStack, cfg: &RunConfig) -> Result<()> {
    let expected = cfg.optical()?.grid;
    let got = *stack.grid();
    if got.width != expected.width || got.height != expected.height || (got.pitch - expected.pitch).abs() > 1e-9 * expected.pitch {
        return Err(Error::GridMismatch {
            left: got.to_string(),
            right: expected.to_string(),
        }
        .into());
    }
    Ok(())
}

pub fn simulate(args: &RunArgs) -> Result<()> {
    let cfg = load_config(args, None)?;
    let ds = run_simulation(&cfg.simulation()?)?;
    let mut out = Outputs::create(&args.out_dir)?;
    out.stack("measurements.sims", &ds.measurements)?;
    out.stack("patterns.sims", &ds.patterns)?;
    out.stack("dmd.sims", &ds.dmd)?;
    out.image("object.sims", &ds.object)?;
    out.kernel("psf_illu.sims", ds.kernels.illu.psf())?;
    out.kernel("psf_det.sims", ds.kernels.det.psf())?;
    out.pgm("object.pgm", &ds.object)?;
    out.pgm("widefield.pgm", &ds.measurements.mean())?;
    out.manifest("simulate", &cfg, ds.star)?;
    info!(
        "simulated {} measurements on {} into {}",
        ds.measurements.len(),
        ds.measurements.grid(),
        args.out_dir.display()
    );
    Ok(())
}

struct Loaded {
    cfg: RunConfig,
    star: Option<StarGeometry>,
    stack: ImageStack,
    kernels: Kernels,
}

fn load_input(args: &InputArgs) -> Result<Loaded> {
    let prior = read_manifest_if_present(&sibling(&args.input, MANIFEST))?;
    let cfg = load_config(&args.run, prior.as_ref().map(|m| &m.config))?;
    let stack = io::read_stack(&args.input).with_context(|| format!("reading {}", args.input.display()))?;
    check_grid(&stack, &cfg)?;
    let kernels = Kernels::new(&cfg.optical()?)?;
    Ok(Loaded {
        star: prior.and_then(|m| m.star),
        cfg,
        stack,
        kernels,
    })
}

fn failed(pipeline: Pipeline, err: &Error) -> Diagnostics {
    Diagnostics {
        status: "failed".into(),
        error: Some(err.to_string()),
        pipeline,
        ground_truth_patterns: false,
        step_size: None,
        pe_mean_seconds: None,
        kernel_warning: None,
        seconds: Timings::default(),
        traces: Vec::new(),
    }
}

/// Runs pattern estimation, recording diagnostics before propagating a failure.
fn estimate(loaded: &Loaded, out: &mut Outputs) -> Result<PeResult> {
    match estimate_all(&loaded.stack, &loaded.kernels, loaded.cfg.pe()) {
        Ok(pe) => Ok(pe),
        Err(e) => {
            out.json(DIAGNOSTICS, &failed(loaded.cfg.pipeline, &e))?;
            Err(e.into())
        }
    }
}

pub fn estimate_patterns(args: &InputArgs) -> Result<()> {
    let loaded = load_input(args)?;
    let mut out = Outputs::create(&args.run.out_dir)?;
    let t0 = Instant::now();
    let pe = estimate(&loaded, &mut out)?;
    let elapsed = t0.elapsed().as_secs_f64();
    out.stack("patterns_est.sims", &pe.patterns)?;
    out.image("o_est.sims", &pe.o_est)?;
    out.json(
        DIAGNOSTICS,
        &Diagnostics {
            status: "ok".into(),
            error: None,
            pipeline: loaded.cfg.pipeline,
            ground_truth_patterns: false,
            step_size: Some(pe.step_size),
            pe_mean_seconds: Some(pe.mean_seconds()),
            kernel_warning: None,
            seconds: Timings {
                estimate: elapsed,
                total: elapsed,
                ..Timings::default()
            },
            traces: pe.traces.clone(),
        },
    )?;
    out.manifest("estimate-patterns", &loaded.cfg, loaded.star)?;
    info!("estimated {} patterns in {elapsed:.1} s", pe.patterns.len());
    Ok(())
}

pub fn reconstruct(args: &ReconstructArgs) -> Result<()> {
    let loaded = load_input(&args.input)?;
    let cfg = &loaded.cfg;
    let mut out = Outputs::create(&args.input.run.out_dir)?;
    let start = Instant::now();
    let mut seconds = Timings::default();

    let avg = widefield_average(&loaded.stack)?;
    out.image("widefield.sims", &avg)?;
    out.image("widefield_deconv.sims", &estimate_object(&avg, &loaded.kernels.det, cfg.regularizers.beta)?)?;

    let (patterns, pe) = match &args.ground_truth_patterns {
        Some(path) => {
            let p = io::read_stack(path).with_context(|| format!("reading {}", path.display()))?;
            check_grid(&p, cfg)?;
            (p, None)
        }
        None => {
            let t = Instant::now();
            let pe = estimate(&loaded, &mut out)?;
            seconds.estimate = t.elapsed().as_secs_f64();
            out.stack("patterns_est.sims", &pe.patterns)?;
            out.image("o_est.sims", &pe.o_est)?;
            (pe.patterns.clone(), Some(pe))
        }
    };

    let t = Instant::now();
    let sims = sims_reconstruct(&loaded.stack, &patterns, &loaded.kernels, &cfg.sims())?;
    seconds.sims = t.elapsed().as_secs_f64();
    out.image("i_cov.sims", &sims.i_cov)?;
    out.image("alpha.sims", &sims.alpha_map)?;
    out.image("i_sims.sims", &sims.i_sims)?;
    out.pgm("i_sims.pgm", &sims.i_sims)?;

    if cfg.pipeline == Pipeline::PeSimsPr {
        let t = Instant::now();
        let pr = sims_pr_reconstruct(&loaded.stack, &patterns, &loaded.kernels, &cfg.sims(), &cfg.pr())?;
        seconds.pr = Some(t.elapsed().as_secs_f64());
        out.image("i_pr.sims", &pr.i_sims)?;
        out.pgm("i_pr.pgm", &pr.i_sims)?;
    }
    seconds.total = start.elapsed().as_secs_f64();

    let diag = Diagnostics {
        status: "ok".into(),
        error: None,
        pipeline: cfg.pipeline,
        ground_truth_patterns: pe.is_none(),
        step_size: pe.as_ref().map(|p| p.step_size),
        pe_mean_seconds: pe.as_ref().map(|p| p.mean_seconds()),
        kernel_warning: sims.kernel_warning.clone(),
        traces: pe.map(|p| p.traces).unwrap_or_default(),
        seconds,
    };
    out.json(DIAGNOSTICS, &diag)?;
    out.manifest("reconstruct", cfg, loaded.star)?;
    info!("reconstruction finished in {:.1} s", diag.seconds.total);
    Ok(())
}

fn star_metadata(manifest: &Manifest, path: &Path) -> Result<StarGeometry> {
    manifest.star.ok_or_else(|| {
        Error::InvalidConfig(format!("{} has no star geometry metadata", path.display())).into()
    })
}

fn curve_for(image: &Path, manifest: &Manifest, star: &StarGeometry) -> Result<MtfCurve> {
    let img = io::read_image(image).with_context(|| format!("reading {}", image.display()))?;
    Ok(mtf_curve(
        &img,
        star.center,
        star.spokes,
        Sweep::abbe_units(manifest.abbe),
        ContrastOptions::default(),
    )?)
}

/// Resolution in Abbe units, or `None` when the threshold is never crossed.
fn resolution_abbe(curve: &MtfCurve, threshold: f64, abbe: f64) -> Result<Option<f64>> {
    match resolution_at(curve, threshold) {
        Ok(p) => Ok(Some(p / abbe)),
        Err(Error::OutOfRange { .. }) => Ok(None),
        Err(e) => Err(e.into()),
    }
}

fn fmt_resolution(r: Option<f64>) -> String {
    r.map_or("out of range".to_string(), |v| format!("{v:.4}"))
}

pub fn mtf(args: &MtfArgs) -> Result<()> {
    let manifest_path = args.manifest.clone().unwrap_or_else(|| sibling(&args.input, MANIFEST));
    let manifest = read_manifest(&manifest_path)?;
    let star = star_metadata(&manifest, &manifest_path)?;
    let curve = curve_for(&args.input, &manifest, &star)?;
    let out = args.out.clone().unwrap_or_else(|| {
        let stem = args.input.file_stem().map_or("image".into(), |s| s.to_string_lossy());
        sibling(&args.input, &format!("{stem}_mtf.csv"))
    });
    io::write_atomic(&out, mtf_csv(&curve, manifest.abbe).as_bytes())?;
    let res = resolution_abbe(&curve, args.threshold, manifest.abbe)?;
    println!("{}\t{}", args.input.display(), fmt_resolution(res));
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompareRow {
    pub name: String,
    /// Abbe units.
    pub resolution: Option<f64>,
    pub enhancement: Option<f64>,
}

pub fn compare_rows(images: &[PathBuf], manifest: &Manifest, star: &StarGeometry, threshold: f64) -> Result<Vec<CompareRow>> {
    let mut rows = Vec::with_capacity(images.len());
    for path in images {
        let curve = curve_for(path, manifest, star)?;
        rows.push(CompareRow {
            name: path.file_stem().map_or(String::new(), |s| s.to_string_lossy().into_owned()),
            resolution: resolution_abbe(&curve, threshold, manifest.abbe)?,
            enhancement: None,
        });
    }
    let reference = rows.first().and_then(|r| r.resolution);
    for r in &mut rows {
        r.enhancement = reference.zip(r.resolution).map(|(a, b)| a / b);
    }
    Ok(rows)
}

pub fn compare(args: &CompareArgs) -> Result<()> {
    let manifest_path = args.manifest.clone().unwrap_or_else(|| sibling(&args.images[0], MANIFEST));
    let manifest = read_manifest(&manifest_path)?;
    let star = star_metadata(&manifest, &manifest_path)?;
    let rows = compare_rows(&args.images, &manifest, &star, args.threshold)?;
    println!("{:<24} {:>16} {:>12}", "image", "resolution", "enhancement");
    let mut csv = String::from("image,resolution_abbe,enhancement\n");
    for r in &rows {
        let enh = r.enhancement.map_or("-".to_string(), |e| format!("{e:.2}x"));
        println!("{:<24} {:>16} {:>12}", r.name, fmt_resolution(r.resolution), enh);
        csv.push_str(&format!(
            "{},{},{}\n",
            r.name,
            r.resolution.map_or(String::new(), |v| format!("{v:.6}")),
            r.enhancement.map_or(String::new(), |v| format!("{v:.6}"))
        ));
    }
    if let Some(out) = &args.out {
        io::write_atomic(out, csv.as_bytes())?;
    }
    Ok(())
}
