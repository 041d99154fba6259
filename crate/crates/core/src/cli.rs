//! `corrdepth` command line: `gen`, `fit`, `eval`, `gradcheck`.
//!
//! Exit codes: 0 success, 2 input or precondition error, 3 numerical or
//! solver error.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Mask, ScalarGrid};
use crate::gradcheck::{default_sizes, run_gradcheck};
use crate::io;
use crate::metrics::{align_with, metrics, offset_ground_truth, AlignMode};
use crate::optim::{fit_depth, InitMode, OptimConfig, StopReason};
use crate::robust::{KernelArgument, RobustParams};
use crate::scene::{corrupt, CorruptionSpec, Scene, SceneSpec};
use crate::solver::RansacConfig;

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Ground truth is shifted so its masked minimum sits here before the
/// relative metrics are computed.
pub const GT_FLOOR: f64 = 0.1;

#[derive(Parser, Debug)]
#[command(
    name = "corrdepth",
    version,
    about = "Depth recovery from sparse two-view correspondences"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Render a synthetic scene and write depth grids, correspondences and a manifest.
    Gen(GenArgs),
    /// Recover the source-view depth from a manifest's correspondences.
    Fit(FitArgs),
    /// Align a predicted depth grid to ground truth and report the error metrics.
    Eval(EvalArgs),
    /// Compare the analytic depth gradient against central finite differences.
    Gradcheck(GradcheckArgs),
}

#[derive(Args, Debug)]
pub struct GenArgs {
    /// Scene description (JSON).
    pub scene: PathBuf,
    pub out_dir: PathBuf,
    /// Correspondences per pair; 0 pairs every visible source pixel.
    #[arg(long, default_value_t = 200)]
    pub points: usize,
    #[arg(long, default_value_t = 0.0)]
    pub gaussian_sigma: f64,
    #[arg(long, default_value_t = 0.0)]
    pub outlier_fraction: f64,
    #[arg(long, default_value_t = 30.0)]
    pub outlier_magnitude: f64,
    #[arg(long, default_value_t = 0)]
    pub corruption_seed: u64,
}

#[derive(Args, Debug)]
pub struct FitArgs {
    pub manifest: PathBuf,
    /// Output directory; defaults to the manifest's `output_dir`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Fit the clean correspondences instead of the corrupted ones.
    #[arg(long)]
    pub clean: bool,
    /// Share of the first pair held out for plateau detection.
    #[arg(long, default_value_t = 0.0)]
    pub holdout_fraction: f64,
    #[arg(long)]
    pub tau: Option<f64>,
    /// Disable the robust kernel (plain squared loss).
    #[arg(long, conflicts_with = "tau")]
    pub no_robust: bool,
    #[arg(long, value_enum)]
    pub kernel_argument: Option<KernelArg>,
    /// RANSAC inlier threshold in pixels.
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub ransac_iterations: Option<usize>,
    #[arg(long)]
    pub refit_rounds: Option<usize>,
    #[arg(long)]
    pub learning_rate: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long)]
    pub grad_clamp: Option<f64>,
    #[arg(long)]
    pub max_iters: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long, value_enum)]
    pub init_mode: Option<Init>,
    #[arg(long)]
    pub init_jitter: Option<f64>,
    /// Laplacian smoothness weight.
    #[arg(long)]
    pub smoothness: Option<f64>,
    /// Seeds both the optimizer init and RANSAC.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KernelArg {
    Distance,
    SquaredDistance,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum Init {
    Zeros,
    UniformRandom,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    pub pred: PathBuf,
    pub gt: PathBuf,
    /// 0/1 grid selecting the evaluated pixels; defaults to every pixel.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Write the report as JSON here as well.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use ground truth as given instead of shifting its masked minimum to 0.1.
    #[arg(long)]
    pub raw_gt: bool,
    /// Fit the scale on unshifted values.
    #[arg(long)]
    pub unshifted_alignment: bool,
}

#[derive(Args, Debug)]
pub struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated correspondence counts; defaults to the 50-instance suite.
    #[arg(long, value_delimiter = ',')]
    pub sizes: Vec<usize>,
    #[arg(long, default_value_t = 3.0)]
    pub tau: f64,
    /// Perturb the analytic gradient before comparing (negative control).
    #[arg(long)]
    pub corrupt_gradient: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairEntry {
    pub source: usize,
    pub target: usize,
    pub clean: String,
    pub corrupted: String,
}

/// Everything `fit` needs, written by `gen`. Paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scene_spec_path: String,
    pub width: usize,
    pub height: usize,
    pub depth_files: Vec<String>,
    pub mask_files: Vec<String>,
    pub pairs: Vec<PairEntry>,
    /// Correspondences per pair; `None` for dense.
    pub points: Option<usize>,
    pub corruption: CorruptionSpec,
    #[serde(default)]
    pub ransac: RansacConfig,
    #[serde(default)]
    pub robust: RobustParams,
    #[serde(default)]
    pub optim: OptimConfig,
    pub output_dir: String,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }
}

fn exit_code(e: &Error) -> i32 {
    if e.is_numerical() {
        EXIT_NUMERICAL
    } else {
        EXIT_INPUT
    }
}

/// Parses `args` and runs the command; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Gen(a) => cmd_gen(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Eval(a) => cmd_eval(&a),
        Command::Gradcheck(a) => cmd_gradcheck(&a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn cmd_gen(a: &GenArgs) -> Result<i32> {
    let text = fs::read_to_string(&a.scene)?;
    let spec = SceneSpec::from_json(&text).map_err(|e| match e {
        Error::Json(j) => Error::Parse(format!("{}: {j}", a.scene.display())),
        other => other,
    })?;
    let corruption = CorruptionSpec {
        gaussian_sigma: a.gaussian_sigma,
        outlier_fraction: a.outlier_fraction,
        outlier_magnitude: a.outlier_magnitude,
        seed: a.corruption_seed,
    };
    corruption.validate()?;
    let scene = Scene::new(&spec)?;
    fs::create_dir_all(&a.out_dir)?;
    write_json(&a.out_dir.join("scene.json"), &spec)?;

    let mut depth_files = Vec::new();
    let mut mask_files = Vec::new();
    for v in 0..scene.view_count() {
        let depth_name = format!("depth_view{v}.txt");
        let mask_name = format!("mask_view{v}.txt");
        io::write_depth(&a.out_dir.join(&depth_name), &scene.render_depth(v)?)?;
        io::write_mask(&a.out_dir.join(&mask_name), &scene.surface_mask(v)?)?;
        depth_files.push(depth_name);
        mask_files.push(mask_name);
    }

    let mut pairs = Vec::new();
    for s in 0..scene.view_count() {
        for t in s + 1..scene.view_count() {
            let clean = if a.points == 0 {
                scene.dense_correspondences(s, t)?
            } else {
                scene.generate_correspondences(s, t, a.points)?
            };
            // Each pair gets its own corruption stream.
            let per_pair = CorruptionSpec {
                seed: corruption.seed.wrapping_add((s * scene.view_count() + t) as u64),
                ..corruption
            };
            let corrupted = corrupt(&clean, &per_pair)?;
            let entry = PairEntry {
                source: s,
                target: t,
                clean: format!("pair_{s}_{t}_clean.csv"),
                corrupted: format!("pair_{s}_{t}.csv"),
            };
            io::write_correspondences(&a.out_dir.join(&entry.clean), &clean)?;
            io::write_correspondences(&a.out_dir.join(&entry.corrupted), &corrupted)?;
            pairs.push(entry);
        }
    }

    let manifest = RunManifest {
        scene_spec_path: "scene.json".into(),
        width: scene.width(),
        height: scene.height(),
        depth_files,
        mask_files,
        pairs,
        points: (a.points > 0).then_some(a.points),
        corruption,
        ransac: RansacConfig::default(),
        robust: RobustParams::default(),
        optim: OptimConfig::default(),
        output_dir: "fit".into(),
    };
    write_json(&a.out_dir.join("manifest.json"), &manifest)?;
    println!(
        "wrote {} views and {} pairs to {}",
        scene.view_count(),
        manifest.pairs.len(),
        a.out_dir.display()
    );
    Ok(EXIT_OK)
}

fn apply_overrides(m: &mut RunManifest, a: &FitArgs) {
    if let Some(t) = a.tau {
        m.robust.tau = t;
    }
    if a.no_robust {
        m.robust.tau = f64::INFINITY;
    }
    if let Some(k) = a.kernel_argument {
        m.robust.argument = match k {
            KernelArg::Distance => KernelArgument::Distance,
            KernelArg::SquaredDistance => KernelArgument::SquaredDistance,
        };
    }
    let r = &mut m.ransac;
    r.threshold = a.threshold.unwrap_or(r.threshold);
    r.max_iterations = a.ransac_iterations.unwrap_or(r.max_iterations);
    r.refit_rounds = a.refit_rounds.unwrap_or(r.refit_rounds);
    let o = &mut m.optim;
    o.learning_rate = a.learning_rate.unwrap_or(o.learning_rate);
    o.momentum = a.momentum.unwrap_or(o.momentum);
    o.grad_clamp = a.grad_clamp.unwrap_or(o.grad_clamp);
    o.max_iters = a.max_iters.unwrap_or(o.max_iters);
    o.patience = a.patience.unwrap_or(o.patience);
    o.init_jitter = a.init_jitter.unwrap_or(o.init_jitter);
    o.smoothness = a.smoothness.unwrap_or(o.smoothness);
    if let Some(i) = a.init_mode {
        o.init_mode = match i {
            Init::Zeros => InitMode::Zeros,
            Init::UniformRandom => InitMode::UniformRandom,
        };
    }
    if let Some(s) = a.seed {
        o.seed = s;
        r.seed = s;
    }
}

pub fn cmd_fit(a: &FitArgs) -> Result<i32> {
    let mut manifest = RunManifest::load(&a.manifest)?;
    apply_overrides(&mut manifest, a);
    if !(0.0..1.0).contains(&a.holdout_fraction) {
        return Err(Error::InvalidInput(format!(
            "holdout fraction must lie in [0, 1), got {}",
            a.holdout_fraction
        )));
    }
    let base = a.manifest.parent().unwrap_or(Path::new("."));

    // The fit recovers view 0; only pairs with view 0 as source read its depth.
    let mut pairs = Vec::new();
    for p in manifest.pairs.iter().filter(|p| p.source == 0) {
        let file = if a.clean { &p.clean } else { &p.corrupted };
        pairs.push((io::read_correspondences(&base.join(file))?, 1.0));
    }
    if pairs.is_empty() {
        return Err(Error::InvalidInput("manifest has no pair with view 0 as source".into()));
    }
    let holdout = if a.holdout_fraction > 0.0 {
        let first = &pairs[0].0;
        let n = first.len();
        let held = ((n as f64) * a.holdout_fraction).round() as usize;
        if held < 4 || n - held < 4 {
            return Err(Error::InvalidInput(format!(
                "holdout split of {n} correspondences leaves fewer than 4 on one side"
            )));
        }
        let mut order: Vec<usize> = (0..n).collect();
        use rand::seq::SliceRandom;
        use rand::SeedableRng;
        order.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(manifest.optim.seed));
        let mut is_held = vec![false; n];
        for &i in &order[..held] {
            is_held[i] = true;
        }
        let train = first.select(|i| !is_held[i])?;
        let hold = first.select(|i| is_held[i])?;
        pairs[0].0 = train;
        Some(hold)
    } else {
        None
    };

    let (depth, report) = fit_depth(
        &pairs,
        manifest.width,
        manifest.height,
        &manifest.optim,
        &manifest.ransac,
        &manifest.robust,
        holdout.as_ref(),
    )?;

    let out = a.out.clone().unwrap_or_else(|| base.join(&manifest.output_dir));
    fs::create_dir_all(&out)?;
    io::write_depth(&out.join("depth.txt"), &depth)?;
    io::write_pgm(&out.join("depth.pgm"), &depth)?;
    write_json(&out.join("fit_report.json"), &report)?;
    fs::write(out.join("loss_trace.csv"), report.trace_csv())?;
    println!(
        "{:?} after {} iterations, final loss {}",
        report.stop_reason, report.iterations_run, report.final_loss
    );
    if report.stop_reason == StopReason::Error {
        eprintln!("error: {}", report.error.as_deref().unwrap_or("solver failure"));
        return Ok(EXIT_NUMERICAL);
    }
    Ok(EXIT_OK)
}

pub fn cmd_eval(a: &EvalArgs) -> Result<i32> {
    let pred = io::read_grid(&a.pred)?;
    let gt = io::read_grid(&a.gt)?;
    if !pred.same_shape(&gt) {
        return Err(Error::InvalidInput(format!(
            "prediction is {}x{} but ground truth is {}x{}",
            pred.width, pred.height, gt.width, gt.height
        )));
    }
    let mask = match &a.mask {
        Some(p) => io::read_mask(p)?,
        None => Mask::full(gt.width, gt.height)?,
    };
    let gt: ScalarGrid = if a.raw_gt {
        gt
    } else {
        offset_ground_truth(&gt, &mask, GT_FLOOR)?
    };
    let mode = if a.unshifted_alignment {
        AlignMode::Unshifted
    } else {
        AlignMode::MedianShifted
    };
    let (aligned, _) = align_with(&pred, &gt, &mask, mode)?;
    let report = metrics(&aligned, &gt, &mask)?;
    println!("{}", crate::metrics::MetricReport::CSV_HEADER);
    println!("{}", report.csv_row());
    if let Some(out) = &a.out {
        write_json(out, &report)?;
    }
    Ok(EXIT_OK)
}

pub fn cmd_gradcheck(a: &GradcheckArgs) -> Result<i32> {
    let robust = RobustParams::new(a.tau)?;
    let sizes = if a.sizes.is_empty() {
        default_sizes(a.seed)
    } else {
        a.sizes.clone()
    };
    if let Some(k) = sizes.iter().find(|k| !(8..=256).contains(*k)) {
        return Err(Error::InvalidInput(format!("instance size {k} outside 8..=256")));
    }
    let report = run_gradcheck(a.seed, &sizes, &robust, a.corrupt_gradient)?;
    for r in &report.instances {
        println!(
            "instance {:>3}  K={:<4} max_rel_err={:.3e}  {}",
            r.index,
            r.k,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    println!("{}", if report.passed { "PASS" } else { "FAIL" });
    Ok(if report.passed { EXIT_OK } else { EXIT_NUMERICAL })
}
