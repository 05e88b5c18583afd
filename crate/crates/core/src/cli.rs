//! Command-line front end.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::{evaluate_registration, overlap, warp_mask, OverlapScores, RegistrationReport};
use crate::image::{Image2D, IntensityMode, Mask2D};
use crate::io::{self, BitDepth};
use crate::optim::{gradcheck, register_pipeline, OptimConfig};
use crate::synthetic::{make_suite, SuiteConfig};
use crate::transform::{invert_field, AffineParams, DisplacementField};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_IO: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

#[derive(Parser, Debug)]
#[command(
    name = "mcreg",
    version,
    about = "Coarse-to-fine multi-contrast 2D image registration"
)]
struct Cli {
    /// More log output on stderr (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Register a moving image (or every pair of a manifest) to a fixed image.
    Register(RegisterArgs),
    /// Write the extrapolated inverse of a displacement field.
    Invert {
        #[arg(long)]
        field: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Overlap scores of a predicted mask against a reference mask.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long = "ref")]
        reference: PathBuf,
        /// Output JSON path, `-` for stdout.
        #[arg(long)]
        out: PathBuf,
        /// Warp the predicted mask by this field first.
        #[arg(long)]
        field: Option<PathBuf>,
    },
    /// Generate a synthetic suite of phantom pairs with ground truth.
    Synth {
        /// JSON suite description; missing keys take defaults.
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare analytic and finite-difference gradients of the total loss.
    Gradcheck {
        #[arg(long, default_value_t = 12)]
        size: usize,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        /// Exit with a numeric failure when the max relative error is not below this.
        #[arg(long, default_value_t = 1e-3)]
        tolerance: f64,
    },
}

#[derive(Args, Debug)]
struct RegisterArgs {
    #[arg(long, required_unless_present = "manifest", conflicts_with = "manifest")]
    fixed: Option<PathBuf>,
    #[arg(long, required_unless_present = "manifest")]
    moving: Option<PathBuf>,
    #[arg(long, requires = "moving_mask", conflicts_with = "manifest")]
    fixed_mask: Option<PathBuf>,
    #[arg(long, requires = "fixed_mask")]
    moving_mask: Option<PathBuf>,
    /// Pair manifest written by `synth`.
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Worker threads for manifest runs.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Resample inputs to SIZE x SIZE before registering.
    #[arg(long, value_name = "SIZE")]
    resize: Option<usize>,
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// `minmax` rescales each image to [0, 1]; `raw` keeps file intensities.
    #[arg(long, default_value = "minmax")]
    intensity: IntensityMode,
}

/// Maps an error to the process exit status.
pub fn exit_code(err: &Error) -> i32 {
    match err.root() {
        e if e.is_io() => EXIT_IO,
        Error::Json(_) => EXIT_IO,
        Error::NonFinite(_) => EXIT_NUMERIC,
        _ => EXIT_USAGE,
    }
}

/// Parses `args` (including the program name), runs the command and returns
/// the exit status. Diagnostics go to stderr.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    let _ = env_logger::Builder::new()
        .filter_level(level)
        .parse_env("MCREG_LOG")
        .target(env_logger::Target::Stderr)
        .try_init();

    let outcome = match cli.command {
        Command::Register(args) => cmd_register(&args),
        Command::Invert { field, out } => cmd_invert(&field, &out).map(|_| EXIT_OK),
        Command::Eval {
            pred,
            reference,
            out,
            field,
        } => cmd_eval(&pred, &reference, field.as_deref(), &out).map(|_| EXIT_OK),
        Command::Synth { spec, out } => cmd_synth(&spec, &out).map(|_| EXIT_OK),
        Command::Gradcheck {
            size,
            config,
            overrides,
            tolerance,
        } => cmd_gradcheck(size, config.as_deref(), &overrides, tolerance),
    };
    match outcome {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn load_any_image(path: &Path) -> Result<Image2D> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("rfg") => io::load_image_rfg(path),
        _ => io::load_image(path),
    }
}

fn prepare_image(
    path: &Path,
    mode: IntensityMode,
    resize: Option<usize>,
    flags: &mut Vec<String>,
    label: &str,
) -> Result<Image2D> {
    let mut img = load_any_image(path)?;
    if let Some(n) = resize {
        img = img.resize(n, n)?;
    }
    if mode == IntensityMode::MinMax {
        let norm = img.normalize();
        if norm.degenerate {
            flags.push(format!("{label}_constant_intensity"));
        }
        img = norm.image;
    }
    Ok(img)
}

fn prepare_mask(path: &Path, resize: Option<usize>) -> Result<Mask2D> {
    let mask = io::load_mask(path)?;
    match resize {
        Some(n) => Ok(Mask2D::from_image_threshold(&mask.to_image().resize(n, n)?, 0.5)),
        None => Ok(mask),
    }
}

/// Inputs of one registration job.
struct Job {
    fixed: PathBuf,
    moving: PathBuf,
    masks: Option<(PathBuf, PathBuf)>,
    out: PathBuf,
}

/// Registers one pair and writes its outputs. Returns the report.
fn register_job(
    job: &Job,
    cfg: &OptimConfig,
    mode: IntensityMode,
    resize: Option<usize>,
) -> Result<RegistrationReport> {
    let mut flags = Vec::new();
    let fixed = prepare_image(&job.fixed, mode, resize, &mut flags, "fixed")?;
    let moving = prepare_image(&job.moving, mode, resize, &mut flags, "moving")?;
    if fixed.dims() != moving.dims() {
        return Err(Error::DimensionMismatch {
            expected: fixed.dims(),
            got: moving.dims(),
        }
        .in_stage("loading inputs"));
    }
    let masks = match &job.masks {
        Some((fm, mm)) => Some((prepare_mask(fm, resize)?, prepare_mask(mm, resize)?)),
        None => None,
    };

    let result = register_pipeline(&fixed, &moving, cfg)?;
    let mut report = evaluate_registration(
        &result,
        masks.as_ref().map(|(_, mm)| mm),
        masks.as_ref().map(|(fm, _)| fm),
    )?;
    flags.append(&mut report.flags);
    report.flags = flags;

    std::fs::create_dir_all(&job.out).map_err(|e| Error::io(&job.out, e))?;
    let inverse = invert_field(&result.field);
    let transform = serde_json::to_string_pretty(&result.affine)?;
    let files = vec![
        (
            job.out.join("m_affine.pgm"),
            io::encode_image(&result.m_affine, BitDepth::Sixteen),
        ),
        (
            job.out.join("m_registered.pgm"),
            io::encode_image(&result.m_registered, BitDepth::Sixteen),
        ),
        (
            job.out.join("m_inverse.pgm"),
            io::encode_image(&result.m_inverse, BitDepth::Sixteen),
        ),
        (job.out.join("field.rfg"), io::encode_field(&result.field)),
        (job.out.join("field_inv.rfg"), io::encode_field(&inverse)),
        (job.out.join("affine.json"), format!("{transform}\n").into_bytes()),
        (
            job.out.join("report.json"),
            format!("{}\n", report.to_json()?).into_bytes(),
        ),
    ];
    io::write_all_atomic(&files)?;
    Ok(report)
}

fn cmd_register(args: &RegisterArgs) -> Result<i32> {
    let cfg = OptimConfig::layered(args.config.as_deref(), &args.overrides)?;
    if let Some(n) = args.resize {
        if n < 8 {
            return Err(Error::InvalidParameter(format!("--resize must be >= 8, got {n}")));
        }
    }
    if let Some(manifest) = &args.manifest {
        return register_manifest(manifest, args, &cfg);
    }
    let (fixed, moving) = match (&args.fixed, &args.moving) {
        (Some(f), Some(m)) => (f.clone(), m.clone()),
        _ => return Err(Error::InvalidParameter("--fixed and --moving are required".into())),
    };
    let job = Job {
        fixed,
        moving,
        masks: args.fixed_mask.clone().zip(args.moving_mask.clone()),
        out: args.out.clone(),
    };
    let report = register_job(&job, &cfg, args.intensity, args.resize)?;
    log::info!("wrote {}", job.out.display());
    if report.flags.iter().any(|f| f.ends_with("diverged")) {
        eprintln!(
            "warning: optimization diverged, best iterate written ({:?})",
            report.flags
        );
        return Ok(EXIT_NUMERIC);
    }
    Ok(EXIT_OK)
}

/// One pair entry of a synthetic manifest. Paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestPair {
    pub name: String,
    pub fixed: String,
    pub moving: String,
    pub fixed_mask: String,
    pub moving_mask: String,
    pub field_gt: String,
    pub forward_gt: String,
    pub affine_gt: AffineParams,
    pub moving_map: crate::synthetic::ContrastMap,
}

/// Manifest written by `synth`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub suite: SuiteConfig,
    pub pairs: Vec<ManifestPair>,
}

/// Suite-mean overlap per stage for a manifest run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SuiteSummary {
    pub pairs: usize,
    pub mean_dice_undef: f64,
    pub mean_dice_affine: f64,
    pub mean_dice_full: f64,
    pub mean_folding: f64,
    pub flagged: Vec<String>,
}

fn mean_dice(reports: &[RegistrationReport], pick: impl Fn(&RegistrationReport) -> Option<OverlapScores>) -> f64 {
    let vals: Vec<f64> = reports.iter().filter_map(|r| pick(r).map(|s| s.dice)).collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

fn register_manifest(path: &Path, args: &RegisterArgs, cfg: &OptimConfig) -> Result<i32> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let manifest: Manifest = serde_json::from_str(&text)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let jobs: Vec<(String, Job)> = manifest
        .pairs
        .iter()
        .map(|p| {
            (
                p.name.clone(),
                Job {
                    fixed: base.join(&p.fixed),
                    moving: base.join(&p.moving),
                    masks: Some((base.join(&p.fixed_mask), base.join(&p.moving_mask))),
                    out: args.out.join(&p.name),
                },
            )
        })
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(args.jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let reports: Vec<(String, RegistrationReport)> = pool.install(|| {
        jobs.par_iter()
            .map(|(name, job)| {
                register_job(job, cfg, args.intensity, args.resize)
                    .map(|r| (name.clone(), r))
                    .map_err(|e| Error::Config(format!("pair {name}: {e}")))
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let flagged: Vec<String> = reports
        .iter()
        .filter(|(_, r)| r.flags.iter().any(|f| f.ends_with("diverged")))
        .map(|(n, _)| n.clone())
        .collect();
    let only: Vec<RegistrationReport> = reports.into_iter().map(|(_, r)| r).collect();
    let summary = SuiteSummary {
        pairs: only.len(),
        mean_dice_undef: mean_dice(&only, |r| r.undef),
        mean_dice_affine: mean_dice(&only, |r| r.affine),
        mean_dice_full: mean_dice(&only, |r| r.full),
        mean_folding: only.iter().map(|r| r.folding as f64).sum::<f64>() / only.len().max(1) as f64,
        flagged,
    };
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let json = serde_json::to_string_pretty(&summary)?;
    io::write_atomic(&args.out.join("summary.json"), format!("{json}\n").as_bytes())?;
    eprintln!(
        "{} pairs: mean Dice undef {:.4}, affine {:.4}, full {:.4}",
        summary.pairs, summary.mean_dice_undef, summary.mean_dice_affine, summary.mean_dice_full
    );
    Ok(if summary.flagged.is_empty() {
        EXIT_OK
    } else {
        EXIT_NUMERIC
    })
}

fn cmd_invert(field: &Path, out: &Path) -> Result<()> {
    let phi = io::load_field(field)?;
    io::save_field(&invert_field(&phi), out)
}

/// Writes to stdout. A closed pipe on the reading side is not an error.
fn print_stdout(text: &str) -> Result<()> {
    let mut stdout = std::io::stdout().lock();
    match writeln!(stdout, "{text}").and_then(|_| stdout.flush()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn write_json_output(out: &Path, json: &str) -> Result<()> {
    if out.as_os_str() == "-" {
        print_stdout(json)
    } else {
        io::write_atomic(out, format!("{json}\n").as_bytes())
    }
}

fn cmd_eval(pred: &Path, reference: &Path, field: Option<&Path>, out: &Path) -> Result<()> {
    let mut p = io::load_mask(pred)?;
    let r = io::load_mask(reference)?;
    if let Some(f) = field {
        let phi: DisplacementField = io::load_field(f)?;
        p = warp_mask(&p, &AffineParams::identity(), &phi)?;
    }
    let scores = overlap(&p, &r)?;
    write_json_output(out, &serde_json::to_string_pretty(&scores)?)
}

fn cmd_synth(spec: &Path, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
    let suite: SuiteConfig = serde_json::from_str(&text)?;
    let members = make_suite(&suite)?;
    let mut files = Vec::new();
    let mut pairs = Vec::new();
    for m in &members {
        let name = format!("pair_{:03}", m.index);
        let p = &m.pair;
        let rel = |f: &str| format!("{name}/{f}");
        files.push((
            out.join(rel("fixed.pgm")),
            io::encode_image(&p.fixed, BitDepth::Sixteen),
        ));
        files.push((
            out.join(rel("moving.pgm")),
            io::encode_image(&p.moving, BitDepth::Sixteen),
        ));
        files.push((out.join(rel("fixed_mask.pgm")), io::encode_mask(&p.fixed_mask)));
        files.push((out.join(rel("moving_mask.pgm")), io::encode_mask(&p.moving_mask)));
        files.push((out.join(rel("field_gt.rfg")), io::encode_field(&p.field_gt)));
        files.push((out.join(rel("forward_gt.rfg")), io::encode_field(&p.forward_gt)));
        pairs.push(ManifestPair {
            name: name.clone(),
            fixed: rel("fixed.pgm"),
            moving: rel("moving.pgm"),
            fixed_mask: rel("fixed_mask.pgm"),
            moving_mask: rel("moving_mask.pgm"),
            field_gt: rel("field_gt.rfg"),
            forward_gt: rel("forward_gt.rfg"),
            affine_gt: p.affine_gt,
            moving_map: m.moving_map.clone(),
        });
    }
    let manifest = Manifest { suite, pairs };
    files.push((
        out.join("manifest.json"),
        format!("{}\n", serde_json::to_string_pretty(&manifest)?).into_bytes(),
    ));
    for m in &manifest.pairs {
        let dir = out.join(&m.name);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    io::write_all_atomic(&files)?;
    eprintln!("wrote {} pairs to {}", manifest.pairs.len(), out.display());
    Ok(())
}

fn cmd_gradcheck(size: usize, config: Option<&Path>, overrides: &[String], tolerance: f64) -> Result<i32> {
    let cfg = OptimConfig::layered(config, overrides)?;
    let report = gradcheck(size, &cfg.weights, &cfg.loss_options(), cfg.seed)?;
    print_stdout(&serde_json::to_string_pretty(&report)?)?;
    if report.max_rel_error < tolerance {
        Ok(EXIT_OK)
    } else {
        eprintln!(
            "gradcheck: max relative error {:.3e} is not below {tolerance:.1e}",
            report.max_rel_error
        );
        Ok(EXIT_NUMERIC)
    }
}
