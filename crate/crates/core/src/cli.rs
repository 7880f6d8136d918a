//! Command-line surface: `synth`, `register`, `mosaic` and `eval`.
//!
//! Exit codes: 0 success, 2 invalid input or configuration, 3 I/O,
//! 4 algorithmic failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::error::{Error, Result};
use crate::io::load_image;
use crate::mlm::{refine, sequential_init, MlmOptions, MlmTrace, SweepRecord};
use crate::motion::{ModelKind, MotionParams};
use crate::panorama::{compute_bounds, estimate_panorama, ml_cost, render, Registration};
use crate::synth::{evaluate, generate, write_json, SynthSpec};
use crate::two_frame::{register_pair, RegisterOptions};
use crate::Raster;

#[derive(Debug, Parser)]
#[command(name = "mlmosaic", version, about = "Featureless image registration and mosaicing")]
pub struct RunConfig {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset from a JSON configuration.
    Synth {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the configuration seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Register the second image against the first; prints JSON.
    Register {
        image_a: PathBuf,
        image_b: PathBuf,
        #[arg(long, value_enum, default_value_t = Model::Affine)]
        model: Model,
        /// Initial parameters, comma separated.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        init: Option<Vec<f64>>,
        #[command(flatten)]
        opts: SolverArgs,
    },
    /// Mosaic every frame in a directory.
    Mosaic {
        frames: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value_t = Mode::Mlm)]
        mode: Mode,
        #[arg(long, value_enum, default_value_t = Model::Affine)]
        model: Model,
        #[command(flatten)]
        opts: SolverArgs,
        #[arg(long)]
        max_sweeps: Option<usize>,
        #[arg(long)]
        sweep_tol: Option<f64>,
    },
    /// Score a registration against ground truth; prints JSON.
    Eval {
        registration: PathBuf,
        truth: PathBuf,
        frames: PathBuf,
        source: PathBuf,
        /// Source pixel of panorama point (0, 0); read from the dataset's
        /// config.json when omitted.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        source_offset: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub levels: Option<usize>,
    #[arg(long)]
    pub damping: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Model {
    Translation,
    Affine,
}

impl From<Model> for ModelKind {
    fn from(m: Model) -> Self {
        match m {
            Model::Translation => ModelKind::Translation,
            Model::Affine => ModelKind::Affine,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Sequential,
    Mlm,
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NotFound(_) | Error::Io { .. } => 3,
        Error::InsufficientOverlap { .. }
        | Error::NonFiniteSystem
        | Error::RegistrationFailure(_)
        | Error::EmptyRegion { .. }
        | Error::AnchorUpdate { .. }
        | Error::SequentialInit { .. } => 4,
        _ => 2,
    }
}

/// Runs one subcommand, writing JSON results to `out`.
pub fn run(cfg: &RunConfig, out: &mut dyn Write) -> Result<()> {
    match &cfg.command {
        Command::Synth { config, out: dir, seed } => cmd_synth(config, dir, *seed),
        Command::Register {
            image_a,
            image_b,
            model,
            init,
            opts,
        } => cmd_register(image_a, image_b, (*model).into(), init.as_deref(), opts, out),
        Command::Mosaic {
            frames,
            out: dir,
            mode,
            model,
            opts,
            max_sweeps,
            sweep_tol,
        } => {
            let mut mlm = MlmOptions::default();
            if let Some(n) = opts.levels {
                mlm.max_levels = n;
            }
            if let Some(d) = opts.damping {
                mlm.damping = d;
            }
            if let Some(n) = max_sweeps {
                mlm.max_sweeps = *n;
            }
            if let Some(t) = sweep_tol {
                mlm.sweep_tol = *t;
            }
            cmd_mosaic(frames, dir, *mode, (*model).into(), &register_options(opts)?, &mlm)
        }
        Command::Eval {
            registration,
            truth,
            frames,
            source,
            source_offset,
        } => cmd_eval(registration, truth, frames, source, source_offset.as_deref(), out),
    }
}

fn register_options(args: &SolverArgs) -> Result<RegisterOptions> {
    let mut opts = RegisterOptions::default();
    if let Some(n) = args.levels {
        opts.max_levels = n;
    }
    if let Some(d) = args.damping {
        opts.damping = d;
    }
    opts.validate()?;
    Ok(opts)
}

pub fn cmd_synth(config: &Path, dir: &Path, seed: Option<u64>) -> Result<()> {
    let mut spec = SynthSpec::load(config)?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    let base = config.parent().unwrap_or(Path::new("."));
    let dataset = generate(&spec.resolve(base)?)?;
    dataset.write(&spec, dir)
}

pub fn cmd_register(
    a: &Path,
    b: &Path,
    kind: ModelKind,
    init: Option<&[f64]>,
    args: &SolverArgs,
    out: &mut dyn Write,
) -> Result<()> {
    let opts = register_options(args)?;
    let (ia, ib) = (load_image(a)?, load_image(b)?);
    let init = match init {
        Some(theta) => MotionParams::from_theta(kind, theta)?,
        None => MotionParams::identity(kind),
    };
    let result = register_pair(&ia, &ib, &init, &opts)?;
    print_json(out, &result)
}

/// Image files of a frames directory in name order. If any file is named
/// `frame_*`, only those are used, so a dataset's `source.pgm` is skipped.
pub fn list_frames(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("pgm" | "png")) {
            files.push(path);
        }
    }
    files.sort();
    let is_frame = |p: &PathBuf| {
        p.file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| n.starts_with("frame_"))
    };
    if files.iter().any(is_frame) {
        files.retain(is_frame);
    }
    if files.is_empty() {
        return Err(Error::InvalidConfig(format!("no frames in {}", dir.display())));
    }
    Ok(files)
}

pub fn load_frames(dir: &Path) -> Result<Vec<Raster>> {
    list_frames(dir)?.iter().map(load_image).collect()
}

pub fn cmd_mosaic(
    frames_dir: &Path,
    dir: &Path,
    mode: Mode,
    kind: ModelKind,
    opts: &RegisterOptions,
    mlm: &MlmOptions,
) -> Result<()> {
    mlm.validate()?;
    let frames = load_frames(frames_dir)?;
    let initial = sequential_init(&frames, kind, opts)?;
    let (reg, trace) = match mode {
        Mode::Sequential => {
            let grid = compute_bounds(&frames, &initial, 0)?;
            let trace = MlmTrace {
                records: vec![SweepRecord {
                    level: 0,
                    sweep: 0,
                    ml_cost: ml_cost(&frames, &initial, &grid)?,
                    max_update_norm: 0.0,
                    frames_skipped: 0,
                }],
                levels: vec![0],
                ..Default::default()
            };
            (initial.clone(), trace)
        }
        Mode::Mlm => refine(&frames, &initial, mlm)?,
    };
    let grid = compute_bounds(&frames, &reg, 0)?;
    let pano = estimate_panorama(&frames, &reg, &grid)?;

    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    let result = write_mosaic(dir, mode, &pano, &reg, &initial, &trace, &mut written);
    if result.is_err() {
        for p in written {
            let _ = std::fs::remove_file(p);
        }
    }
    result
}

fn write_mosaic(
    dir: &Path,
    mode: Mode,
    pano: &crate::panorama::PanoramaEstimate,
    reg: &Registration,
    initial: &Registration,
    trace: &MlmTrace,
    written: &mut Vec<PathBuf>,
) -> Result<()> {
    let (p, w) = (dir.join("panorama.pgm"), dir.join("weights.pgm"));
    written.extend([p.clone(), w.clone()]);
    render(pano, &p, &w)?;
    let r = dir.join("registration.json");
    written.push(r.clone());
    write_json(&r, reg)?;
    if mode == Mode::Mlm {
        let s = dir.join("registration_sequential.json");
        written.push(s.clone());
        write_json(&s, initial)?;
    }
    let t = dir.join("trace.jsonl");
    written.push(t.clone());
    std::fs::write(&t, trace.to_jsonl()).map_err(|e| Error::io(&t, e))
}

fn read_registration(path: &Path) -> Result<Registration> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::InvalidRegistration(format!("{}: {e}", path.display())))
}

pub fn cmd_eval(
    registration: &Path,
    truth: &Path,
    frames_dir: &Path,
    source: &Path,
    source_offset: Option<&[f64]>,
    out: &mut dyn Write,
) -> Result<()> {
    let est = read_registration(registration)?;
    let truth = read_registration(truth)?;
    let frames = load_frames(frames_dir)?;
    let source = load_image(source)?;
    let offset = match source_offset {
        Some([x, y]) => [*x, *y],
        Some(v) => {
            return Err(Error::InvalidConfig(format!(
                "source offset needs 2 values, got {}",
                v.len()
            )));
        }
        None => {
            let config = frames_dir.join("config.json");
            if config.is_file() {
                SynthSpec::load(&config)?.source_offset
            } else {
                [0.0, 0.0]
            }
        }
    };
    print_json(out, &evaluate(&est, &truth, &frames, &source, offset)?)
}

fn print_json<T: serde::Serialize>(out: &mut dyn Write, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    writeln!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}
