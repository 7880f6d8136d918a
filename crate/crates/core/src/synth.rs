//! Synthetic ground truth: frames cropped from a source image through known
//! warps, plus Gaussian noise, and the metrics that score an estimate.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{gaussian_blur, Raster};
use crate::io::{load_image, save_image};
use crate::motion::{ModelKind, MotionParams};
use crate::panorama::{compute_bounds, estimate_panorama, frame_footprint, ml_cost, Registration};

/// Upper bound reported when the panorama matches the source exactly.
pub const PSNR_CAP: f64 = 100.0;

/// Stream index for trajectory jitter; frame noise uses streams `0..n`.
const TRAJECTORY_STREAM: u64 = u64::MAX;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum SourceSpec {
    Textured {
        width: usize,
        height: usize,
        seed: u64,
    },
    LowTexture {
        width: usize,
        height: usize,
        seed: u64,
    },
    /// Relative paths are resolved against the configuration file.
    File {
        path: PathBuf,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Trajectory {
    /// One parameter vector per frame; the first must be the identity.
    Explicit { params: Vec<Vec<f64>> },
    /// Frame `k` has its origin at panorama point `k * step` plus uniform
    /// jitter; affine frames also get uniform jitter on the linear part.
    Chain {
        step: [f64; 2],
        #[serde(default)]
        shift_jitter: f64,
        #[serde(default)]
        linear_jitter: f64,
    },
}

/// The on-disk form of a synthetic experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub source: SourceSpec,
    pub n_frames: usize,
    pub frame_size: [usize; 2],
    pub kind: ModelKind,
    pub trajectory: Trajectory,
    /// Source pixel that panorama point (0, 0) falls on.
    #[serde(default)]
    pub source_offset: [f64; 2],
    #[serde(default)]
    pub noise_sigma: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub source: Raster,
    pub n_frames: usize,
    pub frame_size: [usize; 2],
    pub kind: ModelKind,
    pub trajectory: Vec<MotionParams>,
    pub source_offset: [f64; 2],
    pub noise_sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub frames: Vec<Raster>,
    pub truth: Registration,
    pub config: SynthConfig,
}

impl SynthSpec {
    pub fn load(path: impl AsRef<Path>) -> Result<SynthSpec> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }

    /// Builds the source image and the true trajectory.
    pub fn resolve(&self, base_dir: impl AsRef<Path>) -> Result<SynthConfig> {
        let source = match &self.source {
            SourceSpec::Textured { width, height, seed } => textured_source(*width, *height, *seed)?,
            SourceSpec::LowTexture { width, height, seed } => low_texture_source(*width, *height, *seed)?,
            SourceSpec::File { path } => load_image(base_dir.as_ref().join(path))?,
        };
        let trajectory = match &self.trajectory {
            Trajectory::Explicit { params } => params
                .iter()
                .map(|t| MotionParams::from_theta(self.kind, t))
                .collect::<Result<Vec<_>>>()
                .map_err(|e| Error::InvalidConfig(format!("trajectory: {e}")))?,
            Trajectory::Chain {
                step,
                shift_jitter,
                linear_jitter,
            } => chain_trajectory(
                self.kind,
                self.n_frames,
                *step,
                *shift_jitter,
                *linear_jitter,
                self.seed,
            )?,
        };
        let cfg = SynthConfig {
            source,
            n_frames: self.n_frames,
            frame_size: self.frame_size,
            kind: self.kind,
            trajectory,
            source_offset: self.source_offset,
            noise_sigma: self.noise_sigma,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

fn chain_trajectory(
    kind: ModelKind,
    n: usize,
    step: [f64; 2],
    shift_jitter: f64,
    linear_jitter: f64,
    seed: u64,
) -> Result<Vec<MotionParams>> {
    if !(shift_jitter >= 0.0) || !(linear_jitter >= 0.0) {
        return Err(Error::InvalidConfig("jitter must be non-negative".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(TRAJECTORY_STREAM);
    let mut uniform = |s: f64| if s > 0.0 { rng.random_range(-s..s) } else { 0.0 };
    let mut out = vec![MotionParams::identity(kind)];
    for k in 1..n {
        let p = [
            k as f64 * step[0] + uniform(shift_jitter),
            k as f64 * step[1] + uniform(shift_jitter),
        ];
        let a = match kind {
            ModelKind::Translation => [1.0, 0.0, 0.0, 1.0],
            ModelKind::Affine => [
                1.0 + uniform(linear_jitter),
                uniform(linear_jitter),
                uniform(linear_jitter),
                1.0 + uniform(linear_jitter),
            ],
        };
        // m_k(p) = 0: the frame origin sits at panorama point p.
        let t = [-(a[0] * p[0] + a[1] * p[1]), -(a[2] * p[0] + a[3] * p[1])];
        out.push(match kind {
            ModelKind::Translation => MotionParams::translation(t[0], t[1]),
            ModelKind::Affine => MotionParams::affine([a[0], a[1], a[2], a[3], t[0], t[1]])?,
        });
    }
    Ok(out)
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_frames == 0 {
            return Err(Error::InvalidConfig("n_frames must be positive".into()));
        }
        if self.frame_size[0] < 2 || self.frame_size[1] < 2 {
            return Err(Error::InvalidConfig(format!(
                "frame size {:?} below 2x2",
                self.frame_size
            )));
        }
        if !(0.0..0.5).contains(&self.noise_sigma) {
            return Err(Error::InvalidConfig(format!(
                "noise_sigma {} outside [0, 0.5)",
                self.noise_sigma
            )));
        }
        if self.trajectory.len() != self.n_frames {
            return Err(Error::InvalidConfig(format!(
                "{} trajectory entries for {} frames",
                self.trajectory.len(),
                self.n_frames
            )));
        }
        if self.trajectory.iter().any(|p| p.kind() != self.kind) {
            return Err(Error::InvalidConfig("trajectory kind differs from kind".into()));
        }
        if !self.trajectory[0].is_identity() {
            return Err(Error::InvalidConfig(
                "the first trajectory entry must be the identity".into(),
            ));
        }
        if !self.source_offset.iter().all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("source_offset must be finite".into()));
        }
        Ok(())
    }
}

/// Renders every frame; frame `i` draws its noise from stream `i` of a
/// generator seeded with `cfg.seed`.
pub fn generate(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let [w, h] = cfg.frame_size;
    let probe = Raster::constant(w, h, 0.0);
    let src = &cfg.source;
    for (i, p) in cfg.trajectory.iter().enumerate() {
        let b = frame_footprint(&probe, p)?;
        let (x0, y0) = (b[0] + cfg.source_offset[0], b[1] + cfg.source_offset[1]);
        let (x1, y1) = (b[2] + cfg.source_offset[0], b[3] + cfg.source_offset[1]);
        if x0 < 0.0 || y0 < 0.0 || x1 > (src.width() - 1) as f64 || y1 > (src.height() - 1) as f64 {
            return Err(Error::SourceBounds { frame: i });
        }
    }
    let noise = Normal::new(0.0, cfg.noise_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let frames = cfg
        .trajectory
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let inv = p.invert()?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream(i as u64);
            let mut data = Vec::with_capacity(w * h);
            for r in 0..h {
                for c in 0..w {
                    let x = inv.map_point([c as f64, r as f64]);
                    let (sx, sy) = (x[0] + cfg.source_offset[0], x[1] + cfg.source_offset[1]);
                    // Corners lie inside the source, so the clamp only
                    // absorbs rounding at the border.
                    let sx = sx.clamp(0.0, (src.width() - 1) as f64);
                    let sy = sy.clamp(0.0, (src.height() - 1) as f64);
                    let v = src.sample_bilinear(sx, sy).expect("sample inside the source");
                    let n = if cfg.noise_sigma > 0.0 {
                        noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    data.push((v + n).clamp(0.0, 1.0));
                }
            }
            Raster::new(w, h, data)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(SynthDataset {
        frames,
        truth: Registration::new(cfg.kind, cfg.trajectory.clone(), 0)?,
        config: cfg.clone(),
    })
}

pub fn frame_file_name(i: usize) -> String {
    format!("frame_{i:03}.pgm")
}

impl SynthDataset {
    /// Writes `frame_NNN.pgm`, `truth.json`, `config.json` (the echo of
    /// `spec`) and `source.pgm` into `dir`.
    pub fn write(&self, spec: &SynthSpec, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (i, f) in self.frames.iter().enumerate() {
            save_image(f, dir.join(frame_file_name(i)))?;
        }
        write_json(&dir.join("truth.json"), &self.truth)?;
        write_json(&dir.join("config.json"), spec)?;
        save_image(&self.config.source, dir.join("source.pgm"))
    }
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Multi-scale texture: white noise blurred at octave scales and summed,
/// stretched to `[0.05, 0.95]`.
pub fn textured_source(width: usize, height: usize, seed: u64) -> Result<Raster> {
    let noise = white_noise(width, height, seed)?;
    let mut acc = vec![0.0; width * height];
    for (k, sigma) in [1.0, 2.0, 4.0, 8.0, 16.0].into_iter().enumerate() {
        let band = gaussian_blur(&noise, sigma);
        // Heavier weight on coarse bands offsets their lower variance.
        let weight = 2f64.powi(k as i32);
        acc.iter_mut().zip(band.data()).for_each(|(a, b)| *a += weight * b);
    }
    stretch(width, height, acc, 0.05, 0.95)
}

/// A blurred, low-contrast version of [`textured_source`].
pub fn low_texture_source(width: usize, height: usize, seed: u64) -> Result<Raster> {
    let blurred = gaussian_blur(&textured_source(width, height, seed)?, 3.0);
    stretch(width, height, blurred.into_data(), 0.35, 0.65)
}

fn white_noise(width: usize, height: usize, seed: u64) -> Result<Raster> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Raster::new(
        width,
        height,
        (0..width * height).map(|_| rng.random::<f64>()).collect(),
    )
}

fn stretch(width: usize, height: usize, data: Vec<f64>, lo: f64, hi: f64) -> Result<Raster> {
    let min = data.iter().copied().fold(f64::INFINITY, f64::min);
    let max = data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if max > min { max - min } else { 1.0 };
    Raster::new(
        width,
        height,
        data.into_iter().map(|v| lo + (hi - lo) * (v - min) / span).collect(),
    )
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// Per frame: largest distance between frame corners mapped into the
    /// panorama by the true and the estimated inverse maps, in pixels.
    pub corner_error: Vec<f64>,
    pub max_corner_error: f64,
    pub param_rmse: Vec<f64>,
    /// Panorama against the source over pixels seen by at least one frame.
    pub psnr_db: f64,
    pub ml_cost: f64,
}

/// Scores `est` against `truth` after moving `est` into the truth's gauge.
pub fn evaluate(
    est: &Registration,
    truth: &Registration,
    images: &[Raster],
    source: &Raster,
    source_offset: [f64; 2],
) -> Result<EvalReport> {
    if est.len() != truth.len() || est.kind() != truth.kind() {
        return Err(Error::Mismatch(format!(
            "estimate has {} {} frames, truth {} {}",
            est.len(),
            est.kind(),
            truth.len(),
            truth.kind()
        )));
    }
    est.check_frames(images)?;
    let a = truth.anchor();
    let gauge = est.params()[a].invert()?.compose(&truth.params()[a])?;
    let aligned = est
        .params()
        .iter()
        .map(|p| p.compose(&gauge))
        .collect::<Result<Vec<_>>>()?;

    let mut corner_error = Vec::with_capacity(images.len());
    let mut param_rmse = Vec::with_capacity(images.len());
    for ((img, e), t) in images.iter().zip(&aligned).zip(truth.params()) {
        let (ei, ti) = (e.invert()?, t.invert()?);
        let (w, h) = ((img.width() - 1) as f64, (img.height() - 1) as f64);
        let err = [[0.0, 0.0], [w, 0.0], [0.0, h], [w, h]]
            .iter()
            .map(|&c| {
                let (pe, pt) = (ei.map_point(c), ti.map_point(c));
                (pe[0] - pt[0]).hypot(pe[1] - pt[1])
            })
            .fold(0.0, f64::max);
        corner_error.push(err);
        let sq: f64 = e.theta().iter().zip(t.theta()).map(|(x, y)| (x - y).powi(2)).sum();
        param_rmse.push((sq / e.dof() as f64).sqrt());
    }

    let reg = Registration::new(est.kind(), aligned, a)?;
    let grid = compute_bounds(images, &reg, 0)?;
    let pano = estimate_panorama(images, &reg, &grid)?;
    let (mut sse, mut count) = (0.0, 0usize);
    for r in 0..grid.height() {
        for c in 0..grid.width() {
            let Some(v) = pano.value(c, r) else { continue };
            let x = grid.point(c, r);
            if let Some(s) = source.sample_bilinear(x[0] + source_offset[0], x[1] + source_offset[1]) {
                sse += (v - s).powi(2);
                count += 1;
            }
        }
    }
    let psnr_db = if count == 0 || sse == 0.0 {
        PSNR_CAP
    } else {
        (10.0 * (count as f64 / sse).log10()).min(PSNR_CAP)
    };
    Ok(EvalReport {
        max_corner_error: corner_error.iter().copied().fold(0.0, f64::max),
        corner_error,
        param_rmse,
        psnr_db,
        ml_cost: ml_cost(images, &reg, &grid)?,
    })
}
