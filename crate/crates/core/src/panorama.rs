//! The reference grid, the maximum-likelihood panorama and the global cost.
//!
//! With every `theta_i` fixed, the panorama minimizing
//! `sum_x sum_i [I_i(m(theta_i; x)) - P(x)]^2 H_i(x)` is the per-pixel mean
//! of the frames that observe `x`. Substituting it gives
//! `sum_{i != j} sum_{x in R_ij} [I_i(m_i(x)) - I_j(m_j(x))]^2 / W(x)`, with
//! `W(x)` the number of observing frames. Both sides are computed here by
//! independent routes: [`ml_residual`] for the first, [`ml_cost`] for the
//! second.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Raster;
use crate::io::{encode_pgm, encode_pgm_bytes};
use crate::motion::{ModelKind, MotionParams};
use crate::par;

/// Registration parameters of every frame, with one frame pinned to the
/// identity to remove the common-warp ambiguity of the global cost.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawRegistration", into = "RawRegistration")]
pub struct Registration {
    kind: ModelKind,
    params: Vec<MotionParams>,
    anchor: usize,
}

#[derive(Serialize, Deserialize)]
struct RawRegistration {
    kind: ModelKind,
    anchor: usize,
    params: Vec<Vec<f64>>,
}

impl TryFrom<RawRegistration> for Registration {
    type Error = Error;

    fn try_from(raw: RawRegistration) -> Result<Self> {
        let params = raw
            .params
            .iter()
            .map(|t| MotionParams::from_theta(raw.kind, t))
            .collect::<Result<Vec<_>>>()?;
        Registration::new(raw.kind, params, raw.anchor)
    }
}

impl From<Registration> for RawRegistration {
    fn from(r: Registration) -> Self {
        RawRegistration {
            kind: r.kind,
            anchor: r.anchor,
            params: r.params.iter().map(|p| p.theta().to_vec()).collect(),
        }
    }
}

impl Registration {
    pub fn new(kind: ModelKind, params: Vec<MotionParams>, anchor: usize) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidRegistration("no frames".into()));
        }
        if anchor >= params.len() {
            return Err(Error::InvalidRegistration(format!(
                "anchor {anchor} out of range for {} frames",
                params.len()
            )));
        }
        if params.iter().any(|p| p.kind() != kind) {
            return Err(Error::KindMismatch);
        }
        if !params[anchor].is_identity() {
            return Err(Error::InvalidRegistration(format!(
                "anchor frame {anchor} is not the identity"
            )));
        }
        Ok(Registration { kind, params, anchor })
    }

    pub fn identity(kind: ModelKind, n: usize) -> Result<Self> {
        Registration::new(kind, vec![MotionParams::identity(kind); n], 0)
    }

    pub fn kind(&self) -> ModelKind {
        self.kind
    }

    pub fn params(&self) -> &[MotionParams] {
        &self.params
    }

    pub fn anchor(&self) -> usize {
        self.anchor
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Replaces the parameters of a non-anchor frame.
    pub fn set_params(&mut self, frame: usize, p: MotionParams) -> Result<()> {
        if frame == self.anchor {
            return Err(Error::AnchorUpdate { frame });
        }
        if p.kind() != self.kind {
            return Err(Error::KindMismatch);
        }
        self.params[frame] = p;
        Ok(())
    }

    pub fn rescale(&self, factor: f64) -> Result<Registration> {
        let params = self.params.iter().map(|p| p.rescale(factor)).collect::<Result<_>>()?;
        Ok(Registration { params, ..*self })
    }

    pub(crate) fn check_frames(&self, images: &[Raster]) -> Result<()> {
        if images.len() != self.len() {
            return Err(Error::Mismatch(format!(
                "{} images for a registration of {} frames",
                images.len(),
                self.len()
            )));
        }
        Ok(())
    }
}

/// Integer pixel bounds (inclusive) of the panorama lattice.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RefGrid {
    pub x_min: i64,
    pub y_min: i64,
    pub x_max: i64,
    pub y_max: i64,
}

impl RefGrid {
    pub fn new(x_min: i64, y_min: i64, x_max: i64, y_max: i64) -> Result<Self> {
        if x_max < x_min || y_max < y_min {
            return Err(Error::InvalidRegistration(format!(
                "empty grid [{x_min},{x_max}]x[{y_min},{y_max}]"
            )));
        }
        Ok(RefGrid {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    pub fn width(&self) -> usize {
        (self.x_max - self.x_min + 1) as usize
    }

    pub fn height(&self) -> usize {
        (self.y_max - self.y_min + 1) as usize
    }

    pub fn len(&self) -> usize {
        self.width() * self.height()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    #[inline]
    pub fn point(&self, col: usize, row: usize) -> [f64; 2] {
        [(self.x_min + col as i64) as f64, (self.y_min + row as i64) as f64]
    }

    pub fn origin(&self) -> [f64; 2] {
        [self.x_min as f64, self.y_min as f64]
    }

    /// Whether the real box `[x0, x1] x [y0, y1]` lies inside the grid.
    pub fn contains_box(&self, b: [f64; 4]) -> bool {
        b[0] >= self.x_min as f64 && b[1] >= self.y_min as f64 && b[2] <= self.x_max as f64 && b[3] <= self.y_max as f64
    }
}

/// Panorama-coordinate bounding box `[x0, y0, x1, y1]` of a frame's corners.
pub fn frame_footprint(image: &Raster, params: &MotionParams) -> Result<[f64; 4]> {
    let inv = params.invert()?;
    let (w, h) = (image.width() - 1, image.height() - 1);
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for (c, r) in [(0, 0), (w, 0), (0, h), (w, h)] {
        let p = inv.map_point(image.point(c, r));
        b = [b[0].min(p[0]), b[1].min(p[1]), b[2].max(p[0]), b[3].max(p[1])];
    }
    Ok(b)
}

/// Bounding box of every frame footprint, rounded outward and grown by
/// `margin` pixels on each side.
pub fn compute_bounds(images: &[Raster], reg: &Registration, margin: i64) -> Result<RefGrid> {
    reg.check_frames(images)?;
    let mut b = [f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY];
    for (img, p) in images.iter().zip(reg.params()) {
        let f = frame_footprint(img, p)?;
        b = [b[0].min(f[0]), b[1].min(f[1]), b[2].max(f[2]), b[3].max(f[3])];
    }
    RefGrid::new(
        b[0].floor() as i64 - margin,
        b[1].floor() as i64 - margin,
        b[2].ceil() as i64 + margin,
        b[3].ceil() as i64 + margin,
    )
}

/// Per-pixel count of observing frames.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WeightMap {
    width: usize,
    height: usize,
    data: Vec<u32>,
}

impl WeightMap {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[u32] {
        &self.data
    }

    pub fn get(&self, col: usize, row: usize) -> u32 {
        self.data[row * self.width + col]
    }

    pub fn max(&self) -> u32 {
        self.data.iter().copied().max().unwrap_or(0)
    }
}

/// `P-hat` on the reference grid. Pixels with zero weight are undefined;
/// their stored intensity is 0 and they never enter a sum.
#[derive(Clone, Debug, PartialEq)]
pub struct PanoramaEstimate {
    pub grid: RefGrid,
    /// Origin at `(x_min, y_min)`.
    pub image: Raster,
    pub weights: WeightMap,
}

impl PanoramaEstimate {
    pub fn is_defined(&self, col: usize, row: usize) -> bool {
        self.weights.get(col, row) > 0
    }

    pub fn value(&self, col: usize, row: usize) -> Option<f64> {
        self.is_defined(col, row).then(|| self.image.get(col, row))
    }
}

/// Frame samples on every grid pixel: `None` where the frame does not see
/// the pixel.
pub(crate) fn warp_to_grid(image: &Raster, params: &MotionParams, grid: &RefGrid) -> Vec<Option<f64>> {
    par::map_pixels(grid.width(), grid.height(), |c, r| {
        let x = params.map_point(grid.point(c, r));
        image.sample_bilinear(x[0], x[1])
    })
}

/// All frames warped onto one grid.
#[derive(Clone, Debug)]
pub(crate) struct WarpStack {
    pub grid: RefGrid,
    pub frames: Vec<Vec<Option<f64>>>,
}

impl WarpStack {
    pub fn new(images: &[Raster], reg: &Registration, grid: RefGrid) -> Result<Self> {
        reg.check_frames(images)?;
        let frames = images
            .iter()
            .zip(reg.params())
            .map(|(img, p)| warp_to_grid(img, p, &grid))
            .collect();
        Ok(WarpStack { grid, frames })
    }

    /// Observation count and sample sum at pixel index `k`.
    #[inline]
    pub fn pixel_sum(&self, k: usize) -> (u32, f64) {
        self.frames
            .iter()
            .filter_map(|f| f[k])
            .fold((0, 0.0), |(n, s), v| (n + 1, s + v))
    }

    /// `sum_{i != j} (a_i - a_j)^2 / W` over the observing frames at pixel
    /// `k`, taken literally over ordered pairs.
    #[inline]
    pub fn pixel_cost(&self, k: usize) -> f64 {
        pair_cost(self.frames.iter().map(|f| f[k]))
    }

    pub fn pixel_costs(&self) -> Vec<f64> {
        par::map_pixels(self.grid.width(), self.grid.height(), |c, r| {
            self.pixel_cost(r * self.grid.width() + c)
        })
    }

    pub fn weights(&self) -> WeightMap {
        WeightMap {
            width: self.grid.width(),
            height: self.grid.height(),
            data: (0..self.grid.len()).map(|k| self.pixel_sum(k).0).collect(),
        }
    }

    pub fn panorama(&self) -> PanoramaEstimate {
        let (w, h) = (self.grid.width(), self.grid.height());
        let image = Raster::from_fn(w, h, |c, r| match self.pixel_sum(r * w + c) {
            (0, _) => 0.0,
            (n, s) => s / n as f64,
        })
        .with_origin(self.grid.origin());
        PanoramaEstimate {
            grid: self.grid,
            image,
            weights: self.weights(),
        }
    }
}

#[inline]
pub(crate) fn pair_cost<I>(samples: I) -> f64
where
    I: Iterator<Item = Option<f64>> + Clone,
{
    let mut total = 0.0;
    let mut weight = 0u32;
    for a in samples.clone().flatten() {
        weight += 1;
        for b in samples.clone().flatten() {
            total += (a - b) * (a - b);
        }
    }
    // Diagonal terms are exactly zero, so summing all ordered pairs equals
    // summing i != j.
    if weight < 2 {
        0.0
    } else {
        total / weight as f64
    }
}

/// Ordered sum of per-pixel values; shared by every cost so that identical
/// inputs give bit-identical totals.
pub(crate) fn total(costs: &[f64]) -> f64 {
    costs.iter().sum()
}

pub fn weight_map(images: &[Raster], reg: &Registration, grid: &RefGrid) -> Result<WeightMap> {
    Ok(WarpStack::new(images, reg, *grid)?.weights())
}

pub fn estimate_panorama(images: &[Raster], reg: &Registration, grid: &RefGrid) -> Result<PanoramaEstimate> {
    Ok(WarpStack::new(images, reg, *grid)?.panorama())
}

/// Weighted sum of squared differences between all ordered pairs of
/// co-registered frames.
pub fn ml_cost(images: &[Raster], reg: &Registration, grid: &RefGrid) -> Result<f64> {
    Ok(total(&WarpStack::new(images, reg, *grid)?.pixel_costs()))
}

/// `sum_i sum_x [I_i(m(theta_i; x)) - P(x)]^2` over frame samples that fall
/// on defined panorama pixels.
pub fn ml_residual(images: &[Raster], reg: &Registration, pano: &PanoramaEstimate) -> Result<f64> {
    reg.check_frames(images)?;
    let grid = pano.grid;
    let mut sum = 0.0;
    for (img, p) in images.iter().zip(reg.params()) {
        let parts = par::map_row_blocks(grid.height(), |rows| {
            let mut s = 0.0;
            for r in rows {
                for c in 0..grid.width() {
                    let Some(pv) = pano.value(c, r) else { continue };
                    let x = p.map_point(grid.point(c, r));
                    if let Some(v) = img.sample_bilinear(x[0], x[1]) {
                        s += (v - pv) * (v - pv);
                    }
                }
            }
            s
        });
        sum += parts.iter().sum::<f64>();
    }
    Ok(sum)
}

/// Writes the panorama (undefined pixels as 0) and its weight map scaled so
/// that the largest weight is 255.
pub fn render(pe: &PanoramaEstimate, panorama_path: impl AsRef<Path>, weights_path: impl AsRef<Path>) -> Result<()> {
    let image = Raster::from_fn(pe.image.width(), pe.image.height(), |c, r| {
        pe.value(c, r).unwrap_or(0.0)
    });
    let pano_path = panorama_path.as_ref();
    std::fs::write(pano_path, encode_pgm(&image)).map_err(|e| Error::io(pano_path, e))?;
    let weights_path = weights_path.as_ref();
    std::fs::write(weights_path, encode_weights(&pe.weights)).map_err(|e| Error::io(weights_path, e))
}

pub(crate) fn encode_weights(w: &WeightMap) -> Vec<u8> {
    let max = w.max() as u64;
    let scale = |v: u32| {
        if max == 0 {
            0
        } else {
            // round(v * 255 / max), halves up, in exact integer arithmetic
            ((2 * v as u64 * 255 + max) / (2 * max)) as u8
        }
    };
    encode_pgm_bytes(w.width, w.height, w.data.iter().map(|&v| scale(v)))
}
