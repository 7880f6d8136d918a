//! Grayscale rasters, bilinear sampling, gradients and Gaussian pyramids.
//!
//! A [`Raster`] lives in its own coordinate frame: pixel `(c, r)` sits at
//! `(c + origin.x, r + origin.y)`. Sampling outside the pixel lattice returns
//! `None`, which plays the role of the field-of-view indicator: a frame
//! observes a point exactly when it can be sampled there.

use crate::error::{Error, Result};
use crate::par;

/// Row-major grayscale image with real-valued intensities.
#[derive(Clone, Debug, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    data: Vec<f64>,
    origin: [f64; 2],
}

impl Raster {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::DegenerateDimensions { width, height });
        }
        if data.len() != width * height {
            return Err(Error::InvalidRaster(format!(
                "{} samples for a {}x{} raster",
                data.len(),
                width,
                height
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidRaster(format!("non-finite intensity at index {i}")));
        }
        Ok(Raster {
            width,
            height,
            data,
            origin: [0.0, 0.0],
        })
    }

    /// Builds a raster from `f(col, row)`.
    ///
    /// # Panics
    /// If a dimension is zero or `f` yields a non-finite value.
    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> f64 + Sync + Send) -> Self {
        assert!(width > 0 && height > 0, "raster dimensions must be positive");
        let data = par::map_pixels(width, height, f);
        assert!(data.iter().all(|v| v.is_finite()), "non-finite intensity");
        Raster {
            width,
            height,
            data,
            origin: [0.0, 0.0],
        }
    }

    pub fn constant(width: usize, height: usize, value: f64) -> Self {
        Raster::from_fn(width, height, |_, _| value)
    }

    pub fn with_origin(mut self, origin: [f64; 2]) -> Self {
        self.origin = origin;
        self
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, col: usize, row: usize) -> f64 {
        self.data[row * self.width + col]
    }

    /// Overwrites one pixel. Non-finite values are rejected.
    pub fn set(&mut self, col: usize, row: usize, value: f64) -> Result<()> {
        if !value.is_finite() {
            return Err(Error::InvalidRaster("non-finite intensity".into()));
        }
        self.data[row * self.width + col] = value;
        Ok(())
    }

    /// Coordinates of pixel `(col, row)` in this raster's frame.
    #[inline]
    pub fn point(&self, col: usize, row: usize) -> [f64; 2] {
        [col as f64 + self.origin[0], row as f64 + self.origin[1]]
    }

    #[inline]
    pub(crate) fn site(&self, x: f64, y: f64) -> Option<Site> {
        Site::locate(self.width, self.height, x - self.origin[0], y - self.origin[1])
    }

    #[inline]
    pub(crate) fn at_site(&self, s: &Site) -> f64 {
        let d = &self.data;
        let i = s.index;
        let top = d[i] + s.fx * (d[i + s.dx] - d[i]);
        let bottom = d[i + s.dy] + s.fx * (d[i + s.dy + s.dx] - d[i + s.dy]);
        top + s.fy * (bottom - top)
    }

    /// Bilinear sample at `(x, y)`, or `None` outside
    /// `[0, width-1] x [0, height-1]` (relative to the origin).
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> Option<f64> {
        self.site(x, y).map(|s| self.at_site(&s))
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }
}

/// Precomputed bilinear stencil for one sample position.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Site {
    index: usize,
    dx: usize,
    dy: usize,
    fx: f64,
    fy: f64,
}

impl Site {
    #[inline]
    fn locate(width: usize, height: usize, u: f64, v: f64) -> Option<Site> {
        let (wmax, hmax) = ((width - 1) as f64, (height - 1) as f64);
        // Negated comparisons so NaN lands outside.
        if !(u >= 0.0 && u <= wmax && v >= 0.0 && v <= hmax) {
            return None;
        }
        let (c0, dx) = if width > 1 {
            ((u.floor() as usize).min(width - 2), 1)
        } else {
            (0, 0)
        };
        let (r0, dy) = if height > 1 {
            ((v.floor() as usize).min(height - 2), width)
        } else {
            (0, 0)
        };
        Some(Site {
            index: r0 * width + c0,
            dx,
            dy,
            fx: u - c0 as f64,
            fy: v - r0 as f64,
        })
    }
}

/// Spatial derivatives of a raster, on the same lattice.
#[derive(Clone, Debug)]
pub struct GradientField {
    pub gx: Raster,
    pub gy: Raster,
}

impl GradientField {
    /// Bilinearly interpolated gradient at `(x, y)`.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<[f64; 2]> {
        self.gx.site(x, y).map(|s| [self.gx.at_site(&s), self.gy.at_site(&s)])
    }
}

fn require_2x2(r: &Raster) -> Result<()> {
    if r.width < 2 || r.height < 2 {
        return Err(Error::DegenerateDimensions {
            width: r.width,
            height: r.height,
        });
    }
    Ok(())
}

/// Central differences in the interior, one-sided differences on the border.
pub fn spatial_gradient(r: &Raster) -> Result<GradientField> {
    require_2x2(r)?;
    let (w, h) = (r.width, r.height);
    let diff = |lo: f64, hi: f64, span: usize| (hi - lo) / span as f64;
    let gx = Raster::from_fn(w, h, |c, row| {
        let (a, b) = (c.saturating_sub(1), (c + 1).min(w - 1));
        diff(r.get(a, row), r.get(b, row), b - a)
    })
    .with_origin(r.origin);
    let gy = Raster::from_fn(w, h, |c, row| {
        let (a, b) = (row.saturating_sub(1), (row + 1).min(h - 1));
        diff(r.get(c, a), r.get(c, b), b - a)
    })
    .with_origin(r.origin);
    Ok(GradientField { gx, gy })
}

/// Separable convolution with a symmetric kernel, replicating the border.
pub(crate) fn convolve_separable(r: &Raster, kernel: &[f64]) -> Raster {
    let (w, h) = (r.width, r.height);
    let half = (kernel.len() / 2) as isize;
    let clamp = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let horizontal = Raster::from_fn(w, h, |c, row| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wk)| wk * r.get(clamp(c as isize + k as isize - half, w), row))
            .sum()
    });
    Raster::from_fn(w, h, |c, row| {
        kernel
            .iter()
            .enumerate()
            .map(|(k, wk)| wk * horizontal.get(c, clamp(row as isize + k as isize - half, h)))
            .sum()
    })
    .with_origin(r.origin)
}

/// Gaussian blur with standard deviation `sigma` (kernel radius 3 sigma).
pub fn gaussian_blur(r: &Raster, sigma: f64) -> Raster {
    if sigma <= 0.0 {
        return r.clone();
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|k| *k /= total);
    convolve_separable(r, &kernel)
}

const BINOMIAL5: [f64; 5] = [1.0 / 16.0, 4.0 / 16.0, 6.0 / 16.0, 4.0 / 16.0, 1.0 / 16.0];

/// Binomial blur followed by keeping the even-indexed pixels.
pub fn downsample(r: &Raster) -> Result<Raster> {
    require_2x2(r)?;
    let blurred = convolve_separable(r, &BINOMIAL5);
    let (w, h) = (r.width.div_ceil(2), r.height.div_ceil(2));
    Ok(Raster::from_fn(w, h, |c, row| blurred.get(2 * c, 2 * row)).with_origin([r.origin[0] / 2.0, r.origin[1] / 2.0]))
}

/// Smallest dimension a pyramid level may have.
pub const PYRAMID_FLOOR: usize = 32;

/// Multiresolution stack, level 0 at full resolution, each level half the
/// size of the previous one.
#[derive(Clone, Debug)]
pub struct Pyramid {
    levels: Vec<Raster>,
}

impl Pyramid {
    pub fn levels(&self) -> &[Raster] {
        &self.levels
    }

    pub fn level(&self, k: usize) -> &Raster {
        &self.levels[k]
    }

    pub fn len(&self) -> usize {
        self.levels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.levels.is_empty()
    }
}

/// Downsamples repeatedly until `max_levels` levels exist or the next level
/// would drop below [`PYRAMID_FLOOR`] pixels in either dimension.
pub fn build_pyramid(r: &Raster, max_levels: usize) -> Pyramid {
    let mut levels = vec![r.clone()];
    while levels.len() < max_levels {
        let last = levels.last().expect("pyramid is never empty");
        if last.width.div_ceil(2) < PYRAMID_FLOOR || last.height.div_ceil(2) < PYRAMID_FLOOR {
            break;
        }
        match downsample(last) {
            Ok(next) => levels.push(next),
            Err(_) => break,
        }
    }
    Pyramid { levels }
}
