//! Featureless registration of an image pair by Gauss-Newton over the
//! adaptive window: the largest set of pixels of `I` whose warped position
//! lands inside `I'`.
//!
//! The residual is `e(theta, x) = I(x) - I'(m(theta; x))` for grid points `x`
//! of `I`. Each iteration linearizes `e` around the current estimate, solves
//! the damped normal equations and accepts the step only if the mean squared
//! residual over the (new) adaptive window decreases, halving the step up to
//! eight times otherwise. A multiresolution pyramid handles large motions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{build_pyramid, spatial_gradient, GradientField, Raster};
use crate::motion::{project_gradient, MotionParams, MAX_DOF};
use crate::normal::{norm, NormalEquations};
use crate::par;

/// Maximum number of step halvings before an iteration gives up.
pub const MAX_HALVINGS: usize = 8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegisterOptions {
    pub max_levels: usize,
    /// Iteration cap at full resolution.
    pub max_iters_fine: usize,
    /// Iteration cap at every coarser level.
    pub max_iters_coarse: usize,
    pub min_update_norm: f64,
    pub damping: f64,
    pub min_overlap_pixels: usize,
}

impl Default for RegisterOptions {
    fn default() -> Self {
        RegisterOptions {
            max_levels: 4,
            max_iters_fine: 50,
            max_iters_coarse: 10,
            min_update_norm: 1e-4,
            damping: 1e-6,
            min_overlap_pixels: 256,
        }
    }
}

impl RegisterOptions {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidOptions(m.into()));
        if self.max_levels == 0 || self.max_iters_fine == 0 || self.max_iters_coarse == 0 {
            return bad("level and iteration counts must be at least 1");
        }
        if self.min_overlap_pixels == 0 {
            return bad("min_overlap_pixels must be at least 1");
        }
        if !(self.min_update_norm > 0.0) {
            return bad("min_update_norm must be positive");
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return bad("damping must be a finite non-negative number");
        }
        Ok(())
    }

    /// Overlap floor at pyramid level `level`: the full-resolution floor
    /// shrinks with pixel area, bounded below by four pixels per parameter.
    pub fn min_overlap_at(&self, level: usize, dof: usize) -> usize {
        let scaled = self.min_overlap_pixels.div_ceil(1usize << (2 * level.min(31)));
        scaled.max(4 * dof)
    }
}

/// Outcome of [`register_pair`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairResult {
    pub params: MotionParams,
    /// Mean squared residual over the final adaptive window.
    pub final_cost: f64,
    /// Gauss-Newton iterations per pyramid level, index 0 = full resolution.
    pub iterations: Vec<usize>,
    pub overlap_pixels: usize,
}

/// Region of `I` over which residuals are summed.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Window {
    /// Every pixel whose warped sample exists.
    Adaptive,
    /// Inclusive pixel rectangle `[c0, c1] x [r0, r1]` of `I`; every pixel
    /// in it must be evaluable.
    Fixed { c0: usize, r0: usize, c1: usize, r1: usize },
}

impl Window {
    /// A `size x size` square centered in a `width x height` image, clipped
    /// to the image.
    pub fn centered(width: usize, height: usize, size: usize) -> Window {
        let span = |n: usize| {
            let s = size.clamp(1, n);
            let start = (n - s) / 2;
            (start, start + s - 1)
        };
        let (c0, c1) = span(width);
        let (r0, r1) = span(height);
        Window::Fixed { c0, r0, c1, r1 }
    }

    fn rows(&self, height: usize) -> std::ops::Range<usize> {
        match *self {
            Window::Adaptive => 0..height,
            Window::Fixed { r0, r1, .. } => r0..r1 + 1,
        }
    }

    fn cols(&self, width: usize) -> std::ops::Range<usize> {
        match *self {
            Window::Adaptive => 0..width,
            Window::Fixed { c0, c1, .. } => c0..c1 + 1,
        }
    }

    fn area(&self, width: usize, height: usize) -> usize {
        self.rows(height).len() * self.cols(width).len()
    }
}

/// How [`register_with_window`] picks its window at each pyramid level.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum WindowSpec {
    Adaptive,
    /// Centered square whose side is given at full resolution and halved per
    /// level.
    Centered(usize),
}

impl WindowSpec {
    fn at_level(&self, level: usize, width: usize, height: usize) -> Window {
        match *self {
            WindowSpec::Adaptive => Window::Adaptive,
            WindowSpec::Centered(size) => Window::centered(width, height, size.div_ceil(1 << level).max(2)),
        }
    }
}

/// Pixels `(col, row)` of `i` whose residual can be evaluated under `theta`.
pub fn adaptive_window<'a>(
    i: &'a Raster,
    iprime: &'a Raster,
    theta: &'a MotionParams,
) -> impl Iterator<Item = (usize, usize)> + 'a {
    (0..i.height())
        .flat_map(move |r| (0..i.width()).map(move |c| (c, r)))
        .filter(move |&(c, r)| {
            let x = theta.map_point(i.point(c, r));
            iprime.site(x[0], x[1]).is_some()
        })
}

/// `I(x) - I'(m(theta; x))`, or `None` when either sample is unavailable.
pub fn residual(i: &Raster, iprime: &Raster, theta: &MotionParams, x: [f64; 2]) -> Option<f64> {
    let xp = theta.map_point(x);
    Some(i.sample_bilinear(x[0], x[1])? - iprime.sample_bilinear(xp[0], xp[1])?)
}

/// Residual energy over a window.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct WindowCost {
    pub sse: f64,
    pub count: usize,
    /// For fixed windows: whether every window pixel was evaluable.
    pub complete: bool,
}

impl WindowCost {
    pub fn mean(&self) -> f64 {
        if self.count == 0 {
            f64::INFINITY
        } else {
            self.sse / self.count as f64
        }
    }
}

pub fn window_cost(i: &Raster, iprime: &Raster, theta: &MotionParams, window: Window) -> WindowCost {
    let (cols, rows) = (window.cols(i.width()), window.rows(i.height()));
    let parts = par::map_row_blocks(rows.len(), |block| {
        let (mut sse, mut count) = (0.0, 0usize);
        for r in block.start + rows.start..block.end + rows.start {
            for c in cols.clone() {
                let x = i.point(c, r);
                let xp = theta.map_point(x);
                if let Some(s) = iprime.site(xp[0], xp[1]) {
                    let e = i.get(c, r) - iprime.at_site(&s);
                    sse += e * e;
                    count += 1;
                }
            }
        }
        (sse, count)
    });
    let (sse, count) = parts.iter().fold((0.0, 0), |(s, n), (ps, pn)| (s + ps, n + pn));
    WindowCost {
        sse,
        count,
        complete: count == window.area(i.width(), i.height()),
    }
}

/// Accumulates `sum grad_e grad_e^T` and `sum e grad_e` over `window`, with
/// `grad_e = -(d m / d theta) . grad I'(m(theta; x))` and the gradient of
/// `I'` bilinearly sampled from `grad`.
pub fn normal_equations(
    i: &Raster,
    iprime: &Raster,
    grad: &GradientField,
    theta: &MotionParams,
    window: Window,
) -> NormalEquations {
    let kind = theta.kind();
    let (cols, rows) = (window.cols(i.width()), window.rows(i.height()));
    let parts = par::map_row_blocks(rows.len(), |block| {
        let mut ne = NormalEquations::new(kind.dof());
        for r in block.start + rows.start..block.end + rows.start {
            for c in cols.clone() {
                let x = i.point(c, r);
                let xp = theta.map_point(x);
                let Some(s) = iprime.site(xp[0], xp[1]) else {
                    continue;
                };
                let e = i.get(c, r) - iprime.at_site(&s);
                let g = [grad.gx.at_site(&s), grad.gy.at_site(&s)];
                let de = negate(project_gradient(kind, x, g));
                ne.add(&de, e);
            }
        }
        ne
    });
    parts.into_iter().fold(NormalEquations::new(kind.dof()), |mut acc, p| {
        acc.merge(&p);
        acc
    })
}

#[inline]
pub(crate) fn negate(mut v: [f64; MAX_DOF]) -> [f64; MAX_DOF] {
    v.iter_mut().for_each(|x| *x = -*x);
    v
}

/// One Gauss-Newton update, without step halving, over the adaptive window
/// at full resolution.
pub fn gauss_newton_step(
    i: &Raster,
    iprime: &Raster,
    theta0: &MotionParams,
    opts: &RegisterOptions,
) -> Result<Vec<f64>> {
    opts.validate()?;
    let grad = spatial_gradient(iprime)?;
    let ne = normal_equations(i, iprime, &grad, theta0, Window::Adaptive);
    if ne.count < opts.min_overlap_pixels {
        return Err(Error::InsufficientOverlap {
            found: ne.count,
            required: opts.min_overlap_pixels,
        });
    }
    ne.solve(opts.damping)
}

/// Coarse-to-fine adaptive-window registration of `iprime` against `i`.
pub fn register_pair(i: &Raster, iprime: &Raster, init: &MotionParams, opts: &RegisterOptions) -> Result<PairResult> {
    register_with_window(i, iprime, init, WindowSpec::Adaptive, opts)
}

/// [`register_pair`] with a configurable window; `WindowSpec::Centered`
/// gives the classical fixed-window baseline.
pub fn register_with_window(
    i: &Raster,
    iprime: &Raster,
    init: &MotionParams,
    spec: WindowSpec,
    opts: &RegisterOptions,
) -> Result<PairResult> {
    opts.validate()?;
    for r in [i, iprime] {
        if r.width() < 2 || r.height() < 2 {
            return Err(Error::DegenerateDimensions {
                width: r.width(),
                height: r.height(),
            });
        }
    }
    let pyr_i = build_pyramid(i, opts.max_levels);
    let pyr_p = build_pyramid(iprime, opts.max_levels);
    let levels = pyr_i.len().min(pyr_p.len());
    let dof = init.dof();

    let mut theta = init.rescale(0.5f64.powi(levels as i32 - 1))?;
    let mut iterations = vec![0; levels];
    for level in (0..levels).rev() {
        let (li, lp) = (pyr_i.level(level), pyr_p.level(level));
        let window = spec.at_level(level, li.width(), li.height());
        let min_overlap = opts.min_overlap_at(level, dof);
        let cap = if level == 0 {
            opts.max_iters_fine
        } else {
            opts.max_iters_coarse
        };
        let grad = spatial_gradient(lp)?;
        iterations[level] = iterate_level(li, lp, &grad, &mut theta, window, min_overlap, cap, opts);
        if level > 0 {
            theta = theta.rescale(2.0)?;
        }
    }

    let window = spec.at_level(0, i.width(), i.height());
    let cost = window_cost(i, iprime, &theta, window);
    if !usable(&cost, window, opts.min_overlap_pixels) {
        return Err(Error::RegistrationFailure(format!(
            "final overlap of {} pixels is below {} or leaves the window",
            cost.count, opts.min_overlap_pixels
        )));
    }
    Ok(PairResult {
        params: theta,
        final_cost: cost.mean(),
        iterations,
        overlap_pixels: cost.count,
    })
}

fn usable(cost: &WindowCost, window: Window, min_overlap: usize) -> bool {
    match window {
        Window::Adaptive => cost.count >= min_overlap,
        Window::Fixed { .. } => cost.complete,
    }
}

/// Runs safeguarded Gauss-Newton at one level; returns the iteration count.
#[allow(clippy::too_many_arguments)]
fn iterate_level(
    i: &Raster,
    iprime: &Raster,
    grad: &GradientField,
    theta: &mut MotionParams,
    window: Window,
    min_overlap: usize,
    cap: usize,
    opts: &RegisterOptions,
) -> usize {
    let mut current = window_cost(i, iprime, theta, window);
    if !usable(&current, window, min_overlap) {
        log::debug!("level skipped: overlap {} below {}", current.count, min_overlap);
        return 0;
    }
    let mut done = 0;
    for _ in 0..cap {
        done += 1;
        let ne = normal_equations(i, iprime, grad, theta, window);
        let Ok(delta) = ne.solve(opts.damping) else {
            break;
        };
        let step_norm = norm(&delta);
        let mut accepted = false;
        let mut step = delta;
        for _ in 0..=MAX_HALVINGS {
            if let Ok(candidate) = theta.offset_by(&step) {
                let cost = window_cost(i, iprime, &candidate, window);
                if usable(&cost, window, min_overlap) && cost.mean() < current.mean() {
                    *theta = candidate;
                    current = cost;
                    accepted = true;
                    break;
                }
            }
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
        if !accepted || step_norm < opts.min_update_norm {
            break;
        }
    }
    done
}
