//! Global refinement of every frame against the current panorama.
//!
//! Frames are first chained by pairwise registration. Each non-anchor frame
//! `q` is then updated in turn by one Gauss-Newton step on the cost terms
//! that involve it, with `W` frozen:
//! `(Gamma + lambda I) delta = -gamma`, `Gamma = sum grad grad^T`,
//! `gamma = sum grad [P(x) - I_q(m(theta_q; x))]` over the pixels `R_q` seen
//! by frame `q`, and `grad = -(d m / d theta_q) . grad I_q`. Steps are
//! accepted only if the exact global cost decreases.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{build_pyramid, spatial_gradient, GradientField, Raster};
use crate::motion::{project_gradient, ModelKind, MotionParams};
use crate::normal::{norm, NormalEquations};
use crate::panorama::{
    compute_bounds, frame_footprint, pair_cost, total, warp_to_grid, RefGrid, Registration, WarpStack,
};
use crate::par;
use crate::two_frame::{self, negate, register_pair, RegisterOptions, Window, MAX_HALVINGS};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlmOptions {
    pub max_sweeps: usize,
    /// Stop a level when a sweep lowers the cost by less than this fraction.
    pub sweep_tol: f64,
    pub damping: f64,
    pub max_levels: usize,
    /// Stop a level when no accepted update in a sweep is longer than this.
    pub min_update_norm: f64,
    /// Pixels added around the initial footprints; frames may not leave
    /// the resulting grid.
    pub grid_margin: usize,
}

impl Default for MlmOptions {
    fn default() -> Self {
        MlmOptions {
            max_sweeps: 20,
            sweep_tol: 1e-5,
            damping: 1e-6,
            max_levels: 3,
            min_update_norm: 1e-4,
            grid_margin: 16,
        }
    }
}

impl MlmOptions {
    pub fn validate(&self) -> Result<()> {
        if self.max_sweeps == 0 || self.max_levels == 0 {
            return Err(Error::InvalidOptions("sweep and level counts must be positive".into()));
        }
        if !(self.sweep_tol > 0.0) || !(self.min_update_norm > 0.0) {
            return Err(Error::InvalidOptions("tolerances must be positive".into()));
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return Err(Error::InvalidOptions(format!(
                "damping {} must be non-negative",
                self.damping
            )));
        }
        Ok(())
    }
}

/// One JSON-lines trace record. `ml_cost` is always measured at full
/// resolution, so records from every level are comparable.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub level: usize,
    /// 0 is the state on entering the level.
    pub sweep: usize,
    pub ml_cost: f64,
    pub max_update_norm: f64,
    pub frames_skipped: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameUpdate {
    pub level: usize,
    pub sweep: usize,
    pub frame: usize,
    /// Length of the accepted step, 0 if rejected or skipped.
    pub update_norm: f64,
    pub accepted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    SweepTol,
    MinUpdateNorm,
    MaxSweeps,
    ZeroCost,
    /// The last sweep at a coarse level raised the full-resolution cost and
    /// was undone.
    CoarseRejected,
    SingleFrame,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Termination::SweepTol => "sweep_tol",
            Termination::MinUpdateNorm => "min_update_norm",
            Termination::MaxSweeps => "max_sweeps",
            Termination::ZeroCost => "zero_cost",
            Termination::CoarseRejected => "coarse_rejected",
            Termination::SingleFrame => "single_frame",
        };
        f.write_str(s)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MlmTrace {
    pub records: Vec<SweepRecord>,
    pub frame_updates: Vec<FrameUpdate>,
    /// Pyramid levels visited, coarse to fine.
    pub levels: Vec<usize>,
    /// Why each visited level stopped, in visiting order.
    pub terminations: Vec<Termination>,
}

impl MlmTrace {
    pub fn costs(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.ml_cost).collect()
    }

    pub fn to_jsonl(&self) -> String {
        self.records
            .iter()
            .map(|r| serde_json::to_string(r).expect("trace records serialize") + "\n")
            .collect()
    }
}

/// Pairwise registrations `theta_{k -> k+1}` of consecutive frames, each
/// from an identity initial guess.
pub fn pairwise_chain(images: &[Raster], kind: ModelKind, opts: &RegisterOptions) -> Result<Vec<MotionParams>> {
    images
        .windows(2)
        .enumerate()
        .map(|(k, pair)| {
            register_pair(&pair[0], &pair[1], &MotionParams::identity(kind), opts)
                .map(|r| r.params)
                .map_err(|e| Error::SequentialInit {
                    index: k,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Composes pairwise maps into panorama-to-frame maps anchored at frame 0:
/// `theta_{k+1} = theta_{k -> k+1} o theta_k`.
pub fn chain_registration(kind: ModelKind, pairs: &[MotionParams]) -> Result<Registration> {
    let mut params = vec![MotionParams::identity(kind)];
    for (k, pair) in pairs.iter().enumerate() {
        params.push(pair.compose(&params[k])?);
    }
    Registration::new(kind, params, 0)
}

pub fn sequential_init(images: &[Raster], kind: ModelKind, opts: &RegisterOptions) -> Result<Registration> {
    if images.is_empty() {
        return Err(Error::InvalidRegistration("no frames".into()));
    }
    opts.validate()?;
    chain_registration(kind, &pairwise_chain(images, kind, opts)?)
}

/// The system `Gamma`, `gamma` for frame `q`, read from
/// [`NormalEquations::matrix`] and [`NormalEquations::vector`].
pub fn update_system(images: &[Raster], reg: &Registration, q: usize, grid: &RefGrid) -> Result<NormalEquations> {
    check_frame(reg, q)?;
    let stack = WarpStack::new(images, reg, *grid)?;
    let grad = spatial_gradient(&images[q])?;
    Ok(system_from_sums(
        &stack,
        &images[q],
        &grad,
        &reg.params()[q],
        &pixel_sums(&stack),
    ))
}

/// The same system built as a two-frame alignment of the panorama estimate
/// with frame `q`, from the error `P(x) - I_q(m(theta_q; x))`.
pub fn panorama_alignment_system(
    images: &[Raster],
    reg: &Registration,
    q: usize,
    grid: &RefGrid,
) -> Result<NormalEquations> {
    check_frame(reg, q)?;
    let pano = WarpStack::new(images, reg, *grid)?.panorama();
    let grad = spatial_gradient(&images[q])?;
    Ok(two_frame::normal_equations(
        &pano.image,
        &images[q],
        &grad,
        &reg.params()[q],
        Window::Adaptive,
    ))
}

/// Solves `(Gamma + damping I) delta = -gamma` for frame `q`.
pub fn coordinate_update(
    images: &[Raster],
    reg: &Registration,
    q: usize,
    grid: &RefGrid,
    damping: f64,
) -> Result<Vec<f64>> {
    let ne = update_system(images, reg, q, grid)?;
    if ne.count == 0 {
        return Err(Error::EmptyRegion { frame: q });
    }
    ne.solve(damping)
}

fn check_frame(reg: &Registration, q: usize) -> Result<()> {
    if q >= reg.len() {
        return Err(Error::InvalidRegistration(format!("frame {q} out of range")));
    }
    if q == reg.anchor() {
        return Err(Error::AnchorUpdate { frame: q });
    }
    Ok(())
}

fn pixel_sums(stack: &WarpStack) -> Vec<(u32, f64)> {
    par::map_pixels(stack.grid.width(), stack.grid.height(), |c, r| {
        stack.pixel_sum(r * stack.grid.width() + c)
    })
}

fn system_from_sums(
    stack: &WarpStack,
    image: &Raster,
    grad: &GradientField,
    theta: &MotionParams,
    sums: &[(u32, f64)],
) -> NormalEquations {
    let grid = stack.grid;
    let kind = theta.kind();
    let parts = par::map_row_blocks(grid.height(), |rows| {
        let mut ne = NormalEquations::new(kind.dof());
        for r in rows {
            for c in 0..grid.width() {
                let x0 = grid.point(c, r);
                let x = theta.map_point(x0);
                let Some(s) = image.site(x[0], x[1]) else { continue };
                let (n, sum) = sums[r * grid.width() + c];
                let pano = sum / n as f64;
                let g = negate(project_gradient(kind, x0, [grad.gx.at_site(&s), grad.gy.at_site(&s)]));
                ne.add(&g, pano - image.at_site(&s));
            }
        }
        ne
    });
    parts.into_iter().fold(NormalEquations::new(kind.dof()), |mut acc, p| {
        acc.merge(&p);
        acc
    })
}

/// Working state at one pyramid level.
struct Mosaic<'a> {
    images: &'a [Raster],
    grads: Vec<GradientField>,
    reg: Registration,
    stack: WarpStack,
    sums: Vec<(u32, f64)>,
    costs: Vec<f64>,
    cost: f64,
}

enum Outcome {
    Accepted(f64),
    Rejected,
    Skipped,
}

impl<'a> Mosaic<'a> {
    fn new(images: &'a [Raster], reg: Registration, grid: RefGrid) -> Result<Self> {
        let grads = images.iter().map(spatial_gradient).collect::<Result<_>>()?;
        let stack = WarpStack::new(images, &reg, grid)?;
        let sums = pixel_sums(&stack);
        let costs = stack.pixel_costs();
        let cost = total(&costs);
        Ok(Mosaic {
            images,
            grads,
            reg,
            stack,
            sums,
            costs,
            cost,
        })
    }

    /// Per-pixel costs with frame `q` resampled as `warp`.
    fn costs_with(&self, q: usize, warp: &[Option<f64>]) -> Vec<f64> {
        let grid = self.stack.grid;
        let old = &self.stack.frames[q];
        par::map_pixels(grid.width(), grid.height(), |c, r| {
            let k = r * grid.width() + c;
            if old[k].is_none() && warp[k].is_none() {
                self.costs[k]
            } else {
                pair_cost(
                    self.stack
                        .frames
                        .iter()
                        .enumerate()
                        .map(|(i, f)| if i == q { warp[k] } else { f[k] }),
                )
            }
        })
    }

    fn update_frame(&mut self, q: usize, damping: f64) -> Outcome {
        let theta = self.reg.params()[q];
        let ne = system_from_sums(&self.stack, &self.images[q], &self.grads[q], &theta, &self.sums);
        if ne.count == 0 {
            log::debug!("frame {q}: empty region, skipped");
            return Outcome::Skipped;
        }
        let mut step = match ne.solve(damping) {
            Ok(d) => d,
            Err(e) => {
                log::debug!("frame {q}: {e}, skipped");
                return Outcome::Skipped;
            }
        };
        for _ in 0..=MAX_HALVINGS {
            if let Some(outcome) = self.try_step(q, &theta, &step) {
                return outcome;
            }
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
        Outcome::Rejected
    }

    fn try_step(&mut self, q: usize, theta: &MotionParams, step: &[f64]) -> Option<Outcome> {
        let candidate = theta.offset_by(step).ok()?;
        let image = &self.images[q];
        if !frame_footprint(image, &candidate).is_ok_and(|b| self.stack.grid.contains_box(b)) {
            return None;
        }
        let warp = warp_to_grid(image, &candidate, &self.stack.grid);
        let costs = self.costs_with(q, &warp);
        let cost = total(&costs);
        if !(cost < self.cost) {
            return None;
        }
        let old = std::mem::replace(&mut self.stack.frames[q], warp);
        for (k, was) in old.iter().enumerate() {
            if was.is_some() || self.stack.frames[q][k].is_some() {
                self.sums[k] = self.stack.pixel_sum(k);
            }
        }
        self.costs = costs;
        self.cost = cost;
        self.reg
            .set_params(q, candidate)
            .expect("only non-anchor frames are updated");
        Some(Outcome::Accepted(norm(step)))
    }
}

/// Coordinatewise refinement, coarse to fine.
pub fn refine(images: &[Raster], reg0: &Registration, opts: &MlmOptions) -> Result<(Registration, MlmTrace)> {
    opts.validate()?;
    reg0.check_frames(images)?;
    let full_grid = grown(compute_bounds(images, reg0, 0)?, opts.grid_margin);
    let full_cost = |reg: &Registration| -> Result<Option<f64>> {
        for (img, p) in images.iter().zip(reg.params()) {
            if !full_grid.contains_box(frame_footprint(img, p)?) {
                return Ok(None);
            }
        }
        Ok(Some(total(&WarpStack::new(images, reg, full_grid)?.pixel_costs())))
    };

    let mut trace = MlmTrace::default();
    let mut best = full_cost(reg0)?.expect("initial footprints lie inside their own bounds");
    if images.len() == 1 {
        trace.records.push(SweepRecord {
            level: 0,
            sweep: 0,
            ml_cost: best,
            max_update_norm: 0.0,
            frames_skipped: 0,
        });
        trace.levels.push(0);
        trace.terminations.push(Termination::SingleFrame);
        return Ok((reg0.clone(), trace));
    }

    let pyramids: Vec<_> = images.iter().map(|img| build_pyramid(img, opts.max_levels)).collect();
    let levels = pyramids.iter().map(|p| p.len()).min().unwrap_or(1);
    let mut reg = reg0.rescale(0.5f64.powi(levels as i32 - 1))?;

    for level in (0..levels).rev() {
        let level_images: Vec<Raster> = pyramids.iter().map(|p| p.level(level).clone()).collect();
        let grid = if level == 0 {
            full_grid
        } else {
            grown(compute_bounds(&level_images, &reg, 0)?, opts.grid_margin)
        };
        let mut state = Mosaic::new(&level_images, reg.clone(), grid)?;
        trace.levels.push(level);
        trace.records.push(SweepRecord {
            level,
            sweep: 0,
            ml_cost: best,
            max_update_norm: 0.0,
            frames_skipped: 0,
        });

        let mut reason = Termination::MaxSweeps;
        for sweep in 1..=opts.max_sweeps {
            if state.cost == 0.0 {
                reason = Termination::ZeroCost;
                break;
            }
            let (before_reg, before_cost) = (state.reg.clone(), state.cost);
            let (mut max_norm, mut skipped) = (0.0f64, 0);
            let mut updates = Vec::new();
            for q in (0..images.len()).filter(|&q| q != reg0.anchor()) {
                let (update_norm, accepted) = match state.update_frame(q, opts.damping) {
                    Outcome::Accepted(n) => (n, true),
                    Outcome::Rejected => (0.0, false),
                    Outcome::Skipped => {
                        skipped += 1;
                        (0.0, false)
                    }
                };
                max_norm = max_norm.max(update_norm);
                updates.push(FrameUpdate {
                    level,
                    sweep,
                    frame: q,
                    update_norm,
                    accepted,
                });
            }

            let cost = if level == 0 {
                Some(state.cost)
            } else {
                full_cost(&state.reg.rescale((1u64 << level) as f64)?)?
            };
            match cost {
                Some(c) if c <= best => best = c,
                _ => {
                    log::debug!("level {level} sweep {sweep} raised the full-resolution cost; undone");
                    state = Mosaic::new(&level_images, before_reg, grid)?;
                    reason = Termination::CoarseRejected;
                    break;
                }
            }
            trace.frame_updates.extend(updates);
            trace.records.push(SweepRecord {
                level,
                sweep,
                ml_cost: best,
                max_update_norm: max_norm,
                frames_skipped: skipped,
            });
            if max_norm < opts.min_update_norm {
                reason = Termination::MinUpdateNorm;
                break;
            }
            if before_cost - state.cost < opts.sweep_tol * before_cost {
                reason = Termination::SweepTol;
                break;
            }
        }
        log::info!("level {level} stopped: {reason}, cost {best:.6e}");
        trace.terminations.push(reason);
        reg = state.reg;
        if level > 0 {
            reg = reg.rescale(2.0)?;
        }
    }
    Ok((reg, trace))
}

fn grown(g: RefGrid, margin: usize) -> RefGrid {
    let m = margin as i64;
    RefGrid {
        x_min: g.x_min - m,
        y_min: g.y_min - m,
        x_max: g.x_max + m,
        y_max: g.y_max + m,
    }
}
