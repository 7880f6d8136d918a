//! C ABI over `mlmosaic`.
//!
//! Objects cross the boundary as opaque handles owned by the caller and
//! released with the matching `*_free` function. Every call returns an
//! [`MlmStatus`]; on failure `mlm_last_error` describes the cause for the
//! calling thread. Panics are caught and reported as `MLM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use mlmosaic::cli::exit_code;
use mlmosaic::mlm::{refine, sequential_init, MlmOptions};
use mlmosaic::panorama::{compute_bounds, estimate_panorama, ml_cost, Registration};
use mlmosaic::two_frame::{register_pair, RegisterOptions};
use mlmosaic::{Error, ModelKind, MotionParams, Raster};

/// Result of every call. Values 2 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Io = 3,
    Algorithm = 4,
    Panic = 5,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MlmModel {
    Translation = 0,
    Affine = 1,
}

impl From<MlmModel> for ModelKind {
    fn from(m: MlmModel) -> Self {
        match m {
            MlmModel::Translation => ModelKind::Translation,
            MlmModel::Affine => ModelKind::Affine,
        }
    }
}

/// A grayscale image with intensities in [0, 1].
pub struct MlmRaster {
    inner: Raster,
}

/// One motion model per frame plus the anchor frame.
pub struct MlmRegistration {
    inner: Registration,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

type FfiResult = Result<(), Fail>;

fn guard(f: impl FnOnce() -> FfiResult) -> MlmStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MlmStatus::Ok,
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            MlmStatus::NullPointer
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            match exit_code(&e) {
                3 => MlmStatus::Io,
                4 => MlmStatus::Algorithm,
                _ => MlmStatus::InvalidInput,
            }
        }
        Err(_) => {
            set_error("internal panic".into());
            MlmStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &'static str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or(Fail::Null(what))
}

unsafe fn out_ptr<'a, T>(p: *mut T, what: &'static str) -> Result<&'a mut T, Fail> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> Result<&'a mut [T], Fail> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn frames(p: *const *const MlmRaster, n: usize) -> Result<Vec<Raster>, Fail> {
    slice(p, n, "frames")?
        .iter()
        .map(|&r| deref(r, "frame").map(|r| r.inner.clone()))
        .collect()
}

unsafe fn path(p: *const c_char) -> Result<PathBuf, Fail> {
    if p.is_null() {
        return Err(Fail::Null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Error::InvalidConfig("path is not valid UTF-8".into()))?;
    Ok(PathBuf::from(s))
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message for the last failed call on this thread, or NULL after a
/// success. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mlm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mlm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `width * height` row-major samples into a new raster.
///
/// # Safety
/// `data` must point to `width * height` readable doubles and `out` to a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mlm_raster_new(
    width: usize,
    height: usize,
    data: *const f64,
    out: *mut *mut MlmRaster,
) -> MlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let n = width
            .checked_mul(height)
            .ok_or(Error::DegenerateDimensions { width, height })?;
        let samples = slice(data, n, "data")?.to_vec();
        *out = boxed(MlmRaster {
            inner: Raster::new(width, height, samples)?,
        });
        Ok(())
    })
}

/// Loads an 8-bit PGM or PNG file.
///
/// # Safety
/// `file` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mlm_raster_load(file: *const c_char, out: *mut *mut MlmRaster) -> MlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        *out = boxed(MlmRaster {
            inner: mlmosaic::io::load_image(path(file)?)?,
        });
        Ok(())
    })
}

/// Writes the raster as an 8-bit PGM file.
///
/// # Safety
/// `raster` must be a live handle and `file` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn mlm_raster_save(raster: *const MlmRaster, file: *const c_char) -> MlmStatus {
    guard(|| {
        let r = deref(raster, "raster")?;
        mlmosaic::io::save_image(&r.inner, path(file)?)?;
        Ok(())
    })
}

/// Width and height of the raster; either output may be NULL.
///
/// # Safety
/// `raster` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mlm_raster_size(raster: *const MlmRaster, width: *mut usize, height: *mut usize) -> MlmStatus {
    guard(|| {
        let r = deref(raster, "raster")?;
        if let Some(w) = width.as_mut() {
            *w = r.inner.width();
        }
        if let Some(h) = height.as_mut() {
            *h = r.inner.height();
        }
        Ok(())
    })
}

/// Copies the row-major samples into `data`, which holds `len` doubles.
///
/// # Safety
/// `raster` must be a live handle and `data` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mlm_raster_copy_data(raster: *const MlmRaster, data: *mut f64, len: usize) -> MlmStatus {
    guard(|| {
        let r = deref(raster, "raster")?;
        let src = r.inner.data();
        if len != src.len() {
            return Err(Error::InvalidRaster(format!("buffer holds {len} samples, raster has {}", src.len())).into());
        }
        slice_mut(data, len, "data")?.copy_from_slice(src);
        Ok(())
    })
}

/// # Safety
/// `raster` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlm_raster_free(raster: *mut MlmRaster) {
    if !raster.is_null() {
        drop(Box::from_raw(raster));
    }
}

/// Builds a registration from `n_frames` parameter vectors laid out back to
/// back, 2 values per frame for translation and 6 for affine
/// (a11, a12, a21, a22, tx, ty).
///
/// # Safety
/// `params` must hold `n_frames * dof` readable doubles and `out` must be a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mlm_registration_new(
    model: MlmModel,
    params: *const f64,
    n_frames: usize,
    anchor: usize,
    out: *mut *mut MlmRegistration,
) -> MlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let kind = ModelKind::from(model);
        let count = n_frames
            .checked_mul(kind.dof())
            .ok_or_else(|| Error::InvalidRegistration(format!("{n_frames} frames")))?;
        let values = slice(params, count, "params")?;
        let params = values
            .chunks(kind.dof())
            .map(|theta| MotionParams::from_theta(kind, theta))
            .collect::<mlmosaic::Result<Vec<_>>>()?;
        *out = boxed(MlmRegistration {
            inner: Registration::new(kind, params, anchor)?,
        });
        Ok(())
    })
}

/// Number of frames, parameters per frame and anchor; outputs may be NULL.
///
/// # Safety
/// `reg` must be a live handle; non-null outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn mlm_registration_info(
    reg: *const MlmRegistration,
    n_frames: *mut usize,
    dof: *mut usize,
    anchor: *mut usize,
) -> MlmStatus {
    guard(|| {
        let r = &deref(reg, "reg")?.inner;
        if let Some(n) = n_frames.as_mut() {
            *n = r.len();
        }
        if let Some(d) = dof.as_mut() {
            *d = r.kind().dof();
        }
        if let Some(a) = anchor.as_mut() {
            *a = r.anchor();
        }
        Ok(())
    })
}

/// Copies the parameters of `frame` into `theta`, which holds `len` doubles.
///
/// # Safety
/// `reg` must be a live handle and `theta` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mlm_registration_params(
    reg: *const MlmRegistration,
    frame: usize,
    theta: *mut f64,
    len: usize,
) -> MlmStatus {
    guard(|| {
        let r = &deref(reg, "reg")?.inner;
        let p = r
            .params()
            .get(frame)
            .ok_or_else(|| Error::InvalidRegistration(format!("frame {frame} of {}", r.len())))?;
        if len != p.dof() {
            return Err(Error::InvalidParams(format!("buffer holds {len} values, model has {}", p.dof())).into());
        }
        slice_mut(theta, len, "theta")?.copy_from_slice(p.theta());
        Ok(())
    })
}

/// # Safety
/// `reg` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn mlm_registration_free(reg: *mut MlmRegistration) {
    if !reg.is_null() {
        drop(Box::from_raw(reg));
    }
}

/// Registers `b` against `a` with default options. `init` holds `dof`
/// starting parameters or is NULL for identity; the estimate is written to
/// `theta`, which holds `len` doubles.
///
/// # Safety
/// `a` and `b` must be live handles; `init`, when non-null, must hold `dof`
/// readable doubles; `theta` must hold `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mlm_register_pair(
    a: *const MlmRaster,
    b: *const MlmRaster,
    model: MlmModel,
    init: *const f64,
    theta: *mut f64,
    len: usize,
) -> MlmStatus {
    guard(|| {
        let (a, b) = (deref(a, "a")?, deref(b, "b")?);
        let kind = ModelKind::from(model);
        let init = if init.is_null() {
            MotionParams::identity(kind)
        } else {
            MotionParams::from_theta(kind, slice(init, kind.dof(), "init")?)?
        };
        if len != kind.dof() {
            return Err(Error::InvalidParams(format!("buffer holds {len} values, model has {}", kind.dof())).into());
        }
        let result = register_pair(&a.inner, &b.inner, &init, &RegisterOptions::default())?;
        slice_mut(theta, len, "theta")?.copy_from_slice(result.params.theta());
        Ok(())
    })
}

/// Chains pairwise registrations of consecutive frames, anchored at frame 0.
///
/// # Safety
/// `frames` must hold `n_frames` live raster handles and `out` must be a
/// writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn mlm_sequential_init(
    frames: *const *const MlmRaster,
    n_frames: usize,
    model: MlmModel,
    out: *mut *mut MlmRegistration,
) -> MlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let images = self::frames(frames, n_frames)?;
        let reg = sequential_init(&images, model.into(), &RegisterOptions::default())?;
        *out = boxed(MlmRegistration { inner: reg });
        Ok(())
    })
}

/// Refines `initial` jointly over all frames with `max_sweeps` sweeps per
/// level (0 keeps the default). `cost`, when non-null, receives the final
/// cost.
///
/// # Safety
/// `frames` must hold `n_frames` live raster handles, `initial` must be a
/// live handle, `out` a writable handle slot and `cost` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn mlm_refine(
    frames: *const *const MlmRaster,
    n_frames: usize,
    initial: *const MlmRegistration,
    max_sweeps: usize,
    out: *mut *mut MlmRegistration,
    cost: *mut f64,
) -> MlmStatus {
    guard(|| {
        let out = out_ptr(out, "out")?;
        let images = self::frames(frames, n_frames)?;
        let initial = &deref(initial, "initial")?.inner;
        let mut opts = MlmOptions::default();
        if max_sweeps > 0 {
            opts.max_sweeps = max_sweeps;
        }
        let (reg, trace) = refine(&images, initial, &opts)?;
        if let (Some(c), Some(last)) = (cost.as_mut(), trace.costs().last()) {
            *c = *last;
        }
        *out = boxed(MlmRegistration { inner: reg });
        Ok(())
    })
}

/// Total squared disagreement between overlapping frames, each pixel
/// weighted by the inverse number of frames observing it.
///
/// # Safety
/// `frames` must hold `n_frames` live raster handles, `reg` must be a live
/// handle and `cost` writable.
#[no_mangle]
pub unsafe extern "C" fn mlm_ml_cost(
    frames: *const *const MlmRaster,
    n_frames: usize,
    reg: *const MlmRegistration,
    cost: *mut f64,
) -> MlmStatus {
    guard(|| {
        let cost = out_ptr(cost, "cost")?;
        let images = self::frames(frames, n_frames)?;
        let reg = &deref(reg, "reg")?.inner;
        *cost = ml_cost(&images, reg, &compute_bounds(&images, reg, 0)?)?;
        Ok(())
    })
}

/// Averages the frames onto the panorama grid. `panorama` receives the mean
/// intensity (0 where no frame observes) and `weights`, when non-null, the
/// number of observing frames per pixel. `origin`, when non-null, receives
/// the panorama coordinates of pixel (0, 0).
///
/// # Safety
/// `frames` must hold `n_frames` live raster handles, `reg` must be a live
/// handle, `panorama` a writable handle slot, `weights` NULL or a writable
/// handle slot and `origin` NULL or 2 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn mlm_panorama(
    frames: *const *const MlmRaster,
    n_frames: usize,
    reg: *const MlmRegistration,
    panorama: *mut *mut MlmRaster,
    weights: *mut *mut MlmRaster,
    origin: *mut f64,
) -> MlmStatus {
    guard(|| {
        let panorama = out_ptr(panorama, "panorama")?;
        let images = self::frames(frames, n_frames)?;
        let reg = &deref(reg, "reg")?.inner;
        let est = estimate_panorama(&images, reg, &compute_bounds(&images, reg, 0)?)?;
        let (w, h) = (est.grid.width(), est.grid.height());
        let pano = Raster::new(
            w,
            h,
            (0..h)
                .flat_map(|r| (0..w).map(move |c| (c, r)))
                .map(|(c, r)| est.value(c, r).unwrap_or(0.0))
                .collect(),
        )?;
        if !origin.is_null() {
            slice_mut(origin, 2, "origin")?.copy_from_slice(&est.grid.origin());
        }
        if let Some(slot) = weights.as_mut() {
            let counts = est.weights.data().iter().map(|&n| f64::from(n)).collect();
            *slot = boxed(MlmRaster {
                inner: Raster::new(w, h, counts)?,
            });
        }
        *panorama = boxed(MlmRaster { inner: pano });
        Ok(())
    })
}
