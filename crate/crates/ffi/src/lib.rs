//! C ABI over `corrdepth`.
//!
//! Objects cross the boundary as opaque heap handles that the caller frees
//! with the matching `cd_*_free`. Every fallible call returns a [`CdStatus`];
//! on failure a message is kept per thread and read with
//! [`cd_last_error_message`]. Panics are caught and reported as
//! [`CdStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use corrdepth::optim::fit_depth;
use corrdepth::robust::KernelArgument;
use corrdepth::{
    evaluate, loss_and_grad, robust_weight, robust_weight_grad, CorrespondenceSet, DepthField, Error, InitMode, Mask,
    OptimConfig, Pixel2, RansacConfig, RobustParams, ScalarGrid, Scene, SceneSpec, StopReason,
};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    OutOfBounds = 3,
    DegenerateConfiguration = 4,
    NoConsensus = 5,
    IllConditionedJacobian = 6,
    DegenerateAlignment = 7,
    DivisionHazard = 8,
    InsufficientSupport = 9,
    Parse = 10,
    Io = 11,
    BufferTooSmall = 12,
    Panic = 13,
}

impl From<&Error> for CdStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::OutOfBounds { .. } => CdStatus::OutOfBounds,
            Error::InvalidInput(_) => CdStatus::InvalidInput,
            Error::DegenerateConfiguration { .. } => CdStatus::DegenerateConfiguration,
            Error::NoConsensus { .. } => CdStatus::NoConsensus,
            Error::IllConditionedJacobian(_) => CdStatus::IllConditionedJacobian,
            Error::DegenerateAlignment(_) => CdStatus::DegenerateAlignment,
            Error::DivisionHazard { .. } => CdStatus::DivisionHazard,
            Error::InsufficientSupport { .. } => CdStatus::InsufficientSupport,
            Error::Parse(_) | Error::Json(_) => CdStatus::Parse,
            Error::Io(_) => CdStatus::Io,
        }
    }
}

/// Depth grid with values in `[-1, 1]`.
pub struct CdDepthField(DepthField);

/// Matched source/target pixels.
pub struct CdCorrespondences(CorrespondenceSet);

/// Synthetic surface with its views.
pub struct CdScene(Scene);

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CdRansacConfig {
    pub threshold: f64,
    pub max_iterations: usize,
    pub min_sample_size: usize,
    pub seed: u64,
    pub refit_rounds: usize,
}

/// `tau = INFINITY` disables the kernel. `squared_distance` nonzero applies
/// the kernel to the squared residual length.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CdRobustParams {
    pub tau: f64,
    pub squared_distance: u8,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdInitMode {
    Zeros = 0,
    UniformRandom = 1,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CdOptimConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub grad_clamp: f64,
    pub max_iters: usize,
    pub patience: usize,
    pub init_mode: CdInitMode,
    pub seed: u64,
    pub smoothness: f64,
    pub init_jitter: f64,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CdStopReason {
    Plateau = 0,
    MaxIters = 1,
    /// The solver failed mid-run; the depth is the last good iterate.
    Error = 2,
}

#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct CdFitSummary {
    /// NaN if the very first evaluation failed.
    pub final_loss: f64,
    pub iterations_run: usize,
    pub stop_reason: CdStopReason,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default)]
pub struct CdMetrics {
    pub l1: f64,
    pub rmse: f64,
    pub rel_l1: f64,
    pub sq_rel: f64,
}

impl From<&CdRansacConfig> for RansacConfig {
    fn from(c: &CdRansacConfig) -> Self {
        RansacConfig {
            threshold: c.threshold,
            max_iterations: c.max_iterations,
            min_sample_size: c.min_sample_size,
            seed: c.seed,
            refit_rounds: c.refit_rounds,
        }
    }
}

impl From<&CdRobustParams> for RobustParams {
    fn from(c: &CdRobustParams) -> Self {
        RobustParams {
            tau: c.tau,
            argument: if c.squared_distance != 0 {
                KernelArgument::SquaredDistance
            } else {
                KernelArgument::Distance
            },
        }
    }
}

impl From<&CdOptimConfig> for OptimConfig {
    fn from(c: &CdOptimConfig) -> Self {
        OptimConfig {
            learning_rate: c.learning_rate,
            momentum: c.momentum,
            grad_clamp: c.grad_clamp,
            max_iters: c.max_iters,
            patience: c.patience,
            init_mode: match c.init_mode {
                CdInitMode::Zeros => InitMode::Zeros,
                CdInitMode::UniformRandom => InitMode::UniformRandom,
            },
            seed: c.seed,
            smoothness: c.smoothness,
            init_jitter: c.init_jitter,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("interior nuls removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

enum Fail {
    Core(Error),
    Status(CdStatus, String),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Core(e)
    }
}

fn null(what: &str) -> Fail {
    Fail::Status(CdStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> CdStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => CdStatus::Ok,
        Ok(Err(Fail::Core(e))) => {
            set_error(e.to_string());
            CdStatus::from(&e)
        }
        Ok(Err(Fail::Status(s, msg))) => {
            set_error(msg);
            s
        }
        Err(_) => {
            set_error("panic inside corrdepth".into());
            CdStatus::Panic
        }
    }
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], Fail> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn write_out<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

unsafe fn copy_into(src: &[f64], buf: *mut f64, len: usize) -> Result<(), Fail> {
    if len < src.len() {
        return Err(Fail::Status(
            CdStatus::BufferTooSmall,
            format!("buffer holds {len} values, need {}", src.len()),
        ));
    }
    if buf.is_null() {
        return Err(null("buffer"));
    }
    ptr::copy_nonoverlapping(src.as_ptr(), buf, src.len());
    Ok(())
}

fn boxed<T>(v: T) -> *mut T {
    Box::into_raw(Box::new(v))
}

fn mask_from(bits: &[u8], width: usize, height: usize) -> Result<Mask, Fail> {
    Ok(Mask::new(width, height, bits.iter().map(|b| *b != 0).collect())?)
}

/// Message of the last failure on this thread, or null if the last call
/// succeeded cleanly. A fit that stopped on a solver error also leaves its
/// message here. Valid until the next `cd_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cd_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn cd_ransac_config_default(out: *mut CdRansacConfig) -> CdStatus {
    guard(|| {
        let d = RansacConfig::default();
        let c = CdRansacConfig {
            threshold: d.threshold,
            max_iterations: d.max_iterations,
            min_sample_size: d.min_sample_size,
            seed: d.seed,
            refit_rounds: d.refit_rounds,
        };
        write_out(out, c, "out")
    })
}

/// # Safety
/// `out` must be null or point to writable memory for one params struct.
#[no_mangle]
pub unsafe extern "C" fn cd_robust_params_default(out: *mut CdRobustParams) -> CdStatus {
    guard(|| {
        let d = RobustParams::default();
        let c = CdRobustParams {
            tau: d.tau,
            squared_distance: u8::from(d.argument == KernelArgument::SquaredDistance),
        };
        write_out(out, c, "out")
    })
}

/// # Safety
/// `out` must be null or point to writable memory for one config.
#[no_mangle]
pub unsafe extern "C" fn cd_optim_config_default(out: *mut CdOptimConfig) -> CdStatus {
    guard(|| {
        let d = OptimConfig::default();
        let c = CdOptimConfig {
            learning_rate: d.learning_rate,
            momentum: d.momentum,
            grad_clamp: d.grad_clamp,
            max_iters: d.max_iters,
            patience: d.patience,
            init_mode: match d.init_mode {
                InitMode::Zeros => CdInitMode::Zeros,
                InitMode::UniformRandom => CdInitMode::UniformRandom,
            },
            seed: d.seed,
            smoothness: d.smoothness,
            init_jitter: d.init_jitter,
        };
        write_out(out, c, "out")
    })
}

/// Kernel value `R(x)` for threshold `tau`; NaN for a non-positive `tau`.
#[no_mangle]
pub extern "C" fn cd_robust_weight(x: f64, tau: f64) -> f64 {
    match RobustParams::new(tau) {
        Ok(p) => robust_weight(x, &p),
        Err(_) => f64::NAN,
    }
}

/// Kernel derivative `R'(x)`; NaN for a non-positive `tau`.
#[no_mangle]
pub extern "C" fn cd_robust_weight_grad(x: f64, tau: f64) -> f64 {
    match RobustParams::new(tau) {
        Ok(p) => robust_weight_grad(x, &p),
        Err(_) => f64::NAN,
    }
}

/// Copies `width * height` row-major values into a new depth field.
///
/// # Safety
/// `values` must point to `width * height` readable doubles; `out` must be
/// writable.
#[no_mangle]
pub unsafe extern "C" fn cd_depth_new(
    width: usize,
    height: usize,
    values: *const f64,
    out: *mut *mut CdDepthField,
) -> CdStatus {
    guard(|| {
        let n = width
            .checked_mul(height)
            .ok_or_else(|| Fail::Status(CdStatus::InvalidInput, "grid size overflows".into()))?;
        let values = slice(values, n, "values")?.to_vec();
        let depth = DepthField::from_values(width, height, values)?;
        write_out(out, boxed(CdDepthField(depth)), "out")
    })
}

/// # Safety
/// `depth` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cd_depth_free(depth: *mut CdDepthField) {
    if !depth.is_null() {
        drop(Box::from_raw(depth));
    }
}

/// # Safety
/// `depth` must be a live handle; `width`/`height` writable.
#[no_mangle]
pub unsafe extern "C" fn cd_depth_shape(depth: *const CdDepthField, width: *mut usize, height: *mut usize) -> CdStatus {
    guard(|| {
        let d = &as_ref(depth, "depth")?.0;
        write_out(width, d.width(), "width")?;
        write_out(height, d.height(), "height")
    })
}

/// Copies the row-major values into `buf`, which must hold at least
/// `width * height` doubles.
///
/// # Safety
/// `depth` must be a live handle; `buf` must be writable for `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cd_depth_values(depth: *const CdDepthField, buf: *mut f64, len: usize) -> CdStatus {
    guard(|| copy_into(as_ref(depth, "depth")?.0.values(), buf, len))
}

/// Builds a correspondence set from `n` interleaved `(x, y)` pairs per side.
///
/// # Safety
/// `source_xy` and `target_xy` must each point to `2 * n` readable doubles;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cd_correspondences_new(
    source_xy: *const f64,
    target_xy: *const f64,
    n: usize,
    out: *mut *mut CdCorrespondences,
) -> CdStatus {
    guard(|| {
        let pts = |p, what| -> Result<Vec<Pixel2>, Fail> {
            Ok(slice(p, 2 * n, what)?
                .chunks_exact(2)
                .map(|c| Pixel2::new(c[0], c[1]))
                .collect())
        };
        let corr = CorrespondenceSet::new(pts(source_xy, "source_xy")?, pts(target_xy, "target_xy")?)?;
        write_out(out, boxed(CdCorrespondences(corr)), "out")
    })
}

/// # Safety
/// `corr` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cd_correspondences_free(corr: *mut CdCorrespondences) {
    if !corr.is_null() {
        drop(Box::from_raw(corr));
    }
}

/// Number of correspondences, or 0 for a null handle.
///
/// # Safety
/// `corr` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn cd_correspondences_len(corr: *const CdCorrespondences) -> usize {
    corr.as_ref().map_or(0, |c| c.0.len())
}

/// Parses a scene description (JSON, nul-terminated).
///
/// # Safety
/// `json` must be a valid C string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cd_scene_from_json(json: *const c_char, out: *mut *mut CdScene) -> CdStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| Fail::Status(CdStatus::Parse, format!("scene json is not UTF-8: {e}")))?;
        let scene = Scene::new(&SceneSpec::from_json(text)?)?;
        write_out(out, boxed(CdScene(scene)), "out")
    })
}

/// # Safety
/// `scene` must be null or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn cd_scene_free(scene: *mut CdScene) {
    if !scene.is_null() {
        drop(Box::from_raw(scene));
    }
}

/// Ground-truth depth of view `view`.
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cd_scene_render_depth(
    scene: *const CdScene,
    view: usize,
    out: *mut *mut CdDepthField,
) -> CdStatus {
    guard(|| {
        let depth = as_ref(scene, "scene")?.0.render_depth(view)?;
        write_out(out, boxed(CdDepthField(depth)), "out")
    })
}

/// Writes 1 for surface pixels of view `view` and 0 for background into
/// `buf`, which must hold `width * height` bytes.
///
/// # Safety
/// `scene` must be a live handle; `buf` must be writable for `len` bytes.
#[no_mangle]
pub unsafe extern "C" fn cd_scene_surface_mask(
    scene: *const CdScene,
    view: usize,
    buf: *mut u8,
    len: usize,
) -> CdStatus {
    guard(|| {
        let mask = as_ref(scene, "scene")?.0.surface_mask(view)?;
        if len < mask.bits.len() {
            return Err(Fail::Status(
                CdStatus::BufferTooSmall,
                format!("buffer holds {len} bytes, need {}", mask.bits.len()),
            ));
        }
        if buf.is_null() {
            return Err(null("buf"));
        }
        for (i, b) in mask.bits.iter().enumerate() {
            buf.add(i).write(u8::from(*b));
        }
        Ok(())
    })
}

/// Exact correspondences from view `source` to view `target`: `n_points`
/// seeded samples of the visible surface, or every visible pixel when
/// `n_points` is 0.
///
/// # Safety
/// `scene` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cd_scene_correspondences(
    scene: *const CdScene,
    source: usize,
    target: usize,
    n_points: usize,
    out: *mut *mut CdCorrespondences,
) -> CdStatus {
    guard(|| {
        let s = &as_ref(scene, "scene")?.0;
        let corr = if n_points == 0 {
            s.dense_correspondences(source, target)?
        } else {
            s.generate_correspondences(source, target, n_points)?
        };
        write_out(out, boxed(CdCorrespondences(corr)), "out")
    })
}

/// Robust correspondence loss under a RANSAC-fitted camera and its gradient
/// with respect to every depth value. `grad` may be null when `grad_len` is
/// 0; otherwise it must hold `width * height` doubles.
///
/// # Safety
/// Handles must be live, config pointers readable, `loss` writable and
/// `grad` writable for `grad_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn cd_loss_and_grad(
    corr: *const CdCorrespondences,
    depth: *const CdDepthField,
    ransac: *const CdRansacConfig,
    robust: *const CdRobustParams,
    loss: *mut f64,
    grad: *mut f64,
    grad_len: usize,
) -> CdStatus {
    guard(|| {
        let ransac = RansacConfig::from(as_ref(ransac, "ransac")?);
        let robust = RobustParams::from(as_ref(robust, "robust")?);
        robust.validate()?;
        let lg = loss_and_grad(&as_ref(corr, "corr")?.0, &as_ref(depth, "depth")?.0, &ransac, &robust)?;
        if grad_len > 0 || !grad.is_null() {
            copy_into(&lg.per_depth.values, grad, grad_len)?;
        }
        write_out(loss, lg.loss_value, "loss")
    })
}

/// Fits a `width x height` depth field to `n_pairs` correspondence sets,
/// weighting pair `i` by `weights[i]` (null weights mean 1 each).
///
/// A solver failure part-way through still returns `Ok` with
/// `stop_reason = Error` and the last good depth.
///
/// # Safety
/// `pairs` must point to `n_pairs` live handles, `weights` to `n_pairs`
/// doubles or be null, config pointers readable and outputs writable.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn cd_fit_depth(
    pairs: *const *const CdCorrespondences,
    weights: *const f64,
    n_pairs: usize,
    width: usize,
    height: usize,
    optim: *const CdOptimConfig,
    ransac: *const CdRansacConfig,
    robust: *const CdRobustParams,
    out_depth: *mut *mut CdDepthField,
    out_summary: *mut CdFitSummary,
) -> CdStatus {
    guard(|| {
        if out_depth.is_null() {
            return Err(null("out_depth"));
        }
        if out_summary.is_null() {
            return Err(null("out_summary"));
        }
        let handles = slice(pairs, n_pairs, "pairs")?;
        let weights = if weights.is_null() {
            vec![1.0; n_pairs]
        } else {
            slice(weights, n_pairs, "weights")?.to_vec()
        };
        let mut sets = Vec::with_capacity(n_pairs);
        for (h, w) in handles.iter().zip(weights) {
            sets.push((as_ref(*h, "pair handle")?.0.clone(), w));
        }
        let optim = OptimConfig::from(as_ref(optim, "optim")?);
        let ransac = RansacConfig::from(as_ref(ransac, "ransac")?);
        let robust = RobustParams::from(as_ref(robust, "robust")?);
        let (depth, report) = fit_depth(&sets, width, height, &optim, &ransac, &robust, None)?;
        let summary = CdFitSummary {
            final_loss: report.final_loss,
            iterations_run: report.iterations_run,
            stop_reason: match report.stop_reason {
                StopReason::Plateau => CdStopReason::Plateau,
                StopReason::MaxIters => CdStopReason::MaxIters,
                StopReason::Error => CdStopReason::Error,
            },
        };
        if let Some(msg) = report.error {
            set_error(msg);
        }
        out_summary.write(summary);
        out_depth.write(boxed(CdDepthField(depth)));
        Ok(())
    })
}

/// Aligns `pred` to `gt` (median-shifted least squares on the masked pixels)
/// and reports L1, RMSE, relative L1 and squared relative error.
/// `gt_values` and `mask` hold `width * height` entries in row-major order;
/// a nonzero mask byte selects the pixel.
///
/// # Safety
/// `pred` must be a live handle, the arrays readable for the field size and
/// `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cd_evaluate(
    pred: *const CdDepthField,
    gt_values: *const f64,
    mask: *const u8,
    out: *mut CdMetrics,
) -> CdStatus {
    guard(|| {
        let pred = &as_ref(pred, "pred")?.0;
        let (w, h) = (pred.width(), pred.height());
        let gt = ScalarGrid::new(w, h, slice(gt_values, w * h, "gt_values")?.to_vec())?;
        let mask = mask_from(slice(mask, w * h, "mask")?, w, h)?;
        let m = evaluate(pred.as_grid(), &gt, &mask)?;
        write_out(
            out,
            CdMetrics {
                l1: m.l1,
                rmse: m.rmse,
                rel_l1: m.rel_l1,
                sq_rel: m.sq_rel,
            },
            "out",
        )
    })
}
