//! C ABI over the hybrid-htf toolkit.
//!
//! Objects are opaque handles released with their `*_free` function. Every
//! fallible call returns an [`HhStatus`]; on failure a message is available
//! from [`hh_last_error_message`] on the calling thread.

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use hybrid_htf::config::RunConfig;
use hybrid_htf::fit::{self, FitContext};
use hybrid_htf::hss::{self, HarmonicTransferSet};
use hybrid_htf::model::{self, HybridModel, ModelParams, State};
use hybrid_htf::pipeline;
use hybrid_htf::sim::{self, LimitCycle};
use hybrid_htf::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HhStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Config = 3,
    EventLocalization = 4,
    Divergence = 5,
    NotSettled = 6,
    AmbiguousSwitching = 7,
    ResamplingRequired = 8,
    Aliasing = 9,
    SingularFrequency = 10,
    IllConditioned = 11,
    NoData = 12,
    Io = 13,
    Parse = 14,
    BufferTooSmall = 15,
    Panic = 16,
}

impl From<&Error> for HhStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::InvalidInput(_) => HhStatus::InvalidInput,
            Error::Config(_) => HhStatus::Config,
            Error::EventLocalization { .. } => HhStatus::EventLocalization,
            Error::Divergence { .. } => HhStatus::Divergence,
            Error::NotSettled { .. } => HhStatus::NotSettled,
            Error::AmbiguousSwitching { .. } => HhStatus::AmbiguousSwitching,
            Error::ResamplingRequired(_) => HhStatus::ResamplingRequired,
            Error::Aliasing { .. } => HhStatus::Aliasing,
            Error::SingularFrequency { .. } => HhStatus::SingularFrequency,
            Error::IllConditioned { .. } => HhStatus::IllConditioned,
            Error::NoData(_) => HhStatus::NoData,
            Error::Io { .. } => HhStatus::Io,
            Error::Parse { .. } => HhStatus::Parse,
        }
    }
}

/// Physical parameters, field for field as in the JSON configuration.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct HhModelParams {
    pub m: f64,
    pub k: f64,
    pub c: f64,
    pub g: f64,
    pub x0: f64,
    pub forcing_amplitude: f64,
    pub forcing_freq: f64,
}

impl From<HhModelParams> for ModelParams {
    fn from(p: HhModelParams) -> Self {
        ModelParams {
            m: p.m,
            k: p.k,
            c: p.c,
            g: p.g,
            x0: p.x0,
            forcing_amplitude: p.forcing_amplitude,
            forcing_freq: p.forcing_freq,
        }
    }
}

impl From<ModelParams> for HhModelParams {
    fn from(p: ModelParams) -> Self {
        HhModelParams {
            m: p.m,
            k: p.k,
            c: p.c,
            g: p.g,
            x0: p.x0,
            forcing_amplitude: p.forcing_amplitude,
            forcing_freq: p.forcing_freq,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HhCycleSummary {
    pub period: f64,
    /// Clock phase at which the damper engages (s).
    pub t_hat: f64,
    pub t_off: f64,
    pub duty: f64,
    pub residual_x: f64,
    pub residual_xdot: f64,
    pub samples: usize,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct HhFitResult {
    pub k_hat: f64,
    pub c_hat: f64,
    pub objective: f64,
    pub iterations: usize,
    pub converged: bool,
}

impl From<&fit::FitResult> for HhFitResult {
    fn from(r: &fit::FitResult) -> Self {
        HhFitResult {
            k_hat: r.k_hat,
            c_hat: r.c_hat,
            objective: r.objective,
            iterations: r.iterations,
            converged: r.converged,
        }
    }
}

/// Opaque hybrid oscillator.
pub struct HhModel(HybridModel);
/// Opaque settled limit cycle.
pub struct HhLimitCycle(LimitCycle);
/// Opaque set of harmonic transfer functions.
pub struct HhHtfSet(HarmonicTransferSet);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

struct Fail(HhStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(HhStatus::from(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(HhStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Fail>) -> HhStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            HhStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_last_error(&msg);
            status
        }
        Err(_) => {
            set_last_error("internal panic");
            HhStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    // SAFETY: caller guarantees `p` is null or valid for reads.
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, needed: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    if len < needed {
        return Err(Fail(
            HhStatus::BufferTooSmall,
            format!("{what} holds {len} values, {needed} needed"),
        ));
    }
    // SAFETY: caller guarantees `p` is valid for `len` writes.
    Ok(unsafe { std::slice::from_raw_parts_mut(p, needed) })
}

fn boxed<T>(value: T) -> *mut T {
    Box::into_raw(Box::new(value))
}

/// Message describing the last failure on this thread; empty after a
/// successful call. Valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn hh_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Writes the reference parameters (m=1, k=200, c=2, g=9.81, x0=0.2, unit
/// forcing at 1 Hz) to `out`.
///
/// # Safety
/// `out` must be null or valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hh_default_params(out: *mut HhModelParams) -> HhStatus {
    guard(|| {
        // SAFETY: checked for null; caller guarantees validity.
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = ModelParams::default().into();
        Ok(())
    })
}

/// # Safety
/// `params` must be valid for reads and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hh_model_new(params: *const HhModelParams, out: *mut *mut HhModel) -> HhStatus {
    guard(|| {
        let params = unsafe { deref(params, "params") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let model = HybridModel::new((*params).into())?;
        // SAFETY: `out` checked for null above.
        unsafe { *out = boxed(HhModel(model)) };
        Ok(())
    })
}

/// # Safety
/// `model` must be null or a handle from [`hh_model_new`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hh_model_free(model: *mut HhModel) {
    if !model.is_null() {
        // SAFETY: handle created by Box::into_raw in hh_model_new.
        drop(unsafe { Box::from_raw(model) });
    }
}

/// State derivative `(xdot, xddot)` at `(x, xdot)`, time `t` and input `u`.
///
/// # Safety
/// `model` must be a live handle; `out` must hold 2 writable doubles.
#[no_mangle]
pub unsafe extern "C" fn hh_model_eval_chart(
    model: *const HhModel,
    x: f64,
    xdot: f64,
    t: f64,
    u: f64,
    out: *mut f64,
) -> HhStatus {
    guard(|| {
        let model = unsafe { deref(model, "model") }?;
        let out = unsafe { out_slice(out, 2, 2, "out") }?;
        let d = model.0.eval_chart(&State::new(x, xdot), t, u)?;
        out.copy_from_slice(d.as_slice());
        Ok(())
    })
}

/// Integrates `n_cycles` unperturbed periods and returns the last one.
///
/// # Safety
/// `model` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hh_cycle_settle(
    model: *const HhModel,
    n_cycles: usize,
    dt: f64,
    tolerance: f64,
    out: *mut *mut HhLimitCycle,
) -> HhStatus {
    guard(|| {
        let model = unsafe { deref(model, "model") }?;
        if out.is_null() {
            return Err(null("out"));
        }
        let cycle = sim::settle_limit_cycle(&model.0, n_cycles, dt, tolerance)?;
        // SAFETY: `out` checked for null above.
        unsafe { *out = boxed(HhLimitCycle(cycle)) };
        Ok(())
    })
}

/// # Safety
/// `cycle` must be null or a handle from [`hh_cycle_settle`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hh_cycle_free(cycle: *mut HhLimitCycle) {
    if !cycle.is_null() {
        // SAFETY: handle created by Box::into_raw in hh_cycle_settle.
        drop(unsafe { Box::from_raw(cycle) });
    }
}

/// # Safety
/// `cycle` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hh_cycle_summary(cycle: *const HhLimitCycle, out: *mut HhCycleSummary) -> HhStatus {
    guard(|| {
        let c = &unsafe { deref(cycle, "cycle") }?.0;
        // SAFETY: checked for null; caller guarantees validity.
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        *out = HhCycleSummary {
            period: c.period,
            t_hat: c.t_hat,
            t_off: c.t_off,
            duty: c.duty,
            residual_x: c.residual[0],
            residual_xdot: c.residual[1],
            samples: c.samples.len(),
        };
        Ok(())
    })
}

/// Copies the orbit samples into `x` and `xdot`, each of capacity `len`.
///
/// # Safety
/// `cycle` must be a live handle; `x` and `xdot` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hh_cycle_samples(
    cycle: *const HhLimitCycle,
    x: *mut f64,
    xdot: *mut f64,
    len: usize,
) -> HhStatus {
    guard(|| {
        let c = &unsafe { deref(cycle, "cycle") }?.0;
        let n = c.samples.len();
        let xs = unsafe { out_slice(x, len, n, "x") }?;
        let vs = unsafe { out_slice(xdot, len, n, "xdot") }?;
        for (i, s) in c.samples.iter().enumerate() {
            xs[i] = s[0];
            vs[i] = s[1];
        }
        Ok(())
    })
}

/// Theoretical HTFs of the linearization about `cycle`, truncated at order
/// `n_h`, for harmonics `|n| <= n_keep` on `omega[0..len]` (rad/s).
///
/// # Safety
/// Handles must be live, `omega` must hold `len` doubles and `out` be valid
/// for writes.
#[no_mangle]
pub unsafe extern "C" fn hh_htf_theory(
    model: *const HhModel,
    cycle: *const HhLimitCycle,
    n_h: usize,
    n_keep: usize,
    omega: *const f64,
    len: usize,
    out: *mut *mut HhHtfSet,
) -> HhStatus {
    guard(|| {
        let model = unsafe { deref(model, "model") }?;
        let cycle = unsafe { deref(cycle, "cycle") }?;
        if omega.is_null() {
            return Err(null("omega"));
        }
        if out.is_null() {
            return Err(null("out"));
        }
        // SAFETY: caller guarantees `omega` holds `len` doubles.
        let grid = unsafe { std::slice::from_raw_parts(omega, len) };
        let lin = model::linearize(&model.0, &cycle.0)?;
        let set = hss::theoretical_htf(&lin, n_h, grid, n_keep)?;
        // SAFETY: `out` checked for null above.
        unsafe { *out = boxed(HhHtfSet(set)) };
        Ok(())
    })
}

/// Runs the reference identification experiment (nine 30 s chirps of
/// amplitude 0.004 over (0, 7] Hz, three harmonics) with curvature weight
/// `alpha`, returning the estimated HTFs and the parameter fit.
///
/// # Safety
/// `params` must be valid for reads; `out_set` and `out_fit` for writes.
#[no_mangle]
pub unsafe extern "C" fn hh_identify(
    params: *const HhModelParams,
    alpha: f64,
    out_set: *mut *mut HhHtfSet,
    out_fit: *mut HhFitResult,
) -> HhStatus {
    guard(|| {
        let params = unsafe { deref(params, "params") }?;
        if out_set.is_null() || out_fit.is_null() {
            return Err(null("output pointer"));
        }
        let mut cfg = RunConfig {
            model: (*params).into(),
            ..RunConfig::default()
        };
        cfg.estimate.alpha = alpha;
        cfg.validate()?;
        let id = pipeline::identify(&cfg)?;
        // SAFETY: both pointers checked for null above.
        unsafe {
            *out_fit = HhFitResult::from(&id.fit);
            *out_set = boxed(HhHtfSet(id.estimate.htf));
        }
        Ok(())
    })
}

/// Fits `(k, c)` to harmonics -1, 0, 1 of `target` with the switching
/// geometry of `cycle` held fixed.
///
/// # Safety
/// Handles must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn hh_fit(
    target: *const HhHtfSet,
    model: *const HhModel,
    cycle: *const HhLimitCycle,
    n_h: usize,
    init_k: f64,
    init_c: f64,
    max_iterations: usize,
    out: *mut HhFitResult,
) -> HhStatus {
    guard(|| {
        let target = unsafe { deref(target, "target") }?;
        let model = unsafe { deref(model, "model") }?;
        let cycle = unsafe { deref(cycle, "cycle") }?;
        // SAFETY: checked for null; caller guarantees validity.
        let out = unsafe { out.as_mut() }.ok_or_else(|| null("out"))?;
        let lin = model::linearize(&model.0, &cycle.0)?;
        let ctx = FitContext::from_linearization(&lin, model.0.params.m, n_h);
        let r = fit::fit_parameters(&target.0, (init_k, init_c), &ctx, max_iterations)?;
        *out = HhFitResult::from(&r);
        Ok(())
    })
}

/// Number of grid points in `set` (0 for a null handle).
///
/// # Safety
/// `set` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn hh_htf_len(set: *const HhHtfSet) -> usize {
    // SAFETY: caller guarantees `set` is null or live.
    unsafe { set.as_ref() }.map_or(0, |s| s.0.omega_grid.len())
}

/// Copies the frequency grid (rad/s).
///
/// # Safety
/// `set` must be a live handle and `omega` hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hh_htf_grid(set: *const HhHtfSet, omega: *mut f64, len: usize) -> HhStatus {
    guard(|| {
        let s = &unsafe { deref(set, "set") }?.0;
        let out = unsafe { out_slice(omega, len, s.omega_grid.len(), "omega") }?;
        out.copy_from_slice(&s.omega_grid);
        Ok(())
    })
}

/// Copies `G_n` into `re` and `im`. Fails with `InvalidInput` when the set
/// lacks harmonic `n`.
///
/// # Safety
/// `set` must be a live handle; `re` and `im` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn hh_htf_harmonic(
    set: *const HhHtfSet,
    n: i32,
    re: *mut f64,
    im: *mut f64,
    len: usize,
) -> HhStatus {
    guard(|| {
        let s = &unsafe { deref(set, "set") }?.0;
        let values = s
            .get(n)
            .ok_or_else(|| Fail(HhStatus::InvalidInput, format!("harmonic {n} not present")))?;
        let re = unsafe { out_slice(re, len, values.len(), "re") }?;
        let im = unsafe { out_slice(im, len, values.len(), "im") }?;
        for (i, z) in values.iter().enumerate() {
            re[i] = z.re;
            im[i] = z.im;
        }
        Ok(())
    })
}

/// # Safety
/// `set` must be null or a handle returned by this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hh_htf_free(set: *mut HhHtfSet) {
    if !set.is_null() {
        // SAFETY: handle created by Box::into_raw in this crate.
        drop(unsafe { Box::from_raw(set) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::ptr;

    #[test]
    fn null_out_pointer_reported() {
        let params = HhModelParams::from(ModelParams::default());
        let status = unsafe { hh_model_new(&params, ptr::null_mut()) };
        assert_eq!(status, HhStatus::NullPointer);
        let msg = unsafe { std::ffi::CStr::from_ptr(hh_last_error_message()) };
        assert!(msg.to_str().unwrap().contains("out"));
    }

    #[test]
    fn invalid_params_map_to_status() {
        let mut params = HhModelParams::from(ModelParams::default());
        params.m = -1.0;
        let mut handle = ptr::null_mut();
        assert_eq!(unsafe { hh_model_new(&params, &mut handle) }, HhStatus::InvalidInput);
        assert!(handle.is_null());
    }
}
