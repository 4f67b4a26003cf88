//! C ABI for the optocool toolkit.
//!
//! Objects are opaque handles created by `*_new`/`*_from_*` functions and
//! released with the matching `*_free`. Every fallible call returns an
//! [`OcStatus`]; on failure a message is available from
//! [`oc_last_error_message`] on the same thread. Frequencies cross the
//! boundary in Hz, rates in s⁻¹.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use optocool::config::Config;
use optocool::feedback::{
    at_cooling_phase, closed_loop_model, default_gains, nbar_est, optimal_gain,
};
use optocool::inference::optim::Options;
use optocool::inference::{
    fit_heating, fit_lorentzian, fit_ringdown, synth_periodogram, FitOptions, FitResult, PsdData,
};
use optocool::params::{reference, DriveRole, OpticalDrive, SystemParams};
use optocool::response::FeedbackController;
use optocool::sideband::nbar_min;
use optocool::spectra::{noise_budget, LoopModel, Spectrum, SpectrumUnit};
use optocool::units::{hz_to_rad, rad_to_hz};
use optocool::Error;

/// Result codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Unstable = 4,
    Numerical = 5,
    NonConvergence = 6,
    Data = 7,
    Io = 8,
    Panic = 9,
    OutOfRange = 10,
}

impl From<&Error> for OcStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Parameter { .. } | Error::Domain(_) => OcStatus::InvalidArgument,
            Error::Config(_) => OcStatus::Config,
            Error::Unstable(_) => OcStatus::Unstable,
            Error::Numerical(_) => OcStatus::Numerical,
            Error::NonConvergence { .. } => OcStatus::NonConvergence,
            Error::Data(_) => OcStatus::Data,
            Error::Io(_) | Error::Json(_) => OcStatus::Io,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Failure carried out of a guarded body.
struct Fail(OcStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(OcStatus::from(&e), e.to_string())
    }
}

type FfiResult<T> = std::result::Result<T, Fail>;

fn null(name: &str) -> Fail {
    Fail(OcStatus::NullPointer, format!("`{name}` is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(OcStatus::InvalidArgument, msg.into())
}

/// Run `f`, translating errors and panics into a status and the last-error message.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> OcStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => OcStatus::Ok,
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("internal panic: {msg}"));
            OcStatus::Panic
        }
    }
}

unsafe fn out_ref<'a, T>(p: *mut T, name: &str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or_else(|| null(name))
}

unsafe fn in_ref<'a, T>(p: *const T, name: &str) -> FfiResult<&'a T> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn in_slice<'a>(p: *const f64, len: usize, name: &str) -> FfiResult<&'a [f64]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts(p, len))
}

unsafe fn out_slice<'a>(p: *mut f64, len: usize, name: &str) -> FfiResult<&'a mut [f64]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(slice::from_raw_parts_mut(p, len))
}

unsafe fn in_str<'a>(p: *const c_char, name: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return Err(null(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid(format!("`{name}` is not UTF-8")))
}

fn boxed<T>(value: T, out: &mut *mut T) {
    *out = Box::into_raw(Box::new(value));
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn oc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn oc_status_name(status: OcStatus) -> *const c_char {
    let s: &'static CStr = match status {
        OcStatus::Ok => c"ok",
        OcStatus::NullPointer => c"null pointer",
        OcStatus::InvalidArgument => c"invalid argument",
        OcStatus::Config => c"configuration error",
        OcStatus::Unstable => c"closed loop unstable",
        OcStatus::Numerical => c"numerical failure",
        OcStatus::NonConvergence => c"fit did not converge",
        OcStatus::Data => c"data error",
        OcStatus::Io => c"i/o error",
        OcStatus::Panic => c"internal panic",
        OcStatus::OutOfRange => c"index out of range",
    };
    s.as_ptr()
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn oc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Release a string returned by this library.
///
/// # Safety
/// `s` must be NULL or a pointer returned by a function documented as
/// returning an owned string, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oc_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Device, measurement and controller.
pub struct OcSystem {
    params: SystemParams,
    controller: FeedbackController,
}

/// Noise budget in SI units and quanta.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OcNoiseBudget {
    pub s_ff_th: f64,
    pub s_ff_aux: f64,
    pub s_ff_qba: f64,
    pub s_ff_tot: f64,
    pub s_xx_imp: f64,
    pub n_imp: f64,
    pub n_tot: f64,
    pub eta: f64,
    pub heisenberg_product: f64,
    pub c_q: f64,
}

/// Loop operating point.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct OcOperatingPoint {
    pub gain: f64,
    pub phase_rad: f64,
    pub nbar: f64,
    pub nbar_error_bound: f64,
    pub gamma_eff_hz: f64,
}

/// Parse a TOML configuration.
///
/// # Safety
/// `toml` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oc_system_from_toml(
    toml: *const c_char,
    out: *mut *mut OcSystem,
) -> OcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let config = Config::from_toml_str(in_str(toml, "toml")?)?;
        let params = config.system_params()?;
        let controller = config.controller(&params)?;
        boxed(OcSystem { params, controller }, out);
        Ok(())
    })
}

/// Reference device at quantum cooperativity `c_q` with the reference filter
/// at the cooling phase and zero gain.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oc_system_reference(c_q: f64, out: *mut *mut OcSystem) -> OcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let params = reference::feedback_system(c_q)?;
        let controller = at_cooling_phase(&params, &reference::controller());
        boxed(OcSystem { params, controller }, out);
        Ok(())
    })
}

/// # Safety
/// `system` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oc_system_free(system: *mut OcSystem) {
    if !system.is_null() {
        drop(Box::from_raw(system));
    }
}

/// # Safety
/// `system` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn oc_system_noise_budget(
    system: *const OcSystem,
    out: *mut OcNoiseBudget,
) -> OcStatus {
    guard(|| {
        let s = in_ref(system, "system")?;
        let b = noise_budget(&s.params);
        *out_ref(out, "out")? = OcNoiseBudget {
            s_ff_th: b.s_ff_th,
            s_ff_aux: b.s_ff_aux,
            s_ff_qba: b.s_ff_qba,
            s_ff_tot: b.s_ff_tot,
            s_xx_imp: b.s_xx_imp,
            n_imp: b.n_imp,
            n_tot: b.n_tot,
            eta: b.eta,
            heisenberg_product: b.heisenberg_product,
            c_q: s.params.rates().c_q,
        };
        Ok(())
    })
}

/// Set the controller gain (kg·s⁻², i.e. N/m).
///
/// # Safety
/// `system` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn oc_system_set_gain(system: *mut OcSystem, gain: f64) -> OcStatus {
    guard(|| {
        let s = out_ref(system, "system")?;
        if !gain.is_finite() {
            return Err(invalid("gain must be finite"));
        }
        s.controller = s.controller.with_gain(gain);
        Ok(())
    })
}

/// Set the controller phase in radians.
///
/// # Safety
/// `system` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn oc_system_set_phase(system: *mut OcSystem, phase_rad: f64) -> OcStatus {
    guard(|| {
        let s = out_ref(system, "system")?;
        if !phase_rad.is_finite() {
            return Err(invalid("phase must be finite"));
        }
        s.controller = s.controller.with_phase(phase_rad);
        Ok(())
    })
}

/// Set the controller phase to the cooling phase and report it.
///
/// # Safety
/// `system` must be a live handle; `phase_rad` NULL or writable.
#[no_mangle]
pub unsafe extern "C" fn oc_system_use_cooling_phase(
    system: *mut OcSystem,
    phase_rad: *mut f64,
) -> OcStatus {
    guard(|| {
        let s = out_ref(system, "system")?;
        s.controller = at_cooling_phase(&s.params, &s.controller);
        if let Some(p) = phase_rad.as_mut() {
            *p = s.controller.phase;
        }
        Ok(())
    })
}

fn operating_point(s: &OcSystem) -> FfiResult<(LoopModel, OcOperatingPoint)> {
    let model = closed_loop_model(&s.params, &s.controller)?;
    let occ = model.occupancy();
    let point = OcOperatingPoint {
        gain: s.controller.gain,
        phase_rad: s.controller.phase,
        nbar: occ.nbar,
        nbar_error_bound: occ.error_bound,
        gamma_eff_hz: rad_to_hz(model.gamma_eff()),
    };
    Ok((model, point))
}

/// Occupancy at the current gain and phase. Fails with
/// `OC_STATUS_UNSTABLE` when the loop is unstable.
///
/// # Safety
/// `system` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn oc_system_operating_point(
    system: *const OcSystem,
    out: *mut OcOperatingPoint,
) -> OcStatus {
    guard(|| {
        let s = in_ref(system, "system")?;
        let out = out_ref(out, "out")?;
        *out = operating_point(s)?.1;
        Ok(())
    })
}

/// Search `gain_points` log-spaced gains at the current phase, refine the
/// minimum-occupancy gain, store it in the handle and report it.
///
/// # Safety
/// `system` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn oc_system_optimize_gain(
    system: *mut OcSystem,
    gain_points: usize,
    out: *mut OcOperatingPoint,
) -> OcStatus {
    guard(|| {
        let s = out_ref(system, "system")?;
        let out = out_ref(out, "out")?;
        if gain_points < 3 {
            return Err(invalid("need at least 3 gain points"));
        }
        let gains = default_gains(&s.params, &s.controller, gain_points);
        let opt = optimal_gain(&s.params, &s.controller, &gains)?;
        s.controller = s.controller.with_gain(opt.gain);
        *out = OcOperatingPoint {
            gain: opt.gain,
            phase_rad: s.controller.phase,
            nbar: opt.nbar,
            nbar_error_bound: opt.error_bound,
            gamma_eff_hz: rad_to_hz(opt.gamma_eff),
        };
        Ok(())
    })
}

/// Which spectrum [`oc_system_spectrum`] evaluates.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OcSpectrumKind {
    /// Open-loop measured displacement.
    OpenMeasured = 0,
    /// In-loop position.
    InLoopPosition = 1,
    /// In-loop measured displacement.
    InLoopMeasured = 2,
}

/// Evaluate a PSD (m²/Hz) at `len` frequencies in Hz.
///
/// # Safety
/// `system` must be a live handle; `frequencies_hz` and `out` must hold
/// `len` values.
#[no_mangle]
pub unsafe extern "C" fn oc_system_spectrum(
    system: *const OcSystem,
    kind: OcSpectrumKind,
    frequencies_hz: *const f64,
    len: usize,
    out: *mut f64,
) -> OcStatus {
    guard(|| {
        let s = in_ref(system, "system")?;
        let f = in_slice(frequencies_hz, len, "frequencies_hz")?;
        let out = out_slice(out, len, "out")?;
        let model = match kind {
            OcSpectrumKind::OpenMeasured => LoopModel::open(&s.params)?,
            _ => closed_loop_model(&s.params, &s.controller)?,
        };
        for (o, &hz) in out.iter_mut().zip(f) {
            let w = hz_to_rad(hz);
            *o = match kind {
                OcSpectrumKind::InLoopPosition => model.sxx(w),
                _ => model.syy(w),
            };
        }
        Ok(())
    })
}

/// Occupancy `½(√((C_q+1)/(η_det C_q)) − 1)` reachable by optimal estimation.
/// Pass `INFINITY` for the large-cooperativity limit.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oc_nbar_est(eta_det: f64, c_q: f64, out: *mut f64) -> OcStatus {
    guard(|| {
        *out_ref(out, "out")? = nbar_est(eta_det, c_q)?;
        Ok(())
    })
}

/// Sideband-cooling floor of a red-detuned beam.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn oc_sideband_nbar_min(
    kappa_hz: f64,
    detuning_hz: f64,
    mechanical_frequency_hz: f64,
    out: *mut f64,
) -> OcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        let drive = OpticalDrive::new(
            hz_to_rad(kappa_hz),
            hz_to_rad(detuning_hz),
            hz_to_rad(1.0),
            0.0,
            1.0,
            DriveRole::Auxiliary,
        )?;
        *out = nbar_min(&drive, hz_to_rad(mechanical_frequency_hz))?;
        Ok(())
    })
}

/// Multiply each expected PSD value by a `Gamma(N, 1/N)` variate drawn from
/// the seeded stream. `out` may alias `expected`.
///
/// # Safety
/// `expected` and `out` must hold `len` values.
#[no_mangle]
pub unsafe extern "C" fn oc_synth_periodogram(
    expected: *const f64,
    len: usize,
    averages: u32,
    seed: u64,
    out: *mut f64,
) -> OcStatus {
    guard(|| {
        let values = in_slice(expected, len, "expected")?.to_vec();
        let grid: Vec<f64> = (1..=len).map(|k| k as f64).collect();
        let spectrum = Spectrum::new(grid, values, SpectrumUnit::Displacement)?;
        let realized = synth_periodogram(&spectrum, averages, seed)?.realized;
        out_slice(out, len, "out")?.copy_from_slice(&realized);
        Ok(())
    })
}

/// A completed fit.
pub struct OcFit {
    result: FitResult,
    names: Vec<CString>,
}

impl OcFit {
    fn new(result: FitResult) -> Self {
        let names = result
            .names
            .iter()
            .map(|n| CString::new(n.as_str()).expect("parameter names have no NUL"))
            .collect();
        OcFit { result, names }
    }
}

fn store_fit(result: FitResult, out: &mut *mut OcFit) {
    boxed(OcFit::new(result), out);
}

/// Fit the open-loop Lorentzian to an averaged periodogram.
///
/// # Safety
/// `system` must be a live handle; the arrays must hold `len` values; `out`
/// writable. The fit is released with [`oc_fit_free`].
#[no_mangle]
pub unsafe extern "C" fn oc_fit_lorentzian(
    system: *const OcSystem,
    frequencies_hz: *const f64,
    psd: *const f64,
    len: usize,
    averages: f64,
    out: *mut *mut OcFit,
) -> OcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let s = in_ref(system, "system")?;
        let data = PsdData {
            grid_hz: in_slice(frequencies_hz, len, "frequencies_hz")?.to_vec(),
            values: in_slice(psd, len, "psd")?.to_vec(),
            averages,
        };
        store_fit(
            fit_lorentzian(&data, &s.params.mode, None, &FitOptions::default())?,
            out,
        );
        Ok(())
    })
}

/// Fit the heating transient `n̄(t)` after the loop is opened at `t = 0`.
///
/// # Safety
/// The arrays must hold `len` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_heating(
    times_s: *const f64,
    nbar: *const f64,
    len: usize,
    out: *mut *mut OcFit,
) -> OcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let t = in_slice(times_s, len, "times_s")?;
        let y = in_slice(nbar, len, "nbar")?;
        store_fit(fit_heating(t, y, None, &Options::default())?, out);
        Ok(())
    })
}

/// Fit an exponential amplitude ringdown of a mode at `mechanical_frequency_hz`.
///
/// # Safety
/// The arrays must hold `len` values; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_ringdown(
    times_s: *const f64,
    amplitudes: *const f64,
    len: usize,
    mechanical_frequency_hz: f64,
    out: *mut *mut OcFit,
) -> OcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let t = in_slice(times_s, len, "times_s")?;
        let a = in_slice(amplitudes, len, "amplitudes")?;
        store_fit(fit_ringdown(t, a, hz_to_rad(mechanical_frequency_hz))?, out);
        Ok(())
    })
}

/// # Safety
/// `fit` must be NULL or a handle from this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_free(fit: *mut OcFit) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}

/// Number of fitted parameters, or 0 for a NULL handle.
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_parameter_count(fit: *const OcFit) -> usize {
    fit.as_ref().map_or(0, |f| f.result.names.len())
}

/// Name of parameter `index`, owned by the fit; NULL when out of range.
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_parameter_name(fit: *const OcFit, index: usize) -> *const c_char {
    fit.as_ref()
        .and_then(|f| f.names.get(index))
        .map_or(ptr::null(), |n| n.as_ptr())
}

/// Estimate and standard error of parameter `index`.
///
/// # Safety
/// `fit` must be a live handle; `estimate` and `std_error` writable.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_parameter(
    fit: *const OcFit,
    index: usize,
    estimate: *mut f64,
    std_error: *mut f64,
) -> OcStatus {
    guard(|| {
        let f = in_ref(fit, "fit")?;
        let (est, se) = (
            out_ref(estimate, "estimate")?,
            out_ref(std_error, "std_error")?,
        );
        if index >= f.result.names.len() {
            return Err(Fail(
                OcStatus::OutOfRange,
                format!("parameter {index} of {}", f.result.names.len()),
            ));
        }
        *est = f.result.estimates[index];
        *se = f.result.std_errors[index];
        Ok(())
    })
}

/// Whether the optimizer converged.
///
/// # Safety
/// `fit` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_converged(fit: *const OcFit) -> bool {
    fit.as_ref().is_some_and(|f| f.result.converged)
}

/// Full report as JSON. The string is owned by the caller and released
/// with [`oc_string_free`].
///
/// # Safety
/// `fit` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn oc_fit_to_json(fit: *const OcFit, out: *mut *mut c_char) -> OcStatus {
    guard(|| {
        let out = out_ref(out, "out")?;
        *out = ptr::null_mut();
        let f = in_ref(fit, "fit")?;
        let text = serde_json::to_string(&f.result).map_err(Error::from)?;
        *out = CString::new(text)
            .map_err(|e| invalid(e.to_string()))?
            .into_raw();
        Ok(())
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn status_names_are_static() {
        for s in [OcStatus::Ok, OcStatus::Unstable, OcStatus::OutOfRange] {
            let name = unsafe { CStr::from_ptr(oc_status_name(s)) };
            assert!(!name.to_bytes().is_empty());
        }
    }

    #[test]
    fn error_mapping() {
        assert_eq!(OcStatus::from(&Error::Config(vec![])), OcStatus::Config);
        assert_eq!(
            OcStatus::from(&Error::Unstable(String::new())),
            OcStatus::Unstable
        );
        assert_eq!(
            OcStatus::from(&Error::Domain(String::new())),
            OcStatus::InvalidArgument
        );
    }

    #[test]
    fn panics_become_status() {
        let status = guard(|| panic!("boom"));
        assert_eq!(status, OcStatus::Panic);
        let msg = unsafe { CStr::from_ptr(oc_last_error_message()) }
            .to_str()
            .unwrap();
        assert!(msg.contains("boom"));
        assert_eq!(guard(|| Ok(())), OcStatus::Ok);
        assert!(oc_last_error_message().is_null());
    }
}
