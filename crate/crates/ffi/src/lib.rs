//! C ABI for the thyrosim simulator.
//!
//! Scenarios and phantoms cross the boundary as opaque handles, released with
//! the matching `*_free`. Every fallible call returns a [`ThyrosimStatus`];
//! on failure, [`thyrosim_last_error`] returns a message for the calling
//! thread. Panics are caught and reported as `THYROSIM_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use thyrosim::analysis::{
    ellipsoid_volume, marinelli_activity, run_conventional_baseline, run_robotic_volumetry, AxisMeasurements,
    DoseParams,
};
use thyrosim::phantom::{build_phantom, PhantomModel};
use thyrosim::scenario::Scenario;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ThyrosimStatus {
    Ok = 0,
    NullPointer = 1,
    /// Bad input: malformed JSON, failed validation, non-positive values.
    Invalid = 2,
    /// A scan or reconstruction failed.
    Runtime = 3,
    Panic = 4,
}

/// Parsed and validated scenario.
pub struct ThyrosimScenario {
    inner: Scenario,
}

/// Voxelized phantom.
pub struct ThyrosimPhantom {
    inner: PhantomModel,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn guard(f: impl FnOnce() -> Result<(), ThyrosimStatus>) -> ThyrosimStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => ThyrosimStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic".into());
            ThyrosimStatus::Panic
        }
    }
}

fn fail(e: thyrosim::Error) -> ThyrosimStatus {
    let status = if e.is_validation() {
        ThyrosimStatus::Invalid
    } else {
        ThyrosimStatus::Runtime
    };
    set_error(e.to_string());
    status
}

fn null(what: &str) -> ThyrosimStatus {
    set_error(format!("{what} is null"));
    ThyrosimStatus::NullPointer
}

unsafe fn write_out<T>(out: *mut T, value: T) -> Result<(), ThyrosimStatus> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    out.write(value);
    Ok(())
}

/// Message of the last failed call on this thread; empty if none. The
/// pointer stays valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn thyrosim_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version, static NUL-terminated string.
#[no_mangle]
pub extern "C" fn thyrosim_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Default scenario: default phantom, probe centered over each lobe.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn thyrosim_scenario_default(out: *mut *mut ThyrosimScenario) -> ThyrosimStatus {
    guard(|| {
        let handle = Box::new(ThyrosimScenario {
            inner: Scenario::default(),
        });
        write_out(out, Box::into_raw(handle))
    })
}

/// Parses a scenario from NUL-terminated UTF-8 JSON.
///
/// # Safety
/// `json` must be a valid C string; `out` as for `thyrosim_scenario_default`.
#[no_mangle]
pub unsafe extern "C" fn thyrosim_scenario_from_json(
    json: *const c_char,
    out: *mut *mut ThyrosimScenario,
) -> ThyrosimStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json).to_str().map_err(|e| {
            set_error(format!("json is not UTF-8: {e}"));
            ThyrosimStatus::Invalid
        })?;
        let inner = Scenario::from_json(text).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(ThyrosimScenario { inner })))
    })
}

/// # Safety
/// `scenario` must come from a scenario constructor and not be used again.
#[no_mangle]
pub unsafe extern "C" fn thyrosim_scenario_free(scenario: *mut ThyrosimScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// Voxelizes the scenario's phantom.
///
/// # Safety
/// `scenario` must be a live handle; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thyrosim_phantom_build(
    scenario: *const ThyrosimScenario,
    out: *mut *mut ThyrosimPhantom,
) -> ThyrosimStatus {
    guard(|| {
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        let inner = build_phantom(s.inner.phantom.clone()).map_err(fail)?;
        write_out(out, Box::into_raw(Box::new(ThyrosimPhantom { inner })))
    })
}

/// # Safety
/// `phantom` must come from `thyrosim_phantom_build` and not be used again.
#[no_mangle]
pub unsafe extern "C" fn thyrosim_phantom_free(phantom: *mut ThyrosimPhantom) {
    if !phantom.is_null() {
        drop(Box::from_raw(phantom));
    }
}

/// Ground-truth thyroid volume of the voxelized phantom, ml.
///
/// # Safety
/// `phantom` must be a live handle; `out_ml` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thyrosim_phantom_ground_truth_ml(
    phantom: *const ThyrosimPhantom,
    out_ml: *mut f64,
) -> ThyrosimStatus {
    guard(|| {
        let p = phantom.as_ref().ok_or_else(|| null("phantom"))?;
        write_out(out_ml, p.inner.ground_truth_volume())
    })
}

/// Scans both lobes from the scenario's initial poses and returns the
/// compounded thyroid volume, ml.
///
/// # Safety
/// Handles must be live; `out_ml` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thyrosim_robotic_volume_ml(
    phantom: *const ThyrosimPhantom,
    scenario: *const ThyrosimScenario,
    seed: u64,
    out_ml: *mut f64,
) -> ThyrosimStatus {
    guard(|| {
        let p = phantom.as_ref().ok_or_else(|| null("phantom"))?;
        let s = scenario.as_ref().ok_or_else(|| null("scenario"))?;
        let poses = s
            .inner
            .initial_poses()
            .to_poses(p.inner.surface())
            .map_err(fail)?;
        let run = run_robotic_volumetry(&p.inner, &s.inner.pipeline(), &poses, seed).map_err(fail)?;
        write_out(out_ml, run.volume_ml)
    })
}

/// Ellipsoid-formula volume from perfect per-lobe axis measurements, ml.
///
/// # Safety
/// `phantom` must be a live handle; `out_ml` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thyrosim_conventional_volume_ml(
    phantom: *const ThyrosimPhantom,
    coefficient: f64,
    out_ml: *mut f64,
) -> ThyrosimStatus {
    guard(|| {
        let p = phantom.as_ref().ok_or_else(|| null("phantom"))?;
        let r = run_conventional_baseline(&p.inner, coefficient).map_err(fail)?;
        write_out(out_ml, r.volume_ml)
    })
}

/// `c * m1 * m2 * m3` with axes in cm, ml.
///
/// # Safety
/// `out_ml` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thyrosim_ellipsoid_volume_ml(
    m1_cm: f64,
    m2_cm: f64,
    m3_cm: f64,
    coefficient: f64,
    out_ml: *mut f64,
) -> ThyrosimStatus {
    guard(|| {
        let meas = AxisMeasurements {
            m1: m1_cm,
            m2: m2_cm,
            m3: m3_cm,
        };
        let v = ellipsoid_volume(&meas, coefficient).map_err(fail)?;
        write_out(out_ml, v)
    })
}

/// Marinelli activity `25 * m * D / (IU_24h * T_eff)`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn thyrosim_marinelli_activity(
    mass_g: f64,
    dose_gy: f64,
    uptake_24h: f64,
    t_eff_h: f64,
    out: *mut f64,
) -> ThyrosimStatus {
    guard(|| {
        let params = DoseParams {
            m: mass_g,
            d: dose_gy,
            iu_24h: uptake_24h,
            t_eff: t_eff_h,
        };
        let a = marinelli_activity(&params).map_err(fail)?;
        write_out(out, a)
    })
}
