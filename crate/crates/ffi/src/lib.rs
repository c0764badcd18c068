//! C ABI for the simulator and diagnostics library.
//!
//! Conventions: handles are opaque and freed by their matching `_free`
//! function; every fallible call returns a `JfStatus` and writes its out
//! parameters only on `OK`; strings handed out through `char **` are owned
//! by the caller and released with `jf_string_free`; `jf_last_error` returns
//! a thread-local message describing the most recent failure on the calling
//! thread, valid until the next failing call on that thread. Panics never
//! cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::slice;

use jumpflow::conditions::{check_conditions, halton_probes};
use jumpflow::config::{build_model, ModelConfig};
use jumpflow::error::Error;
use jumpflow::gallery::load_gallery;
use jumpflow::lil::{center_observable, lil_diagnostics};
use jumpflow::model::ModelSpec;
use jumpflow::observable::standard_observable;
use jumpflow::sampler::SeedStream;
use jumpflow::sim::{simulate_embedded, simulate_to_horizon, ContinuousPath, EmbeddedPath};
use jumpflow::space::HybridState;

/// Status code returned by every fallible call. Matches the command line
/// exit codes where the same failure exists there.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum JfStatus {
    Ok = 0,
    NullArgument = 1,
    ConfigError = 2,
    CheckFailed = 3,
    NumericError = 4,
    Panic = 5,
    BufferTooSmall = 6,
}

/// Validated model handle.
pub struct JfModel {
    spec: ModelSpec,
}

/// Simulated path handle. Keeps its own copy of the model, so it stays
/// usable after the model handle is freed.
pub struct JfPath {
    model: ModelSpec,
    path: EmbeddedPath,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: &str) {
    let clean = msg.replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(clean).unwrap_or_default());
}

fn lib_error(e: &Error) -> JfStatus {
    set_error(&format!("{}: {e}", e.tag()));
    match e.exit_code() {
        2 => JfStatus::ConfigError,
        _ => JfStatus::NumericError,
    }
}

fn null_argument(name: &str) -> JfStatus {
    set_error(&format!("{name} is null"));
    JfStatus::NullArgument
}

fn config_error(msg: &str) -> JfStatus {
    set_error(msg);
    JfStatus::ConfigError
}

fn guarded(f: impl FnOnce() -> JfStatus) -> JfStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(status) => status,
        Err(_) => {
            set_error("panic caught at the C boundary");
            JfStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or point to a NUL-terminated string.
unsafe fn utf8<'a>(p: *const c_char, name: &str) -> Result<&'a str, JfStatus> {
    if p.is_null() {
        return Err(null_argument(name));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| config_error(&format!("{name} is not valid utf-8")))
}

unsafe fn start_state(
    spec: &ModelSpec,
    y0: *const f64,
    y0_len: usize,
    flow: usize,
) -> Result<HybridState, JfStatus> {
    let flow = if flow == 0 { 1 } else { flow };
    if y0.is_null() {
        return Ok(HybridState::new(spec.ybar.clone(), flow));
    }
    if y0_len != spec.dim {
        return Err(config_error(&format!(
            "start has {} coordinates, model needs {}",
            y0_len, spec.dim
        )));
    }
    Ok(HybridState::from_slice(
        slice::from_raw_parts(y0, y0_len),
        flow,
    ))
}

fn give_string(out: *mut *mut c_char, text: String) -> JfStatus {
    let cstring = match CString::new(text) {
        Ok(s) => s,
        Err(_) => return config_error("output contains an interior NUL"),
    };
    unsafe { *out = cstring.into_raw() };
    JfStatus::Ok
}

/// Version of the library as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn jf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Message of the most recent failure on this thread; empty if none yet.
#[no_mangle]
pub extern "C" fn jf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Release a string returned through a `char **` out parameter.
///
/// # Safety
/// `s` must be null or a pointer produced by this library.
#[no_mangle]
pub unsafe extern "C" fn jf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Build a model from config text (same format the command line reads).
///
/// # Safety
/// `text` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jf_model_from_toml(
    text: *const c_char,
    out: *mut *mut JfModel,
) -> JfStatus {
    guarded(|| {
        if out.is_null() {
            return null_argument("out");
        }
        let text = match utf8(text, "text") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let cfg = match ModelConfig::from_toml(text) {
            Ok(c) => c,
            Err(e) => return lib_error(&e),
        };
        match build_model(&cfg) {
            Ok(spec) => {
                *out = Box::into_raw(Box::new(JfModel { spec }));
                JfStatus::Ok
            }
            Err(e) => lib_error(&e),
        }
    })
}

/// Build one of the built-in example models by name.
///
/// # Safety
/// `name` must be NUL-terminated; `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn jf_model_gallery(
    name: *const c_char,
    out: *mut *mut JfModel,
) -> JfStatus {
    guarded(|| {
        if out.is_null() {
            return null_argument("out");
        }
        let name = match utf8(name, "name") {
            Ok(n) => n,
            Err(s) => return s,
        };
        match load_gallery(name) {
            Ok(g) => {
                *out = Box::into_raw(Box::new(JfModel { spec: g.spec }));
                JfStatus::Ok
            }
            Err(e) => lib_error(&e),
        }
    })
}

/// # Safety
/// `model` must be null or a pointer from a model constructor.
#[no_mangle]
pub unsafe extern "C" fn jf_model_free(model: *mut JfModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Continuous dimension; 0 if `model` is null.
///
/// # Safety
/// `model` must be null or a valid model handle.
#[no_mangle]
pub unsafe extern "C" fn jf_model_dim(model: *const JfModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).spec.dim
}

/// Number of flow regimes; 0 if `model` is null.
///
/// # Safety
/// `model` must be null or a valid model handle.
#[no_mangle]
pub unsafe extern "C" fn jf_model_num_flows(model: *const JfModel) -> usize {
    if model.is_null() {
        return 0;
    }
    (*model).spec.num_flows
}

/// Jump intensity; NaN if `model` is null.
///
/// # Safety
/// `model` must be null or a valid model handle.
#[no_mangle]
pub unsafe extern "C" fn jf_model_jump_rate(model: *const JfModel) -> f64 {
    if model.is_null() {
        return f64::NAN;
    }
    (*model).spec.lambda
}

/// Copy the model's config hash into `buf` as a NUL-terminated string.
///
/// # Safety
/// `buf` must point to at least `cap` writable bytes.
#[no_mangle]
pub unsafe extern "C" fn jf_model_hash(
    model: *const JfModel,
    buf: *mut c_char,
    cap: usize,
) -> JfStatus {
    guarded(|| {
        if model.is_null() {
            return null_argument("model");
        }
        if buf.is_null() {
            return null_argument("buf");
        }
        let hash = (*model).spec.hash.as_bytes();
        if cap < hash.len() + 1 {
            set_error(&format!("buffer holds {cap} bytes, need {}", hash.len() + 1));
            return JfStatus::BufferTooSmall;
        }
        let dst = slice::from_raw_parts_mut(buf as *mut u8, hash.len() + 1);
        dst[..hash.len()].copy_from_slice(hash);
        dst[hash.len()] = 0;
        JfStatus::Ok
    })
}

/// Evaluate the standing conditions on `probes` low-discrepancy probe pairs.
/// Writes whether all of them hold to `all_pass` and, when `json` is not
/// null, the full report. Returns `CHECK_FAILED` when a condition fails;
/// the out parameters are still written in that case.
///
/// # Safety
/// Pointer arguments must be null or valid.
#[no_mangle]
pub unsafe extern "C" fn jf_model_check_json(
    model: *const JfModel,
    probes: usize,
    tol: f64,
    all_pass: *mut bool,
    json: *mut *mut c_char,
) -> JfStatus {
    guarded(|| {
        if model.is_null() {
            return null_argument("model");
        }
        let spec = &(*model).spec;
        let pairs = match halton_probes(spec, probes) {
            Ok(p) => p,
            Err(e) => return lib_error(&e),
        };
        let report = match check_conditions(spec, &pairs, tol) {
            Ok(r) => r,
            Err(e) => return lib_error(&e),
        };
        let pass = report.all_pass();
        if !all_pass.is_null() {
            *all_pass = pass;
        }
        if !json.is_null() {
            let text = match report.to_json() {
                Ok(t) => t,
                Err(e) => return lib_error(&e),
            };
            let status = give_string(json, text);
            if status != JfStatus::Ok {
                return status;
            }
        }
        if pass {
            JfStatus::Ok
        } else {
            set_error("one or more standing conditions failed");
            JfStatus::CheckFailed
        }
    })
}

/// Simulate `steps` jumps. `y0` may be null to start at the model's
/// reference point; `flow` 0 also means the default regime 1. The random
/// stream is derived from (`seed`, `stream`).
///
/// # Safety
/// `y0` must be null or point to `y0_len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jf_simulate_steps(
    model: *const JfModel,
    y0: *const f64,
    y0_len: usize,
    flow: usize,
    steps: usize,
    seed: u64,
    stream: u64,
    out: *mut *mut JfPath,
) -> JfStatus {
    guarded(|| {
        if model.is_null() {
            return null_argument("model");
        }
        if out.is_null() {
            return null_argument("out");
        }
        let spec = &(*model).spec;
        let x0 = match start_state(spec, y0, y0_len, flow) {
            Ok(x) => x,
            Err(s) => return s,
        };
        let mut rng = SeedStream::new(seed).rng(stream);
        match simulate_embedded(spec, &x0, steps, &mut rng) {
            Ok(path) => {
                *out = Box::into_raw(Box::new(JfPath {
                    model: spec.clone(),
                    path,
                }));
                JfStatus::Ok
            }
            Err(e) => lib_error(&e),
        }
    })
}

/// Simulate past the time `horizon`. Arguments as in `jf_simulate_steps`.
///
/// # Safety
/// `y0` must be null or point to `y0_len` doubles; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jf_simulate_horizon(
    model: *const JfModel,
    y0: *const f64,
    y0_len: usize,
    flow: usize,
    horizon: f64,
    seed: u64,
    stream: u64,
    out: *mut *mut JfPath,
) -> JfStatus {
    guarded(|| {
        if model.is_null() {
            return null_argument("model");
        }
        if out.is_null() {
            return null_argument("out");
        }
        let spec = &(*model).spec;
        let x0 = match start_state(spec, y0, y0_len, flow) {
            Ok(x) => x,
            Err(s) => return s,
        };
        let mut rng = SeedStream::new(seed).rng(stream);
        match simulate_to_horizon(spec, &x0, horizon, &mut rng) {
            Ok(path) => {
                *out = Box::into_raw(Box::new(JfPath {
                    model: spec.clone(),
                    path,
                }));
                JfStatus::Ok
            }
            Err(e) => lib_error(&e),
        }
    })
}

/// # Safety
/// `path` must be null or a pointer from a simulate call.
#[no_mangle]
pub unsafe extern "C" fn jf_path_free(path: *mut JfPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Number of records (steps + 1); 0 if `path` is null.
///
/// # Safety
/// `path` must be null or a valid path handle.
#[no_mangle]
pub unsafe extern "C" fn jf_path_len(path: *const JfPath) -> usize {
    if path.is_null() {
        return 0;
    }
    (*path).path.len()
}

/// Continuous dimension of the path's states; 0 if `path` is null.
///
/// # Safety
/// `path` must be null or a valid path handle.
#[no_mangle]
pub unsafe extern "C" fn jf_path_dim(path: *const JfPath) -> usize {
    if path.is_null() {
        return 0;
    }
    (*path).model.dim
}

/// Time of the last jump; NaN if `path` is null.
///
/// # Safety
/// `path` must be null or a valid path handle.
#[no_mangle]
pub unsafe extern "C" fn jf_path_last_time(path: *const JfPath) -> f64 {
    if path.is_null() {
        return f64::NAN;
    }
    (*path).path.last_tau()
}

/// Copy record `k`: post-jump coordinates into `y` (`y_cap` >= dim), the
/// regime into `flow`, and the jump time into `tau`. Each out pointer may
/// be null to skip that field.
///
/// # Safety
/// `y` must be null or point to `y_cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn jf_path_record(
    path: *const JfPath,
    k: usize,
    y: *mut f64,
    y_cap: usize,
    flow: *mut usize,
    tau: *mut f64,
) -> JfStatus {
    guarded(|| {
        if path.is_null() {
            return null_argument("path");
        }
        let p = &*path;
        if k >= p.path.len() {
            return config_error(&format!(
                "record {k} out of range, path has {}",
                p.path.len()
            ));
        }
        if !y.is_null() {
            if y_cap < p.model.dim {
                set_error(&format!("y holds {y_cap} doubles, need {}", p.model.dim));
                return JfStatus::BufferTooSmall;
            }
            let dst = slice::from_raw_parts_mut(y, p.model.dim);
            dst.copy_from_slice(p.path.y(k));
        }
        if !flow.is_null() {
            *flow = p.path.flow_index(k);
        }
        if !tau.is_null() {
            *tau = p.path.tau(k);
        }
        JfStatus::Ok
    })
}

/// Evaluate the interpolated continuous-time state at `t` (before the last
/// jump). `y` and `flow` may each be null to skip that field.
///
/// # Safety
/// `y` must be null or point to `y_cap` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn jf_path_state_at(
    path: *const JfPath,
    t: f64,
    y: *mut f64,
    y_cap: usize,
    flow: *mut usize,
) -> JfStatus {
    guarded(|| {
        if path.is_null() {
            return null_argument("path");
        }
        let p = &*path;
        let view = ContinuousPath::new(&p.model, &p.path);
        let state = match view.eval(t) {
            Ok(s) => s,
            Err(e) => return lib_error(&e),
        };
        if !y.is_null() {
            if y_cap < p.model.dim {
                set_error(&format!("y holds {y_cap} doubles, need {}", p.model.dim));
                return JfStatus::BufferTooSmall;
            }
            let dst = slice::from_raw_parts_mut(y, p.model.dim);
            dst.copy_from_slice(&state.y);
        }
        if !flow.is_null() {
            *flow = state.i;
        }
        JfStatus::Ok
    })
}

/// Integrate a named observable (y, cosy, expny, idx1) along the continuous
/// path over [t0, t1] to tolerance `tol`.
///
/// # Safety
/// `g` must be NUL-terminated; `out` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jf_path_observable_integral(
    path: *const JfPath,
    g: *const c_char,
    t0: f64,
    t1: f64,
    tol: f64,
    out: *mut f64,
) -> JfStatus {
    guarded(|| {
        if path.is_null() {
            return null_argument("path");
        }
        if out.is_null() {
            return null_argument("out");
        }
        let name = match utf8(g, "g") {
            Ok(n) => n,
            Err(s) => return s,
        };
        let p = &*path;
        let obs = match standard_observable(name, &p.model) {
            Ok(o) => o,
            Err(e) => return lib_error(&e),
        };
        let view = ContinuousPath::new(&p.model, &p.path);
        match view.integral(&obs, t0, t1, tol) {
            Ok(v) => {
                *out = v;
                JfStatus::Ok
            }
            Err(e) => lib_error(&e),
        }
    })
}

/// Run the replica fluctuation diagnostics for a named observable and hand
/// back the full report as JSON. The observable is centered internally
/// from its own auxiliary run. `y0` may be null for the default start.
///
/// # Safety
/// `y0` must be null or point to `y0_len` doubles; `g` NUL-terminated;
/// `json` must be valid.
#[no_mangle]
pub unsafe extern "C" fn jf_lil_json(
    model: *const JfModel,
    g: *const c_char,
    y0: *const f64,
    y0_len: usize,
    flow: usize,
    horizon: f64,
    replicas: usize,
    seed: u64,
    full_traces: bool,
    json: *mut *mut c_char,
) -> JfStatus {
    guarded(|| {
        if model.is_null() {
            return null_argument("model");
        }
        if json.is_null() {
            return null_argument("json");
        }
        let spec = &(*model).spec;
        let name = match utf8(g, "g") {
            Ok(n) => n,
            Err(s) => return s,
        };
        let x0 = match start_state(spec, y0, y0_len, flow) {
            Ok(x) => x,
            Err(s) => return s,
        };
        let base = match standard_observable(name, spec) {
            Ok(o) => o,
            Err(e) => return lib_error(&e),
        };
        // centering stream sits past the replica ids used internally
        let mut rng = SeedStream::new(seed).rng(replicas as u64 + 1_000);
        let centered = match center_observable(spec, base, &x0, 2000, 12000, &mut rng) {
            Ok(c) => c,
            Err(e) => return lib_error(&e),
        };
        match lil_diagnostics(spec, &centered, &x0, horizon, replicas, seed, full_traces) {
            Ok(report) => give_string(json, report.to_json()),
            Err(e) => return lib_error(&e),
        }
    })
}
