//! C interface over the core library: opaque model and hardware handles,
//! JSON strings in and out, and integer status codes. The generated header
//! lives in `include/tiergen.h`.
//!
//! Ownership rules:
//! - Handles returned through `out` parameters belong to the caller and are
//!   released with the matching `tg_model_free` / `tg_hardware_free`.
//! - Strings returned through `out` parameters belong to the caller and are
//!   released with `tg_string_free`.
//! - `tg_last_error` borrows a thread-local buffer that stays valid until
//!   the next failing call on the same thread; copy it before calling again.
//!
//! Every function returns `TgStatus`. On anything other than `TG_STATUS_OK`
//! the out parameters are left untouched and `tg_last_error` describes what
//! went wrong. Panics never cross the boundary; they surface as
//! `TG_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};

use tiergen::model::{
    footprint, kv_cache_peak_bytes, validate_policy, weight_bytes, HardwareProfile, ModelSpec,
    Policy, Workload,
};
use tiergen::policy::{plan, PlanError, SearchConfig};
use tiergen::presets::{hardware_preset, model_preset};
use tiergen::sim::{simulate, SimConfig, SimError};

/// Result of every call in this interface.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TgStatus {
    /// The call succeeded and the out parameters are filled in.
    Ok = 0,
    /// An argument was rejected: null pointer, bad UTF-8, unknown preset,
    /// out-of-range number, or a policy that fails validation.
    InvalidArgument = 1,
    /// A JSON document could not be parsed into the expected shape.
    Parse = 2,
    /// The inputs were well formed but no result exists: the planner found
    /// no feasible policy, or the simulated policy exceeds memory capacity.
    Infeasible = 3,
    /// An internal invariant failed; this is a bug in the library.
    Internal = 4,
}

/// Opaque model description handle.
pub struct TgModel(ModelSpec);

/// Opaque hardware profile handle.
pub struct TgHardware(HardwareProfile);

struct Failure(TgStatus, String);

type FfiResult = Result<(), Failure>;

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn remember_error(msg: &str) {
    let clean: String = msg
        .chars()
        .map(|c| if c == '\0' { ' ' } else { c })
        .collect();
    let stored = CString::new(clean).expect("nul bytes were replaced");
    LAST_ERROR.with(|slot| *slot.borrow_mut() = stored);
}

fn run(body: impl FnOnce() -> FfiResult) -> TgStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => TgStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            remember_error(&msg);
            status
        }
        Err(_) => {
            remember_error("internal panic");
            TgStatus::Internal
        }
    }
}

fn fail<T>(status: TgStatus, msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure(status, msg.into()))
}

unsafe fn str_arg<'a>(ptr: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return fail(TgStatus::InvalidArgument, format!("{what} is null"));
    }
    match unsafe { CStr::from_ptr(ptr) }.to_str() {
        Ok(s) => Ok(s),
        Err(_) => fail(
            TgStatus::InvalidArgument,
            format!("{what} is not valid UTF-8"),
        ),
    }
}

unsafe fn handle_arg<'a, T>(ptr: *const T, what: &str) -> Result<&'a T, Failure> {
    if ptr.is_null() {
        return fail(TgStatus::InvalidArgument, format!("{what} is null"));
    }
    Ok(unsafe { &*ptr })
}

fn out_arg<T>(ptr: *mut T, what: &str) -> Result<(), Failure> {
    if ptr.is_null() {
        return fail(TgStatus::InvalidArgument, format!("{what} is null"));
    }
    Ok(())
}

unsafe fn emit_handle<T>(value: T, out: *mut *mut T) {
    unsafe { *out = Box::into_raw(Box::new(value)) };
}

unsafe fn emit_json<T: serde::Serialize>(value: &T, out: *mut *mut c_char) -> FfiResult {
    let json = match serde_json::to_string(value) {
        Ok(j) => j,
        Err(e) => return fail(TgStatus::Internal, format!("serialization failed: {e}")),
    };
    let owned = CString::new(json).expect("JSON contains no nul bytes");
    unsafe { *out = owned.into_raw() };
    Ok(())
}

fn workload_args(prompt_len: u64, gen_len: u64) -> Result<Workload, Failure> {
    if prompt_len == 0 {
        return fail(TgStatus::InvalidArgument, "prompt_len must be positive");
    }
    if gen_len == 0 {
        return fail(TgStatus::InvalidArgument, "gen_len must be positive");
    }
    Ok(Workload {
        prompt_len,
        gen_len,
    })
}

fn parse_policy(json: &str) -> Result<Policy, Failure> {
    let policy: Policy = match serde_json::from_str(json) {
        Ok(p) => p,
        Err(e) => return fail(TgStatus::Parse, format!("policy JSON: {e}")),
    };
    let violations = validate_policy(&policy);
    if let Some(first) = violations.first() {
        return fail(TgStatus::InvalidArgument, format!("invalid policy: {first}"));
    }
    Ok(policy)
}

fn narrow_bytes(value: u128, what: &str) -> Result<u64, Failure> {
    u64::try_from(value).map_err(|_| {
        Failure(
            TgStatus::InvalidArgument,
            format!("{what} exceeds the u64 range"),
        )
    })
}

fn plan_failure(e: PlanError) -> Failure {
    match e {
        PlanError::NoFeasible(_) => Failure(TgStatus::Infeasible, e.to_string()),
        other => Failure(TgStatus::InvalidArgument, other.to_string()),
    }
}

fn sim_failure(e: SimError) -> Failure {
    match e {
        SimError::Oom { .. } => Failure(TgStatus::Infeasible, e.to_string()),
        other => Failure(TgStatus::InvalidArgument, other.to_string()),
    }
}

/// Returns the message for the most recent failure on this thread, as a
/// NUL-terminated UTF-8 string. The empty string means no failure has been
/// recorded yet. The pointer stays valid until the next failing call on
/// this thread; do not free it.
#[no_mangle]
pub extern "C" fn tg_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ptr())
}

/// Frees a string previously returned through an `out` parameter.
/// Passing NULL is allowed and does nothing.
///
/// # Safety
/// `s` must be a pointer obtained from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Parses a model description from JSON (fields `l`, `h1`, `h2`, `nh`, and
/// optional `bytes_per_element`) and stores a new handle in `out`.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn tg_model_from_json(
    json: *const c_char,
    out: *mut *mut TgModel,
) -> TgStatus {
    run(|| {
        out_arg(out, "out")?;
        let text = unsafe { str_arg(json, "model JSON") }?;
        let spec: ModelSpec = match serde_json::from_str(text) {
            Ok(s) => s,
            Err(e) => return fail(TgStatus::Parse, format!("model JSON: {e}")),
        };
        unsafe { emit_handle(TgModel(spec), out) };
        Ok(())
    })
}

/// Looks up a built-in model preset by name (for example "opt-175b") and
/// stores a new handle in `out`.
///
/// # Safety
/// `name` must be NUL-terminated; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn tg_model_preset(name: *const c_char, out: *mut *mut TgModel) -> TgStatus {
    run(|| {
        out_arg(out, "out")?;
        let name = unsafe { str_arg(name, "preset name") }?;
        let spec = match model_preset(name) {
            Ok(s) => s,
            Err(e) => return fail(TgStatus::InvalidArgument, e.to_string()),
        };
        unsafe { emit_handle(TgModel(spec), out) };
        Ok(())
    })
}

/// Releases a model handle. Passing NULL is allowed and does nothing.
///
/// # Safety
/// `model` must be a handle from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tg_model_free(model: *mut TgModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// Parses a hardware profile from JSON (bandwidths, compute rates, and
/// memory capacities) and stores a new handle in `out`.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn tg_hardware_from_json(
    json: *const c_char,
    out: *mut *mut TgHardware,
) -> TgStatus {
    run(|| {
        out_arg(out, "out")?;
        let text = unsafe { str_arg(json, "hardware JSON") }?;
        let profile: HardwareProfile = match serde_json::from_str(text) {
            Ok(p) => p,
            Err(e) => return fail(TgStatus::Parse, format!("hardware JSON: {e}")),
        };
        unsafe { emit_handle(TgHardware(profile), out) };
        Ok(())
    })
}

/// Looks up a built-in hardware preset by name (for example "t4-gcp") and
/// stores a new handle in `out`.
///
/// # Safety
/// `name` must be NUL-terminated; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn tg_hardware_preset(
    name: *const c_char,
    out: *mut *mut TgHardware,
) -> TgStatus {
    run(|| {
        out_arg(out, "out")?;
        let name = unsafe { str_arg(name, "preset name") }?;
        let profile = match hardware_preset(name) {
            Ok(p) => p,
            Err(e) => return fail(TgStatus::InvalidArgument, e.to_string()),
        };
        unsafe { emit_handle(TgHardware(profile), out) };
        Ok(())
    })
}

/// Releases a hardware handle. Passing NULL is allowed and does nothing.
///
/// # Safety
/// `hardware` must be a handle from this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn tg_hardware_free(hardware: *mut TgHardware) {
    if !hardware.is_null() {
        drop(unsafe { Box::from_raw(hardware) });
    }
}

/// Writes the total parameter bytes of the model to `out`.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn tg_weight_bytes(model: *const TgModel, out: *mut u64) -> TgStatus {
    run(|| {
        let model = unsafe { handle_arg(model, "model handle") }?;
        out_arg(out, "out")?;
        let bytes = narrow_bytes(weight_bytes(&model.0), "weight bytes")?;
        unsafe { *out = bytes };
        Ok(())
    })
}

/// Writes the peak KV-cache bytes for `batch` sequences at full generated
/// length to `out`.
///
/// # Safety
/// `model` must be a live handle; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn tg_kv_cache_peak_bytes(
    model: *const TgModel,
    batch: u64,
    prompt_len: u64,
    gen_len: u64,
    out: *mut u64,
) -> TgStatus {
    run(|| {
        let model = unsafe { handle_arg(model, "model handle") }?;
        out_arg(out, "out")?;
        let workload = workload_args(prompt_len, gen_len)?;
        let bytes = narrow_bytes(
            kv_cache_peak_bytes(&model.0, batch, &workload),
            "KV cache bytes",
        )?;
        unsafe { *out = bytes };
        Ok(())
    })
}

/// Computes the memory footprint report for `batch` sequences and stores it
/// as a JSON string in `out`. `policy_json` may be NULL; when given, the
/// report adds per-device byte splits for that placement.
///
/// # Safety
/// `model` must be a live handle; `policy_json` must be NUL-terminated or
/// NULL; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn tg_footprint_json(
    model: *const TgModel,
    batch: u64,
    prompt_len: u64,
    gen_len: u64,
    policy_json: *const c_char,
    out: *mut *mut c_char,
) -> TgStatus {
    run(|| {
        let model = unsafe { handle_arg(model, "model handle") }?;
        out_arg(out, "out")?;
        if batch == 0 {
            return fail(TgStatus::InvalidArgument, "batch must be positive");
        }
        let workload = workload_args(prompt_len, gen_len)?;
        let policy = if policy_json.is_null() {
            None
        } else {
            Some(parse_policy(unsafe { str_arg(policy_json, "policy JSON") }?)?)
        };
        let report = footprint(&model.0, batch, &workload, policy.as_ref());
        unsafe { emit_json(&report, out) }
    })
}

/// Searches for the best offloading policy and stores the plan as a JSON
/// string in `out`. `options_json` may be NULL for the default search; when
/// given it holds any subset of the search options (`gbs_candidates`,
/// `max_num_gpu_batches`, `latency_ceiling`, `pins`, `cpu_delegation`,
/// `compression`).
///
/// # Safety
/// `model` and `hardware` must be live handles; `options_json` must be
/// NUL-terminated or NULL; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn tg_plan_json(
    model: *const TgModel,
    hardware: *const TgHardware,
    prompt_len: u64,
    gen_len: u64,
    options_json: *const c_char,
    out: *mut *mut c_char,
) -> TgStatus {
    run(|| {
        let model = unsafe { handle_arg(model, "model handle") }?;
        let hardware = unsafe { handle_arg(hardware, "hardware handle") }?;
        out_arg(out, "out")?;
        let workload = workload_args(prompt_len, gen_len)?;
        let config = if options_json.is_null() {
            SearchConfig::default()
        } else {
            let text = unsafe { str_arg(options_json, "options JSON") }?;
            match serde_json::from_str(text) {
                Ok(c) => c,
                Err(e) => return fail(TgStatus::Parse, format!("options JSON: {e}")),
            }
        };
        let result = plan(&model.0, &hardware.0, &workload, &config).map_err(plan_failure)?;
        unsafe { emit_json(&result, out) }
    })
}

/// Simulates one generation block under the given policy and stores the
/// result as a JSON string in `out`. With `allow_oom` false the call fails
/// with `TG_STATUS_INFEASIBLE` when the placement exceeds any memory
/// capacity; with `allow_oom` true the simulation prices it anyway.
///
/// # Safety
/// `model` and `hardware` must be live handles; `policy_json` must be
/// NUL-terminated; `out` must point to writable memory.
#[no_mangle]
pub unsafe extern "C" fn tg_simulate_json(
    model: *const TgModel,
    hardware: *const TgHardware,
    prompt_len: u64,
    gen_len: u64,
    policy_json: *const c_char,
    allow_oom: bool,
    out: *mut *mut c_char,
) -> TgStatus {
    run(|| {
        let model = unsafe { handle_arg(model, "model handle") }?;
        let hardware = unsafe { handle_arg(hardware, "hardware handle") }?;
        out_arg(out, "out")?;
        let workload = workload_args(prompt_len, gen_len)?;
        let policy = parse_policy(unsafe { str_arg(policy_json, "policy JSON") }?)?;
        let config = SimConfig {
            record_events: false,
            allow_oom,
        };
        let result = simulate(&model.0, &hardware.0, &workload, &policy, &config)
            .map_err(sim_failure)?;
        unsafe { emit_json(&result, out) }
    })
}
