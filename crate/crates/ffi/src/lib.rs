//! C ABI over the mpchorizon engine.
//!
//! Networks live behind an opaque `MpchNetwork` handle. Every fallible call
//! returns an [`MpchStatus`]; the message for the most recent failure on the
//! calling thread is available from [`mpch_last_error_message`].

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::slice;

use mpchorizon::gradients::{gradient_angle, horizon_gradient, memory_estimate, MemoryMode, MemoryModel};
use mpchorizon::network::{default_weight_std, Network};
use mpchorizon::numerics::{Matrix, SeededRng};
use mpchorizon::selection::{select_horizon, CostFn, CostKind, HorizonProfile, Objective};
use mpchorizon::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpchStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    DimensionMismatch = 3,
    Degenerate = 4,
    OutOfRange = 5,
    Numerical = 6,
    Serialization = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpchMemoryMode {
    Eager = 0,
    Static = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpchObjectiveKind {
    /// Cheapest horizon whose estimated rate reaches `1 - parameter`.
    AccuracyConstraint = 0,
    /// Minimizes `-rate + parameter * cost`.
    Weighted = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpchCostKind {
    Linear = 0,
    Ladder = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MpchSelection {
    /// Chosen horizon, 0 when no horizon is feasible.
    pub horizon: usize,
    pub feasible: bool,
    /// NaN when infeasible.
    pub objective_value: f64,
}

/// Opaque network handle.
pub struct MpchNetwork {
    inner: Network,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: MpchStatus, msg: impl Into<String>) -> MpchStatus {
    set_error(msg.into());
    status
}

fn status_of(e: &Error) -> MpchStatus {
    match e {
        Error::InvalidInput(_) => MpchStatus::InvalidInput,
        Error::DimensionMismatch { .. } => MpchStatus::DimensionMismatch,
        Error::Degenerate(_) => MpchStatus::Degenerate,
        Error::OutOfRange { .. } => MpchStatus::OutOfRange,
        Error::SingularCovariance { .. } | Error::UndefinedRate(_) => MpchStatus::Numerical,
        Error::Serialization(_) => MpchStatus::Serialization,
    }
}

/// Runs `f`, mapping engine errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), MpchStatus>) -> MpchStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MpchStatus::Ok
        }
        Ok(Err(s)) => s,
        Err(_) => fail(MpchStatus::Panic, "internal panic"),
    }
}

fn engine(e: Error) -> MpchStatus {
    fail(status_of(&e), e.to_string())
}

unsafe fn read_matrix(data: *const f64, rows: usize, cols: usize, what: &str) -> Result<Matrix, MpchStatus> {
    if data.is_null() {
        return Err(fail(MpchStatus::NullPointer, format!("{what} is null")));
    }
    let len = rows
        .checked_mul(cols)
        .ok_or_else(|| fail(MpchStatus::InvalidInput, format!("{what} size overflows")))?;
    let values = slice::from_raw_parts(data, len).to_vec();
    Matrix::new(rows, cols, values).map_err(engine)
}

unsafe fn network_ref<'a>(net: *const MpchNetwork) -> Result<&'a Network, MpchStatus> {
    net.as_ref()
        .map(|n| &n.inner)
        .ok_or_else(|| fail(MpchStatus::NullPointer, "network handle is null"))
}

/// Message for the last failed call on this thread, or NULL after a success.
/// The pointer stays valid until the next call on the same thread.
#[no_mangle]
pub extern "C" fn mpch_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mpch_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Builds a residual MLP (dense input block, mlp-residual blocks, dense head).
/// A non-positive `weight_std` selects the default scale `1/width`.
///
/// # Safety
/// `out` must be a valid pointer to writable storage for one handle.
#[no_mangle]
pub unsafe extern "C" fn mpch_network_res_mlp(
    input_dim: usize,
    width: usize,
    output_dim: usize,
    depth: usize,
    weight_std: f64,
    seed: u64,
    out: *mut *mut MpchNetwork,
) -> MpchStatus {
    guard(|| {
        if out.is_null() {
            return Err(fail(MpchStatus::NullPointer, "out is null"));
        }
        let std = if weight_std > 0.0 { weight_std } else { default_weight_std(width) };
        let mut rng = SeededRng::new(seed);
        let inner = Network::res_mlp(input_dim, width, output_dim, depth, std, &mut rng).map_err(engine)?;
        *out = Box::into_raw(Box::new(MpchNetwork { inner }));
        Ok(())
    })
}

/// Parses a network document.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mpch_network_from_json(json: *const c_char, out: *mut *mut MpchNetwork) -> MpchStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return Err(fail(MpchStatus::NullPointer, "json or out is null"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| fail(MpchStatus::Serialization, e.to_string()))?;
        let inner = Network::from_json(text).map_err(engine)?;
        *out = Box::into_raw(Box::new(MpchNetwork { inner }));
        Ok(())
    })
}

/// Serializes a network. Release the string with [`mpch_string_free`].
///
/// # Safety
/// `net` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mpch_network_to_json(net: *const MpchNetwork, out: *mut *mut c_char) -> MpchStatus {
    guard(|| {
        let net = network_ref(net)?;
        if out.is_null() {
            return Err(fail(MpchStatus::NullPointer, "out is null"));
        }
        let text = net.to_json().map_err(engine)?;
        let c = CString::new(text).map_err(|e| fail(MpchStatus::Serialization, e.to_string()))?;
        *out = c.into_raw();
        Ok(())
    })
}

/// # Safety
/// `net` must be NULL or a handle from this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn mpch_network_free(net: *mut MpchNetwork) {
    if !net.is_null() {
        drop(Box::from_raw(net));
    }
}

/// # Safety
/// `s` must be NULL or a string returned by this library that has not been freed.
#[no_mangle]
pub unsafe extern "C" fn mpch_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Number of blocks, or 0 for a NULL handle.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mpch_network_depth(net: *const MpchNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.depth())
}

/// Total parameter count, or 0 for a NULL handle.
///
/// # Safety
/// `net` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn mpch_network_param_count(net: *const MpchNetwork) -> usize {
    net.as_ref().map_or(0, |n| n.inner.param_count())
}

/// Horizon-`h` gradient of every block, concatenated in block order into `out`.
/// `x` is `rows x input_cols` and `y` is `rows x label_cols`, both row-major.
/// `out_len` must be at least the parameter count.
///
/// # Safety
/// Pointers must reference buffers of the stated sizes; `net` must be live.
#[no_mangle]
pub unsafe extern "C" fn mpch_horizon_gradient(
    net: *const MpchNetwork,
    x: *const f64,
    rows: usize,
    input_cols: usize,
    y: *const f64,
    label_cols: usize,
    h: usize,
    out: *mut f64,
    out_len: usize,
) -> MpchStatus {
    guard(|| {
        let net = network_ref(net)?;
        if out.is_null() {
            return Err(fail(MpchStatus::NullPointer, "out is null"));
        }
        let need = net.param_count();
        if out_len < need {
            return Err(fail(MpchStatus::BufferTooSmall, format!("need {need} values, got {out_len}")));
        }
        let x0 = read_matrix(x, rows, input_cols, "x")?;
        let labels = read_matrix(y, rows, label_cols, "y")?;
        let g = horizon_gradient(net, &x0, &labels, h).map_err(engine)?;
        let flat = g.concatenated();
        slice::from_raw_parts_mut(out, flat.len()).copy_from_slice(&flat);
        Ok(())
    })
}

/// Cosine between the horizon-`h` gradient and the full back-propagation gradient.
///
/// # Safety
/// Same requirements as [`mpch_horizon_gradient`]; `cos_out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpch_gradient_cosine(
    net: *const MpchNetwork,
    x: *const f64,
    rows: usize,
    input_cols: usize,
    y: *const f64,
    label_cols: usize,
    h: usize,
    cos_out: *mut f64,
) -> MpchStatus {
    guard(|| {
        let net = network_ref(net)?;
        if cos_out.is_null() {
            return Err(fail(MpchStatus::NullPointer, "cos_out is null"));
        }
        let x0 = read_matrix(x, rows, input_cols, "x")?;
        let labels = read_matrix(y, rows, label_cols, "y")?;
        let gh = horizon_gradient(net, &x0, &labels, h).map_err(engine)?;
        let gt = horizon_gradient(net, &x0, &labels, net.depth()).map_err(engine)?;
        *cos_out = gradient_angle(&gh, &gt).map_err(engine)?;
        Ok(())
    })
}

/// Activation memory for horizon `h` given per-block activation units.
///
/// # Safety
/// `units` must point to `depth` values and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpch_memory_estimate(
    mode: MpchMemoryMode,
    units: *const f64,
    depth: usize,
    fixed_overhead: f64,
    h: usize,
    out: *mut f64,
) -> MpchStatus {
    guard(|| {
        if units.is_null() || out.is_null() {
            return Err(fail(MpchStatus::NullPointer, "units or out is null"));
        }
        let mode = match mode {
            MpchMemoryMode::Eager => MemoryMode::Eager,
            MpchMemoryMode::Static => MemoryMode::Static,
        };
        let per_block = slice::from_raw_parts(units, depth).to_vec();
        let model = MemoryModel::new(mode, per_block, fixed_overhead).map_err(engine)?;
        *out = memory_estimate(&model, h, depth).map_err(engine)?.units;
        Ok(())
    })
}

/// Fits a profile to `count` measured `(horizon, cosine, memory)` triples and
/// picks the best horizon in `1..=depth`.
///
/// # Safety
/// `horizons`, `cosines` and `memory` must each point to `count` values;
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mpch_select_horizon(
    depth: usize,
    horizons: *const usize,
    cosines: *const f64,
    memory: *const f64,
    count: usize,
    objective: MpchObjectiveKind,
    objective_param: f64,
    cost: MpchCostKind,
    unit_cost: f64,
    node_memory: f64,
    out: *mut MpchSelection,
) -> MpchStatus {
    guard(|| {
        if horizons.is_null() || cosines.is_null() || memory.is_null() || out.is_null() {
            return Err(fail(MpchStatus::NullPointer, "selection input or out is null"));
        }
        let hs = slice::from_raw_parts(horizons, count);
        let cs = slice::from_raw_parts(cosines, count);
        let ms = slice::from_raw_parts(memory, count);
        let mut cos_map = BTreeMap::new();
        let mut mem_map = BTreeMap::new();
        for i in 0..count {
            if cos_map.insert(hs[i], cs[i]).is_some() {
                return Err(fail(MpchStatus::InvalidInput, format!("horizon {} given twice", hs[i])));
            }
            mem_map.insert(hs[i], ms[i]);
        }
        let profile = HorizonProfile::from_measurements(depth, cos_map, mem_map).map_err(engine)?;
        let objective = match objective {
            MpchObjectiveKind::AccuracyConstraint => Objective::AccuracyConstraint { epsilon: objective_param },
            MpchObjectiveKind::Weighted => Objective::Weighted { lambda: objective_param },
        };
        let kind = match cost {
            MpchCostKind::Linear => CostKind::Linear,
            MpchCostKind::Ladder => CostKind::Ladder,
        };
        let cost = CostFn::new(kind, unit_cost, node_memory).map_err(engine)?;
        let sel = select_horizon(&profile, &objective, &cost).map_err(engine)?;
        *out = MpchSelection {
            horizon: sel.horizon.unwrap_or(0),
            feasible: sel.feasible,
            objective_value: sel.objective_value.unwrap_or(f64::NAN),
        };
        Ok(())
    })
}
