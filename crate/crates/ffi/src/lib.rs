//! C ABI over the vbclust library.
//!
//! Every fallible call returns a [`VbStatus`]; on failure a message is kept
//! per thread and can be read with [`vb_last_error_message`]. Handles are
//! opaque and must be released with the matching `*_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use vbclust::cluster::{Checkpoint, ClusterModel, EvolutionTrace};
use vbclust::encoder::FeatureStep;
use vbclust::error::Error;
use vbclust::geo::haversine_m;
use vbclust::metrics;
use vbclust::model::{PositionPoint, PositionSequence, SubTrajectory, VesselType};
use vbclust::segment::{represent, SegmenterConfig};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VbStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    Schema = 3,
    Parameter = 4,
    Data = 5,
    Degenerate = 6,
    Contract = 7,
    Width = 8,
    Numeric = 9,
    Io = 10,
    Parse = 11,
    OutOfRange = 12,
    Panic = 13,
}

impl From<&Error> for VbStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Schema(_) => VbStatus::Schema,
            Error::Parameter(_) => VbStatus::Parameter,
            Error::Data(_) => VbStatus::Data,
            Error::Degenerate { .. } => VbStatus::Degenerate,
            Error::Contract(_) => VbStatus::Contract,
            Error::Width { .. } => VbStatus::Width,
            Error::Numeric(_) => VbStatus::Numeric,
            Error::Io(_) => VbStatus::Io,
            Error::Json(_) | Error::Csv(_) => VbStatus::Parse,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: VbStatus, msg: impl Into<String>) -> VbStatus {
    set_error(msg);
    status
}

fn from_error(e: Error) -> VbStatus {
    let status = VbStatus::from(&e);
    fail(status, e.to_string())
}

/// Runs `f`, turning panics into [`VbStatus::Panic`].
fn guard(f: impl FnOnce() -> VbStatus) -> VbStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(VbStatus::Panic, "internal panic"))
}

macro_rules! non_null {
    ($($p:ident),+) => {
        $(if $p.is_null() {
            return fail(VbStatus::NullPointer, concat!("`", stringify!($p), "` is null"));
        })+
    };
}

/// Message of the last failed call on this thread, or null if it succeeded.
/// The pointer stays valid until the next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn vb_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Great-circle distance in metres between two points in degrees.
#[no_mangle]
pub extern "C" fn vb_haversine_m(lat1: f64, lon1: f64, lat2: f64, lon2: f64) -> f64 {
    haversine_m(lat1, lon1, lat2, lon2)
}

type Score = fn(&[u32], &[u32]) -> vbclust::error::Result<f64>;

unsafe fn score(f: Score, assignments: *const u32, truth: *const u32, n: usize, out: *mut f64) -> VbStatus {
    guard(|| {
        non_null!(assignments, truth, out);
        let a = std::slice::from_raw_parts(assignments, n);
        let t = std::slice::from_raw_parts(truth, n);
        match f(a, t) {
            Ok(v) => {
                *out = v;
                VbStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Purity of `assignments` against `truth`, both of length `n`.
///
/// # Safety
/// `assignments` and `truth` must point to `n` readable values and `out` to one writable double.
#[no_mangle]
pub unsafe extern "C" fn vb_purity(assignments: *const u32, truth: *const u32, n: usize, out: *mut f64) -> VbStatus {
    score(metrics::purity, assignments, truth, n, out)
}

/// Adjusted Rand index.
///
/// # Safety
/// Same contract as [`vb_purity`].
#[no_mangle]
pub unsafe extern "C" fn vb_ari(assignments: *const u32, truth: *const u32, n: usize, out: *mut f64) -> VbStatus {
    score(metrics::ari, assignments, truth, n, out)
}

/// Normalized mutual information.
///
/// # Safety
/// Same contract as [`vb_purity`].
#[no_mangle]
pub unsafe extern "C" fn vb_nmi(assignments: *const u32, truth: *const u32, n: usize, out: *mut f64) -> VbStatus {
    score(metrics::nmi, assignments, truth, n, out)
}

/// One AIS fix. Speed in knots, course in degrees.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VbFix {
    pub timestamp: i64,
    pub lat: f64,
    pub lon: f64,
    pub sog: f64,
    pub cog: f64,
}

/// Segmenter parameters. Fill with [`vb_segment_params_default`] and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct VbSegmentParams {
    pub stride: usize,
    pub lambda: usize,
    pub delta: f64,
    pub speed_sign_fraction: f64,
    pub stop_speed: f64,
    pub speed_var_threshold: f64,
    pub turn_threshold: f64,
    pub peak_radius: usize,
}

impl From<&SegmenterConfig> for VbSegmentParams {
    fn from(c: &SegmenterConfig) -> Self {
        VbSegmentParams {
            stride: c.stride,
            lambda: c.lambda,
            delta: c.delta,
            speed_sign_fraction: c.speed_sign_fraction,
            stop_speed: c.stop_speed,
            speed_var_threshold: c.speed_var_threshold,
            turn_threshold: c.turn_threshold,
            peak_radius: c.peak_radius,
        }
    }
}

impl VbSegmentParams {
    fn to_config(self) -> SegmenterConfig {
        SegmenterConfig {
            stride: self.stride,
            lambda: self.lambda,
            delta: self.delta,
            speed_sign_fraction: self.speed_sign_fraction,
            stop_speed: self.stop_speed,
            speed_var_threshold: self.speed_var_threshold,
            turn_threshold: self.turn_threshold,
            peak_radius: self.peak_radius,
            ..SegmenterConfig::default()
        }
    }
}

/// Writes the default segmenter parameters to `out`.
///
/// # Safety
/// `out` must be null or point to a writable `VbSegmentParams`.
#[no_mangle]
pub unsafe extern "C" fn vb_segment_params_default(out: *mut VbSegmentParams) -> VbStatus {
    guard(|| {
        non_null!(out);
        *out = VbSegmentParams::from(&SegmenterConfig::default());
        VbStatus::Ok
    })
}

/// One labelled sub-trajectory: inclusive fix range and behavior code 0..=9.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VbSegment {
    pub start: usize,
    pub end: usize,
    pub behavior: u32,
}

/// Opaque result of [`vb_segment`].
pub struct VbSegmentation {
    segments: Vec<SubTrajectory>,
}

/// Segments and labels `n` fixes of one vessel. `params` may be null for defaults.
///
/// # Safety
/// `fixes` must point to `n` readable fixes, `params` must be null or valid,
/// and `out` must point to a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn vb_segment(
    fixes: *const VbFix,
    n: usize,
    params: *const VbSegmentParams,
    out: *mut *mut VbSegmentation,
) -> VbStatus {
    guard(|| {
        non_null!(fixes, out);
        *out = ptr::null_mut();
        let config = if params.is_null() { SegmenterConfig::default() } else { (*params).to_config() };
        if let Err(e) = config.validate() {
            return from_error(e);
        }
        let points = std::slice::from_raw_parts(fixes, n)
            .iter()
            .map(|f| PositionPoint {
                mmsi: String::new(),
                timestamp: f.timestamp,
                lat: f.lat,
                lon: f.lon,
                sog: f.sog,
                cog: f.cog,
                vessel_type: VesselType::Other,
            })
            .collect();
        let sequence = PositionSequence { mmsi: String::new(), vessel_type: VesselType::Other, points };
        match represent(&sequence, &config) {
            Ok(segments) => {
                *out = Box::into_raw(Box::new(VbSegmentation { segments }));
                VbStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of segments, 0 for a null handle.
///
/// # Safety
/// `seg` must be null or a live handle from [`vb_segment`].
#[no_mangle]
pub unsafe extern "C" fn vb_segmentation_len(seg: *const VbSegmentation) -> usize {
    seg.as_ref().map_or(0, |s| s.segments.len())
}

/// Copies segment `index` to `out`.
///
/// # Safety
/// `seg` must be a live handle and `out` a writable `VbSegment`.
#[no_mangle]
pub unsafe extern "C" fn vb_segmentation_get(seg: *const VbSegmentation, index: usize, out: *mut VbSegment) -> VbStatus {
    guard(|| {
        non_null!(seg, out);
        let Some(s) = (&(*seg).segments).get(index) else {
            return fail(VbStatus::OutOfRange, format!("segment {index} out of range"));
        };
        *out = VbSegment {
            start: s.start_index,
            end: s.end_index,
            behavior: s.behavior.map_or(u32::MAX, |b| b.code() as u32),
        };
        VbStatus::Ok
    })
}

/// # Safety
/// `seg` must be null or a handle from [`vb_segment`] not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vb_segmentation_free(seg: *mut VbSegmentation) {
    if !seg.is_null() {
        drop(Box::from_raw(seg));
    }
}

/// Opaque trained clustering model.
pub struct VbModel {
    model: ClusterModel,
}

unsafe fn c_str<'a>(s: *const c_char, what: &str) -> Result<&'a str, VbStatus> {
    if s.is_null() {
        return Err(fail(VbStatus::NullPointer, format!("`{what}` is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| fail(VbStatus::InvalidUtf8, format!("`{what}` is not UTF-8")))
}

fn store_model(ck: vbclust::error::Result<Checkpoint>, out: *mut *mut VbModel) -> VbStatus {
    match ck {
        Ok(ck) => {
            // SAFETY: callers check `out` before getting here.
            unsafe { *out = Box::into_raw(Box::new(VbModel { model: ck.model })) };
            VbStatus::Ok
        }
        Err(e) => from_error(e),
    }
}

/// Loads a checkpoint file written by `vbclust train`.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn vb_model_load(path: *const c_char, out: *mut *mut VbModel) -> VbStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        match c_str(path, "path") {
            Ok(p) => store_model(Checkpoint::load(Path::new(p)), out),
            Err(s) => s,
        }
    })
}

/// Parses a checkpoint from its JSON text.
///
/// # Safety
/// `json` must be a NUL-terminated string and `out` a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn vb_model_from_json(json: *const c_char, out: *mut *mut VbModel) -> VbStatus {
    guard(|| {
        non_null!(out);
        *out = ptr::null_mut();
        match c_str(json, "json") {
            Ok(text) => store_model(Checkpoint::from_json(text), out),
            Err(s) => s,
        }
    })
}

/// Number of clusters K, 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn vb_model_num_clusters(model: *const VbModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.num_clusters())
}

/// Width of one feature step expected by [`vb_model_trace`], 0 for a null handle.
///
/// # Safety
/// `model` must be null or a live model handle.
#[no_mangle]
pub unsafe extern "C" fn vb_model_input_dim(model: *const VbModel) -> usize {
    model.as_ref().map_or(0, |m| m.model.input_dim())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vb_model_free(model: *mut VbModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// Opaque per-step cluster history of one sequence.
pub struct VbTrace {
    trace: EvolutionTrace,
}

/// Runs the model over `steps` featurized steps. `features` is row-major,
/// `steps` rows of `width` values; `relative_times` holds one entry per step.
///
/// # Safety
/// Pointers must cover the stated extents and `out` must be a writable handle slot.
#[no_mangle]
pub unsafe extern "C" fn vb_model_trace(
    model: *const VbModel,
    relative_times: *const i64,
    features: *const f64,
    steps: usize,
    width: usize,
    out: *mut *mut VbTrace,
) -> VbStatus {
    guard(|| {
        non_null!(model, relative_times, features, out);
        *out = ptr::null_mut();
        let Some(total) = steps.checked_mul(width) else {
            return fail(VbStatus::Parameter, "steps * width overflows");
        };
        let times = std::slice::from_raw_parts(relative_times, steps);
        let values = std::slice::from_raw_parts(features, total);
        let input: Vec<FeatureStep> = times
            .iter()
            .enumerate()
            .map(|(i, &t)| FeatureStep { relative_time: t, features: values[i * width..(i + 1) * width].to_vec() })
            .collect();
        match (*model).model.trace("", &input) {
            Ok(trace) => {
                *out = Box::into_raw(Box::new(VbTrace { trace }));
                VbStatus::Ok
            }
            Err(e) => from_error(e),
        }
    })
}

/// Number of steps, 0 for a null handle.
///
/// # Safety
/// `trace` must be null or a live trace handle.
#[no_mangle]
pub unsafe extern "C" fn vb_trace_len(trace: *const VbTrace) -> usize {
    trace.as_ref().map_or(0, |t| t.trace.steps.len())
}

/// Hard cluster of step `index`.
///
/// # Safety
/// `trace` must be a live handle and `out` a writable value.
#[no_mangle]
pub unsafe extern "C" fn vb_trace_cluster(trace: *const VbTrace, index: usize, out: *mut usize) -> VbStatus {
    guard(|| {
        non_null!(trace, out);
        match (&(*trace).trace.steps).get(index) {
            Some(s) => {
                *out = s.cluster;
                VbStatus::Ok
            }
            None => fail(VbStatus::OutOfRange, format!("step {index} out of range")),
        }
    })
}

/// Copies the K soft assignment weights of step `index` into `out`, which holds `capacity` doubles.
///
/// # Safety
/// `trace` must be a live handle and `out` must point to `capacity` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn vb_trace_assignment(trace: *const VbTrace, index: usize, out: *mut f64, capacity: usize) -> VbStatus {
    guard(|| {
        non_null!(trace, out);
        let Some(s) = (&(*trace).trace.steps).get(index) else {
            return fail(VbStatus::OutOfRange, format!("step {index} out of range"));
        };
        if capacity < s.assignment.len() {
            return fail(VbStatus::OutOfRange, format!("buffer holds {capacity}, need {}", s.assignment.len()));
        }
        ptr::copy_nonoverlapping(s.assignment.as_ptr(), out, s.assignment.len());
        VbStatus::Ok
    })
}

/// Majority-vote cluster over all steps.
///
/// # Safety
/// `trace` must be a live handle and `out` a writable value.
#[no_mangle]
pub unsafe extern "C" fn vb_trace_majority(trace: *const VbTrace, out: *mut usize) -> VbStatus {
    guard(|| {
        non_null!(trace, out);
        match (*trace).trace.majority() {
            Some(c) => {
                *out = c;
                VbStatus::Ok
            }
            None => fail(VbStatus::Data, "empty trace"),
        }
    })
}

/// # Safety
/// `trace` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn vb_trace_free(trace: *mut VbTrace) {
    if !trace.is_null() {
        drop(Box::from_raw(trace));
    }
}
