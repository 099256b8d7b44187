//! C ABI over the tunnelscout library. Objects are opaque heap handles
//! released with the matching `*_free`; every fallible call returns a
//! `TsStatus` and leaves a message for `ts_last_error_message`.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use tunnelscout::config::parse_scenario;
use tunnelscout::model::{thrust_margin_check, Component, DroneSpec, Vec3};
use tunnelscout::rrt::{plan_and_shortcut, plan_rrt, Path, RrtConfig};
use tunnelscout::sim::{run_scenario, Scenario, Termination};
use tunnelscout::voxel_map::{MapParams, OccupancyState, VoxelMap};
use tunnelscout::PlanError;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    OutOfBounds = 3,
    NoPathFound = 4,
    StartInCollision = 5,
    ParseError = 6,
    ScenarioInvalid = 7,
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TsOccupancy {
    Free = 0,
    Occupied = 1,
    Unknown = 2,
}

impl From<OccupancyState> for TsOccupancy {
    fn from(s: OccupancyState) -> Self {
        match s {
            OccupancyState::Free => TsOccupancy::Free,
            OccupancyState::Occupied => TsOccupancy::Occupied,
            OccupancyState::Unknown => TsOccupancy::Unknown,
        }
    }
}

impl From<TsOccupancy> for OccupancyState {
    fn from(s: TsOccupancy) -> Self {
        match s {
            TsOccupancy::Free => OccupancyState::Free,
            TsOccupancy::Occupied => OccupancyState::Occupied,
            TsOccupancy::Unknown => OccupancyState::Unknown,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TsVec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl From<TsVec3> for Vec3 {
    fn from(v: TsVec3) -> Self {
        Vec3::new(v.x, v.y, v.z)
    }
}

impl From<Vec3> for TsVec3 {
    fn from(v: Vec3) -> Self {
        TsVec3 { x: v.x, y: v.y, z: v.z }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TsRunReport {
    pub seed: u64,
    /// 1 when the mission ended in Stop, 0 on timeout.
    pub stopped: i32,
    pub reached_end: i32,
    pub min_dead_end_distance: f64,
    pub coverage_fraction: f64,
    pub returned_to_start_error: f64,
    pub collision_count: u32,
    pub sim_duration: f64,
    pub tick_ms_mean: f64,
    pub tick_ms_p99: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct TsThrustCheck {
    pub pass: i32,
    pub total_weight: f64,
    pub required_thrust: f64,
    pub available_thrust: f64,
}

/// Opaque occupancy map.
pub struct TsMap(VoxelMap);
/// Opaque planned path.
pub struct TsPath(Path);
/// Opaque validated scenario.
pub struct TsScenario(Scenario);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn guard(f: impl FnOnce() -> TsStatus) -> TsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => {
            set_error("internal panic");
            TsStatus::Panic
        }
    }
}

fn fail(status: TsStatus, msg: impl Into<String>) -> TsStatus {
    set_error(msg);
    status
}

fn plan_status(e: &PlanError) -> TsStatus {
    match e {
        PlanError::NoPathFound(_) | PlanError::NoFreeSpace | PlanError::InfeasibleFace => TsStatus::NoPathFound,
        PlanError::StartInCollision => TsStatus::StartInCollision,
        PlanError::InvalidConfig(_) => TsStatus::InvalidArgument,
    }
}

/// Message of the last failed call on this thread, or NULL. Valid until the
/// next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ts_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Creates an all-Unknown map with default log-odds parameters.
#[no_mangle]
pub unsafe extern "C" fn ts_map_new(
    origin: TsVec3,
    nx: usize,
    ny: usize,
    nz: usize,
    resolution: f64,
    out: *mut *mut TsMap,
) -> TsStatus {
    guard(|| {
        if out.is_null() {
            return fail(TsStatus::NullPointer, "out is null");
        }
        let params = MapParams { resolution, ..MapParams::default() };
        match VoxelMap::new(origin.into(), [nx, ny, nz], params) {
            Ok(m) => {
                *out = Box::into_raw(Box::new(TsMap(m)));
                TsStatus::Ok
            }
            Err(e) => fail(TsStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ts_map_free(map: *mut TsMap) {
    if !map.is_null() {
        drop(Box::from_raw(map));
    }
}

#[no_mangle]
pub unsafe extern "C" fn ts_map_set_state(map: *mut TsMap, ix: usize, iy: usize, iz: usize, state: TsOccupancy) -> TsStatus {
    guard(|| {
        let Some(m) = map.as_mut() else { return fail(TsStatus::NullPointer, "map is null") };
        let d = m.0.dims();
        if ix >= d[0] || iy >= d[1] || iz >= d[2] {
            return fail(TsStatus::OutOfBounds, format!("voxel ({ix}, {iy}, {iz}) outside {d:?}"));
        }
        m.0.set_state([ix, iy, iz], state.into());
        TsStatus::Ok
    })
}

/// Occupancy at a world point; points outside the map read as Unknown.
#[no_mangle]
pub unsafe extern "C" fn ts_map_query(map: *const TsMap, p: TsVec3, out: *mut TsOccupancy) -> TsStatus {
    guard(|| {
        let (Some(m), false) = (map.as_ref(), out.is_null()) else {
            return fail(TsStatus::NullPointer, "map or out is null");
        };
        *out = m.0.query(p.into()).into();
        TsStatus::Ok
    })
}

/// Writes 1 to `out` when the inflated segment avoids Occupied and Unknown space.
#[no_mangle]
pub unsafe extern "C" fn ts_map_segment_free(
    map: *const TsMap,
    a: TsVec3,
    b: TsVec3,
    inflate: f64,
    out: *mut i32,
) -> TsStatus {
    guard(|| {
        let (Some(m), false) = (map.as_ref(), out.is_null()) else {
            return fail(TsStatus::NullPointer, "map or out is null");
        };
        if !(inflate >= 0.0) {
            return fail(TsStatus::InvalidArgument, "inflate must be non-negative");
        }
        *out = i32::from(m.0.segment_collision_free(a.into(), b.into(), inflate));
        TsStatus::Ok
    })
}

/// Text export of every known voxel. Release with `ts_string_free`.
#[no_mangle]
pub unsafe extern "C" fn ts_map_export_text(map: *const TsMap, out: *mut *mut c_char) -> TsStatus {
    guard(|| {
        let (Some(m), false) = (map.as_ref(), out.is_null()) else {
            return fail(TsStatus::NullPointer, "map or out is null");
        };
        match CString::new(m.0.export_text()) {
            Ok(s) => {
                *out = s.into_raw();
                TsStatus::Ok
            }
            Err(e) => fail(TsStatus::InvalidArgument, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ts_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// RRT from `start` to `goal`, shortcut when `shortcut` is non-zero.
#[no_mangle]
pub unsafe extern "C" fn ts_plan_rrt(
    map: *const TsMap,
    start: TsVec3,
    goal: TsVec3,
    seed: u64,
    shortcut: i32,
    out: *mut *mut TsPath,
) -> TsStatus {
    guard(|| {
        let (Some(m), false) = (map.as_ref(), out.is_null()) else {
            return fail(TsStatus::NullPointer, "map or out is null");
        };
        let cfg = RrtConfig { rng_seed: seed, ..RrtConfig::default() };
        let r = if shortcut != 0 {
            plan_and_shortcut(&m.0, start.into(), goal.into(), &cfg)
        } else {
            plan_rrt(&m.0, start.into(), goal.into(), &cfg)
        };
        match r {
            Ok(p) => {
                *out = Box::into_raw(Box::new(TsPath(p)));
                TsStatus::Ok
            }
            Err(e) => fail(plan_status(&e), e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ts_path_len(path: *const TsPath) -> usize {
    path.as_ref().map_or(0, |p| p.0.len())
}

#[no_mangle]
pub unsafe extern "C" fn ts_path_length(path: *const TsPath) -> f64 {
    path.as_ref().map_or(0.0, |p| p.0.length())
}

#[no_mangle]
pub unsafe extern "C" fn ts_path_waypoint(path: *const TsPath, i: usize, out: *mut TsVec3) -> TsStatus {
    guard(|| {
        let (Some(p), false) = (path.as_ref(), out.is_null()) else {
            return fail(TsStatus::NullPointer, "path or out is null");
        };
        match p.0.waypoints().get(i) {
            Some(w) => {
                *out = (*w).into();
                TsStatus::Ok
            }
            None => fail(TsStatus::OutOfBounds, format!("waypoint {i} of {}", p.0.len())),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ts_path_free(path: *mut TsPath) {
    if !path.is_null() {
        drop(Box::from_raw(path));
    }
}

/// Parses and validates a TOML scenario.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_parse(text: *const c_char, out: *mut *mut TsScenario) -> TsStatus {
    guard(|| {
        if text.is_null() || out.is_null() {
            return fail(TsStatus::NullPointer, "text or out is null");
        }
        let Ok(text) = CStr::from_ptr(text).to_str() else {
            return fail(TsStatus::ParseError, "scenario text is not UTF-8");
        };
        match parse_scenario(text) {
            Ok(sc) => {
                *out = Box::into_raw(Box::new(TsScenario(sc)));
                TsStatus::Ok
            }
            Err(e) => fail(TsStatus::ParseError, e.to_string()),
        }
    })
}

#[no_mangle]
pub unsafe extern "C" fn ts_scenario_set_seed(sc: *mut TsScenario, seed: u64) -> TsStatus {
    guard(|| match sc.as_mut() {
        Some(s) => {
            s.0.rng_seed = seed;
            TsStatus::Ok
        }
        None => fail(TsStatus::NullPointer, "scenario is null"),
    })
}

#[no_mangle]
pub unsafe extern "C" fn ts_scenario_free(sc: *mut TsScenario) {
    if !sc.is_null() {
        drop(Box::from_raw(sc));
    }
}

/// Runs the mission to completion and fills `out`.
#[no_mangle]
pub unsafe extern "C" fn ts_scenario_run(sc: *const TsScenario, out: *mut TsRunReport) -> TsStatus {
    guard(|| {
        let (Some(s), false) = (sc.as_ref(), out.is_null()) else {
            return fail(TsStatus::NullPointer, "scenario or out is null");
        };
        match run_scenario(&s.0) {
            Ok(run) => {
                let r = run.report;
                *out = TsRunReport {
                    seed: r.seed,
                    stopped: i32::from(r.termination == Termination::Stopped),
                    reached_end: i32::from(r.reached_end),
                    min_dead_end_distance: r.min_dead_end_distance,
                    coverage_fraction: r.coverage_fraction,
                    returned_to_start_error: r.returned_to_start_error,
                    collision_count: r.collision_count,
                    sim_duration: r.sim_duration,
                    tick_ms_mean: r.tick_ms_mean,
                    tick_ms_p99: r.tick_ms_p99,
                };
                TsStatus::Ok
            }
            Err(e) => fail(TsStatus::ScenarioInvalid, e.to_string()),
        }
    })
}

/// Thrust margin rule over `n` component weights in grams.
#[no_mangle]
pub unsafe extern "C" fn ts_thrust_check(
    weights: *const f64,
    n: usize,
    available_thrust: f64,
    out: *mut TsThrustCheck,
) -> TsStatus {
    guard(|| {
        if (weights.is_null() && n > 0) || out.is_null() {
            return fail(TsStatus::NullPointer, "weights or out is null");
        }
        let ws = if n == 0 { &[][..] } else { std::slice::from_raw_parts(weights, n) };
        let spec = DroneSpec {
            components: ws
                .iter()
                .enumerate()
                .map(|(i, w)| Component { name: format!("part{i}"), weight: *w })
                .collect(),
            available_thrust,
        };
        match thrust_margin_check(&spec) {
            Ok(c) => {
                *out = TsThrustCheck {
                    pass: i32::from(c.pass),
                    total_weight: c.total_weight,
                    required_thrust: c.required_thrust,
                    available_thrust: c.available_thrust,
                };
                TsStatus::Ok
            }
            Err(e) => fail(TsStatus::InvalidArgument, e.to_string()),
        }
    })
}
