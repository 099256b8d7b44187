//! Eight-state exploration machine: forward exploration in 1 m steps,
//! look-around information gathering, RRT transfer to the tunnel end, zigzag
//! inspection and the return flight to the take-off point.

use std::collections::VecDeque;
use std::f64::consts::FRAC_PI_2;
use std::fmt;

use crate::error::{FsmError, PlanError};
use crate::model::{normalize_yaw, Pose, Vec3};
use crate::rrt::Path;
use crate::voxel_map::{OccupancyState, VoxelMap};
use crate::zigzag::FacePatch;

/// Length of one straight exploration step, meters.
pub const STEP_LENGTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ExplorerState {
    Init,
    Forward,
    AfterInfoGatherForward,
    PreInspection,
    Inspection,
    Backward,
    AfterInfoGatherBackward,
    Stop,
}

impl ExplorerState {
    pub const ALL: [ExplorerState; 8] = [
        ExplorerState::Init,
        ExplorerState::Forward,
        ExplorerState::AfterInfoGatherForward,
        ExplorerState::PreInspection,
        ExplorerState::Inspection,
        ExplorerState::Backward,
        ExplorerState::AfterInfoGatherBackward,
        ExplorerState::Stop,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExplorerState::Init => "Init",
            ExplorerState::Forward => "Forward",
            ExplorerState::AfterInfoGatherForward => "AfterInfoGatherForward",
            ExplorerState::PreInspection => "PreInspection",
            ExplorerState::Inspection => "Inspection",
            ExplorerState::Backward => "Backward",
            ExplorerState::AfterInfoGatherBackward => "AfterInfoGatherBackward",
            ExplorerState::Stop => "Stop",
        }
    }

    pub fn is_terminal(self) -> bool {
        self == ExplorerState::Stop
    }
}

impl fmt::Display for ExplorerState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum PlannerAction {
    TakeOff,
    LookAround,
    AddNewForwardPath,
    AddNewBackwardPath,
    RrtToGoal,
    ZigzagScan,
    HoverThenLand,
}

impl PlannerAction {
    pub const ALL: [PlannerAction; 7] = [
        PlannerAction::TakeOff,
        PlannerAction::LookAround,
        PlannerAction::AddNewForwardPath,
        PlannerAction::AddNewBackwardPath,
        PlannerAction::RrtToGoal,
        PlannerAction::ZigzagScan,
        PlannerAction::HoverThenLand,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PlannerAction::TakeOff => "TakeOff",
            PlannerAction::LookAround => "LookAround",
            PlannerAction::AddNewForwardPath => "AddNewForwardPath",
            PlannerAction::AddNewBackwardPath => "AddNewBackwardPath",
            PlannerAction::RrtToGoal => "RrtToGoal",
            PlannerAction::ZigzagScan => "ZigzagScan",
            PlannerAction::HoverThenLand => "HoverThenLand",
        }
    }
}

impl fmt::Display for PlannerAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Observations available at a decision point.
///
/// `path_found` is the outcome of the planning query relevant to the
/// current state: the 1 m forward check in the forward phase, the RRT
/// query after `RrtToGoal`, and the straight step toward the start in the
/// backward phase.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Hash)]
pub struct Events {
    pub path_done: bool,
    pub path_found: bool,
    pub collision_predicted: bool,
    pub scan_done: bool,
    pub at_start: bool,
}

/// Mission bookkeeping carried between decisions.
#[derive(Debug, Clone, PartialEq)]
pub struct ExplorerContext {
    pub pose: Pose,
    /// Recorded once, at the hover point after take-off.
    pub start: Option<Vec3>,
    pub tunnel_axis: Vec3,
    pub active_path: Option<Path>,
    pub progress: usize,
    pub last_action: Option<PlannerAction>,
    /// Look-arounds spent in the current info-gathering episode.
    pub look_arounds: u32,
    pub max_look_arounds: u32,
}

impl ExplorerContext {
    pub fn new(pose: Pose, tunnel_axis: Vec3) -> Self {
        Self {
            pose,
            start: None,
            tunnel_axis: tunnel_axis.normalized().unwrap_or(Vec3::X),
            active_path: None,
            progress: 0,
            last_action: None,
            look_arounds: 0,
            max_look_arounds: 1,
        }
    }

    /// Sets the start point; later calls are ignored.
    pub fn record_start(&mut self, p: Vec3) {
        if self.start.is_none() {
            self.start = Some(p);
        }
    }
}

fn illegal(state: ExplorerState, reason: &'static str) -> FsmError {
    FsmError::IllegalTransition { state: state.name(), reason }
}

/// One decision of the exploration machine. Called when the previous action
/// finished, failed to find a path, or was interrupted by a predicted
/// collision (in which case the active path is already discarded and the
/// state's planning branch is re-entered).
pub fn fsm_step(
    state: ExplorerState,
    ctx: &ExplorerContext,
    ev: Events,
) -> Result<(ExplorerState, PlannerAction), FsmError> {
    use ExplorerState as S;
    use PlannerAction as A;

    if state == S::Stop {
        return Ok((S::Stop, A::HoverThenLand));
    }
    if ev.path_done && ev.collision_predicted {
        return Err(illegal(state, "path cannot both finish and be interrupted"));
    }
    if ev.scan_done && state != S::Inspection {
        return Err(illegal(state, "scan_done outside inspection"));
    }

    let forward_branch = |found: bool| {
        if found {
            (S::Forward, A::AddNewForwardPath)
        } else {
            (S::AfterInfoGatherForward, A::LookAround)
        }
    };
    let backward_branch = |found: bool| {
        if found {
            (S::Backward, A::AddNewBackwardPath)
        } else {
            (S::AfterInfoGatherBackward, A::LookAround)
        }
    };

    let next = match state {
        S::Init => match ctx.last_action {
            None => (S::Init, A::TakeOff),
            Some(A::TakeOff) => (S::Init, A::LookAround),
            Some(A::LookAround) => forward_branch(ev.path_found),
            Some(_) => return Err(illegal(state, "unexpected action during initialisation")),
        },
        S::Forward => forward_branch(ev.path_found),
        S::AfterInfoGatherForward => {
            if ev.path_found {
                (S::Forward, A::AddNewForwardPath)
            } else if ctx.look_arounds < ctx.max_look_arounds {
                (S::AfterInfoGatherForward, A::LookAround)
            } else {
                (S::PreInspection, A::RrtToGoal)
            }
        }
        // without a route to the end the scan runs from the closest vantage
        S::PreInspection => {
            if ev.collision_predicted {
                (S::PreInspection, A::RrtToGoal)
            } else {
                (S::Inspection, A::ZigzagScan)
            }
        }
        S::Inspection => {
            if ev.scan_done {
                backward_branch(ev.path_found)
            } else {
                (S::Inspection, A::ZigzagScan)
            }
        }
        S::Backward => {
            if ev.at_start {
                (S::Stop, A::HoverThenLand)
            } else {
                backward_branch(ev.path_found)
            }
        }
        S::AfterInfoGatherBackward => {
            if ev.at_start {
                (S::Stop, A::HoverThenLand)
            } else {
                match ctx.last_action {
                    Some(A::LookAround) if ev.path_found => (S::Backward, A::AddNewBackwardPath),
                    Some(A::LookAround) => (S::AfterInfoGatherBackward, A::RrtToGoal),
                    Some(A::RrtToGoal) if ev.collision_predicted => {
                        (S::AfterInfoGatherBackward, A::RrtToGoal)
                    }
                    // arrived by RRT, or no RRT path exists either
                    Some(A::RrtToGoal) => (S::Stop, A::HoverThenLand),
                    _ => return Err(illegal(state, "expected a look-around or RRT result")),
                }
            }
        }
        S::Stop => unreachable!(),
    };
    Ok(next)
}

/// Yaw setpoints of the look-around: 90° clockwise, 180° counter-clockwise,
/// 90° clockwise. Clockwise is negative yaw.
pub fn look_around_sequence(current_yaw: f64) -> [f64; 3] {
    [
        normalize_yaw(current_yaw - FRAC_PI_2),
        normalize_yaw(current_yaw + FRAC_PI_2),
        normalize_yaw(current_yaw),
    ]
}

/// Relative yaw increments of the look-around, for an unwrapped heading.
pub const LOOK_AROUND_DELTAS: [f64; 3] = [-FRAC_PI_2, 2.0 * FRAC_PI_2, -FRAC_PI_2];

/// A 1 m straight step along the current heading, if it is collision-free.
pub fn try_forward(map: &VoxelMap, pose: &Pose, inflate: f64) -> Option<Path> {
    let a = pose.position;
    let b = a + pose.heading() * STEP_LENGTH;
    map.segment_collision_free(a, b, inflate)
        .then(|| Path::with_yaws([(a, pose.yaw()), (b, pose.yaw())]).expect("two points"))
}

/// A straight step of at most 1 m from `from` toward `target`.
pub fn try_step_toward(map: &VoxelMap, from: Vec3, target: Vec3, inflate: f64) -> Option<Path> {
    let delta = target - from;
    let dist = delta.norm();
    if dist < 1e-9 {
        return Path::from_points([from]);
    }
    let to = from + delta * (STEP_LENGTH.min(dist) / dist);
    let yaw = delta.y.atan2(delta.x);
    map.segment_collision_free(from, to, inflate)
        .then(|| Path::with_yaws([(from, yaw), (to, yaw)]).expect("two points"))
}

/// Locates the tunnel end: the free-space pocket deepest along the tunnel
/// axis (ties broken by lowest voxel index), its standoff vantage point, and
/// the occupied wall rectangle just beyond it.
pub fn detect_tunnel_end_goal(
    map: &VoxelMap,
    tunnel_axis: Vec3,
    standoff: f64,
) -> Result<(Vec3, FacePatch), PlanError> {
    let axis = tunnel_axis.normalized().ok_or(PlanError::NoFreeSpace)?;
    let res = map.resolution();
    let depth = |idx: [usize; 3]| map.voxel_center(idx).dot(axis);

    // depth layers holding under a tenth of the densest layer's free voxels
    // are grazing-ray noise at wall corners, not open tunnel
    let key = |s: f64| (s / res).round() as i64;
    let mut counts = std::collections::BTreeMap::<i64, usize>::new();
    for idx in map.voxels_in_state(OccupancyState::Free) {
        *counts.entry(key(depth(idx))).or_default() += 1;
    }
    let densest = counts.values().copied().max().ok_or(PlanError::NoFreeSpace)?;
    let end_key = counts
        .iter()
        .rev()
        .find(|(_, c)| **c * 10 >= densest)
        .map(|(k, _)| *k)
        .ok_or(PlanError::NoFreeSpace)?;
    // iteration order is lexicographic, so the first hit wins ties
    let anchor = map
        .voxels_in_state(OccupancyState::Free)
        .find(|i| key(depth(*i)) == end_key)
        .ok_or(PlanError::NoFreeSpace)?;
    let max_s = depth(anchor);
    let in_layer = |idx: [usize; 3]| {
        let s = depth(idx);
        map.state_at(idx) == OccupancyState::Free && s >= max_s - res - 1e-9 && s <= max_s + 1e-9
    };

    // pocket = 26-connected component of the end layer containing the anchor
    let dims = map.dims();
    let mut seen = std::collections::BTreeSet::from([anchor]);
    let mut queue = VecDeque::from([anchor]);
    while let Some(c) = queue.pop_front() {
        for dx in -1i64..=1 {
            for dy in -1i64..=1 {
                for dz in -1i64..=1 {
                    let n = [c[0] as i64 + dx, c[1] as i64 + dy, c[2] as i64 + dz];
                    if n.iter().zip(dims).any(|(v, d)| *v < 0 || *v >= d as i64) {
                        continue;
                    }
                    let n = [n[0] as usize, n[1] as usize, n[2] as usize];
                    if in_layer(n) && seen.insert(n) {
                        queue.push_back(n);
                    }
                }
            }
        }
    }
    let pocket: Vec<Vec3> = seen.iter().map(|i| map.voxel_center(*i)).collect();
    let centroid = pocket.iter().fold(Vec3::ZERO, |acc, p| acc + *p) * (1.0 / pocket.len() as f64);

    let normal = -axis;
    let probe = FacePatch { center: Vec3::ZERO, width: 1.0, height: 1.0, normal };
    let (lat, up) = (probe.lateral(), probe.up());
    let face_s = max_s + res / 2.0;

    // cross-section spanned by the pocket
    let (mut l_lo, mut l_hi, mut u_lo, mut u_hi) = bounds_of(pocket.iter().map(|p| (p.dot(lat), p.dot(up))));
    // occupied wall voxels in the slab right behind the pocket
    let wall: Vec<(f64, f64)> = map
        .voxels_in_state(OccupancyState::Occupied)
        .map(|i| map.voxel_center(i))
        .filter(|c| {
            let s = c.dot(axis);
            s > max_s + 1e-9 && s <= max_s + 2.0 * res + 1e-9
        })
        .map(|c| (c.dot(lat), c.dot(up)))
        .filter(|(l, u)| *l >= l_lo - 1e-9 && *l <= l_hi + 1e-9 && *u >= u_lo - 1e-9 && *u <= u_hi + 1e-9)
        .collect();
    if !wall.is_empty() {
        (l_lo, l_hi, u_lo, u_hi) = bounds_of(wall.into_iter());
    }
    let half = res / 2.0;
    let (l_lo, l_hi, u_lo, u_hi) = (l_lo - half, l_hi + half, u_lo - half, u_hi + half);
    let base = axis * face_s;
    let center = base + lat * ((l_lo + l_hi) / 2.0) + up * ((u_lo + u_hi) / 2.0);
    let face = FacePatch { center, width: l_hi - l_lo, height: u_hi - u_lo, normal };

    // vantage point: pocket centroid moved to `standoff` in front of the face,
    // then walked back toward the face until it sits in free space
    let along = centroid.dot(axis);
    let mut goal = centroid + axis * (face_s - standoff - along);
    let step = res / 4.0;
    let mut guard = 0;
    while map.query(goal) != OccupancyState::Free && guard < 100_000 {
        if goal.dot(axis) >= max_s {
            goal = map.voxel_center(anchor);
            break;
        }
        goal += axis * step;
        guard += 1;
    }
    Ok((goal, face))
}

fn bounds_of<I: Iterator<Item = (f64, f64)>>(it: I) -> (f64, f64, f64, f64) {
    it.fold(
        (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY),
        |(a, b, c, d), (l, u)| (a.min(l), b.max(l), c.min(u), d.max(u)),
    )
}
