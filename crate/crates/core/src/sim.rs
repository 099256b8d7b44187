//! Deterministic tunnel simulation: ground-truth scene, walking obstacles,
//! wind, a point-mass drone under PD position control, and the exploration
//! machine driven at the planner rate.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::SimError;
use crate::fsm::{
    detect_tunnel_end_goal, fsm_step, try_forward, try_step_toward, Events, ExplorerContext,
    ExplorerState, PlannerAction, LOOK_AROUND_DELTAS, STEP_LENGTH,
};
use crate::model::{fuse_state_estimate, normalize_yaw, thrust_margin_check, ControlCommand, DroneSpec, Pose, Vec3};
use crate::rrt::{plan_and_shortcut, Path, RrtConfig};
use crate::sensor::{render_depth_scan_noisy, AaBox, Cylinder, DepthCamera, Scene};
use crate::voxel_map::{MapParams, OccupancyState, VoxelMap};
use crate::zigzag::{plan_zigzag, ZigzagConfig};

const WALL_THICKNESS: f64 = 0.2;
const MAP_PADDING: f64 = 0.5;
/// Coverage grid pitch on the inspected face, meters.
pub const COVERAGE_GRID: f64 = 0.05;
/// A run counts as having reached the end when it came this close to it.
pub const END_REACH_RADIUS: f64 = 1.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TunnelSpec {
    pub length: f64,
    pub width: f64,
    pub height: f64,
    /// Horizontal cardinal direction (±x or ±y) from entrance to dead end.
    #[serde(default = "default_axis")]
    pub axis: Vec3,
}

fn default_axis() -> Vec3 {
    Vec3::X
}

impl TunnelSpec {
    fn lateral(&self) -> Vec3 {
        Vec3::Z.cross(self.axis)
    }

    /// Tunnel-frame (along, lateral, up) to world coordinates. The entrance
    /// centre on the floor is the world origin.
    pub fn to_world(&self, along: f64, lateral: f64, up: f64) -> Vec3 {
        self.axis * along + self.lateral() * lateral + Vec3::Z * up
    }

    fn world_box(&self, a: (f64, f64, f64), b: (f64, f64, f64)) -> AaBox {
        let p = self.to_world(a.0, a.1, a.2);
        let q = self.to_world(b.0, b.1, b.2);
        AaBox::new(
            Vec3::new(p.x.min(q.x), p.y.min(q.y), p.z.min(q.z)),
            Vec3::new(p.x.max(q.x), p.y.max(q.y), p.z.max(q.z)),
        )
    }

    /// Floor, ceiling, both side walls and the dead-end wall. The entrance is open.
    pub fn walls(&self) -> Vec<AaBox> {
        let (l, hw, h, t) = (self.length, self.width / 2.0, self.height, WALL_THICKNESS);
        vec![
            self.world_box((0.0, -hw - t, -t), (l + t, hw + t, 0.0)),
            self.world_box((0.0, -hw - t, h), (l + t, hw + t, h + t)),
            self.world_box((0.0, hw, -t), (l + t, hw + t, h + t)),
            self.world_box((0.0, -hw - t, -t), (l + t, -hw, h + t)),
            self.dead_end(),
        ]
    }

    pub fn dead_end(&self) -> AaBox {
        let (l, hw, h, t) = (self.length, self.width / 2.0, self.height, WALL_THICKNESS);
        self.world_box((l, -hw - t, -t), (l + t, hw + t, h + t))
    }

    /// World box covered by the occupancy map.
    pub fn map_bounds(&self) -> (Vec3, Vec3) {
        let p = MAP_PADDING;
        let b = self.world_box(
            (-p, -self.width / 2.0 - p, -p),
            (self.length + p, self.width / 2.0 + p, self.height + p),
        );
        (b.min, b.max)
    }
}

/// A walker moving back and forth on a straight track.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObstacleTrack {
    #[serde(default = "default_walker_radius")]
    pub radius: f64,
    #[serde(default = "default_walker_height")]
    pub height: f64,
    pub endpoint_a: Vec3,
    pub endpoint_b: Vec3,
    pub speed: f64,
    /// Fraction of a full out-and-back cycle, in [0, 1).
    #[serde(default)]
    pub phase: f64,
}

fn default_walker_radius() -> f64 {
    0.3
}

fn default_walker_height() -> f64 {
    1.8
}

/// Triangle-wave position along the track at time `t`.
pub fn obstacle_pose(track: &ObstacleTrack, t: f64) -> Vec3 {
    let len = track.endpoint_a.distance(track.endpoint_b);
    let cycles = if len > 0.0 { t * track.speed / len } else { 0.0 };
    let u = (cycles + 2.0 * track.phase.clamp(0.0, 1.0)).rem_euclid(2.0);
    let frac = if u <= 1.0 { u } else { 2.0 - u };
    track.endpoint_a.lerp(track.endpoint_b, frac)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize, PartialOrd, Ord)]
pub enum WindLevel {
    #[default]
    None,
    Low,
    Middle,
    High,
}

impl WindLevel {
    pub const ALL: [WindLevel; 4] = [WindLevel::None, WindLevel::Low, WindLevel::Middle, WindLevel::High];

    pub fn name(self) -> &'static str {
        match self {
            WindLevel::None => "None",
            WindLevel::Low => "Low",
            WindLevel::Middle => "Middle",
            WindLevel::High => "High",
        }
    }

    /// Anemometer speed measured in the hovering test, m/s.
    pub fn hover_speed(self) -> f64 {
        match self {
            WindLevel::None => 0.0,
            WindLevel::Low => 2.30,
            WindLevel::Middle => 2.71,
            WindLevel::High => 3.24,
        }
    }

    /// Anemometer speed measured in the going-straight test, m/s.
    pub fn straight_speed(self) -> f64 {
        match self {
            WindLevel::None => 0.0,
            WindLevel::Low => 1.86,
            WindLevel::Middle => 2.36,
            WindLevel::High => 2.71,
        }
    }
}

impl std::str::FromStr for WindLevel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "none" | "no" => Ok(WindLevel::None),
            "low" => Ok(WindLevel::Low),
            "middle" | "mid" => Ok(WindLevel::Middle),
            "high" => Ok(WindLevel::High),
            other => Err(format!("unknown wind level `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindProfile {
    #[serde(default)]
    pub level: WindLevel,
    /// m/s
    #[serde(default)]
    pub speed: f64,
    #[serde(default = "default_wind_direction")]
    pub direction: Vec3,
    /// Drag gain, N per (m/s)².
    #[serde(default = "default_wind_gain")]
    pub gain: f64,
    /// Wind acts only inside this box; everywhere when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub region: Option<AaBox>,
}

fn default_wind_direction() -> Vec3 {
    Vec3::X
}

fn default_wind_gain() -> f64 {
    0.1
}

impl Default for WindProfile {
    fn default() -> Self {
        Self {
            level: WindLevel::None,
            speed: 0.0,
            direction: default_wind_direction(),
            gain: default_wind_gain(),
            region: None,
        }
    }
}

impl WindProfile {
    pub fn calm() -> Self {
        Self::default()
    }

    /// Wind velocity felt at `p`.
    pub fn velocity_at(&self, p: Vec3) -> Vec3 {
        let inside = self.region.map_or(true, |b| b.distance_to(p) == 0.0);
        if inside {
            self.direction.normalized().unwrap_or(Vec3::ZERO) * self.speed
        } else {
            Vec3::ZERO
        }
    }
}

/// Quadratic relative-flow drag, `gain·|w−v|·(w−v)/mass`, in m/s².
pub fn wind_accel(wind_velocity: Vec3, drone_velocity: Vec3, gain: f64, mass: f64) -> Vec3 {
    let rel = wind_velocity - drone_velocity;
    rel * (gain * rel.norm() / mass)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DynamicsParams {
    /// s⁻²
    pub kp: f64,
    /// s⁻¹
    pub kd: f64,
    pub v_max: f64,
    pub yaw_gain: f64,
    pub yaw_rate_max: f64,
    pub drone_radius: f64,
    /// Standard deviation of the per-axis random force, N.
    pub noise_force: Vec3,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        Self {
            kp: 4.0,
            kd: 3.0,
            v_max: 1.0,
            yaw_gain: 3.0,
            yaw_rate_max: 1.0,
            drone_radius: 0.25,
            noise_force: Vec3::ZERO,
        }
    }
}

/// True vehicle state. Yaw is kept unwrapped so that commanded rotations
/// keep their direction.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DroneState {
    pub position: Vec3,
    pub velocity: Vec3,
    pub yaw: f64,
    pub yaw_rate: f64,
}

impl DroneState {
    pub fn at(position: Vec3, yaw: f64) -> Self {
        Self { position, velocity: Vec3::ZERO, yaw, yaw_rate: 0.0 }
    }

    pub fn pose(&self) -> Pose {
        Pose::new(self.position, self.yaw)
    }
}

/// One integration step of the PD position loop. `extra_accel` carries wind
/// and disturbance terms. Velocity and position are integrated
/// semi-implicitly and speed is clamped to `v_max`.
pub fn controller_step(
    state: &mut DroneState,
    target: Vec3,
    target_yaw: f64,
    extra_accel: Vec3,
    params: &DynamicsParams,
    dt: f64,
) -> ControlCommand {
    let acc = (target - state.position) * params.kp - state.velocity * params.kd + extra_accel;
    let cmd = ControlCommand::clamped(state.velocity + acc * dt, params.v_max);
    state.velocity = cmd.as_vec();
    state.position += state.velocity * dt;
    let err = target_yaw - state.yaw;
    state.yaw_rate = (params.yaw_gain * err).clamp(-params.yaw_rate_max, params.yaw_rate_max);
    state.yaw += state.yaw_rate * dt;
    cmd
}

/// Ground-truth contact test: strictly closer than the clearance radius to
/// any wall, or to any walker axis within its height band.
pub fn check_collision(position: Vec3, scene: &Scene, drone_radius: f64) -> bool {
    scene.boxes.iter().any(|b| b.distance_to(position) < drone_radius)
        || scene.cylinders.iter().any(|c| {
            position.z >= c.base.z - drone_radius
                && position.z <= c.base.z + c.height + drone_radius
                && c.axis_distance(position) < drone_radius + c.radius
        })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExplorerParams {
    /// Take-off point, meters along the tunnel axis from the entrance.
    pub start_offset: f64,
    pub takeoff_altitude: f64,
    pub max_look_arounds: u32,
    /// Distance of the active path re-checked every planner tick.
    pub collision_lookahead: f64,
    pub hover_before_land: f64,
    pub fusion_weight: f64,
    /// Standard deviation of the localization fix, meters.
    pub localization_noise: f64,
    pub at_start_tolerance: f64,
    pub waypoint_tolerance: f64,
}

impl Default for ExplorerParams {
    fn default() -> Self {
        Self {
            start_offset: 0.5,
            takeoff_altitude: 1.0,
            max_look_arounds: 1,
            collision_lookahead: 1.5,
            hover_before_land: 3.0,
            fusion_weight: 0.5,
            localization_noise: 0.01,
            at_start_tolerance: 0.2,
            waypoint_tolerance: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    #[serde(default)]
    pub rng_seed: u64,
    /// Physics step, s.
    #[serde(default = "default_sim_dt")]
    pub sim_dt: f64,
    /// Planner tick, s.
    #[serde(default = "default_planner_period")]
    pub planner_period: f64,
    /// Simulated seconds before the run is abandoned.
    #[serde(default = "default_timeout")]
    pub timeout: f64,
    pub tunnel: TunnelSpec,
    #[serde(default)]
    pub obstacles: Vec<ObstacleTrack>,
    #[serde(default)]
    pub wind: WindProfile,
    #[serde(default = "DroneSpec::reference")]
    pub drone: DroneSpec,
    #[serde(default)]
    pub dynamics: DynamicsParams,
    #[serde(default)]
    pub map: MapParams,
    #[serde(default)]
    pub camera: DepthCamera,
    #[serde(default)]
    pub rrt: RrtConfig,
    #[serde(default)]
    pub zigzag: ZigzagConfig,
    #[serde(default)]
    pub explorer: ExplorerParams,
}

fn default_sim_dt() -> f64 {
    1.0 / 120.0
}

fn default_planner_period() -> f64 {
    1.0 / 30.0
}

fn default_timeout() -> f64 {
    300.0
}

impl Scenario {
    /// Empty tunnel of the given size with every other setting at its default.
    pub fn with_tunnel(length: f64, width: f64, height: f64) -> Self {
        Self {
            rng_seed: 0,
            sim_dt: default_sim_dt(),
            planner_period: default_planner_period(),
            timeout: default_timeout(),
            tunnel: TunnelSpec { length, width, height, axis: Vec3::X },
            obstacles: vec![],
            wind: WindProfile::default(),
            drone: DroneSpec::reference(),
            dynamics: DynamicsParams::default(),
            map: MapParams::default(),
            camera: DepthCamera::default(),
            rrt: RrtConfig::default(),
            zigzag: ZigzagConfig { margin: 0.45, ..Default::default() },
            explorer: ExplorerParams::default(),
        }
    }

    /// The 20 m × 4 m × 3 m tunnel with two workers walking along its left
    /// side at 0.5 m/s.
    pub fn reference_tunnel(seed: u64) -> Self {
        let walker = |a: f64, b: f64, phase: f64| ObstacleTrack {
            radius: 0.3,
            height: 1.8,
            endpoint_a: Vec3::new(a, -1.2, 0.0),
            endpoint_b: Vec3::new(b, -1.2, 0.0),
            speed: 0.5,
            phase,
        };
        Self {
            rng_seed: seed,
            obstacles: vec![walker(4.0, 12.0, 0.0), walker(9.0, 16.5, 0.5)],
            ..Self::with_tunnel(20.0, 4.0, 3.0)
        }
    }

    /// Physics steps per planner tick.
    pub fn substeps(&self) -> usize {
        (self.planner_period / self.sim_dt).round().max(1.0) as usize
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: String| Err(SimError::ScenarioInvalid(m));
        let t = &self.tunnel;
        for (name, v) in [("tunnel.length", t.length), ("tunnel.width", t.width), ("tunnel.height", t.height)] {
            if !(v > 0.0) || !v.is_finite() {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let cardinal = [Vec3::X, -Vec3::X, Vec3::Y, -Vec3::Y];
        if !cardinal.iter().any(|c| c.distance(t.axis) < 1e-9) {
            return bad("tunnel.axis must be one of ±x, ±y".into());
        }
        if !(self.sim_dt > 0.0) || !(self.planner_period > 0.0) {
            return bad("sim_dt and planner_period must be positive".into());
        }
        let ratio = self.planner_period / self.sim_dt;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return bad("sim_dt must divide planner_period".into());
        }
        if !(self.timeout > 0.0) {
            return bad("timeout must be positive".into());
        }
        for (i, o) in self.obstacles.iter().enumerate() {
            if !(o.speed >= 0.0) {
                return bad(format!("obstacles[{i}].speed must be non-negative"));
            }
            if !(o.radius > 0.0) || !(o.height > 0.0) {
                return bad(format!("obstacles[{i}].radius and height must be positive"));
            }
        }
        if !(self.wind.speed >= 0.0) || !(self.wind.gain >= 0.0) {
            return bad("wind.speed and wind.gain must be non-negative".into());
        }
        if (self.wind.level == WindLevel::None) != (self.wind.speed == 0.0) {
            return bad("wind.speed must be zero exactly when wind.level is None".into());
        }
        let d = &self.dynamics;
        if !(d.kp > 0.0 && d.kd >= 0.0 && d.v_max > 0.0 && d.drone_radius > 0.0 && d.yaw_rate_max > 0.0) {
            return bad("dynamics gains, v_max, yaw_rate_max and drone_radius must be positive".into());
        }
        self.map.validate().or_else(|e| bad(format!("map: {e}")))?;
        self.camera.validate().or_else(|e| bad(format!("camera: {e}")))?;
        self.rrt.validate().or_else(|e| bad(format!("rrt: {e}")))?;
        self.zigzag.validate(&self.camera).or_else(|e| bad(format!("zigzag: {e}")))?;
        let e = &self.explorer;
        if !(0.0..=1.0).contains(&e.fusion_weight) {
            return bad("explorer.fusion_weight must lie in [0, 1]".into());
        }
        if !(e.start_offset > 0.0 && e.start_offset < t.length) {
            return bad("explorer.start_offset must lie inside the tunnel".into());
        }
        if !(e.takeoff_altitude > 0.0 && e.takeoff_altitude < t.height) {
            return bad("explorer.takeoff_altitude must lie below the ceiling".into());
        }
        match thrust_margin_check(&self.drone) {
            Ok(c) if c.pass => Ok(()),
            Ok(c) => bad(format!(
                "drone thrust {} gf is below the required {} gf",
                c.available_thrust, c.required_thrust
            )),
            Err(e) => bad(e.to_string()),
        }
    }

    /// Ground-truth scene at time `t`.
    pub fn scene_at(&self, t: f64) -> Scene {
        Scene {
            boxes: self.tunnel.walls(),
            cylinders: self
                .obstacles
                .iter()
                .map(|o| Cylinder { base: obstacle_pose(o, t), radius: o.radius, height: o.height })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    Stopped,
    Timeout,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub seed: u64,
    pub termination: Termination,
    pub final_state: String,
    pub reached_end: bool,
    pub min_dead_end_distance: f64,
    pub coverage_fraction: f64,
    pub returned_to_start_error: f64,
    pub collision_count: u32,
    pub sim_duration: f64,
    pub planner_ticks: u64,
    /// Wall-clock statistics; these are the only non-reproducible fields.
    pub tick_ms_mean: f64,
    pub tick_ms_p99: f64,
    pub tick_ms_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub t: f64,
    pub position: Vec3,
    pub yaw: f64,
    pub state: ExplorerState,
    pub action: Option<PlannerAction>,
    pub wind_level: WindLevel,
}

pub const TRAJECTORY_HEADER: &str = "t,x,y,z,yaw,fsm_state,action,wind_level";

/// CSV with a mandatory header and 6-decimal fixed-point numbers.
pub fn trajectory_csv(rows: &[TrajectoryRow]) -> String {
    let mut out = String::with_capacity(rows.len() * 80);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{:.6},{:.6},{:.6},{:.6},{:.6},{},{},{}",
            r.t,
            r.position.x,
            r.position.y,
            r.position.z,
            r.yaw,
            r.state.name(),
            r.action.map_or("None", |a| a.name()),
            r.wind_level.name()
        );
    }
    out
}

pub struct RunOutput {
    pub report: RunReport,
    pub trajectory: Vec<TrajectoryRow>,
    pub map: VoxelMap,
    /// Per-tick wall-clock planner cost, milliseconds.
    pub tick_ms: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum SetpointKind {
    Move,
    Turn,
    Dwell(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Setpoint {
    pos: Vec3,
    yaw: f64,
    kind: SetpointKind,
    pos_tol: f64,
    yaw_tol: f64,
    zig_index: Option<usize>,
}

const TURN_THRESHOLD: f64 = 0.3;
const TURN_TOLERANCE: f64 = 0.1;
const LOOK_AROUND_TOLERANCE: f64 = 0.02;
const MAX_ZIGZAG_RESUMES: u32 = 30;
const LANDED_ALTITUDE: f64 = 0.1;

struct Inspection {
    waypoints: Vec<(Vec3, f64)>,
    next: usize,
    surveyed: bool,
    replanned: bool,
    resumes: u32,
}

struct Sim<'a> {
    sc: &'a Scenario,
    rng: ChaCha8Rng,
    drone: DroneState,
    map: VoxelMap,
    state: ExplorerState,
    ctx: ExplorerContext,
    queue: VecDeque<Setpoint>,
    hold: Setpoint,
    action: Option<PlannerAction>,
    motion: bool,
    rrt_found: bool,
    dwell_since: Option<f64>,
    flying: bool,
    landing: bool,
    inspection: Option<Inspection>,
    plans: u64,
    t: f64,
    estimate: Vec3,
}

impl<'a> Sim<'a> {
    fn new(sc: &'a Scenario) -> Result<Self, SimError> {
        let (lo, hi) = sc.tunnel.map_bounds();
        let map = VoxelMap::covering(lo, hi, sc.map)
            .map_err(|e| SimError::ScenarioInvalid(format!("map: {e}")))?;
        let start = sc.tunnel.to_world(sc.explorer.start_offset, 0.0, LANDED_ALTITUDE);
        let axis = sc.tunnel.axis;
        let yaw0 = axis.y.atan2(axis.x);
        let drone = DroneState::at(start, yaw0);
        let hold = Setpoint {
            pos: start,
            yaw: yaw0,
            kind: SetpointKind::Move,
            pos_tol: 0.05,
            yaw_tol: TURN_TOLERANCE,
            zig_index: None,
        };
        let mut ctx = ExplorerContext::new(drone.pose(), axis);
        ctx.max_look_arounds = sc.explorer.max_look_arounds;
        Ok(Self {
            sc,
            rng: ChaCha8Rng::seed_from_u64(sc.rng_seed),
            drone,
            map,
            state: ExplorerState::Init,
            ctx,
            queue: VecDeque::new(),
            hold,
            action: None,
            motion: false,
            rrt_found: false,
            dwell_since: None,
            flying: false,
            landing: false,
            inspection: None,
            plans: 0,
            t: 0.0,
            estimate: start,
        })
    }

    fn inflate(&self) -> f64 {
        self.sc.rrt.inflate
    }

    fn est_pose(&self) -> Pose {
        Pose::new(self.estimate, self.drone.yaw)
    }

    /// Where the next step starts: the commanded hold point once the vehicle
    /// has arrived there, so consecutive steps chain without shrinking.
    fn plan_pose(&self) -> Pose {
        if self.hold.pos.distance(self.estimate) < 2.0 * self.sc.explorer.waypoint_tolerance {
            Pose::new(self.hold.pos, self.hold.yaw)
        } else {
            self.est_pose()
        }
    }

    fn unwrap_near(&self, reference: f64, heading: f64) -> f64 {
        reference + normalize_yaw(heading - reference)
    }

    fn sense(&mut self, scene: &Scene) {
        let sigma = self.sc.explorer.localization_noise;
        let truth = self.drone.position;
        let fix = if sigma > 0.0 {
            let n = Normal::new(0.0, sigma).expect("finite sigma");
            truth + Vec3::new(n.sample(&mut self.rng), n.sample(&mut self.rng), n.sample(&mut self.rng))
        } else {
            truth
        };
        self.estimate = fuse_state_estimate(truth, fix, self.sc.explorer.fusion_weight)
            .expect("weight validated")
            .estimate;
        let mut scan = render_depth_scan_noisy(scene, &self.sc.camera, &self.drone.pose(), &mut self.rng);
        scan.sensor_pose = self.est_pose();
        self.map.clear_unknown_around(self.estimate, self.inflate() + self.map.resolution());
        if let Err(e) = self.map.insert_scan(&scan) {
            log::warn!("scan dropped: {e}");
        }
        self.ctx.pose = self.est_pose();
    }

    fn target(&self) -> Setpoint {
        *self.queue.front().unwrap_or(&self.hold)
    }

    fn reached(&mut self, sp: &Setpoint) -> bool {
        let pos_ok = self.drone.position.distance(sp.pos) < sp.pos_tol;
        let yaw_ok = (self.drone.yaw - sp.yaw).abs() < sp.yaw_tol;
        match sp.kind {
            SetpointKind::Move => pos_ok && yaw_ok,
            SetpointKind::Turn => yaw_ok,
            SetpointKind::Dwell(secs) => {
                let since = *self.dwell_since.get_or_insert(self.t);
                self.t - since >= secs - 1e-9
            }
        }
    }

    /// Pops reached setpoints; true when the queue ran empty.
    fn advance(&mut self) -> bool {
        while let Some(sp) = self.queue.front().copied() {
            if !self.reached(&sp) {
                return false;
            }
            self.queue.pop_front();
            self.hold = Setpoint { kind: SetpointKind::Move, ..sp };
            if let SetpointKind::Dwell(_) = sp.kind {
                self.dwell_since = None;
                if self.action == Some(PlannerAction::HoverThenLand) {
                    self.landing = true;
                    self.flying = false;
                }
            }
            if let (Some(i), Some(insp)) = (sp.zig_index, self.inspection.as_mut()) {
                insp.next = insp.next.max(i + 1);
            }
        }
        true
    }

    /// Remaining path polyline, truncated at the lookahead distance, is still free.
    fn lookahead_clear(&self) -> bool {
        let mut from = self.estimate;
        let mut budget = self.sc.explorer.collision_lookahead;
        for sp in self.queue.iter().filter(|s| s.kind == SetpointKind::Move) {
            if budget <= 0.0 {
                break;
            }
            let d = from.distance(sp.pos);
            let to = if d > budget { from.lerp(sp.pos, budget / d) } else { sp.pos };
            if !self.map.segment_collision_free(from, to, self.inflate()) {
                return false;
            }
            budget -= d;
            from = sp.pos;
        }
        true
    }

    fn hold_here(&mut self) {
        self.queue.clear();
        self.hold = Setpoint {
            pos: self.drone.position,
            yaw: self.drone.yaw,
            kind: SetpointKind::Move,
            pos_tol: 0.05,
            yaw_tol: TURN_TOLERANCE,
            zig_index: None,
        };
    }

    fn push_path(&mut self, path: &Path, fixed_yaw: Option<f64>, tag_offset: Option<usize>) {
        let mut yaw = self.queue.back().map_or(self.hold.yaw, |s| s.yaw);
        let tol = self.sc.explorer.waypoint_tolerance;
        for (k, (a, b)) in path.segments().enumerate() {
            let heading = fixed_yaw.unwrap_or_else(|| (b.y - a.y).atan2(b.x - a.x));
            let target = self.unwrap_near(yaw, heading);
            if (target - yaw).abs() > TURN_THRESHOLD {
                self.queue.push_back(Setpoint {
                    pos: a,
                    yaw: target,
                    kind: SetpointKind::Turn,
                    pos_tol: f64::INFINITY,
                    yaw_tol: TURN_TOLERANCE,
                    zig_index: None,
                });
            }
            self.queue.push_back(Setpoint {
                pos: b,
                yaw: target,
                kind: SetpointKind::Move,
                pos_tol: tol,
                yaw_tol: 0.3,
                zig_index: tag_offset.map(|o| o + k + 1),
            });
            yaw = target;
        }
    }

    fn push_look_around(&mut self) {
        let base = self.queue.back().map_or(self.hold.yaw, |s| s.yaw);
        let pos = self.queue.back().map_or(self.hold.pos, |s| s.pos);
        let mut yaw = base;
        for d in LOOK_AROUND_DELTAS {
            yaw += d;
            self.queue.push_back(Setpoint {
                pos,
                yaw,
                kind: SetpointKind::Turn,
                pos_tol: f64::INFINITY,
                yaw_tol: LOOK_AROUND_TOLERANCE,
                zig_index: None,
            });
        }
    }

    fn rrt_cfg(&mut self) -> RrtConfig {
        self.plans += 1;
        let mut cfg = self.sc.rrt.clone();
        cfg.rng_seed = self
            .sc
            .rng_seed
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(cfg.rng_seed)
            .wrapping_add(self.plans);
        cfg.bounds = self.free_bounds();
        cfg
    }

    fn free_bounds(&self) -> Option<(Vec3, Vec3)> {
        let mut lo = Vec3::new(f64::INFINITY, f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        let mut any = false;
        for idx in self.map.voxels_in_state(OccupancyState::Free) {
            let c = self.map.voxel_center(idx);
            lo = Vec3::new(lo.x.min(c.x), lo.y.min(c.y), lo.z.min(c.z));
            hi = Vec3::new(hi.x.max(c.x), hi.y.max(c.y), hi.z.max(c.z));
            any = true;
        }
        let r = self.map.resolution();
        any.then(|| (lo - Vec3::new(r, r, r), hi + Vec3::new(r, r, r)))
    }

    /// Direct segment when free, otherwise RRT with both shortcut passes.
    fn route_to(&mut self, goal: Vec3) -> Option<Path> {
        let from = self.estimate;
        if self.map.segment_collision_free(from, goal, self.inflate()) {
            return Path::from_points([from, goal]);
        }
        let cfg = self.rrt_cfg();
        match plan_and_shortcut(&self.map, from, goal, &cfg) {
            Ok(p) => Some(p),
            Err(e) => {
                log::debug!("t={:.2} no route to {:?}: {e}", self.t, goal);
                None
            }
        }
    }

    /// One step home. Far from the start the step aims at the point 1 m
    /// further back on the start's centre line, so the vehicle recentres
    /// before the long straight return.
    fn backward_step(&self) -> Option<Path> {
        let start = self.ctx.start?;
        let axis = self.ctx.tunnel_axis;
        let from = self.plan_pose().position;
        let along = (from - start).dot(axis);
        let target = if along > STEP_LENGTH { start + axis * (along - STEP_LENGTH) } else { start };
        try_step_toward(&self.map, from, target, self.inflate())
    }

    fn at_start(&self) -> bool {
        self.ctx
            .start
            .is_some_and(|s| self.estimate.distance(s) < self.sc.explorer.at_start_tolerance)
    }

    /// Schedules the remaining zigzag waypoints. False when none is reachable.
    fn refill_zigzag(&mut self) -> bool {
        let Some(mut insp) = self.inspection.take() else { return false };
        let mut scheduled = false;
        if !insp.surveyed {
            // face the wall before sweeping so the look-around maps its borders
            insp.surveyed = true;
            if let Some(&(_, yaw)) = insp.waypoints.first() {
                let target = self.unwrap_near(self.drone.yaw, yaw);
                self.queue.push_back(Setpoint {
                    pos: self.drone.position,
                    yaw: target,
                    kind: SetpointKind::Turn,
                    pos_tol: f64::INFINITY,
                    yaw_tol: TURN_TOLERANCE,
                    zig_index: None,
                });
            }
            self.push_look_around();
            scheduled = true;
        } else {
            if !insp.replanned {
                insp.replanned = true;
                if let Some((_, waypoints)) = self.inspection_plan() {
                    insp.waypoints = waypoints;
                    insp.next = 0;
                }
            }
            while insp.next < insp.waypoints.len() {
                let (goal, yaw) = insp.waypoints[insp.next];
                if let Some(transit) = self.route_to(goal) {
                    self.push_path(&transit, None, None);
                    if let Some(last) = self.queue.back_mut() {
                        last.zig_index = Some(insp.next);
                    }
                    let rest: Vec<Vec3> = insp.waypoints[insp.next..].iter().map(|w| w.0).collect();
                    let lanes = Path::from_points(rest).expect("non-empty");
                    self.push_path(&lanes, Some(yaw), Some(insp.next));
                    scheduled = true;
                    break;
                }
                log::debug!("t={:.2} skipping unreachable zigzag waypoint {}", self.t, insp.next);
                insp.next += 1;
            }
        }
        self.inspection = Some(insp);
        scheduled
    }

    /// Vantage goal and sweep waypoints for the tunnel end seen so far.
    fn inspection_plan(&self) -> Option<(Vec3, Vec<(Vec3, f64)>)> {
        let (goal, face) = detect_tunnel_end_goal(&self.map, self.ctx.tunnel_axis, self.sc.zigzag.standoff)
            .map_err(|e| log::warn!("tunnel end not found: {e}"))
            .ok()?;
        let waypoints = match plan_zigzag(&face, &self.sc.camera, &self.sc.zigzag) {
            Ok(p) => p.waypoints().iter().copied().zip(p.yaws().unwrap_or(&[]).iter().copied()).collect(),
            Err(e) => {
                log::warn!("no sweep for face {face:?}: {e}");
                Vec::new()
            }
        };
        log::debug!("t={:.2} face {:?} ({} waypoints)", self.t, face, waypoints.len());
        Some((goal, waypoints))
    }

    fn scan_done(&self) -> bool {
        self.inspection.as_ref().map_or(true, |i| i.surveyed && i.next >= i.waypoints.len())
    }

    fn decide(&mut self, completed: bool, collision: bool) {
        use ExplorerState as S;
        let mut ev = Events {
            path_done: completed && !collision,
            collision_predicted: collision,
            at_start: self.at_start(),
            ..Default::default()
        };
        match self.state {
            S::Init | S::Forward | S::AfterInfoGatherForward => {
                ev.path_found = try_forward(&self.map, &self.plan_pose(), self.inflate()).is_some();
            }
            S::PreInspection => ev.path_found = self.rrt_found,
            S::Inspection => {
                ev.scan_done = self.scan_done();
                if ev.scan_done {
                    ev.path_found = self.backward_step().is_some();
                }
            }
            S::Backward => ev.path_found = self.backward_step().is_some(),
            S::AfterInfoGatherBackward => {
                ev.path_found = match self.ctx.last_action {
                    Some(PlannerAction::RrtToGoal) => self.rrt_found,
                    _ => self.backward_step().is_some(),
                };
            }
            S::Stop => {}
        }
        let (next, action) = match fsm_step(self.state, &self.ctx, ev) {
            Ok(step) => step,
            Err(e) => {
                log::error!("{e}; stopping");
                (S::Stop, PlannerAction::HoverThenLand)
            }
        };
        if next != self.state && matches!(next, S::Forward | S::Backward) {
            self.ctx.look_arounds = 0;
        }
        if action == PlannerAction::LookAround && matches!(next, S::AfterInfoGatherForward | S::AfterInfoGatherBackward) {
            self.ctx.look_arounds += 1;
        }
        log::debug!("t={:.2} {} -> {} ({})", self.t, self.state, next, action);
        self.state = next;
        self.ctx.last_action = Some(action);
        self.prepare(action);
    }

    fn prepare(&mut self, action: PlannerAction) {
        use PlannerAction as A;
        self.queue.clear();
        self.action = Some(action);
        self.motion = false;
        match action {
            A::TakeOff => {
                let p = self.drone.position;
                let target = Vec3::new(p.x, p.y, self.sc.explorer.takeoff_altitude);
                self.queue.push_back(Setpoint {
                    pos: target,
                    yaw: self.drone.yaw,
                    kind: SetpointKind::Move,
                    pos_tol: 0.05,
                    yaw_tol: TURN_TOLERANCE,
                    zig_index: None,
                });
            }
            A::LookAround => self.push_look_around(),
            A::AddNewForwardPath => {
                if let Some(p) = try_forward(&self.map, &self.plan_pose(), self.inflate()) {
                    self.push_path(&p, None, None);
                    self.motion = true;
                }
            }
            A::AddNewBackwardPath => {
                if let Some(p) = self.backward_step() {
                    self.push_path(&p, None, None);
                    self.motion = true;
                }
            }
            A::RrtToGoal => {
                let goal = if self.state == ExplorerState::PreInspection {
                    self.inspection_plan().map(|(goal, waypoints)| {
                        self.inspection =
                            Some(Inspection { waypoints, next: 0, surveyed: false, replanned: false, resumes: 0 });
                        goal
                    })
                } else {
                    self.ctx.start
                };
                let path = goal.and_then(|g| self.route_to(g));
                self.rrt_found = path.is_some();
                if let Some(p) = path {
                    self.push_path(&p, None, None);
                    self.motion = true;
                }
            }
            A::ZigzagScan => {
                if let Some(insp) = self.inspection.as_mut() {
                    if insp.surveyed {
                        insp.resumes += 1;
                        if insp.resumes > MAX_ZIGZAG_RESUMES {
                            insp.next = insp.waypoints.len();
                        }
                    }
                }
                self.refill_zigzag();
                self.motion = true;
            }
            A::HoverThenLand => {
                let p = self.drone.position;
                self.queue.push_back(Setpoint {
                    pos: p,
                    yaw: self.drone.yaw,
                    kind: SetpointKind::Dwell(self.sc.explorer.hover_before_land),
                    pos_tol: f64::INFINITY,
                    yaw_tol: f64::INFINITY,
                    zig_index: None,
                });
                self.queue.push_back(Setpoint {
                    pos: Vec3::new(p.x, p.y, LANDED_ALTITUDE),
                    yaw: self.drone.yaw,
                    kind: SetpointKind::Move,
                    pos_tol: 0.05,
                    yaw_tol: f64::INFINITY,
                    zig_index: None,
                });
            }
        }
    }
}

/// Runs a scenario to completion or timeout.
pub fn run_scenario(sc: &Scenario) -> Result<RunOutput, SimError> {
    sc.validate()?;
    let mut sim = Sim::new(sc)?;
    let substeps = sc.substeps();
    let dt = sc.planner_period / substeps as f64;
    let mass = sc.drone.mass_kg();
    let dead_end = sc.tunnel.dead_end();

    // coverage grid on the usable part of the true dead-end face
    let face_center = sc.tunnel.to_world(sc.tunnel.length, 0.0, sc.tunnel.height / 2.0);
    let lat = sc.tunnel.lateral();
    let (uw, uh) = (sc.tunnel.width - 2.0 * sc.zigzag.margin, sc.tunnel.height - 2.0 * sc.zigzag.margin);
    let (nw, nh) = (
        ((uw / COVERAGE_GRID).floor() as usize + 1).max(1),
        ((uh / COVERAGE_GRID).floor() as usize + 1).max(1),
    );
    let grid: Vec<Vec3> = (0..nw)
        .flat_map(|i| (0..nh).map(move |j| (i, j)))
        .map(|(i, j)| {
            let l = -uw / 2.0 + uw * i as f64 / (nw.max(2) - 1) as f64;
            let u = -uh / 2.0 + uh * j as f64 / (nh.max(2) - 1) as f64;
            face_center + lat * l + Vec3::Z * u
        })
        .collect();
    let mut covered = vec![false; grid.len()];

    let mut rows = Vec::new();
    let mut tick_ms = Vec::new();
    let mut collisions = 0u32;
    let mut in_contact = false;
    let mut min_end = f64::INFINITY;
    let mut termination = Termination::Timeout;
    let mut wind_noise = Normal::new(0.0, 1.0).ok();
    let noise = sc.dynamics.noise_force;

    let mut tick: u64 = 0;
    loop {
        sim.t = tick as f64 * sc.planner_period;
        if sim.t > sc.timeout + 1e-9 {
            break;
        }
        let scene = sc.scene_at(sim.t);

        let clock = Instant::now();
        sim.sense(&scene);
        let mut finished = false;
        if sim.action.is_none() {
            sim.decide(false, false);
        } else {
            let collision = sim.motion && !sim.queue.is_empty() && !sim.lookahead_clear();
            if collision {
                sim.hold_here();
                sim.decide(false, true);
            } else {
                let mut done = sim.advance();
                if done && sim.action == Some(PlannerAction::ZigzagScan) && sim.refill_zigzag() {
                    done = false;
                }
                if done {
                    if sim.action == Some(PlannerAction::TakeOff) {
                        sim.flying = true;
                        let p = sim.drone.position;
                        sim.ctx.record_start(Vec3::new(p.x, p.y, sc.explorer.takeoff_altitude));
                    }
                    if sim.state == ExplorerState::Stop && sim.landing {
                        finished = true;
                    } else {
                        sim.decide(true, false);
                    }
                }
            }
        }
        tick_ms.push(clock.elapsed().as_secs_f64() * 1e3);

        if sim.state == ExplorerState::Inspection {
            let pose = sim.drone.pose();
            for (k, p) in grid.iter().enumerate() {
                if !covered[k] && sc.camera.sees(&pose, *p) {
                    covered[k] = true;
                }
            }
        }
        rows.push(TrajectoryRow {
            t: sim.t,
            position: sim.drone.position,
            yaw: normalize_yaw(sim.drone.yaw),
            state: sim.state,
            action: sim.action,
            wind_level: sc.wind.level,
        });
        if finished {
            termination = Termination::Stopped;
            break;
        }

        for k in 0..substeps {
            let ts = sim.t + k as f64 * dt;
            let sp = sim.target();
            let mut extra = wind_accel(sc.wind.velocity_at(sim.drone.position), sim.drone.velocity, sc.wind.gain, mass);
            if let Some(n) = wind_noise.as_mut().filter(|_| noise != Vec3::ZERO) {
                let f = Vec3::new(
                    noise.x * n.sample(&mut sim.rng),
                    noise.y * n.sample(&mut sim.rng),
                    noise.z * n.sample(&mut sim.rng),
                );
                extra += f * (1.0 / mass);
            }
            controller_step(&mut sim.drone, sp.pos, sp.yaw, extra, &sc.dynamics, dt);
            if sim.drone.position.z < 0.0 {
                sim.drone.position.z = 0.0;
                sim.drone.velocity.z = sim.drone.velocity.z.max(0.0);
            }
            min_end = min_end.min(dead_end.distance_to(sim.drone.position));
            if sim.flying {
                let scene = sc.scene_at(ts + dt);
                let hit = check_collision(sim.drone.position, &scene, sc.dynamics.drone_radius);
                if hit && !in_contact {
                    collisions += 1;
                    log::warn!("t={:.2} collision at {:?}", ts, sim.drone.position);
                }
                in_contact = hit;
            } else {
                in_contact = false;
            }
        }
        tick += 1;
    }

    let start = sim.ctx.start.unwrap_or(sim.drone.position);
    let end = sim.drone.position;
    let mut sorted = tick_ms.clone();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let p99 = sorted
        .get(((sorted.len() as f64 * 0.99).ceil() as usize).saturating_sub(1))
        .copied()
        .unwrap_or(0.0);
    let report = RunReport {
        seed: sc.rng_seed,
        termination,
        final_state: sim.state.name().to_string(),
        reached_end: min_end <= END_REACH_RADIUS,
        min_dead_end_distance: min_end,
        coverage_fraction: covered.iter().filter(|c| **c).count() as f64 / covered.len().max(1) as f64,
        returned_to_start_error: ((end.x - start.x).powi(2) + (end.y - start.y).powi(2)).sqrt(),
        collision_count: collisions,
        sim_duration: sim.t,
        planner_ticks: tick,
        tick_ms_mean: tick_ms.iter().sum::<f64>() / tick_ms.len().max(1) as f64,
        tick_ms_p99: p99,
        tick_ms_max: sorted.last().copied().unwrap_or(0.0),
    };
    Ok(RunOutput { report, trajectory: rows, map: sim.map, tick_ms })
}
