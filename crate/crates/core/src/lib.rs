//! Autonomous exploration of narrow dead-end tunnels by a small quadrotor:
//! occupancy mapping, sampling-based planning, face inspection, a
//! state-machine explorer and a wind-robustness bench, all driven by a
//! deterministic simulator.

pub mod config;
pub mod error;
pub mod fsm;
pub mod model;
pub mod rrt;
pub mod sensor;
pub mod sim;
pub mod voxel_map;
pub mod wind;
pub mod zigzag;

pub use error::{ConfigError, FsmError, MapError, ModelError, PlanError, SimError, WindError};
pub use fsm::{fsm_step, Events, ExplorerContext, ExplorerState, PlannerAction};
pub use model::{ControlCommand, DroneSpec, Pose, Vec3};
pub use rrt::{plan_rrt, Path, RrtConfig};
pub use sim::{run_scenario, RunReport, Scenario};
pub use voxel_map::{MapParams, OccupancyState, VoxelMap};
pub use zigzag::{plan_zigzag, FacePatch, ZigzagConfig};
