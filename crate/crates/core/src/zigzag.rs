//! Boustrophedon scan of a planar face, e.g. the dead-end wall of a tunnel.

use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::model::Vec3;
use crate::rrt::Path;
use crate::sensor::DepthCamera;

/// Rectangular face to inspect. `normal` points back toward the viewer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FacePatch {
    pub center: Vec3,
    pub width: f64,
    pub height: f64,
    pub normal: Vec3,
}

impl FacePatch {
    /// Horizontal in-plane axis; lanes sweep along it.
    pub fn lateral(&self) -> Vec3 {
        Vec3::Z.cross(self.normal).normalized().unwrap_or(Vec3::Y)
    }

    /// Vertical in-plane axis.
    pub fn up(&self) -> Vec3 {
        self.normal.cross(self.lateral()).normalized().unwrap_or(Vec3::Z)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ZigzagConfig {
    /// Distance from the face plane, meters.
    pub standoff: f64,
    pub overlap_fraction: f64,
    /// Clearance kept from the face border, meters.
    pub margin: f64,
}

impl Default for ZigzagConfig {
    fn default() -> Self {
        Self { standoff: 1.5, overlap_fraction: 0.2, margin: 0.3 }
    }
}

impl ZigzagConfig {
    pub fn validate(&self, camera: &DepthCamera) -> Result<(), PlanError> {
        if !(self.standoff > 0.0 && self.standoff <= 3.0 && self.standoff <= camera.max_range) {
            return Err(PlanError::InvalidConfig("standoff must lie in (0, min(3, max_range)]".into()));
        }
        if !(0.0..1.0).contains(&self.overlap_fraction) {
            return Err(PlanError::InvalidConfig("overlap_fraction must lie in [0, 1)".into()));
        }
        if !(self.margin >= 0.0) {
            return Err(PlanError::InvalidConfig("margin must be non-negative".into()));
        }
        Ok(())
    }
}

/// Vertical distance between sweep lanes.
pub fn lane_spacing(camera: &DepthCamera, cfg: &ZigzagConfig) -> f64 {
    (1.0 - cfg.overlap_fraction) * 2.0 * cfg.standoff * (camera.v_fov.to_radians() / 2.0).tan()
}

/// Horizontal sweeps stepping vertically, on the plane `standoff` in front
/// of the face. Lane `i` sits at the centre of the `i`-th of `n` equal bands
/// of the usable height and lanes alternate direction. Every waypoint faces
/// the patch.
pub fn plan_zigzag(face: &FacePatch, camera: &DepthCamera, cfg: &ZigzagConfig) -> Result<Path, PlanError> {
    cfg.validate(camera)?;
    let normal = face.normal.normalized().ok_or(PlanError::InfeasibleFace)?;
    let face = FacePatch { normal, ..*face };
    let usable_w = face.width - 2.0 * cfg.margin;
    let usable_h = face.height - 2.0 * cfg.margin;
    if !(usable_w > 0.0 && usable_h > 0.0) {
        return Err(PlanError::InfeasibleFace);
    }
    let spacing = lane_spacing(camera, cfg);
    let lanes = ((usable_h / spacing).ceil() as usize).max(1);
    let band = usable_h / lanes as f64;
    let lateral = face.lateral();
    let up = face.up();
    let plane_center = face.center + normal * cfg.standoff;
    let yaw = (-normal.y).atan2(-normal.x);

    let mut pts = Vec::with_capacity(2 * lanes);
    for i in 0..lanes {
        let v = -usable_h / 2.0 + (i as f64 + 0.5) * band;
        let (a, b) = if i % 2 == 0 { (-usable_w / 2.0, usable_w / 2.0) } else { (usable_w / 2.0, -usable_w / 2.0) };
        for h in [a, b] {
            pts.push((plane_center + lateral * h + up * v, yaw));
        }
    }
    Ok(Path::with_yaws(pts).expect("at least one lane"))
}
