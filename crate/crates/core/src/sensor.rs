//! Simulated forward-looking depth camera, ray-cast against scene primitives.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::model::{Pose, Vec3};
use crate::voxel_map::{DepthRay, DepthScan};

/// Depth camera intrinsics: 70°×55° field of view, 3 m usable range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DepthCamera {
    /// degrees
    pub h_fov: f64,
    /// degrees
    pub v_fov: f64,
    pub max_range: f64,
    pub rays_h: usize,
    pub rays_v: usize,
    /// Standard deviation of additive range noise, meters.
    pub range_noise: f64,
}

impl Default for DepthCamera {
    fn default() -> Self {
        Self { h_fov: 70.0, v_fov: 55.0, max_range: 3.0, rays_h: 71, rays_v: 56, range_noise: 0.0 }
    }
}

impl DepthCamera {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.h_fov > 0.0 && self.h_fov < 180.0 && self.v_fov > 0.0 && self.v_fov < 180.0) {
            return Err("fields of view must lie in (0, 180) degrees".into());
        }
        if !(self.max_range > 0.0) {
            return Err("max_range must be positive".into());
        }
        if self.rays_h < 2 || self.rays_v < 2 {
            return Err("ray counts must be at least 2".into());
        }
        if !(self.range_noise >= 0.0) {
            return Err("range_noise must be non-negative".into());
        }
        Ok(())
    }

    /// (azimuth, elevation) of ray `(i, j)` relative to the boresight, radians.
    pub fn ray_angles(&self, i: usize, j: usize) -> (f64, f64) {
        let h = self.h_fov.to_radians();
        let v = self.v_fov.to_radians();
        let az = -h / 2.0 + h * i as f64 / (self.rays_h - 1) as f64;
        let el = -v / 2.0 + v * j as f64 / (self.rays_v - 1) as f64;
        (az, el)
    }

    /// Whether `p` lies inside the viewing frustum of a camera at `pose`.
    pub fn sees(&self, pose: &Pose, p: Vec3) -> bool {
        let rel = p - pose.position;
        let range = rel.norm();
        if range > self.max_range || range < 1e-9 {
            return false;
        }
        let (s, c) = pose.yaw().sin_cos();
        let fwd = rel.x * c + rel.y * s;
        let left = -rel.x * s + rel.y * c;
        if fwd <= 0.0 {
            return false;
        }
        let az = left.atan2(fwd);
        let el = rel.z.atan2((fwd * fwd + left * left).sqrt());
        az.abs() <= self.h_fov.to_radians() / 2.0 + 1e-12
            && el.abs() <= self.v_fov.to_radians() / 2.0 + 1e-12
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AaBox {
    pub min: Vec3,
    pub max: Vec3,
}

impl AaBox {
    pub fn new(min: Vec3, max: Vec3) -> Self {
        Self { min, max }
    }

    pub fn ray_intersect(&self, o: Vec3, d: Vec3) -> Option<f64> {
        let (mut t0, mut t1) = (0.0f64, f64::INFINITY);
        for a in 0..3 {
            let (oa, da) = (o.component(a), d.component(a));
            let (lo, hi) = (self.min.component(a), self.max.component(a));
            if da.abs() < 1e-15 {
                if oa < lo || oa > hi {
                    return None;
                }
            } else {
                let (mut ta, mut tb) = ((lo - oa) / da, (hi - oa) / da);
                if ta > tb {
                    std::mem::swap(&mut ta, &mut tb);
                }
                t0 = t0.max(ta);
                t1 = t1.min(tb);
                if t0 > t1 {
                    return None;
                }
            }
        }
        Some(t0)
    }

    pub fn distance_to(&self, p: Vec3) -> f64 {
        crate::voxel_map::point_box_distance_sq(p, self.min, self.max).sqrt()
    }
}

/// Upright cylinder standing on `base`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Cylinder {
    pub base: Vec3,
    pub radius: f64,
    pub height: f64,
}

impl Cylinder {
    pub fn ray_intersect(&self, o: Vec3, d: Vec3) -> Option<f64> {
        let (z0, z1) = (self.base.z, self.base.z + self.height);
        let mut best: Option<f64> = None;
        let mut take = |t: f64| {
            if t >= 0.0 && best.map_or(true, |b| t < b) {
                best = Some(t);
            }
        };
        // side
        let (ox, oy) = (o.x - self.base.x, o.y - self.base.y);
        let a = d.x * d.x + d.y * d.y;
        if a > 1e-15 {
            let b = 2.0 * (ox * d.x + oy * d.y);
            let c = ox * ox + oy * oy - self.radius * self.radius;
            let disc = b * b - 4.0 * a * c;
            if disc >= 0.0 {
                let sq = disc.sqrt();
                for t in [(-b - sq) / (2.0 * a), (-b + sq) / (2.0 * a)] {
                    let z = o.z + d.z * t;
                    if z >= z0 && z <= z1 {
                        take(t);
                    }
                }
            }
        }
        // caps
        if d.z.abs() > 1e-15 {
            for zc in [z0, z1] {
                let t = (zc - o.z) / d.z;
                let (px, py) = (ox + d.x * t, oy + d.y * t);
                if px * px + py * py <= self.radius * self.radius {
                    take(t);
                }
            }
        }
        // origin inside the solid
        if ox * ox + oy * oy <= self.radius * self.radius && o.z >= z0 && o.z <= z1 {
            return Some(0.0);
        }
        best
    }

    /// Horizontal distance from `p` to the cylinder axis, ignoring height.
    pub fn axis_distance(&self, p: Vec3) -> f64 {
        ((p.x - self.base.x).powi(2) + (p.y - self.base.y).powi(2)).sqrt()
    }
}

/// Ground-truth geometry at one instant.
#[derive(Debug, Clone, Default)]
pub struct Scene {
    pub boxes: Vec<AaBox>,
    pub cylinders: Vec<Cylinder>,
}

impl Scene {
    pub fn ray_cast(&self, o: Vec3, d: Vec3) -> Option<f64> {
        let boxes = self.boxes.iter().filter_map(|b| b.ray_intersect(o, d));
        let cyls = self.cylinders.iter().filter_map(|c| c.ray_intersect(o, d));
        boxes.chain(cyls).min_by(|a, b| a.total_cmp(b))
    }
}

/// Renders a `rays_h × rays_v` scan with the boresight along the pose yaw.
pub fn render_depth_scan(scene: &Scene, camera: &DepthCamera, pose: &Pose) -> DepthScan {
    render_inner(scene, camera, pose, None::<&mut rand_chacha::ChaCha8Rng>)
}

/// Like [`render_depth_scan`] but applies the camera's range noise.
pub fn render_depth_scan_noisy<R: Rng>(
    scene: &Scene,
    camera: &DepthCamera,
    pose: &Pose,
    rng: &mut R,
) -> DepthScan {
    render_inner(scene, camera, pose, Some(rng))
}

fn render_inner<R: Rng>(
    scene: &Scene,
    camera: &DepthCamera,
    pose: &Pose,
    mut rng: Option<&mut R>,
) -> DepthScan {
    let (s, c) = pose.yaw().sin_cos();
    let noise = (camera.range_noise > 0.0)
        .then(|| Normal::new(0.0, camera.range_noise).expect("finite sigma"));
    let mut rays = Vec::with_capacity(camera.rays_h * camera.rays_v);
    for j in 0..camera.rays_v {
        for i in 0..camera.rays_h {
            let (az, el) = camera.ray_angles(i, j);
            let (fwd, left, up) = (el.cos() * az.cos(), el.cos() * az.sin(), el.sin());
            let dir = Vec3::new(fwd * c - left * s, fwd * s + left * c, up);
            let mut hit = scene.ray_cast(pose.position, dir);
            if let (Some(h), Some(n), Some(r)) = (hit, noise.as_ref(), rng.as_deref_mut()) {
                hit = Some((h + n.sample(r)).max(1e-3));
            }
            let hit = hit.filter(|h| *h <= camera.max_range && *h > 0.0);
            rays.push(DepthRay { direction: dir, hit_distance: hit });
        }
    }
    DepthScan { sensor_pose: *pose, max_range: camera.max_range, rays }
}
