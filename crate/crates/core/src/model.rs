//! Geometric primitives, drone specification arithmetic and the
//! telemetry / command / estimate records shared by every other module.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::ModelError;

/// A point or direction in the world frame (meters, right-handed, z up).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vec3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vec3 {
    pub const ZERO: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 0.0 };
    pub const X: Vec3 = Vec3 { x: 1.0, y: 0.0, z: 0.0 };
    pub const Y: Vec3 = Vec3 { x: 0.0, y: 1.0, z: 0.0 };
    pub const Z: Vec3 = Vec3 { x: 0.0, y: 0.0, z: 1.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn dot(self, o: Vec3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vec3) -> Vec3 {
        Vec3::new(
            self.y * o.z - self.z * o.y,
            self.z * o.x - self.x * o.z,
            self.x * o.y - self.y * o.x,
        )
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn distance(self, o: Vec3) -> f64 {
        (self - o).norm()
    }

    /// Unit vector in the same direction, or `None` for a (near) zero vector.
    pub fn normalized(self) -> Option<Vec3> {
        let n = self.norm();
        (n > 1e-12).then(|| self * (1.0 / n))
    }

    pub fn lerp(self, o: Vec3, t: f64) -> Vec3 {
        self + (o - self) * t
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn component(self, axis: usize) -> f64 {
        match axis {
            0 => self.x,
            1 => self.y,
            _ => self.z,
        }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Vec3::new(a[0], a[1], a[2])
    }

    /// Unit heading in the horizontal plane for a yaw angle.
    pub fn from_yaw(yaw: f64) -> Vec3 {
        Vec3::new(yaw.cos(), yaw.sin(), 0.0)
    }
}

impl From<[f64; 3]> for Vec3 {
    fn from(a: [f64; 3]) -> Self {
        Vec3::from_array(a)
    }
}

impl From<Vec3> for [f64; 3] {
    fn from(v: Vec3) -> Self {
        v.to_array()
    }
}

impl Add for Vec3 {
    type Output = Vec3;
    fn add(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vec3 {
    fn add_assign(&mut self, o: Vec3) {
        *self = *self + o;
    }
}

impl Sub for Vec3 {
    type Output = Vec3;
    fn sub(self, o: Vec3) -> Vec3 {
        Vec3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Vec3 {
    type Output = Vec3;
    fn mul(self, s: f64) -> Vec3 {
        Vec3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Neg for Vec3 {
    type Output = Vec3;
    fn neg(self) -> Vec3 {
        Vec3::new(-self.x, -self.y, -self.z)
    }
}

/// Wraps an angle into (−π, π].
pub fn normalize_yaw(theta: f64) -> f64 {
    let mut a = theta.rem_euclid(2.0 * PI);
    if a > PI {
        a -= 2.0 * PI;
    }
    // rem_euclid maps −π to π already; only the exact −π edge needs care
    if a <= -PI {
        a += 2.0 * PI;
    }
    a
}

/// Position plus heading. Positive yaw is counter-clockwise seen from +z.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pose {
    pub position: Vec3,
    yaw: f64,
}

impl Pose {
    pub fn new(position: Vec3, yaw: f64) -> Self {
        Self { position, yaw: normalize_yaw(yaw) }
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn heading(&self) -> Vec3 {
        Vec3::from_yaw(self.yaw)
    }
}

/// Target velocity command `u(t) = (u1, u2, u3)` in m/s.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ControlCommand {
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
}

impl ControlCommand {
    /// Builds a command from a velocity vector, scaling it down to `v_max`.
    pub fn clamped(v: Vec3, v_max: f64) -> Self {
        let n = v.norm();
        let v = if n > v_max && n > 0.0 { v * (v_max / n) } else { v };
        Self { u1: v.x, u2: v.y, u3: v.z }
    }

    pub fn as_vec(&self) -> Vec3 {
        Vec3::new(self.u1, self.u2, self.u3)
    }

    pub fn magnitude(&self) -> f64 {
        self.as_vec().norm()
    }
}

/// Blend of an odometry and a localization position fix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateEstimate {
    pub estimate: Vec3,
    pub odometry_input: Vec3,
    pub localization_input: Vec3,
}

/// Fixed-weight convex blend: `w·odometry + (1−w)·localization`.
pub fn fuse_state_estimate(
    odometry: Vec3,
    localization: Vec3,
    weight: f64,
) -> Result<StateEstimate, ModelError> {
    if !(0.0..=1.0).contains(&weight) {
        return Err(ModelError::InvalidWeight(weight));
    }
    // difference form keeps agreeing inputs exact
    let estimate = if weight == 1.0 {
        odometry
    } else {
        localization + (odometry - localization) * weight
    };
    Ok(StateEstimate {
        estimate,
        odometry_input: odometry,
        localization_input: localization,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Component {
    pub name: String,
    /// grams
    pub weight: f64,
}

/// Airframe bill of materials. Masses in grams, thrust in grams-force.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DroneSpec {
    pub components: Vec<Component>,
    pub available_thrust: f64,
}

impl DroneSpec {
    /// The reference build: frame, compute, sensors, flight controller,
    /// motors/ESCs and a 6000 mAh 4S pack, about 1200 g in total with
    /// roughly 2500 gf of thrust.
    pub fn reference() -> Self {
        let parts = [
            ("frame_250mm", 250.0),
            ("jetson_xavier_nx", 180.0),
            ("realsense_l515", 100.0),
            ("realsense_t265", 55.0),
            ("pixracer_r15", 15.0),
            ("motors_esc_props", 160.0),
            ("battery_6000mah_4s", 440.0),
        ];
        Self {
            components: parts
                .iter()
                .map(|(n, w)| Component { name: (*n).to_string(), weight: *w })
                .collect(),
            available_thrust: 2500.0,
        }
    }

    /// Mass in kilograms, for the dynamics.
    pub fn mass_kg(&self) -> f64 {
        total_weight(self) / 1000.0
    }
}

/// Sum of component weights in grams.
pub fn total_weight(spec: &DroneSpec) -> f64 {
    spec.components.iter().map(|c| c.weight).sum()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThrustCheck {
    pub pass: bool,
    pub total_weight: f64,
    pub required_thrust: f64,
    pub available_thrust: f64,
}

/// Available thrust must be at least twice the total weight. The
/// comparison is exact.
pub fn thrust_margin_check(spec: &DroneSpec) -> Result<ThrustCheck, ModelError> {
    if let Some(c) = spec.components.iter().find(|c| !(c.weight > 0.0)) {
        return Err(ModelError::InvalidSpec(format!(
            "component `{}` has non-positive weight {}",
            c.name, c.weight
        )));
    }
    let total = total_weight(spec);
    if total <= 0.0 {
        return Err(ModelError::InvalidSpec("total weight is zero".into()));
    }
    if !(spec.available_thrust > 0.0) {
        return Err(ModelError::InvalidSpec("available_thrust must be positive".into()));
    }
    let required = 2.0 * total;
    Ok(ThrustCheck {
        pass: spec.available_thrust >= required,
        total_weight: total,
        required_thrust: required,
        available_thrust: spec.available_thrust,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(weights: &[f64], thrust: f64) -> DroneSpec {
        DroneSpec {
            components: weights
                .iter()
                .enumerate()
                .map(|(i, w)| Component { name: format!("c{i}"), weight: *w })
                .collect(),
            available_thrust: thrust,
        }
    }

    #[test]
    fn reference_build_weighs_1200g() {
        assert_eq!(total_weight(&DroneSpec::reference()), 1200.0);
    }

    #[test]
    fn total_weight_edge_cases() {
        assert_eq!(total_weight(&spec(&[], 1.0)), 0.0);
        assert_eq!(total_weight(&spec(&[250.0], 1.0)), 250.0);
    }

    #[test]
    fn thrust_margin_boundaries() {
        let c = thrust_margin_check(&spec(&[1200.0], 2500.0)).unwrap();
        assert!(c.pass);
        assert_eq!(c.required_thrust, 2400.0);
        assert!(!thrust_margin_check(&spec(&[1200.0], 2399.0)).unwrap().pass);
        assert!(thrust_margin_check(&spec(&[1200.0], 2400.0)).unwrap().pass);
    }

    #[test]
    fn thrust_margin_rejects_bad_specs() {
        assert!(matches!(
            thrust_margin_check(&spec(&[], 100.0)),
            Err(ModelError::InvalidSpec(_))
        ));
        assert!(matches!(
            thrust_margin_check(&spec(&[100.0, -3.0], 1000.0)),
            Err(ModelError::InvalidSpec(_))
        ));
    }

    #[test]
    fn fusion_examples() {
        let p = Vec3::new(1.0, 2.0, 3.0);
        for w in [0.0, 0.3, 1.0] {
            assert_eq!(fuse_state_estimate(p, p, w).unwrap().estimate, p);
        }
        let e = fuse_state_estimate(Vec3::new(5.0, 0.0, 0.0), Vec3::new(9.0, 9.0, 9.0), 1.0);
        assert_eq!(e.unwrap().estimate, Vec3::new(5.0, 0.0, 0.0));
        // 0.5·2 + 0.5·4 = 3
        let e = fuse_state_estimate(Vec3::new(2.0, 0.0, 0.0), Vec3::new(4.0, 0.0, 0.0), 0.5);
        assert_eq!(e.unwrap().estimate, Vec3::new(3.0, 0.0, 0.0));
        assert!(matches!(
            fuse_state_estimate(p, p, 1.5),
            Err(ModelError::InvalidWeight(_))
        ));
    }

    #[test]
    fn yaw_range() {
        assert_eq!(normalize_yaw(PI), PI);
        assert_eq!(normalize_yaw(-PI), PI);
        assert!((normalize_yaw(3.0 * PI / 2.0) + PI / 2.0).abs() < 1e-12);
        assert_eq!(Pose::new(Vec3::ZERO, -PI).yaw(), PI);
    }

    #[test]
    fn command_clamp() {
        let c = ControlCommand::clamped(Vec3::new(3.0, 4.0, 0.0), 1.0);
        assert!((c.magnitude() - 1.0).abs() < 1e-12);
        assert!((c.u1 - 0.6).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn yaw_normalization_idempotent(theta in -1e4f64..1e4) {
            let a = normalize_yaw(theta);
            prop_assert!(a > -PI && a <= PI);
            prop_assert_eq!(normalize_yaw(a), a);
        }

        #[test]
        fn thrust_check_exact(ws in prop::collection::vec(1u32..2000, 1..8), thrust in 1u32..20000) {
            let weights: Vec<f64> = ws.iter().map(|w| *w as f64).collect();
            let s = spec(&weights, thrust as f64);
            let sum: f64 = weights.iter().sum();
            prop_assert_eq!(thrust_margin_check(&s).unwrap().pass, thrust as f64 >= 2.0 * sum);
        }

        #[test]
        fn fusion_is_affine(
            a in prop::array::uniform3(-10.0f64..10.0),
            b in prop::array::uniform3(-10.0f64..10.0),
            d in prop::array::uniform3(-10.0f64..10.0),
            w in 0.0f64..=1.0,
        ) {
            let (a, b, d) = (Vec3::from_array(a), Vec3::from_array(b), Vec3::from_array(d));
            let lhs = fuse_state_estimate(a + d, b, w).unwrap().estimate;
            let rhs = fuse_state_estimate(a, b, w).unwrap().estimate + d * w;
            prop_assert!((lhs - rhs).norm() < 1e-9);
        }
    }
}
