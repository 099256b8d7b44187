//! Hovering and going-straight wind tests, drift metrics and calibration of
//! the drag gain and controller noise against the measured drift tables.

use std::fmt::Write as _;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::WindError;
use crate::model::Vec3;
use crate::sensor::AaBox;
use crate::sim::{controller_step, wind_accel, DroneState, DynamicsParams, WindLevel, TRAJECTORY_HEADER};

pub const HOVER_ALTITUDE: f64 = 1.0;

/// Hover max drift (x, y) per wind level, meters.
pub const HOVER_TABLE: [(WindLevel, f64, f64); 4] = [
    (WindLevel::None, 0.189, 0.288),
    (WindLevel::Low, 0.381, 0.294),
    (WindLevel::Middle, 0.471, 0.283),
    (WindLevel::High, 0.535, 0.213),
];

/// Going-straight (intrinsic y, max y) drift per wind level, meters.
pub const STRAIGHT_TABLE: [(WindLevel, f64, f64); 4] = [
    (WindLevel::None, 0.200, 0.460),
    (WindLevel::Low, 0.062, 0.448),
    (WindLevel::Middle, 0.013, 0.333),
    (WindLevel::High, 0.338, 0.625),
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WindTestMode {
    Hover,
    GoStraight,
}

impl std::str::FromStr for WindTestMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "hover" => Ok(WindTestMode::Hover),
            "straight" | "gostraight" | "go-straight" => Ok(WindTestMode::GoStraight),
            other => Err(format!("unknown test mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindTestConfig {
    pub mode: WindTestMode,
    pub level: WindLevel,
    pub hover_duration: f64,
    pub straight_leg_length: f64,
    /// Speed of the moving setpoint along the leg, m/s.
    pub cruise_speed: f64,
    /// Hold time at the leg end before landing, s.
    pub settle_time: f64,
    pub dt: f64,
    pub mass: f64,
    pub dynamics: DynamicsParams,
    pub seed: u64,
}

impl WindTestConfig {
    pub fn new(mode: WindTestMode, level: WindLevel, seed: u64) -> Self {
        Self {
            mode,
            level,
            hover_duration: 30.0,
            straight_leg_length: 5.0,
            cruise_speed: 0.5,
            settle_time: 10.0,
            dt: 1.0 / 120.0,
            mass: crate::model::DroneSpec::reference().mass_kg(),
            dynamics: DynamicsParams::default(),
            seed,
        }
    }

    pub fn with_noise(mut self, noise_force: Vec3) -> Self {
        self.dynamics.noise_force = noise_force;
        self
    }

    /// Wind band of the going-straight test: the middle third of the leg.
    pub fn wind_band(&self) -> (f64, f64) {
        (self.straight_leg_length / 3.0, 2.0 * self.straight_leg_length / 3.0)
    }

    fn validate(&self) -> Result<(), WindError> {
        let ok = [self.hover_duration, self.straight_leg_length, self.cruise_speed, self.dt, self.mass]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
            && self.settle_time >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(WindError::CalibrationDiverged("durations, lengths and mass must be positive".into()))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriftReport {
    pub mode: WindTestMode,
    pub level: WindLevel,
    pub seed: u64,
    pub gain: f64,
    pub max_drift_x: f64,
    pub max_drift_y: f64,
    pub intrinsic_drift_y: f64,
    /// Along-leg position where the wind-induced lateral deviation peaks.
    pub peak_x: Option<f64>,
    /// Closest approach to the leg end during the settle window.
    pub end_error: Option<f64>,
    #[serde(skip)]
    pub trajectory: Vec<(f64, Vec3)>,
}

impl DriftReport {
    /// One row in the layout of the drift tables.
    pub fn table_row(&self) -> String {
        let label = match (self.level, self.mode) {
            (WindLevel::None, _) => "No wind".to_string(),
            (l, WindTestMode::Hover) => format!("{} ({:.2}m/s)", l.name(), l.hover_speed()),
            (l, WindTestMode::GoStraight) => format!("{} ({:.2}m/s)", l.name(), l.straight_speed()),
        };
        match self.mode {
            WindTestMode::Hover => format!("{label}\t{:.3}m\t{:.3}m", self.max_drift_x, self.max_drift_y),
            WindTestMode::GoStraight => format!("{label}\t{:.3}m\t{:.3}m", self.intrinsic_drift_y, self.max_drift_y),
        }
    }

    pub fn table_header(mode: WindTestMode) -> &'static str {
        match mode {
            WindTestMode::Hover => "Wind levels\tMax drift in x-axis\tMax drift in y-axis",
            WindTestMode::GoStraight => "Wind levels\tIntrinsic drift in y-axis\tMax drift in y-axis",
        }
    }

    /// Trajectory in the simulator's CSV layout.
    pub fn trajectory_csv(&self) -> String {
        let action = match self.mode {
            WindTestMode::Hover => "Hover",
            WindTestMode::GoStraight => "GoStraight",
        };
        let mut out = String::from(TRAJECTORY_HEADER);
        out.push('\n');
        for (t, p) in &self.trajectory {
            let _ = writeln!(
                out,
                "{t:.6},{:.6},{:.6},{:.6},{:.6},WindTest,{action},{}",
                p.x,
                p.y,
                p.z,
                0.0,
                self.level.name()
            );
        }
        out
    }
}

struct Trace {
    samples: Vec<(f64, Vec3)>,
    settle_start: usize,
}

fn simulate(cfg: &WindTestConfig, gain: f64, level: WindLevel) -> Trace {
    let (speed, direction, region) = match cfg.mode {
        WindTestMode::Hover => (level.hover_speed(), Vec3::X, None),
        WindTestMode::GoStraight => {
            let (a, b) = cfg.wind_band();
            let band = AaBox::new(Vec3::new(a, -1e3, -1e3), Vec3::new(b, 1e3, 1e3));
            (level.straight_speed(), Vec3::Y, Some(band))
        }
    };
    let wind_at = |p: Vec3| {
        if region.map_or(true, |r: AaBox| r.distance_to(p) == 0.0) {
            direction * speed
        } else {
            Vec3::ZERO
        }
    };
    let start = Vec3::new(0.0, 0.0, HOVER_ALTITUDE);
    let (travel, total) = match cfg.mode {
        WindTestMode::Hover => (0.0, cfg.hover_duration),
        WindTestMode::GoStraight => {
            let travel = cfg.straight_leg_length / cfg.cruise_speed;
            (travel, travel + cfg.settle_time)
        }
    };
    let steps = (total / cfg.dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut s = DroneState::at(start, 0.0);
    let sigma = cfg.dynamics.noise_force;
    let mut samples = Vec::with_capacity(steps + 1);
    samples.push((0.0, s.position));
    let mut settle_start = steps + 1;
    for k in 0..steps {
        let t = k as f64 * cfg.dt;
        let target = match cfg.mode {
            WindTestMode::Hover => start,
            WindTestMode::GoStraight => {
                Vec3::new((cfg.cruise_speed * t).min(cfg.straight_leg_length), 0.0, HOVER_ALTITUDE)
            }
        };
        // drawn unconditionally so every level sees the same noise sequence
        let n: [f64; 3] = [
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
            StandardNormal.sample(&mut rng),
        ];
        let noise = Vec3::new(sigma.x * n[0], sigma.y * n[1], sigma.z * n[2]) * (1.0 / cfg.mass);
        let a = wind_accel(wind_at(s.position), s.velocity, gain, cfg.mass) + noise;
        controller_step(&mut s, target, 0.0, a, &cfg.dynamics, cfg.dt);
        let tn = (k + 1) as f64 * cfg.dt;
        if tn >= travel - 1e-9 && settle_start > steps {
            settle_start = samples.len();
        }
        samples.push((tn, s.position));
    }
    let settle_start = settle_start.min(samples.len());
    Trace { samples, settle_start }
}

pub fn run_hover_test(cfg: &WindTestConfig, gain: f64) -> Result<DriftReport, WindError> {
    if cfg.mode != WindTestMode::Hover {
        return Err(WindError::WrongMode("Hover"));
    }
    cfg.validate()?;
    let tr = simulate(cfg, gain, cfg.level);
    let (mut mx, mut my) = (0.0f64, 0.0f64);
    for (_, p) in &tr.samples {
        mx = mx.max(p.x.abs());
        my = my.max(p.y.abs());
    }
    let last = tr.samples.last().map_or(Vec3::ZERO, |s| s.1);
    Ok(DriftReport {
        mode: cfg.mode,
        level: cfg.level,
        seed: cfg.seed,
        gain,
        max_drift_x: mx,
        max_drift_y: my,
        intrinsic_drift_y: last.y.abs(),
        peak_x: None,
        end_error: None,
        trajectory: tr.samples,
    })
}

pub fn run_straight_test(cfg: &WindTestConfig, gain: f64) -> Result<DriftReport, WindError> {
    if cfg.mode != WindTestMode::GoStraight {
        return Err(WindError::WrongMode("GoStraight"));
    }
    cfg.validate()?;
    let tr = simulate(cfg, gain, cfg.level);
    let max_y = tr.samples.iter().map(|(_, p)| p.y.abs()).fold(0.0, f64::max);
    let max_x = tr.samples.iter().map(|(_, p)| (p.x - p.x.clamp(0.0, cfg.straight_leg_length)).abs()).fold(0.0, f64::max);
    let end = Vec3::new(cfg.straight_leg_length, 0.0, HOVER_ALTITUDE);
    let end_error = tr.samples[tr.settle_start..]
        .iter()
        .map(|(_, p)| p.distance(end))
        .fold(f64::INFINITY, f64::min);
    let peak_x = (cfg.level != WindLevel::None).then(|| {
        // the wind's share of the deviation, with the same noise realisation removed
        let base = simulate(cfg, gain, WindLevel::None);
        let mut best = (0.0, 0.0);
        for ((_, p), (_, q)) in tr.samples.iter().zip(&base.samples) {
            let d = (p.y - q.y).abs();
            if d > best.0 {
                best = (d, p.x);
            }
        }
        best.1
    });
    let last = tr.samples.last().map_or(Vec3::ZERO, |s| s.1);
    Ok(DriftReport {
        mode: cfg.mode,
        level: cfg.level,
        seed: cfg.seed,
        gain,
        max_drift_x: max_x,
        max_drift_y: max_y,
        intrinsic_drift_y: last.y.abs(),
        peak_x,
        end_error: end_error.is_finite().then_some(end_error),
        trajectory: tr.samples,
    })
}

pub fn run_wind_test(cfg: &WindTestConfig, gain: f64) -> Result<DriftReport, WindError> {
    match cfg.mode {
        WindTestMode::Hover => run_hover_test(cfg, gain),
        WindTestMode::GoStraight => run_straight_test(cfg, gain),
    }
}

fn mean_hover_drift(base: &WindTestConfig, level: WindLevel, gain: f64, seeds: &[u64]) -> (f64, f64) {
    let (mut sx, mut sy) = (0.0, 0.0);
    for &seed in seeds {
        let cfg = WindTestConfig { mode: WindTestMode::Hover, level, seed, ..base.clone() };
        let r = run_hover_test(&cfg, gain).expect("hover config");
        sx += r.max_drift_x;
        sy += r.max_drift_y;
    }
    (sx / seeds.len() as f64, sy / seeds.len() as f64)
}

/// Bisects the drag gain in [1e-4, 10] until the seed-averaged hovering
/// max x-drift at `level` matches `target`.
pub fn calibrate_wind_gain(
    base: &WindTestConfig,
    level: WindLevel,
    target: f64,
    seeds: &[u64],
) -> Result<f64, WindError> {
    if seeds.is_empty() || !(target > 0.0) {
        return Err(WindError::CalibrationDiverged("need seeds and a positive target".into()));
    }
    let f = |g: f64| mean_hover_drift(base, level, g, seeds).0 - target;
    let (mut lo, mut hi) = (1e-4f64, 10.0f64);
    let (flo, fhi) = (f(lo), f(hi));
    if !(flo < 0.0 && fhi > 0.0) {
        return Err(WindError::CalibrationDiverged(format!(
            "target {target} m not bracketed: drift spans {:.4}..{:.4} m",
            flo + target,
            fhi + target
        )));
    }
    for _ in 0..100 {
        let mid = (lo * hi).sqrt();
        let fm = f(mid);
        if fm.abs() <= 1e-4 * target || hi / lo < 1.0 + 1e-12 {
            return Ok(mid);
        }
        if fm < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo * hi).sqrt())
}

/// Per-axis force noise σ (N) that reproduces the no-wind hover drifts
/// `target_x`, `target_y`. The response is linear in σ, so one rescale of a
/// probe run suffices; a second pass absorbs the speed clamp.
pub fn calibrate_noise(base: &WindTestConfig, target_x: f64, target_y: f64, seeds: &[u64]) -> Vec3 {
    let mut sigma = Vec3::new(0.05, 0.05, 0.0);
    for _ in 0..2 {
        let cfg = base.clone().with_noise(sigma);
        let (mx, my) = mean_hover_drift(&cfg, WindLevel::None, 0.0, seeds);
        sigma = Vec3::new(sigma.x * target_x / mx, sigma.y * target_y / my, 0.0);
    }
    sigma
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindCalibration {
    pub noise_force: Vec3,
    pub gain: f64,
    pub seeds: Vec<u64>,
}

pub const CALIBRATION_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

/// Noise against the no-wind hover cell, then gain against the High cell.
pub fn calibrate(base: &WindTestConfig, seeds: &[u64]) -> Result<WindCalibration, WindError> {
    let (_, nx, ny) = HOVER_TABLE[0];
    let noise_force = calibrate_noise(base, nx, ny, seeds);
    let (level, hx, _) = HOVER_TABLE[3];
    let gain = calibrate_wind_gain(&base.clone().with_noise(noise_force), level, hx, seeds)?;
    Ok(WindCalibration { noise_force, gain, seeds: seeds.to_vec() })
}
