//! RRT search over the voxel map plus two random-shortcut passes that strip
//! redundant waypoints from the tortuous raw tree path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::PlanError;
use crate::model::Vec3;
use crate::voxel_map::VoxelMap;

/// Ordered waypoints with optional per-waypoint yaw. Never empty and never
/// holds two identical consecutive waypoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Path {
    waypoints: Vec<Vec3>,
    yaws: Option<Vec<f64>>,
}

impl Path {
    /// Builds a path, dropping consecutive duplicates. `None` if empty.
    pub fn from_points<I: IntoIterator<Item = Vec3>>(points: I) -> Option<Path> {
        let mut waypoints: Vec<Vec3> = Vec::new();
        for p in points {
            if waypoints.last() != Some(&p) {
                waypoints.push(p);
            }
        }
        (!waypoints.is_empty()).then_some(Path { waypoints, yaws: None })
    }

    /// Path carrying a yaw per waypoint. Consecutive duplicate positions keep
    /// the first yaw.
    pub fn with_yaws<I: IntoIterator<Item = (Vec3, f64)>>(points: I) -> Option<Path> {
        let mut waypoints: Vec<Vec3> = Vec::new();
        let mut yaws = Vec::new();
        for (p, y) in points {
            if waypoints.last() != Some(&p) {
                waypoints.push(p);
                yaws.push(y);
            }
        }
        (!waypoints.is_empty()).then_some(Path { waypoints, yaws: Some(yaws) })
    }

    pub fn single(p: Vec3) -> Path {
        Path { waypoints: vec![p], yaws: None }
    }

    pub fn waypoints(&self) -> &[Vec3] {
        &self.waypoints
    }

    pub fn yaws(&self) -> Option<&[f64]> {
        self.yaws.as_deref()
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn first(&self) -> Vec3 {
        self.waypoints[0]
    }

    pub fn last(&self) -> Vec3 {
        *self.waypoints.last().expect("path is never empty")
    }

    pub fn length(&self) -> f64 {
        path_length(self)
    }

    pub fn segments(&self) -> impl Iterator<Item = (Vec3, Vec3)> + '_ {
        self.waypoints.windows(2).map(|w| (w[0], w[1]))
    }

    /// Every segment passes the map collision check at `inflate`.
    pub fn is_collision_free(&self, map: &VoxelMap, inflate: f64) -> bool {
        if self.waypoints.len() == 1 {
            return map.point_collision_free(self.waypoints[0], inflate);
        }
        self.segments().all(|(a, b)| map.segment_collision_free(a, b, inflate))
    }
}

/// Sum of Euclidean segment lengths.
pub fn path_length(path: &Path) -> f64 {
    path.segments().map(|(a, b)| a.distance(b)).sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RrtConfig {
    pub step_size: f64,
    pub goal_bias: f64,
    pub max_samples: usize,
    pub goal_tolerance: f64,
    /// Clearance radius used in every collision check.
    pub inflate: f64,
    /// Random attempts for each shortcut pass.
    pub shortcut_iters: usize,
    pub rng_seed: u64,
    /// Sampling box; the whole map when absent.
    #[serde(skip)]
    pub bounds: Option<(Vec3, Vec3)>,
}

impl Default for RrtConfig {
    fn default() -> Self {
        Self {
            step_size: 0.5,
            goal_bias: 0.1,
            max_samples: 20_000,
            goal_tolerance: 0.3,
            inflate: 0.25,
            shortcut_iters: 1000,
            rng_seed: 0,
            bounds: None,
        }
    }
}

impl RrtConfig {
    pub fn validate(&self) -> Result<(), PlanError> {
        let bad = |m: &str| Err(PlanError::InvalidConfig(m.to_string()));
        if !(self.step_size > 0.0) {
            return bad("step_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.goal_bias) {
            return bad("goal_bias must lie in [0, 1]");
        }
        if !(self.goal_tolerance >= 0.0) || !(self.inflate >= 0.0) {
            return bad("goal_tolerance and inflate must be non-negative");
        }
        Ok(())
    }
}

struct Node {
    pos: Vec3,
    parent: usize,
}

/// Grows a tree from `start` until a node lands within `goal_tolerance` of
/// `goal`. When the final hop to the exact goal is free the goal itself
/// closes the path.
pub fn plan_rrt(map: &VoxelMap, start: Vec3, goal: Vec3, cfg: &RrtConfig) -> Result<Path, PlanError> {
    cfg.validate()?;
    if !map.point_collision_free(start, cfg.inflate) {
        return Err(PlanError::StartInCollision);
    }
    if start.distance(goal) <= cfg.goal_tolerance {
        return Ok(Path::single(start));
    }
    let (lo, hi) = cfg.bounds.unwrap_or((map.origin(), map.max_corner()));
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut tree = vec![Node { pos: start, parent: 0 }];

    for _ in 0..cfg.max_samples {
        let sample = if rng.gen_bool(cfg.goal_bias) {
            goal
        } else {
            Vec3::new(
                sample_axis(&mut rng, lo.x, hi.x),
                sample_axis(&mut rng, lo.y, hi.y),
                sample_axis(&mut rng, lo.z, hi.z),
            )
        };
        let nearest = tree
            .iter()
            .enumerate()
            .min_by(|(_, a), (_, b)| {
                a.pos.distance(sample).total_cmp(&b.pos.distance(sample))
            })
            .map(|(i, _)| i)
            .expect("tree holds the root");
        let from = tree[nearest].pos;
        let delta = sample - from;
        let dist = delta.norm();
        if dist < 1e-9 {
            continue;
        }
        let new = from + delta * (cfg.step_size.min(dist) / dist);
        if !map.segment_collision_free(from, new, cfg.inflate) {
            continue;
        }
        tree.push(Node { pos: new, parent: nearest });
        if new.distance(goal) <= cfg.goal_tolerance {
            let mut rev = vec![];
            if new != goal && map.segment_collision_free(new, goal, cfg.inflate) {
                rev.push(goal);
            }
            let mut i = tree.len() - 1;
            loop {
                rev.push(tree[i].pos);
                if i == 0 {
                    break;
                }
                i = tree[i].parent;
            }
            rev.reverse();
            return Ok(Path::from_points(rev).expect("non-empty"));
        }
    }
    Err(PlanError::NoPathFound(cfg.max_samples))
}

fn sample_axis(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        rng.gen_range(lo..hi)
    } else {
        lo
    }
}

/// Result of a shortcut pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Shortcut {
    pub path: Path,
    /// Loop iterations run; short paths make an attempt a no-op.
    pub attempts: usize,
    pub accepted: usize,
}

// distinct streams so the two passes never replay the planner's samples
const PAIRS_STREAM: u64 = 0x5348_4f52_5443_5554;
const SEGMENT_STREAM: u64 = 0x5345_474d_454e_5453;

/// Repeatedly picks two waypoints at random; when their direct connection is
/// collision-free every waypoint between them is dropped.
pub fn shortcut_pairs(path: &Path, map: &VoxelMap, cfg: &RrtConfig) -> Shortcut {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ PAIRS_STREAM);
    let mut pts = path.waypoints.clone();
    let (mut attempts, mut accepted) = (0, 0);
    for _ in 0..cfg.shortcut_iters {
        attempts += 1;
        let n = pts.len();
        if n < 3 {
            continue;
        }
        let (i, j) = loop {
            let (a, b) = (rng.gen_range(0..n), rng.gen_range(0..n));
            let (i, j) = if a < b { (a, b) } else { (b, a) };
            if i + 1 < j {
                break (i, j);
            }
        };
        if map.segment_collision_free(pts[i], pts[j], cfg.inflate) {
            pts.drain(i + 1..j);
            accepted += 1;
        }
    }
    Shortcut {
        path: Path::from_points(pts).expect("endpoints kept"),
        attempts,
        accepted,
    }
}

/// Picks two random points anywhere on the path (segment interiors
/// included) and reroutes through their chord when it is free and shorter.
pub fn shortcut_segment_points(path: &Path, map: &VoxelMap, cfg: &RrtConfig) -> Shortcut {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed ^ SEGMENT_STREAM);
    let mut pts = path.waypoints.clone();
    let (mut attempts, mut accepted) = (0, 0);
    for _ in 0..cfg.shortcut_iters {
        attempts += 1;
        if pts.len() < 3 {
            continue;
        }
        let cum: Vec<f64> = std::iter::once(0.0)
            .chain(pts.windows(2).scan(0.0, |acc, w| {
                *acc += w[0].distance(w[1]);
                Some(*acc)
            }))
            .collect();
        let total = *cum.last().expect("non-empty");
        if total <= 0.0 {
            break;
        }
        let (mut s1, mut s2) = (rng.gen_range(0.0..total), rng.gen_range(0.0..total));
        if s1 > s2 {
            std::mem::swap(&mut s1, &mut s2);
        }
        let locate = |s: f64| -> (usize, Vec3) {
            let k = cum.partition_point(|c| *c <= s).saturating_sub(1).min(pts.len() - 2);
            let seg = cum[k + 1] - cum[k];
            let t = if seg > 0.0 { ((s - cum[k]) / seg).clamp(0.0, 1.0) } else { 0.0 };
            (k, pts[k].lerp(pts[k + 1], t))
        };
        let (k1, q1) = locate(s1);
        let (k2, q2) = locate(s2);
        if k1 >= k2 {
            continue;
        }
        let chord = q1.distance(q2);
        let along = (s2 - s1).max(0.0);
        if chord >= along - 1e-9 {
            continue;
        }
        if !map.segment_collision_free(q1, q2, cfg.inflate) {
            continue;
        }
        let mut next = Vec::with_capacity(pts.len() + 2);
        next.extend_from_slice(&pts[..=k1]);
        next.push(q1);
        next.push(q2);
        next.extend_from_slice(&pts[k2 + 1..]);
        let candidate = Path::from_points(next).expect("non-empty");
        // q1/q2 sit on existing segments, so only new segments need a check
        if candidate.length() < path_length_of(&pts) - 1e-12 {
            pts = candidate.waypoints;
            accepted += 1;
        }
    }
    Shortcut {
        path: Path::from_points(pts).expect("endpoints kept"),
        attempts,
        accepted,
    }
}

fn path_length_of(pts: &[Vec3]) -> f64 {
    pts.windows(2).map(|w| w[0].distance(w[1])).sum()
}

/// `plan_rrt` followed by both shortcut passes.
pub fn plan_and_shortcut(
    map: &VoxelMap,
    start: Vec3,
    goal: Vec3,
    cfg: &RrtConfig,
) -> Result<Path, PlanError> {
    let raw = plan_rrt(map, start, goal, cfg)?;
    let p1 = shortcut_pairs(&raw, map, cfg).path;
    Ok(shortcut_segment_points(&p1, map, cfg).path)
}
