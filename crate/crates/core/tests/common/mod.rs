//! Brute-force reference implementations used to check the library.

#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;
use tunnelscout::voxel_map::{MapParams, OccupancyState, VoxelMap};
use tunnelscout::Vec3;

fn point_box_distance(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let d = |v: f64, a: f64, b: f64| (a - v).max(0.0).max(v - b);
    let (dx, dy, dz) = (d(p.x, lo.x, hi.x), d(p.y, lo.y, hi.y), d(p.z, lo.z, hi.z));
    (dx * dx + dy * dy + dz * dz).sqrt()
}

/// Distance from `p` to the nearest non-Free voxel or to the outside of the
/// grid, searched over every voxel within `radius`. Returns `radius` when
/// nothing blocked is that close.
pub fn blocked_distance(map: &VoxelMap, p: Vec3, radius: f64) -> f64 {
    let o = map.origin();
    let r = map.resolution();
    let d = map.dims();
    let hi = map.max_corner();
    let mut best = radius;
    // everything outside the grid counts as blocked
    for (v, a, b) in [(p.x, o.x, hi.x), (p.y, o.y, hi.y), (p.z, o.z, hi.z)] {
        let inside = (v - a).min(b - v);
        if inside < 0.0 {
            return 0.0;
        }
        best = best.min(inside);
    }
    let range = |v: f64, a: f64, n: usize| {
        let lo = (((v - radius - a) / r).floor() as i64).max(0) as usize;
        let hi = (((v + radius - a) / r).floor() as i64).clamp(-1, n as i64 - 1);
        (lo, hi)
    };
    let (x0, x1) = range(p.x, o.x, d[0]);
    let (y0, y1) = range(p.y, o.y, d[1]);
    let (z0, z1) = range(p.z, o.z, d[2]);
    for ix in x0 as i64..=x1 {
        for iy in y0 as i64..=y1 {
            for iz in z0 as i64..=z1 {
                let idx = [ix as usize, iy as usize, iz as usize];
                if map.state_at(idx) == OccupancyState::Free {
                    continue;
                }
                let lo = Vec3::new(o.x + ix as f64 * r, o.y + iy as f64 * r, o.z + iz as f64 * r);
                let dist = point_box_distance(p, lo, lo + Vec3::new(r, r, r));
                best = best.min(dist);
            }
        }
    }
    best
}

/// Minimum clearance over samples spaced `spacing` apart along `a→b`.
pub fn sampled_clearance(map: &VoxelMap, a: Vec3, b: Vec3, radius: f64, spacing: f64) -> f64 {
    let n = ((a.distance(b) / spacing).ceil() as usize).max(1);
    (0..=n)
        .map(|k| blocked_distance(map, a.lerp(b, k as f64 / n as f64), radius))
        .fold(f64::INFINITY, f64::min)
}

pub enum OracleVerdict {
    Collides,
    Free,
    /// The sampled clearance sits within half a sample spacing of `inflate`,
    /// where sampling alone cannot decide.
    Borderline,
}

/// Dense-sampling collision oracle at `spacing`. A sampled clearance below
/// `inflate` proves a collision; a clearance of at least
/// `inflate + spacing/2` proves the whole segment free.
pub fn segment_oracle(map: &VoxelMap, a: Vec3, b: Vec3, inflate: f64, spacing: f64) -> OracleVerdict {
    let c = sampled_clearance(map, a, b, inflate + spacing, spacing);
    if c < inflate {
        OracleVerdict::Collides
    } else if c >= inflate + spacing / 2.0 {
        OracleVerdict::Free
    } else {
        OracleVerdict::Borderline
    }
}

/// Breadth-first search over voxels whose centres keep `clearance` from
/// anything blocked, 6-connected. Used only to decide solvability.
pub fn bfs_reachable(map: &VoxelMap, start: Vec3, goal: Vec3, clearance: f64) -> bool {
    let (Some(s), Some(g)) = (map.index_of(start), map.index_of(goal)) else { return false };
    let d = map.dims();
    let flat = |i: [usize; 3]| (i[0] * d[1] + i[1]) * d[2] + i[2];
    let ok = |i: [usize; 3]| blocked_distance(map, map.voxel_center(i), clearance + 1e-9) >= clearance;
    if !ok(s) || !ok(g) {
        return false;
    }
    let mut seen = vec![false; d[0] * d[1] * d[2]];
    let mut queue = VecDeque::from([s]);
    seen[flat(s)] = true;
    while let Some(c) = queue.pop_front() {
        if c == g {
            return true;
        }
        for (axis, step) in [(0, -1i64), (0, 1), (1, -1), (1, 1), (2, -1), (2, 1)] {
            let v = c[axis] as i64 + step;
            if v < 0 || v >= d[axis] as i64 {
                continue;
            }
            let mut n = c;
            n[axis] = v as usize;
            if !seen[flat(n)] && ok(n) {
                seen[flat(n)] = true;
                queue.push_back(n);
            }
        }
    }
    false
}

/// All-free map with a few random box obstacles and scattered Unknown cells.
pub fn random_world<R: Rng>(rng: &mut R, dims: [usize; 3], boxes: usize, unknown_fraction: f64) -> VoxelMap {
    let mut m = VoxelMap::new(Vec3::ZERO, dims, MapParams::default()).expect("valid dims");
    m.fill(OccupancyState::Free);
    let r = m.resolution();
    let ext = Vec3::new(dims[0] as f64 * r, dims[1] as f64 * r, dims[2] as f64 * r);
    for _ in 0..boxes {
        let c = Vec3::new(rng.gen_range(0.0..ext.x), rng.gen_range(0.0..ext.y), rng.gen_range(0.0..ext.z));
        let h = Vec3::new(rng.gen_range(0.05..0.6), rng.gen_range(0.05..0.6), rng.gen_range(0.05..0.6));
        m.set_box(c - h, c + h, OccupancyState::Occupied);
    }
    for ix in 0..dims[0] {
        for iy in 0..dims[1] {
            for iz in 0..dims[2] {
                if rng.gen_bool(unknown_fraction) {
                    m.set_state([ix, iy, iz], OccupancyState::Unknown);
                }
            }
        }
    }
    m
}

/// Grid of points on a rectangle, `pitch` apart, edges included.
pub fn rectangle_grid(center: Vec3, u: Vec3, v: Vec3, width: f64, height: f64, pitch: f64) -> Vec<Vec3> {
    let nu = (width / pitch).floor() as usize + 1;
    let nv = (height / pitch).floor() as usize + 1;
    let mut out = Vec::with_capacity(nu * nv);
    for i in 0..nu {
        for j in 0..nv {
            let a = -width / 2.0 + width * i as f64 / (nu.max(2) - 1) as f64;
            let b = -height / 2.0 + height * j as f64 / (nv.max(2) - 1) as f64;
            out.push(center + u * a + v * b);
        }
    }
    out
}
