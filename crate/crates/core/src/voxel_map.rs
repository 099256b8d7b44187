//! Dense log-odds occupancy grid with ray-cast updates and swept-sphere
//! collision queries.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::MapError;
use crate::model::{Pose, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MapParams {
    /// Edge length of one voxel, meters.
    pub resolution: f64,
    pub hit: f64,
    pub miss: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub occ_threshold: f64,
    pub free_threshold: f64,
}

impl Default for MapParams {
    fn default() -> Self {
        Self {
            resolution: 0.10,
            hit: 0.85,
            miss: -0.40,
            l_min: -2.0,
            l_max: 3.5,
            occ_threshold: 0.0,
            free_threshold: -0.3,
        }
    }
}

impl MapParams {
    pub fn validate(&self) -> Result<(), MapError> {
        let bad = |m: &str| Err(MapError::InvalidParams(m.to_string()));
        if !(self.resolution > 0.0) {
            return bad("resolution must be positive");
        }
        if !(self.hit > 0.0) || !(self.miss < 0.0) {
            return bad("hit must be positive and miss negative");
        }
        if !(self.l_min < self.free_threshold
            && self.free_threshold < self.occ_threshold
            && self.occ_threshold < self.l_max)
        {
            return bad("need l_min < free_threshold < occ_threshold < l_max");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum OccupancyState {
    Free,
    Occupied,
    Unknown,
}

impl OccupancyState {
    pub fn letter(self) -> char {
        match self {
            OccupancyState::Free => 'F',
            OccupancyState::Occupied => 'O',
            OccupancyState::Unknown => 'U',
        }
    }

    /// Occupied and Unknown space are both impassable for planning.
    pub fn is_blocked(self) -> bool {
        self != OccupancyState::Free
    }
}

/// Range return of a single depth ray.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DepthRay {
    /// Unit direction in the world frame.
    pub direction: Vec3,
    /// `None` means nothing was hit within `max_range`.
    pub hit_distance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthScan {
    pub sensor_pose: Pose,
    pub max_range: f64,
    pub rays: Vec<DepthRay>,
}

#[derive(Debug, Clone)]
pub struct VoxelMap {
    origin: Vec3,
    dims: [usize; 3],
    params: MapParams,
    cells: Vec<Option<f32>>,
    // per-scan update marks, so that each voxel moves at most once per scan
    stamps: Vec<u32>,
    scan_counter: u32,
}

impl VoxelMap {
    pub fn new(origin: Vec3, dims: [usize; 3], params: MapParams) -> Result<Self, MapError> {
        params.validate()?;
        if dims.iter().any(|d| *d == 0) {
            return Err(MapError::InvalidParams("extent must be non-empty".into()));
        }
        if !origin.is_finite() {
            return Err(MapError::InvalidParams("origin must be finite".into()));
        }
        let n = dims[0] * dims[1] * dims[2];
        Ok(Self {
            origin,
            dims,
            params,
            cells: vec![None; n],
            stamps: vec![0; n],
            scan_counter: 0,
        })
    }

    /// Grid covering the axis-aligned box `[lo, hi]`, rounded outward.
    pub fn covering(lo: Vec3, hi: Vec3, params: MapParams) -> Result<Self, MapError> {
        params.validate()?;
        let r = params.resolution;
        let dims = [
            ((hi.x - lo.x) / r).ceil().max(1.0) as usize,
            ((hi.y - lo.y) / r).ceil().max(1.0) as usize,
            ((hi.z - lo.z) / r).ceil().max(1.0) as usize,
        ];
        Self::new(lo, dims, params)
    }

    pub fn origin(&self) -> Vec3 {
        self.origin
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn params(&self) -> &MapParams {
        &self.params
    }

    pub fn resolution(&self) -> f64 {
        self.params.resolution
    }

    /// Upper corner of the mapped box.
    pub fn max_corner(&self) -> Vec3 {
        let r = self.params.resolution;
        self.origin
            + Vec3::new(
                self.dims[0] as f64 * r,
                self.dims[1] as f64 * r,
                self.dims[2] as f64 * r,
            )
    }

    fn flat(&self, idx: [usize; 3]) -> usize {
        (idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]
    }

    fn unflat(&self, i: usize) -> [usize; 3] {
        let iz = i % self.dims[2];
        let rest = i / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], iz]
    }

    pub fn index_of(&self, p: Vec3) -> Option<[usize; 3]> {
        let r = self.params.resolution;
        let mut idx = [0usize; 3];
        for (axis, slot) in idx.iter_mut().enumerate() {
            let f = ((p.component(axis) - self.origin.component(axis)) / r).floor();
            if !(f >= 0.0 && f < self.dims[axis] as f64) {
                return None;
            }
            *slot = f as usize;
        }
        Some(idx)
    }

    pub fn contains(&self, p: Vec3) -> bool {
        self.index_of(p).is_some()
    }

    pub fn voxel_center(&self, idx: [usize; 3]) -> Vec3 {
        let r = self.params.resolution;
        self.origin
            + Vec3::new(
                (idx[0] as f64 + 0.5) * r,
                (idx[1] as f64 + 0.5) * r,
                (idx[2] as f64 + 0.5) * r,
            )
    }

    fn voxel_bounds(&self, idx: [usize; 3]) -> (Vec3, Vec3) {
        let r = self.params.resolution;
        let lo = self.origin
            + Vec3::new(idx[0] as f64 * r, idx[1] as f64 * r, idx[2] as f64 * r);
        (lo, lo + Vec3::new(r, r, r))
    }

    fn classify(&self, value: Option<f32>) -> OccupancyState {
        match value {
            None => OccupancyState::Unknown,
            Some(l) if f64::from(l) >= self.params.occ_threshold => OccupancyState::Occupied,
            Some(l) if f64::from(l) <= self.params.free_threshold => OccupancyState::Free,
            Some(_) => OccupancyState::Unknown,
        }
    }

    pub fn state_at(&self, idx: [usize; 3]) -> OccupancyState {
        self.classify(self.cells[self.flat(idx)])
    }

    pub fn log_odds_at(&self, idx: [usize; 3]) -> Option<f32> {
        self.cells[self.flat(idx)]
    }

    /// State of the voxel containing `p`; anything outside the grid is Unknown.
    pub fn query(&self, p: Vec3) -> OccupancyState {
        match self.index_of(p) {
            Some(idx) => self.state_at(idx),
            None => OccupancyState::Unknown,
        }
    }

    /// Forces a voxel to a saturated state (or back to unobserved).
    pub fn set_state(&mut self, idx: [usize; 3], state: OccupancyState) {
        let v = match state {
            OccupancyState::Free => Some(self.params.l_min as f32),
            OccupancyState::Occupied => Some(self.params.l_max as f32),
            OccupancyState::Unknown => None,
        };
        let i = self.flat(idx);
        self.cells[i] = v;
    }

    pub fn fill(&mut self, state: OccupancyState) {
        for ix in 0..self.dims[0] {
            for iy in 0..self.dims[1] {
                for iz in 0..self.dims[2] {
                    self.set_state([ix, iy, iz], state);
                }
            }
        }
    }

    /// Marks every voxel overlapping the box `[lo, hi]`.
    pub fn set_box(&mut self, lo: Vec3, hi: Vec3, state: OccupancyState) {
        let (Some(a), Some(b)) = (self.clamped_index(lo), self.clamped_index(hi)) else {
            return;
        };
        for ix in a[0]..=b[0] {
            for iy in a[1]..=b[1] {
                for iz in a[2]..=b[2] {
                    self.set_state([ix, iy, iz], state);
                }
            }
        }
    }

    fn clamped_index(&self, p: Vec3) -> Option<[usize; 3]> {
        let r = self.params.resolution;
        let mut idx = [0usize; 3];
        for (axis, slot) in idx.iter_mut().enumerate() {
            let f = ((p.component(axis) - self.origin.component(axis)) / r).floor();
            if !f.is_finite() {
                return None;
            }
            *slot = f.clamp(0.0, (self.dims[axis] - 1) as f64) as usize;
        }
        Some(idx)
    }

    fn apply(&mut self, i: usize, delta: f32) {
        let p = &self.params;
        let next = (self.cells[i].unwrap_or(0.0) + delta).clamp(p.l_min as f32, p.l_max as f32);
        self.cells[i] = Some(next);
    }

    /// Ray-cast log-odds update. Voxels crossed before a return get one
    /// miss, the return voxel one hit; each voxel changes at most once per
    /// scan and hits win over misses.
    pub fn insert_scan(&mut self, scan: &DepthScan) -> Result<(), MapError> {
        let o = scan.sensor_pose.position;
        if self.index_of(o).is_none() {
            return Err(MapError::OutOfBounds { x: o.x, y: o.y, z: o.z });
        }
        if scan.rays.is_empty() {
            return Ok(());
        }
        self.scan_counter = self.scan_counter.wrapping_add(1);
        if self.scan_counter == 0 {
            self.stamps.iter_mut().for_each(|s| *s = 0);
            self.scan_counter = 1;
        }
        let stamp = self.scan_counter;

        let mut hit_voxels = Vec::with_capacity(scan.rays.len());
        for ray in &scan.rays {
            if let Some(d) = ray.hit_distance {
                let p = o + ray.direction * (d + 1e-6);
                if let Some(idx) = self.index_of(p) {
                    let i = self.flat(idx);
                    hit_voxels.push(Some(i));
                    if self.stamps[i] != stamp {
                        self.stamps[i] = stamp;
                        self.apply(i, self.params.hit as f32);
                    }
                    continue;
                }
            }
            hit_voxels.push(None);
        }

        let mut buf = Vec::new();
        for (ray, hit) in scan.rays.iter().zip(hit_voxels) {
            let len = ray.hit_distance.unwrap_or(scan.max_range).min(scan.max_range);
            buf.clear();
            self.traverse(o, ray.direction, len, &mut buf);
            for &i in &buf {
                if Some(i) == hit {
                    break;
                }
                if self.stamps[i] != stamp {
                    self.stamps[i] = stamp;
                    self.apply(i, self.params.miss as f32);
                }
            }
        }
        Ok(())
    }

    /// Flat indices of voxels a ray passes through for `t ∈ [0, len)`, in order.
    fn traverse(&self, o: Vec3, dir: Vec3, len: f64, out: &mut Vec<usize>) {
        let r = self.params.resolution;
        let Some(mut idx) = self.index_of(o) else { return };
        let mut step = [0i64; 3];
        let mut t_max = [f64::INFINITY; 3];
        let mut t_delta = [f64::INFINITY; 3];
        for a in 0..3 {
            let d = dir.component(a);
            let local = o.component(a) - self.origin.component(a);
            if d > 0.0 {
                step[a] = 1;
                t_max[a] = ((idx[a] as f64 + 1.0) * r - local) / d;
                t_delta[a] = r / d;
            } else if d < 0.0 {
                step[a] = -1;
                t_max[a] = (idx[a] as f64 * r - local) / d;
                t_delta[a] = -r / d;
            }
        }
        loop {
            out.push(self.flat(idx));
            let a = if t_max[0] <= t_max[1] && t_max[0] <= t_max[2] {
                0
            } else if t_max[1] <= t_max[2] {
                1
            } else {
                2
            };
            if t_max[a] >= len {
                return;
            }
            let next = idx[a] as i64 + step[a];
            if next < 0 || next >= self.dims[a] as i64 {
                return;
            }
            idx[a] = next as usize;
            t_max[a] += t_delta[a];
        }
    }

    /// Marks unobserved voxels within `radius` of `center` as free. The
    /// vehicle body occupies that volume, so it cannot hold an obstacle.
    pub fn clear_unknown_around(&mut self, center: Vec3, radius: f64) {
        let ext = Vec3::new(radius, radius, radius);
        let (Some(a), Some(b)) = (
            self.clamped_index(center - ext),
            self.clamped_index(center + ext),
        ) else {
            return;
        };
        let miss = self.params.miss.max(self.params.l_min) as f32;
        for ix in a[0]..=b[0] {
            for iy in a[1]..=b[1] {
                for iz in a[2]..=b[2] {
                    let idx = [ix, iy, iz];
                    let (lo, hi) = self.voxel_bounds(idx);
                    if point_box_distance_sq(center, lo, hi) <= radius * radius {
                        let i = self.flat(idx);
                        if self.cells[i].is_none() {
                            self.cells[i] = Some(miss);
                        }
                    }
                }
            }
        }
    }

    /// True iff no point of segment `a→b` lies within `inflate` of an
    /// Occupied or Unknown voxel, or of the space outside the grid.
    ///
    /// The test is exact (closed-form segment/box distance per blocked
    /// voxel), so it is at least as strict as sampling at any spacing.
    pub fn segment_collision_free(&self, a: Vec3, b: Vec3, inflate: f64) -> bool {
        let inflate = inflate.max(0.0);
        if !a.is_finite() || !b.is_finite() {
            return false;
        }
        // distance to the outside region is concave along the segment, so
        // checking the endpoints suffices
        if self.boundary_margin(a) <= inflate || self.boundary_margin(b) <= inflate {
            return false;
        }
        let lo = Vec3::new(a.x.min(b.x), a.y.min(b.y), a.z.min(b.z)) - Vec3::new(inflate, inflate, inflate);
        let hi = Vec3::new(a.x.max(b.x), a.y.max(b.y), a.z.max(b.z)) + Vec3::new(inflate, inflate, inflate);
        let (Some(ia), Some(ib)) = (self.clamped_index(lo), self.clamped_index(hi)) else {
            return false;
        };
        let r2 = inflate * inflate;
        for ix in ia[0]..=ib[0] {
            for iy in ia[1]..=ib[1] {
                let base = (ix * self.dims[1] + iy) * self.dims[2];
                for iz in ia[2]..=ib[2] {
                    if !self.classify(self.cells[base + iz]).is_blocked() {
                        continue;
                    }
                    let (vlo, vhi) = self.voxel_bounds([ix, iy, iz]);
                    if segment_box_distance_sq(a, b, vlo, vhi) <= r2 {
                        return false;
                    }
                }
            }
        }
        true
    }

    /// Point version of [`Self::segment_collision_free`].
    pub fn point_collision_free(&self, p: Vec3, inflate: f64) -> bool {
        self.segment_collision_free(p, p, inflate)
    }

    fn boundary_margin(&self, p: Vec3) -> f64 {
        let hi = self.max_corner();
        let mut m = f64::INFINITY;
        for a in 0..3 {
            m = m
                .min(p.component(a) - self.origin.component(a))
                .min(hi.component(a) - p.component(a));
        }
        m
    }

    /// Indices of all voxels in the given state, in lexicographic order.
    pub fn voxels_in_state(&self, state: OccupancyState) -> impl Iterator<Item = [usize; 3]> + '_ {
        (0..self.cells.len())
            .filter(move |&i| self.classify(self.cells[i]) == state)
            .map(move |i| self.unflat(i))
    }

    /// One line per non-Unknown voxel: `ix iy iz S logodds`, sorted by index.
    pub fn export_text(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.cells.iter().enumerate() {
            let state = self.classify(*v);
            if state == OccupancyState::Unknown {
                continue;
            }
            let [ix, iy, iz] = self.unflat(i);
            let _ = writeln!(out, "{} {} {} {} {:.3}", ix, iy, iz, state.letter(), v.unwrap_or(0.0));
        }
        out
    }

    /// Loads voxels from [`Self::export_text`] output into this grid.
    /// Voxels not listed are left untouched.
    pub fn load_text(&mut self, text: &str) -> Result<(), MapError> {
        for (n, line) in text.lines().enumerate() {
            let line_no = n + 1;
            let err = |msg: &str| MapError::Parse { line: line_no, msg: msg.to_string() };
            if line.trim().is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if f.len() != 5 {
                return Err(err("expected 5 fields"));
            }
            let mut idx = [0usize; 3];
            for a in 0..3 {
                idx[a] = f[a].parse().map_err(|_| err("bad voxel index"))?;
                if idx[a] >= self.dims[a] {
                    return Err(err("voxel index outside grid"));
                }
            }
            let value: f32 = f[4].parse().map_err(|_| err("bad log-odds value"))?;
            let expected = match f[3] {
                "O" => OccupancyState::Occupied,
                "F" => OccupancyState::Free,
                _ => return Err(err("state letter must be O or F")),
            };
            if self.classify(Some(value)) != expected {
                return Err(err("log-odds value disagrees with state letter"));
            }
            let i = self.flat(idx);
            self.cells[i] = Some(value.clamp(self.params.l_min as f32, self.params.l_max as f32));
        }
        Ok(())
    }
}

pub(crate) fn point_box_distance_sq(p: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let mut d2 = 0.0;
    for a in 0..3 {
        let v = p.component(a);
        let d = if v < lo.component(a) {
            lo.component(a) - v
        } else if v > hi.component(a) {
            v - hi.component(a)
        } else {
            0.0
        };
        d2 += d * d;
    }
    d2
}

/// Squared distance between segment `a→b` and an axis-aligned box.
///
/// The squared distance is convex and piecewise quadratic in the segment
/// parameter; it is minimized exactly on each piece between the parameter
/// values where a coordinate crosses a slab boundary.
pub(crate) fn segment_box_distance_sq(a: Vec3, b: Vec3, lo: Vec3, hi: Vec3) -> f64 {
    let d = b - a;
    let mut breaks = [0.0f64; 8];
    let mut n = 0;
    breaks[n] = 0.0;
    n += 1;
    breaks[n] = 1.0;
    n += 1;
    for ax in 0..3 {
        let da = d.component(ax);
        if da != 0.0 {
            for bound in [lo.component(ax), hi.component(ax)] {
                let t = (bound - a.component(ax)) / da;
                if t > 0.0 && t < 1.0 {
                    breaks[n] = t;
                    n += 1;
                }
            }
        }
    }
    let breaks = &mut breaks[..n];
    breaks.sort_by(|x, y| x.total_cmp(y));

    let eval = |t: f64| point_box_distance_sq(a + d * t, lo, hi);
    let mut best = eval(0.0).min(eval(1.0));
    for w in breaks.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        if t1 <= t0 {
            continue;
        }
        let tm = 0.5 * (t0 + t1);
        let pm = a + d * tm;
        let (mut num, mut den) = (0.0, 0.0);
        for ax in 0..3 {
            let v = pm.component(ax);
            let bound = if v < lo.component(ax) {
                lo.component(ax)
            } else if v > hi.component(ax) {
                hi.component(ax)
            } else {
                continue;
            };
            let da = d.component(ax);
            num += da * (a.component(ax) - bound);
            den += da * da;
        }
        let t = if den > 0.0 { (-num / den).clamp(t0, t1) } else { tm };
        best = best.min(eval(t)).min(eval(t1));
    }
    best
}
