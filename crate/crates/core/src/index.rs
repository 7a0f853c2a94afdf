//! Uniform-grid acceleration structure over wall segments.
//!
//! Every query that touches scene geometry goes through here: camera rays,
//! disc casts for collision, clearance checks and wall-crossing tests.

use crate::geometry::{self, RayHit, Rect, Vec2};
use crate::scene::WallSegment;

/// Default bucket edge length in meters.
pub const DEFAULT_CELL_SIZE: f64 = 1.0;

#[derive(Debug, Clone)]
pub struct SegmentIndex {
    segments: Vec<WallSegment>,
    origin: Vec2,
    cell_size: f64,
    nx: usize,
    ny: usize,
    buckets: Vec<Vec<u32>>,
    bounds: Rect,
}

/// Contact reported by [`SegmentIndex::disc_cast`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiscContact {
    pub t: f64,
    pub normal: Vec2,
    pub segment: usize,
}

impl SegmentIndex {
    pub fn new(segments: Vec<WallSegment>) -> Self {
        Self::with_cell_size(segments, DEFAULT_CELL_SIZE)
    }

    pub fn with_cell_size(segments: Vec<WallSegment>, cell_size: f64) -> Self {
        let bounds = Rect::bounding(segments.iter().flat_map(|s| [s.a, s.b]))
            .unwrap_or(Rect::new(Vec2::ZERO, Vec2::ZERO));
        let grid = bounds.padded(cell_size);
        let nx = ((grid.width() / cell_size).ceil() as usize).max(1);
        let ny = ((grid.height() / cell_size).ceil() as usize).max(1);
        let mut index = SegmentIndex {
            segments,
            origin: grid.min,
            cell_size,
            nx,
            ny,
            buckets: vec![Vec::new(); nx * ny],
            bounds,
        };
        for i in 0..index.segments.len() {
            let s = index.segments[i];
            let lo = Vec2::new(s.a.x.min(s.b.x), s.a.y.min(s.b.y));
            let hi = Vec2::new(s.a.x.max(s.b.x), s.a.y.max(s.b.y));
            let (x0, y0) = index.cell_of(lo - Vec2::new(1e-9, 1e-9));
            let (x1, y1) = index.cell_of(hi + Vec2::new(1e-9, 1e-9));
            for y in y0..=y1 {
                for x in x0..=x1 {
                    index.buckets[y * nx + x].push(i as u32);
                }
            }
        }
        index
    }

    pub fn segments(&self) -> &[WallSegment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    /// Bounding box of all segment endpoints.
    pub fn bounds(&self) -> Rect {
        self.bounds
    }

    fn cell_of(&self, p: Vec2) -> (usize, usize) {
        let fx = ((p.x - self.origin.x) / self.cell_size).floor();
        let fy = ((p.y - self.origin.y) / self.cell_size).floor();
        let cx = fx.clamp(0.0, (self.nx - 1) as f64) as usize;
        let cy = fy.clamp(0.0, (self.ny - 1) as f64) as usize;
        (cx, cy)
    }

    /// Calls `f` with every segment index whose bucket overlaps `rect`.
    /// Segments spanning several buckets may be reported more than once.
    fn for_each_in_rect(&self, rect: Rect, mut f: impl FnMut(usize)) {
        let (x0, y0) = self.cell_of(rect.min);
        let (x1, y1) = self.cell_of(rect.max);
        for y in y0..=y1 {
            for x in x0..=x1 {
                for &i in &self.buckets[y * self.nx + x] {
                    f(i as usize);
                }
            }
        }
    }

    /// Nearest intersection of the ray `origin + t·dir` with `t ∈ [0, max_t)`.
    ///
    /// Ties on `t` resolve to the lowest segment index, matching
    /// [`nearest_hit_brute_force`].
    pub fn nearest_hit(&self, origin: Vec2, dir: Vec2, max_t: f64) -> Option<RayHit> {
        if self.segments.is_empty() || (dir.x == 0.0 && dir.y == 0.0) {
            return None;
        }
        let cs = self.cell_size;
        let gmin = self.origin;
        let gmax = Vec2::new(gmin.x + cs * self.nx as f64, gmin.y + cs * self.ny as f64);

        // Clip the ray against the grid rectangle.
        let mut t0 = 0.0f64;
        let mut t1 = max_t;
        for (o, d, lo, hi) in [(origin.x, dir.x, gmin.x, gmax.x), (origin.y, dir.y, gmin.y, gmax.y)] {
            if d == 0.0 {
                if o < lo || o > hi {
                    return None;
                }
            } else {
                let a = (lo - o) / d;
                let b = (hi - o) / d;
                t0 = t0.max(a.min(b));
                t1 = t1.min(a.max(b));
            }
        }
        if t0 > t1 {
            return None;
        }

        let start = origin + dir * t0;
        let (mut cx, mut cy) = self.cell_of(start);
        let step_x: isize = if dir.x > 0.0 { 1 } else { -1 };
        let step_y: isize = if dir.y > 0.0 { 1 } else { -1 };
        let next_boundary = |c: usize, step: isize, lo: f64| {
            let edge = if step > 0 { c + 1 } else { c };
            lo + edge as f64 * cs
        };
        let mut t_max_x = if dir.x != 0.0 {
            (next_boundary(cx, step_x, gmin.x) - origin.x) / dir.x
        } else {
            f64::INFINITY
        };
        let mut t_max_y = if dir.y != 0.0 {
            (next_boundary(cy, step_y, gmin.y) - origin.y) / dir.y
        } else {
            f64::INFINITY
        };
        let t_delta_x = if dir.x != 0.0 { cs / dir.x.abs() } else { f64::INFINITY };
        let t_delta_y = if dir.y != 0.0 { cs / dir.y.abs() } else { f64::INFINITY };

        let mut best: Option<RayHit> = None;
        loop {
            for &i in &self.buckets[cy * self.nx + cx] {
                let i = i as usize;
                let s = &self.segments[i];
                if let Some(t) = geometry::ray_segment(origin, dir, s.a, s.b) {
                    if t < max_t && is_better(t, i, best) {
                        best = Some(RayHit { t, segment: i });
                    }
                }
            }
            let t_exit = t_max_x.min(t_max_y);
            if let Some(b) = best {
                if b.t <= t_exit {
                    return best;
                }
            }
            if t_exit > t1 {
                return best;
            }
            if t_max_x < t_max_y {
                let nx = cx as isize + step_x;
                if nx < 0 || nx >= self.nx as isize {
                    return best;
                }
                cx = nx as usize;
                t_max_x += t_delta_x;
            } else {
                let ny = cy as isize + step_y;
                if ny < 0 || ny >= self.ny as isize {
                    return best;
                }
                cy = ny as usize;
                t_max_y += t_delta_y;
            }
        }
    }

    /// Distance from `p` to the nearest segment, searching only within `radius`.
    /// Returns `None` when nothing lies within `radius`.
    pub fn nearest_distance_within(&self, p: Vec2, radius: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        let rect = Rect::new(p - Vec2::new(radius, radius), p + Vec2::new(radius, radius));
        self.for_each_in_rect(rect, |i| {
            let s = &self.segments[i];
            let d = geometry::point_segment_distance(p, s.a, s.b);
            if d <= radius && best.map_or(true, |b| d < b) {
                best = Some(d);
            }
        });
        best
    }

    /// True when `p` is at least `clearance` from every segment.
    pub fn has_clearance(&self, p: Vec2, clearance: f64) -> bool {
        match self.nearest_distance_within(p, clearance) {
            Some(d) => d >= clearance,
            None => true,
        }
    }

    /// True when the closed segment `[p, q]` touches any wall.
    pub fn crosses_wall(&self, p: Vec2, q: Vec2) -> bool {
        let rect = Rect::bounding([p, q]).unwrap();
        let mut hit = false;
        self.for_each_in_rect(rect.padded(1e-9), |i| {
            if !hit {
                let s = &self.segments[i];
                hit = geometry::segments_intersect(p, q, s.a, s.b);
            }
        });
        hit
    }

    /// Earliest contact of a disc of `radius` swept from `center` along `motion`.
    pub fn disc_cast(&self, center: Vec2, radius: f64, motion: Vec2) -> Option<DiscContact> {
        let end = center + motion;
        let rect = Rect::bounding([center, end]).unwrap().padded(radius + 1e-6);
        let mut best: Option<DiscContact> = None;
        self.for_each_in_rect(rect, |i| {
            let s = &self.segments[i];
            if let Some((t, normal)) = geometry::disc_cast(center, radius, motion, s.a, s.b) {
                let better = match best {
                    None => true,
                    Some(b) => t < b.t || (t == b.t && i < b.segment),
                };
                if better {
                    best = Some(DiscContact { t, normal, segment: i });
                }
            }
        });
        best
    }
}

fn is_better(t: f64, i: usize, best: Option<RayHit>) -> bool {
    match best {
        None => true,
        Some(b) => t < b.t || (t == b.t && i < b.segment),
    }
}

/// Reference nearest-hit query scanning every segment.
pub fn nearest_hit_brute_force(segments: &[WallSegment], origin: Vec2, dir: Vec2, max_t: f64) -> Option<RayHit> {
    let mut best = None;
    for (i, s) in segments.iter().enumerate() {
        if let Some(t) = geometry::ray_segment(origin, dir, s.a, s.b) {
            if t < max_t && is_better(t, i, best) {
                best = Some(RayHit { t, segment: i });
            }
        }
    }
    best
}
