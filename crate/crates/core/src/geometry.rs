//! Planar geometry primitives shared by the scene, collision and rendering code.

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

/// A 2D point or vector in meters. Serialized as `[x, y]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl From<[f64; 2]> for Vec2 {
    fn from(v: [f64; 2]) -> Self {
        Vec2::new(v[0], v[1])
    }
}

impl From<Vec2> for [f64; 2] {
    fn from(v: Vec2) -> Self {
        [v.x, v.y]
    }
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    /// Unit vector at `angle` radians counter-clockwise from +x.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Vec2::new(c, s)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.y * o.y
    }

    /// z-component of the 3D cross product.
    pub fn cross(self, o: Vec2) -> f64 {
        self.x * o.y - self.y * o.x
    }

    pub fn length_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn length(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, o: Vec2) -> f64 {
        (self - o).length()
    }

    pub fn normalized(self) -> Vec2 {
        let l = self.length();
        if l > 0.0 {
            self * (1.0 / l)
        } else {
            Vec2::ZERO
        }
    }

    /// Counter-clockwise perpendicular.
    pub fn perp(self) -> Vec2 {
        Vec2::new(-self.y, self.x)
    }

    pub fn rotated(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn angle(self) -> f64 {
        self.y.atan2(self.x)
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.y + o.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, o: Vec2) {
        self.x += o.x;
        self.y += o.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.y - o.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, s: f64) -> Vec2 {
        Vec2::new(self.x * s, self.y * s)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Wraps an angle to (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    let mut r = a % (2.0 * PI);
    if r <= -PI {
        r += 2.0 * PI;
    } else if r > PI {
        r -= 2.0 * PI;
    }
    r
}

/// Axis-aligned rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rect {
    pub min: Vec2,
    pub max: Vec2,
}

impl Rect {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Rect { min, max }
    }

    pub fn width(&self) -> f64 {
        self.max.x - self.min.x
    }

    pub fn height(&self) -> f64 {
        self.max.y - self.min.y
    }

    pub fn is_empty(&self) -> bool {
        !(self.width() > 0.0 && self.height() > 0.0)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        p.x >= self.min.x && p.x <= self.max.x && p.y >= self.min.y && p.y <= self.max.y
    }

    pub fn center(&self) -> Vec2 {
        (self.min + self.max) * 0.5
    }

    pub fn padded(&self, pad: f64) -> Rect {
        Rect::new(
            Vec2::new(self.min.x - pad, self.min.y - pad),
            Vec2::new(self.max.x + pad, self.max.y + pad),
        )
    }

    pub fn diagonal(&self) -> f64 {
        self.min.distance(self.max)
    }

    /// Bounding box of a set of points; `None` when empty.
    pub fn bounding<I: IntoIterator<Item = Vec2>>(points: I) -> Option<Rect> {
        let mut it = points.into_iter();
        let first = it.next()?;
        let mut r = Rect::new(first, first);
        for p in it {
            r.min.x = r.min.x.min(p.x);
            r.min.y = r.min.y.min(p.y);
            r.max.x = r.max.x.max(p.x);
            r.max.y = r.max.y.max(p.y);
        }
        Some(r)
    }
}

/// 2D rigid transform: rotate by `rotation` radians, then translate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Transform2 {
    pub translation: Vec2,
    pub rotation: f64,
}

impl Default for Transform2 {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl Transform2 {
    pub const IDENTITY: Transform2 = Transform2 {
        translation: Vec2::ZERO,
        rotation: 0.0,
    };

    pub fn new(translation: Vec2, rotation: f64) -> Self {
        Transform2 {
            translation,
            rotation,
        }
    }

    pub fn translation(t: Vec2) -> Self {
        Transform2::new(t, 0.0)
    }

    pub fn rotation(r: f64) -> Self {
        Transform2::new(Vec2::ZERO, r)
    }

    pub fn is_identity(&self) -> bool {
        *self == Self::IDENTITY
    }

    pub fn apply(&self, p: Vec2) -> Vec2 {
        if self.rotation == 0.0 {
            p + self.translation
        } else {
            p.rotated(self.rotation) + self.translation
        }
    }

    /// `self ∘ inner`: applies `inner` first.
    pub fn compose(&self, inner: &Transform2) -> Transform2 {
        Transform2 {
            translation: self.apply(inner.translation),
            rotation: self.rotation + inner.rotation,
        }
    }
}

/// Result of intersecting a ray with a segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RayHit {
    /// Ray parameter: hit point = origin + t·dir.
    pub t: f64,
    /// Index of the segment that was hit.
    pub segment: usize,
}

/// Intersects the ray `origin + t·dir` (t ≥ 0) with segment `[a, b]`.
///
/// Parallel rays never hit. Endpoints are included.
pub fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let e = b - a;
    let denom = dir.cross(e);
    if denom == 0.0 {
        return None;
    }
    let w = a - origin;
    let t = w.cross(e) / denom;
    let u = w.cross(dir) / denom;
    if t >= 0.0 && (-1e-9..=1.0 + 1e-9).contains(&u) {
        Some(t)
    } else {
        None
    }
}

/// Closest point on segment `[a, b]` to `p`.
pub fn closest_point_on_segment(p: Vec2, a: Vec2, b: Vec2) -> Vec2 {
    let e = b - a;
    let len2 = e.length_squared();
    if len2 == 0.0 {
        return a;
    }
    let u = ((p - a).dot(e) / len2).clamp(0.0, 1.0);
    a + e * u
}

pub fn point_segment_distance(p: Vec2, a: Vec2, b: Vec2) -> f64 {
    p.distance(closest_point_on_segment(p, a, b))
}

/// True when closed segments `[p, q]` and `[a, b]` share at least one point.
pub fn segments_intersect(p: Vec2, q: Vec2, a: Vec2, b: Vec2) -> bool {
    let d1 = (q - p).cross(a - p);
    let d2 = (q - p).cross(b - p);
    let d3 = (b - a).cross(p - a);
    let d4 = (b - a).cross(q - a);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    let on = |s0: Vec2, s1: Vec2, r: Vec2, d: f64| {
        d == 0.0
            && r.x >= s0.x.min(s1.x)
            && r.x <= s0.x.max(s1.x)
            && r.y >= s0.y.min(s1.y)
            && r.y <= s0.y.max(s1.y)
    };
    on(p, q, a, d1) || on(p, q, b, d2) || on(a, b, p, d3) || on(a, b, q, d4)
}

/// First contact of a disc swept along `motion` with segment `[a, b]`.
///
/// Returns `(t, normal)` with `t ∈ [0, 1]` the fraction of `motion` travelled at
/// contact and `normal` the unit vector from the contact point on the segment to
/// the disc center. A disc that already overlaps the segment reports `t = 0`
/// only when moving towards it.
pub fn disc_cast(center: Vec2, radius: f64, motion: Vec2, a: Vec2, b: Vec2) -> Option<(f64, Vec2)> {
    let closest = closest_point_on_segment(center, a, b);
    let offset = center - closest;
    let dist = offset.length();
    if dist <= radius {
        let n = if dist > 0.0 {
            offset * (1.0 / dist)
        } else {
            (b - a).perp().normalized()
        };
        if motion.dot(n) < 0.0 {
            return Some((0.0, n));
        }
        return None;
    }
    if motion.length_squared() == 0.0 {
        return None;
    }

    let mut best: Option<(f64, Vec2)> = None;
    let mut consider = |t: f64, n: Vec2| {
        if (0.0..=1.0).contains(&t) && best.map_or(true, |(bt, _)| t < bt) {
            best = Some((t, n));
        }
    };

    // Flat sides of the capsule.
    let e = b - a;
    let len = e.length();
    if len > 0.0 {
        let dir = e * (1.0 / len);
        let n = dir.perp();
        let side = if (center - a).dot(n) >= 0.0 { n } else { -n };
        let approach = motion.dot(side);
        let gap = (center - a).dot(side) - radius;
        if approach < 0.0 && gap >= 0.0 {
            let t = gap / -approach;
            let hit = center + motion * t;
            let along = (hit - a).dot(dir);
            if (0.0..=len).contains(&along) {
                consider(t.max(0.0), side);
            }
        }
    }

    // Rounded caps at the endpoints.
    for end in [a, b] {
        let m = center - end;
        let qa = motion.length_squared();
        let qb = m.dot(motion);
        let qc = m.length_squared() - radius * radius;
        let disc = qb * qb - qa * qc;
        if disc < 0.0 || qb >= 0.0 {
            continue;
        }
        let t = (-qb - disc.sqrt()) / qa;
        let contact = center + motion * t;
        consider(t.max(0.0), (contact - end).normalized());
    }

    best
}
