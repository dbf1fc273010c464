//! Planar geometry: vectors, footprints, ray casts and distance queries.
//!
//! Everything here works in meters in the world frame. Shapes are convex
//! (discs and oriented rectangles), which keeps every distance query exact.

use std::ops::{Add, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    /// Unit vector at `angle` radians from +x.
    pub fn from_angle(angle: f64) -> Self {
        Self::new(angle.cos(), angle.sin())
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    /// z component of the 3D cross product.
    pub fn cross(self, other: Vec2) -> f64 {
        self.x * other.y - self.y * other.x
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    /// Rotates counterclockwise by `angle`.
    pub fn rotate(self, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(c * self.x - s * self.y, s * self.x + c * self.y)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// A closed line segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub a: Vec2,
    pub b: Vec2,
}

impl Segment {
    pub const fn new(a: Vec2, b: Vec2) -> Self {
        Self { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    /// Closest point on the segment to `p`.
    pub fn closest_point(&self, p: Vec2) -> Vec2 {
        let d = self.b - self.a;
        let len2 = d.dot(d);
        if len2 == 0.0 {
            return self.a;
        }
        let t = ((p - self.a).dot(d) / len2).clamp(0.0, 1.0);
        self.a + d * t
    }

    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        self.closest_point(p).distance(p)
    }

    pub fn intersects(&self, other: &Segment) -> bool {
        let o1 = orientation(self.a, self.b, other.a);
        let o2 = orientation(self.a, self.b, other.b);
        let o3 = orientation(other.a, other.b, self.a);
        let o4 = orientation(other.a, other.b, self.b);
        if o1 * o2 < 0.0 && o3 * o4 < 0.0 {
            return true;
        }
        (o1 == 0.0 && on_segment(self.a, self.b, other.a))
            || (o2 == 0.0 && on_segment(self.a, self.b, other.b))
            || (o3 == 0.0 && on_segment(other.a, other.b, self.a))
            || (o4 == 0.0 && on_segment(other.a, other.b, self.b))
    }

    pub fn distance_to_segment(&self, other: &Segment) -> f64 {
        if self.intersects(other) {
            return 0.0;
        }
        self.distance_to_point(other.a)
            .min(self.distance_to_point(other.b))
            .min(other.distance_to_point(self.a))
            .min(other.distance_to_point(self.b))
    }

    /// Ray parameter `t` (distance along unit `dir`) where the ray first
    /// meets this segment. Collinear overlap reports the nearest endpoint.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        let e = self.b - self.a;
        let denom = dir.cross(e);
        let w = self.a - origin;
        if denom.abs() < 1e-15 {
            if w.cross(dir).abs() > 1e-12 {
                return None;
            }
            let ta = w.dot(dir);
            let tb = (self.b - origin).dot(dir);
            let (lo, hi) = if ta < tb { (ta, tb) } else { (tb, ta) };
            if hi < 0.0 {
                return None;
            }
            return Some(lo.max(0.0));
        }
        let t = w.cross(e) / denom;
        let u = w.cross(dir) / denom;
        if t >= 0.0 && (0.0..=1.0).contains(&u) {
            Some(t)
        } else {
            None
        }
    }
}

fn orientation(a: Vec2, b: Vec2, c: Vec2) -> f64 {
    (b - a).cross(c - a)
}

fn on_segment(a: Vec2, b: Vec2, p: Vec2) -> bool {
    p.x >= a.x.min(b.x) && p.x <= a.x.max(b.x) && p.y >= a.y.min(b.y) && p.y <= a.y.max(b.y)
}

/// Axis-aligned bounding box.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Aabb {
    pub min: Vec2,
    pub max: Vec2,
}

impl Aabb {
    pub fn new(min: Vec2, max: Vec2) -> Self {
        Self { min, max }
    }

    pub fn contains_box(&self, other: &Aabb) -> bool {
        other.min.x >= self.min.x
            && other.min.y >= self.min.y
            && other.max.x <= self.max.x
            && other.max.y <= self.max.y
    }
}

/// A convex footprint: a disc or a rectangle rotated about its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Shape {
    Circle {
        center: Vec2,
        radius: f64,
    },
    Rect {
        center: Vec2,
        half_extents: Vec2,
        /// Counterclockwise rotation in radians.
        rotation: f64,
    },
}

impl Shape {
    pub fn circle(center: Vec2, radius: f64) -> Self {
        Shape::Circle { center, radius }
    }

    pub fn rect(center: Vec2, half_extents: Vec2, rotation: f64) -> Self {
        Shape::Rect {
            center,
            half_extents,
            rotation,
        }
    }

    /// Axis-aligned square cell `[min, min + size]^2`.
    pub fn square(min: Vec2, size: f64) -> Self {
        let h = size * 0.5;
        Shape::rect(min + Vec2::new(h, h), Vec2::new(h, h), 0.0)
    }

    pub fn center(&self) -> Vec2 {
        match *self {
            Shape::Circle { center, .. } | Shape::Rect { center, .. } => center,
        }
    }

    pub fn aabb(&self) -> Aabb {
        match *self {
            Shape::Circle { center, radius } => Aabb::new(
                center - Vec2::new(radius, radius),
                center + Vec2::new(radius, radius),
            ),
            Shape::Rect { .. } => {
                let corners = self.corners();
                let mut min = corners[0];
                let mut max = corners[0];
                for c in &corners[1..] {
                    min = Vec2::new(min.x.min(c.x), min.y.min(c.y));
                    max = Vec2::new(max.x.max(c.x), max.y.max(c.y));
                }
                Aabb::new(min, max)
            }
        }
    }

    /// Rectangle corners in counterclockwise order. Discs return their
    /// center four times.
    pub fn corners(&self) -> [Vec2; 4] {
        match *self {
            Shape::Circle { center, .. } => [center; 4],
            Shape::Rect {
                center,
                half_extents: h,
                rotation,
            } => [
                center + Vec2::new(-h.x, -h.y).rotate(rotation),
                center + Vec2::new(h.x, -h.y).rotate(rotation),
                center + Vec2::new(h.x, h.y).rotate(rotation),
                center + Vec2::new(-h.x, h.y).rotate(rotation),
            ],
        }
    }

    fn edges(&self) -> [Segment; 4] {
        let c = self.corners();
        [
            Segment::new(c[0], c[1]),
            Segment::new(c[1], c[2]),
            Segment::new(c[2], c[3]),
            Segment::new(c[3], c[0]),
        ]
    }

    /// Maps a world point into the rectangle's local frame.
    fn to_local(center: Vec2, rotation: f64, p: Vec2) -> Vec2 {
        (p - center).rotate(-rotation)
    }

    pub fn contains(&self, p: Vec2) -> bool {
        match *self {
            Shape::Circle { center, radius } => p.distance(center) <= radius,
            Shape::Rect {
                center,
                half_extents: h,
                rotation,
            } => {
                let q = Self::to_local(center, rotation, p);
                q.x.abs() <= h.x && q.y.abs() <= h.y
            }
        }
    }

    /// Euclidean distance from `p` to the footprint; zero inside.
    pub fn distance_to_point(&self, p: Vec2) -> f64 {
        match *self {
            Shape::Circle { center, radius } => (p.distance(center) - radius).max(0.0),
            Shape::Rect {
                center,
                half_extents: h,
                rotation,
            } => {
                let q = Self::to_local(center, rotation, p);
                let dx = (q.x.abs() - h.x).max(0.0);
                let dy = (q.y.abs() - h.y).max(0.0);
                dx.hypot(dy)
            }
        }
    }

    /// Distance from a segment to the footprint; zero if they touch.
    pub fn distance_to_segment(&self, seg: &Segment) -> f64 {
        match *self {
            Shape::Circle { center, radius } => (seg.distance_to_point(center) - radius).max(0.0),
            Shape::Rect { .. } => {
                if self.contains(seg.a) || self.contains(seg.b) {
                    return 0.0;
                }
                let mut best = f64::INFINITY;
                for e in self.edges() {
                    best = best.min(e.distance_to_segment(seg));
                }
                best
            }
        }
    }

    /// Separation between two footprints; zero when they overlap or touch.
    pub fn distance_to_shape(&self, other: &Shape) -> f64 {
        match (*self, *other) {
            (Shape::Circle { center: a, radius: ra }, Shape::Circle { center: b, radius: rb }) => {
                (a.distance(b) - ra - rb).max(0.0)
            }
            (Shape::Circle { center, radius }, rect @ Shape::Rect { .. })
            | (rect @ Shape::Rect { .. }, Shape::Circle { center, radius }) => {
                (rect.distance_to_point(center) - radius).max(0.0)
            }
            (Shape::Rect { .. }, Shape::Rect { .. }) => {
                if self.corners().iter().any(|&c| other.contains(c))
                    || other.corners().iter().any(|&c| self.contains(c))
                {
                    return 0.0;
                }
                let mut best = f64::INFINITY;
                for e in self.edges() {
                    best = best.min(other.distance_to_segment(&e));
                }
                best
            }
        }
    }

    /// Distance along the unit ray `dir` to the first boundary crossing.
    /// Rays starting inside the footprint report no hit.
    pub fn ray_hit(&self, origin: Vec2, dir: Vec2) -> Option<f64> {
        match *self {
            Shape::Circle { center, radius } => {
                let oc = origin - center;
                let c = oc.dot(oc) - radius * radius;
                if c < 0.0 {
                    return None;
                }
                let b = oc.dot(dir);
                let disc = b * b - c;
                if disc < 0.0 {
                    return None;
                }
                let t = -b - disc.sqrt();
                (t >= 0.0).then_some(t)
            }
            Shape::Rect {
                center,
                half_extents: h,
                rotation,
            } => {
                let o = Self::to_local(center, rotation, origin);
                if o.x.abs() < h.x && o.y.abs() < h.y {
                    return None;
                }
                let d = dir.rotate(-rotation);
                let mut t_enter = f64::NEG_INFINITY;
                let mut t_exit = f64::INFINITY;
                for (oc, dc, hc) in [(o.x, d.x, h.x), (o.y, d.y, h.y)] {
                    if dc.abs() < 1e-15 {
                        if oc.abs() > hc {
                            return None;
                        }
                    } else {
                        let t1 = (-hc - oc) / dc;
                        let t2 = (hc - oc) / dc;
                        let (lo, hi) = if t1 < t2 { (t1, t2) } else { (t2, t1) };
                        t_enter = t_enter.max(lo);
                        t_exit = t_exit.min(hi);
                    }
                }
                if t_enter <= t_exit && t_enter >= 0.0 {
                    Some(t_enter)
                } else {
                    None
                }
            }
        }
    }

    /// Evenly spaced points on the boundary, used by footprint tests.
    pub fn boundary_points(&self, n: usize) -> Vec<Vec2> {
        match *self {
            Shape::Circle { center, radius } => (0..n)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / n as f64;
                    center + Vec2::from_angle(a) * radius
                })
                .collect(),
            Shape::Rect { .. } => {
                let per_edge = n.div_ceil(4).max(1);
                self.edges()
                    .iter()
                    .flat_map(|e| {
                        (0..per_edge).map(move |k| e.a + (e.b - e.a) * (k as f64 / per_edge as f64))
                    })
                    .collect()
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn ray_hits_axis_aligned_rect_face() {
        let r = Shape::rect(Vec2::new(3.0, 0.0), Vec2::new(0.5, 1.0), 0.0);
        let t = r.ray_hit(Vec2::ZERO, Vec2::new(1.0, 0.0)).unwrap();
        assert!((t - 2.5).abs() < 1e-12);
        assert!(r.ray_hit(Vec2::ZERO, Vec2::new(-1.0, 0.0)).is_none());
    }

    #[test]
    fn ray_hits_rotated_rect_corner() {
        // Diamond with a corner pointing at the origin.
        let r = Shape::rect(Vec2::new(2.0, 0.0), Vec2::new(0.5, 0.5), FRAC_PI_4);
        let t = r.ray_hit(Vec2::ZERO, Vec2::new(1.0, 0.0)).unwrap();
        assert!((t - (2.0 - 0.5 * 2f64.sqrt())).abs() < 1e-12);
    }

    #[test]
    fn ray_circle_and_segment() {
        let c = Shape::circle(Vec2::new(0.0, 5.0), 1.0);
        assert!((c.ray_hit(Vec2::ZERO, Vec2::new(0.0, 1.0)).unwrap() - 4.0).abs() < 1e-12);
        assert!(c.ray_hit(Vec2::new(0.0, 5.0), Vec2::new(0.0, 1.0)).is_none());
        let s = Segment::new(Vec2::new(2.0, -1.0), Vec2::new(2.0, 1.0));
        assert!((s.ray_hit(Vec2::ZERO, Vec2::new(1.0, 0.0)).unwrap() - 2.0).abs() < 1e-12);
        assert!(s.ray_hit(Vec2::ZERO, Vec2::new(0.0, 1.0)).is_none());
    }

    #[test]
    fn shape_distances() {
        let a = Shape::rect(Vec2::ZERO, Vec2::new(1.0, 1.0), 0.0);
        let b = Shape::rect(Vec2::new(3.0, 0.0), Vec2::new(0.5, 0.5), 0.0);
        assert!((a.distance_to_shape(&b) - 1.5).abs() < 1e-12);
        let c = Shape::circle(Vec2::new(0.0, 3.0), 1.0);
        assert!((a.distance_to_shape(&c) - 1.0).abs() < 1e-12);
        let d = Shape::rect(Vec2::new(1.5, 0.0), Vec2::new(1.0, 0.2), 0.3);
        assert_eq!(a.distance_to_shape(&d), 0.0);
        let seg = Segment::new(Vec2::new(-3.0, 2.0), Vec2::new(3.0, 2.0));
        assert!((a.distance_to_segment(&seg) - 1.0).abs() < 1e-12);
        let crossing = Segment::new(Vec2::new(-3.0, 0.0), Vec2::new(3.0, 0.0));
        assert_eq!(a.distance_to_segment(&crossing), 0.0);
    }

    #[test]
    fn segments_intersect_and_distance() {
        let s = Segment::new(Vec2::ZERO, Vec2::new(2.0, 0.0));
        let t = Segment::new(Vec2::new(1.0, -1.0), Vec2::new(1.0, 1.0));
        assert!(s.intersects(&t));
        let u = Segment::new(Vec2::new(3.0, 1.0), Vec2::new(3.0, 2.0));
        assert!(!s.intersects(&u));
        assert!((s.distance_to_segment(&u) - 2f64.sqrt()).abs() < 1e-12);
    }
}
