//! Planar vector math, oriented rectangles, and exact ray-rectangle
//! intersection backing the sensor suite and collision checks.
//!
//! Coordinates live on the ground plane: `x` east, `z` north. The vertical
//! axis is held at zero throughout; observation vectors re-insert it as a
//! constant so downstream consumers see familiar 3-component positions.

use serde::{Deserialize, Serialize};

/// Inclusive-boundary slack for containment tests, absorbing the rounding of
/// a rotate/unrotate round trip so edge and corner contact is deterministic.
const BOUNDARY_EPS: f64 = 1e-9;

/// Ground-plane point or direction (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub z: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, z: 0.0 };

    pub fn new(x: f64, z: f64) -> Self {
        Self { x, z }
    }

    /// Unit vector at `angle` radians from +x.
    pub fn from_angle(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self { x: c, z: s }
    }

    pub fn add(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x + o.x, self.z + o.z)
    }

    pub fn sub(self, o: Vec2) -> Vec2 {
        Vec2::new(self.x - o.x, self.z - o.z)
    }

    pub fn scale(self, k: f64) -> Vec2 {
        Vec2::new(self.x * k, self.z * k)
    }

    pub fn dot(self, o: Vec2) -> f64 {
        self.x * o.x + self.z * o.z
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, o: Vec2) -> f64 {
        self.sub(o).norm()
    }

    /// Rotate counterclockwise by `angle` radians.
    pub fn rotate(self, angle: f64) -> Vec2 {
        let (s, c) = angle.sin_cos();
        Vec2::new(c * self.x - s * self.z, s * self.x + c * self.z)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.z.is_finite()
    }
}

/// Wrap an angle to [-pi, pi).
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = std::f64::consts::TAU;
    let mut r = a.rem_euclid(two_pi);
    if r >= std::f64::consts::PI {
        r -= two_pi;
    }
    r
}

/// Rectangle with arbitrary heading: `center`, `half_extents` along its local
/// axes, and `heading` radians of the local x axis from world +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Vec2,
    pub half_extents: (f64, f64),
    pub heading: f64,
}

impl OrientedBox {
    /// Construct, rejecting degenerate (zero-thickness) boxes.
    pub fn new(center: Vec2, half_extents: (f64, f64), heading: f64) -> crate::Result<Self> {
        if !(half_extents.0 > 0.0 && half_extents.1 > 0.0)
            || !half_extents.0.is_finite()
            || !half_extents.1.is_finite()
        {
            return Err(crate::Error::InvalidConfig(format!(
                "box half extents must be strictly positive, got ({}, {})",
                half_extents.0, half_extents.1
            )));
        }
        if !center.is_finite() || !heading.is_finite() {
            return Err(crate::Error::InvalidConfig(
                "box center/heading must be finite".into(),
            ));
        }
        Ok(Self {
            center,
            half_extents,
            heading: wrap_angle(heading),
        })
    }

    /// World point expressed in the box frame.
    pub fn to_local(&self, p: Vec2) -> Vec2 {
        p.sub(self.center).rotate(-self.heading)
    }

    /// The four corners in world coordinates (counterclockwise).
    pub fn corners(&self) -> [Vec2; 4] {
        let (hx, hz) = self.half_extents;
        [
            Vec2::new(hx, hz),
            Vec2::new(-hx, hz),
            Vec2::new(-hx, -hz),
            Vec2::new(hx, -hz),
        ]
        .map(|c| c.rotate(self.heading).add(self.center))
    }

    /// Grow both half extents by `margin` (e.g. obstacle inflation).
    pub fn inflate(&self, margin: f64) -> OrientedBox {
        OrientedBox {
            center: self.center,
            half_extents: (self.half_extents.0 + margin, self.half_extents.1 + margin),
            heading: self.heading,
        }
    }
}

/// Ray with unit direction and finite maximum range.
#[derive(Debug, Clone, Copy)]
pub struct Ray {
    pub origin: Vec2,
    pub direction: Vec2,
    pub max_range: f64,
}

impl Ray {
    pub fn new(origin: Vec2, direction: Vec2, max_range: f64) -> crate::Result<Self> {
        if (direction.norm() - 1.0).abs() > 1e-9 {
            return Err(crate::Error::InvalidConfig(
                "ray direction must be a unit vector".into(),
            ));
        }
        if !(max_range > 0.0) {
            return Err(crate::Error::InvalidConfig(
                "ray max_range must be positive".into(),
            ));
        }
        Ok(Self {
            origin,
            direction,
            max_range,
        })
    }

    /// Convenience constructor from an angle in radians.
    pub fn from_angle(origin: Vec2, angle: f64, max_range: f64) -> Self {
        Self {
            origin,
            direction: Vec2::from_angle(angle),
            max_range,
        }
    }
}

/// Entry distance of `ray` into `b`, if the segment [0, max_range] hits it.
/// An origin inside the box reports distance 0.
fn ray_box_entry(ray: &Ray, b: &OrientedBox) -> Option<f64> {
    let o = b.to_local(ray.origin);
    let d = ray.direction.rotate(-b.heading);
    let (hx, hz) = b.half_extents;

    // Slab test per local axis.
    let mut t_enter = 0.0_f64;
    let mut t_exit = ray.max_range;
    for (oc, dc, h) in [(o.x, d.x, hx), (o.z, d.z, hz)] {
        if dc.abs() < 1e-15 {
            if oc.abs() > h {
                return None;
            }
            continue;
        }
        let t1 = (-h - oc) / dc;
        let t2 = (h - oc) / dc;
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        t_enter = t_enter.max(lo);
        t_exit = t_exit.min(hi);
        if t_enter > t_exit {
            return None;
        }
    }
    Some(t_enter)
}

/// Smallest nonnegative hit distance across `boxes`, clipped to the ray's
/// max range; returns `max_range` when nothing is hit within range.
pub fn ray_cast(ray: &Ray, boxes: &[OrientedBox]) -> f64 {
    let mut best = ray.max_range;
    for b in boxes {
        if let Some(t) = ray_box_entry(ray, b) {
            if t < best {
                best = t;
            }
        }
    }
    best
}

/// Interval projection of a box onto a unit axis.
fn project(b: &OrientedBox, axis: Vec2) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for c in b.corners() {
        let v = c.dot(axis);
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}

/// Separating-axis rectangle intersection test; boundary contact counts
/// as overlap.
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let axes = [
        Vec2::from_angle(a.heading),
        Vec2::from_angle(a.heading + std::f64::consts::FRAC_PI_2),
        Vec2::from_angle(b.heading),
        Vec2::from_angle(b.heading + std::f64::consts::FRAC_PI_2),
    ];
    for axis in axes {
        let (alo, ahi) = project(a, axis);
        let (blo, bhi) = project(b, axis);
        if ahi < blo - BOUNDARY_EPS || bhi < alo - BOUNDARY_EPS {
            return false;
        }
    }
    true
}

/// True iff `p` lies inside or on the boundary of `b`.
pub fn point_in_box(p: Vec2, b: &OrientedBox) -> bool {
    let l = b.to_local(p);
    l.x.abs() <= b.half_extents.0 + BOUNDARY_EPS && l.z.abs() <= b.half_extents.1 + BOUNDARY_EPS
}
