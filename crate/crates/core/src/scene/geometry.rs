//! Viewpoints, rays and axis-aligned unit boxes.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::tensor::SeededRng;

pub type V3 = [f64; 3];

#[inline]
pub fn dot(a: V3, b: V3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross(a: V3, b: V3) -> V3 {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

#[inline]
pub fn norm(a: V3) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn scale(a: V3, s: f64) -> V3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn add(a: V3, b: V3) -> V3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

pub fn normalize(a: V3) -> Option<V3> {
    let n = norm(a);
    (n > 0.0 && n.is_finite()).then(|| scale(a, 1.0 / n))
}

/// A sensor pose: position plus pitch (elevation) and yaw (heading), radians.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Viewpoint {
    pub position: V3,
    pub pitch: f64,
    pub yaw: f64,
}

impl Viewpoint {
    /// The pose at `position` looking straight at the origin.
    pub fn facing_origin(position: V3) -> Self {
        let r = norm(position);
        let pitch = (-position[2] / r).clamp(-1.0, 1.0).asin();
        let yaw = (-position[1]).atan2(-position[0]);
        Self { position, pitch, yaw }
    }

    pub fn from_query(q: &[f32]) -> Result<Self> {
        if q.len() != 5 {
            return Err(Error::shape("query", format!("expected 5 values, got {}", q.len())));
        }
        let q = q.iter().map(|&v| v as f64).collect::<Vec<_>>();
        Ok(Self { position: [q[0], q[1], q[2]], pitch: q[3], yaw: q[4] })
    }

    pub fn to_query(&self) -> [f32; 5] {
        [
            self.position[0] as f32,
            self.position[1] as f32,
            self.position[2] as f32,
            self.pitch as f32,
            self.yaw as f32,
        ]
    }

    pub fn forward(&self) -> V3 {
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        [cp * cy, cp * sy, sp]
    }

    /// Orthonormal sensor frame; `right` is horizontal and derived from yaw alone.
    pub fn frame(&self) -> Result<Frame> {
        if !(self.position.iter().all(|v| v.is_finite()) && self.pitch.is_finite() && self.yaw.is_finite()) {
            return Err(Error::Invalid("non-finite viewpoint".into()));
        }
        let forward = self.forward();
        let (sy, cy) = self.yaw.sin_cos();
        let right = [sy, -cy, 0.0];
        let up = cross(right, forward);
        Ok(Frame { origin: self.position, forward, right, up })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Frame {
    pub origin: V3,
    pub forward: V3,
    pub right: V3,
    pub up: V3,
}

impl Frame {
    /// Applies a rotation matrix to every axis and the origin.
    pub fn rotated(&self, m: &[[f64; 3]; 3]) -> Frame {
        let r = |v: V3| [dot(m[0], v), dot(m[1], v), dot(m[2], v)];
        Frame { origin: r(self.origin), forward: r(self.forward), right: r(self.right), up: r(self.up) }
    }

    /// Direction through image-plane offsets `(u, v)` (units of the focal length).
    pub fn direction(&self, u: f64, v: f64) -> Option<V3> {
        normalize(add(add(self.forward, scale(self.right, u)), scale(self.up, v)))
    }
}

/// Uniform position on the sphere of radius `radius`, oriented toward the origin.
pub fn sample_viewpoint(rng: &mut SeededRng, radius: f64) -> Viewpoint {
    let z = rng.uniform_in(-1.0, 1.0);
    let phi = rng.uniform_in(0.0, 2.0 * PI);
    let rxy = (1.0 - z * z).max(0.0).sqrt();
    Viewpoint::facing_origin([radius * rxy * phi.cos(), radius * rxy * phi.sin(), radius * z])
}

/// Which face of a box a ray entered through.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Face {
    pub axis: usize,
    pub positive: bool,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Hit {
    pub t: f64,
    pub face: Face,
}

/// Slab intersection of a ray with the axis-aligned box `center ± half`.
/// Rays starting inside the box report no hit.
pub fn ray_box(origin: V3, dir: V3, center: V3, half: f64) -> Option<Hit> {
    let mut t_near = f64::NEG_INFINITY;
    let mut t_far = f64::INFINITY;
    let mut near_axis = 0;
    for k in 0..3 {
        let lo = center[k] - half - origin[k];
        let hi = center[k] + half - origin[k];
        if dir[k] == 0.0 {
            if lo > 0.0 || hi < 0.0 {
                return None;
            }
            continue;
        }
        let inv = 1.0 / dir[k];
        let (t0, t1) = if inv >= 0.0 { (lo * inv, hi * inv) } else { (hi * inv, lo * inv) };
        if t0 > t_near {
            t_near = t0;
            near_axis = k;
        }
        t_far = t_far.min(t1);
    }
    if t_near > t_far || t_near <= 0.0 {
        return None;
    }
    Some(Hit { t: t_near, face: Face { axis: near_axis, positive: dir[near_axis] < 0.0 } })
}

/// Nearest hit among unit cubes centered at `centers`, with the index of the block hit.
pub fn nearest_hit(origin: V3, dir: V3, centers: &[V3]) -> Option<(usize, Hit)> {
    centers
        .iter()
        .enumerate()
        .filter_map(|(i, c)| ray_box(origin, dir, *c, 0.5).map(|h| (i, h)))
        .min_by(|a, b| a.1.t.total_cmp(&b.1.t))
}
