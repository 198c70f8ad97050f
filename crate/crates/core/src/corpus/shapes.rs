//! Procedural object shapes, sampled as 512-point surface clouds with the
//! base on `y = 0` and centered on the vertical axis.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::geometry::{PointCloud, Vec3, CLOUD_SIZE, DEFAULT_NORMAL_NEIGHBORS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Box,
    Chair,
    Table,
    Ball,
}

impl ObjectKind {
    pub const ALL: [ObjectKind; 4] = [ObjectKind::Box, ObjectKind::Chair, ObjectKind::Table, ObjectKind::Ball];

    pub fn name(self) -> &'static str {
        match self {
            ObjectKind::Box => "box",
            ObjectKind::Chair => "chair",
            ObjectKind::Table => "table",
            ObjectKind::Ball => "ball",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

#[derive(Clone, Copy, Debug)]
enum Part {
    Cuboid { min: Vec3, max: Vec3 },
    Sphere { center: Vec3, radius: f64 },
}

impl Part {
    fn area(&self) -> f64 {
        match *self {
            Part::Cuboid { min, max } => {
                let e = max - min;
                2.0 * (e.x * e.y + e.y * e.z + e.x * e.z)
            }
            Part::Sphere { radius, .. } => 4.0 * std::f64::consts::PI * radius * radius,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> Vec3 {
        match *self {
            Part::Cuboid { min, max } => {
                let e = max - min;
                let faces = [e.y * e.z, e.y * e.z, e.x * e.z, e.x * e.z, e.x * e.y, e.x * e.y];
                let total: f64 = faces.iter().sum();
                let mut pick = rng.random::<f64>() * total;
                let mut face = 5;
                for (i, a) in faces.iter().enumerate() {
                    if pick < *a {
                        face = i;
                        break;
                    }
                    pick -= a;
                }
                let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
                let lerp = |a: f64, b: f64, s: f64| a + (b - a) * s;
                match face {
                    0 => Vec3::new(min.x, lerp(min.y, max.y, u), lerp(min.z, max.z, v)),
                    1 => Vec3::new(max.x, lerp(min.y, max.y, u), lerp(min.z, max.z, v)),
                    2 => Vec3::new(lerp(min.x, max.x, u), min.y, lerp(min.z, max.z, v)),
                    3 => Vec3::new(lerp(min.x, max.x, u), max.y, lerp(min.z, max.z, v)),
                    4 => Vec3::new(lerp(min.x, max.x, u), lerp(min.y, max.y, v), min.z),
                    _ => Vec3::new(lerp(min.x, max.x, u), lerp(min.y, max.y, v), max.z),
                }
            }
            Part::Sphere { center, radius } => {
                let z: f64 = rng.random_range(-1.0..1.0);
                let phi = rng.random_range(0.0..std::f64::consts::TAU);
                let r = (1.0 - z * z).max(0.0).sqrt();
                center + Vec3::new(r * phi.cos(), z, r * phi.sin()) * radius
            }
        }
    }
}

fn cuboid(cx: f64, y0: f64, cz: f64, w: f64, h: f64, d: f64) -> Part {
    Part::Cuboid {
        min: Vec3::new(cx - w / 2.0, y0, cz - d / 2.0),
        max: Vec3::new(cx + w / 2.0, y0 + h, cz + d / 2.0),
    }
}

/// Dimensions of a generated object (meters, rest frame).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Shape {
    pub kind: ObjectKind,
    /// Full extent along x, y, z.
    pub size: Vec3,
    /// Top of the sitting or support surface.
    pub seat_height: f64,
    /// Seat depth along z (chair) or z half-extent of the top.
    pub seat_depth: f64,
    /// Back rest thickness (chair only).
    pub back_height: f64,
}

impl Shape {
    pub fn random(kind: ObjectKind, rng: &mut ChaCha8Rng) -> Self {
        match kind {
            ObjectKind::Box => {
                let size = Vec3::new(rng.random_range(0.36..0.48), rng.random_range(0.32..0.45), rng.random_range(0.30..0.40));
                Self {
                    kind,
                    size,
                    seat_height: size.y,
                    seat_depth: size.z,
                    back_height: 0.0,
                }
            }
            ObjectKind::Chair => {
                let seat = rng.random_range(0.42..0.48);
                let width = rng.random_range(0.42..0.48);
                let back = rng.random_range(0.38..0.46);
                Self {
                    kind,
                    size: Vec3::new(width, seat + back, width),
                    seat_height: seat,
                    seat_depth: width,
                    back_height: back,
                }
            }
            ObjectKind::Table => {
                let h = rng.random_range(0.62..0.72);
                Self {
                    kind,
                    size: Vec3::new(rng.random_range(0.9..1.1), h, rng.random_range(0.55..0.65)),
                    seat_height: h,
                    seat_depth: 0.0,
                    back_height: 0.0,
                }
            }
            ObjectKind::Ball => {
                let r = rng.random_range(0.11..0.15);
                Self {
                    kind,
                    size: Vec3::new(2.0 * r, 2.0 * r, 2.0 * r),
                    seat_height: 2.0 * r,
                    seat_depth: 0.0,
                    back_height: 0.0,
                }
            }
        }
    }

    pub fn radius(&self) -> f64 {
        self.size.x / 2.0
    }

    fn parts(&self) -> Vec<Part> {
        let s = self.size;
        match self.kind {
            ObjectKind::Box => vec![cuboid(0.0, 0.0, 0.0, s.x, s.y, s.z)],
            ObjectKind::Chair => {
                let (w, d, h) = (s.x, self.seat_depth, self.seat_height);
                let t = 0.05;
                let leg = 0.04;
                let mut parts = vec![
                    cuboid(0.0, h - t, 0.0, w, t, d),
                    cuboid(0.0, h, -d / 2.0 + t / 2.0, w, self.back_height, t),
                ];
                for (sx, sz) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                    parts.push(cuboid(sx * (w - leg) / 2.0, 0.0, sz * (d - leg) / 2.0, leg, h - t, leg));
                }
                parts
            }
            ObjectKind::Table => {
                let t = 0.04;
                let leg = 0.05;
                let mut parts = vec![cuboid(0.0, s.y - t, 0.0, s.x, t, s.z)];
                for (sx, sz) in [(-1.0, -1.0), (-1.0, 1.0), (1.0, -1.0), (1.0, 1.0)] {
                    parts.push(cuboid(sx * (s.x - 2.0 * leg) / 2.0, 0.0, sz * (s.z - 2.0 * leg) / 2.0, leg, s.y - t, leg));
                }
                parts
            }
            ObjectKind::Ball => vec![Part::Sphere {
                center: Vec3::new(0.0, self.radius(), 0.0),
                radius: self.radius(),
            }],
        }
    }

    /// Surface cloud with estimated normals.
    pub fn cloud(&self, rng: &mut ChaCha8Rng) -> Result<PointCloud> {
        let parts = self.parts();
        let areas: Vec<f64> = parts.iter().map(Part::area).collect();
        let total: f64 = areas.iter().sum();
        let mut points = Vec::with_capacity(CLOUD_SIZE);
        for _ in 0..CLOUD_SIZE {
            let mut pick = rng.random::<f64>() * total;
            let mut chosen = parts.len() - 1;
            for (i, a) in areas.iter().enumerate() {
                if pick < *a {
                    chosen = i;
                    break;
                }
                pick -= a;
            }
            points.push(parts[chosen].sample(rng));
        }
        PointCloud::new(points)?.with_estimated_normals(DEFAULT_NORMAL_NEIGHBORS)
    }
}
