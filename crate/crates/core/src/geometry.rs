//! Rigid transforms, axis-angle rotation with derivatives, and point-cloud
//! utilities (chamfer distance, nearest-neighbor snapping, normals).

use std::cmp::Ordering;
use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Number of points in an object point cloud.
pub const CLOUD_SIZE: usize = 512;

/// Neighbor count used for normal estimation.
pub const DEFAULT_NORMAL_NEIGHBORS: usize = 16;

/// Distance a contact point is pushed off the surface along its normal.
pub const DEFAULT_CONTACT_OFFSET: f64 = 0.02;

/// Object geometry in its rest frame.
#[derive(Debug, Clone, PartialEq)]
pub struct PointCloud {
    points: Vec<Vec3>,
    normals: Option<Vec<Vec3>>,
}

impl PointCloud {
    /// Builds a standard object cloud; exactly [`CLOUD_SIZE`] finite points.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() != CLOUD_SIZE {
            return Err(Error::InvalidInput(format!(
                "point cloud must have {CLOUD_SIZE} points, got {}",
                points.len()
            )));
        }
        Self::new_any_size(points)
    }

    /// Builds a cloud of arbitrary (non-zero) size. Used for small fixtures.
    pub fn new_any_size(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidInput("empty point cloud".into()));
        }
        if points.iter().any(|p| !is_finite(p)) {
            return Err(Error::InvalidInput("non-finite point in cloud".into()));
        }
        Ok(Self {
            points,
            normals: None,
        })
    }

    /// Attaches per-point normals. Each is normalized unless already unit
    /// within 1e-6 (kept as given); zero vectors are rejected.
    pub fn with_normals(mut self, normals: Vec<Vec3>) -> Result<Self> {
        if normals.len() != self.points.len() {
            return Err(Error::InvalidInput(format!(
                "{} normals for {} points",
                normals.len(),
                self.points.len()
            )));
        }
        let mut unit = Vec::with_capacity(normals.len());
        for n in normals {
            let norm = n.norm();
            if !norm.is_finite() || norm == 0.0 {
                return Err(Error::InvalidInput("normal must be finite and non-zero".into()));
            }
            unit.push(if (norm - 1.0).abs() <= 1e-6 { n } else { n / norm });
        }
        self.normals = Some(unit);
        Ok(self)
    }

    /// Replaces the normals with PCA estimates over `k` neighbors.
    pub fn with_estimated_normals(self, k: usize) -> Result<Self> {
        let normals = estimate_normals(&self, k)?;
        self.with_normals(normals)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Vec3]> {
        self.normals.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn centroid(&self) -> Vec3 {
        centroid(&self.points)
    }
}

/// Rigid pose: axis-angle rotation (radians) followed by a translation (meters).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose6DoF {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl Pose6DoF {
    pub const IDENTITY: Pose6DoF = Pose6DoF {
        rotation: Vec3::new(0.0, 0.0, 0.0),
        translation: Vec3::new(0.0, 0.0, 0.0),
    };

    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Reads `[rx, ry, rz, tx, ty, tz]`.
    pub fn from_slice(v: &[f64]) -> Self {
        Self {
            rotation: Vec3::new(v[0], v[1], v[2]),
            translation: Vec3::new(v[3], v[4], v[5]),
        }
    }

    pub fn to_array(&self) -> [f64; 6] {
        [
            self.rotation.x,
            self.rotation.y,
            self.rotation.z,
            self.translation.x,
            self.translation.y,
            self.translation.z,
        ]
    }

    /// Same rotation with magnitude folded into `[0, π]`.
    pub fn canonicalized(&self) -> Self {
        Self {
            rotation: canonical_axis_angle(&self.rotation),
            translation: self.translation,
        }
    }

    pub fn is_finite(&self) -> bool {
        is_finite(&self.rotation) && is_finite(&self.translation)
    }

    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        rotate(&self.rotation, p) + self.translation
    }

    /// Maps a world point back into the rest frame.
    pub fn inverse_transform_point(&self, p: &Vec3) -> Vec3 {
        rotate(&(-self.rotation), &(p - self.translation))
    }
}

pub(crate) fn is_finite(v: &Vec3) -> bool {
    v.iter().all(|c| c.is_finite())
}

pub(crate) fn centroid(points: &[Vec3]) -> Vec3 {
    let sum = points.iter().fold(Vec3::zeros(), |acc, p| acc + p);
    sum / points.len() as f64
}

pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

// Coefficients of R(a) = I + A·[a]x + B·[a]x², plus (dA/dθ)/θ and (dB/dθ)/θ.
// Series below the threshold keep everything smooth through θ = 0.
fn rodrigues_coefficients(theta_sq: f64) -> (f64, f64, f64, f64) {
    if theta_sq < 1e-6 {
        let t2 = theta_sq;
        let a = 1.0 - t2 / 6.0 + t2 * t2 / 120.0;
        let b = 0.5 - t2 / 24.0 + t2 * t2 / 720.0;
        let da = -1.0 / 3.0 + t2 / 30.0;
        let db = -1.0 / 12.0 + t2 / 180.0;
        (a, b, da, db)
    } else {
        let theta = theta_sq.sqrt();
        let (s, c) = theta.sin_cos();
        let a = s / theta;
        let b = (1.0 - c) / theta_sq;
        let da = (theta * c - s) / (theta_sq * theta);
        let db = (theta * s - 2.0 * (1.0 - c)) / (theta_sq * theta_sq);
        (a, b, da, db)
    }
}

/// Rotation matrix of an axis-angle vector (Rodrigues' formula).
pub fn rodrigues(a: &Vec3) -> Mat3 {
    let (ca, cb, _, _) = rodrigues_coefficients(a.norm_squared());
    let k = skew(a);
    Mat3::identity() + k * ca + k * k * cb
}

/// `R(a)·q` without forming the matrix.
pub fn rotate(a: &Vec3, q: &Vec3) -> Vec3 {
    let (ca, cb, _, _) = rodrigues_coefficients(a.norm_squared());
    let axq = a.cross(q);
    q + axq * ca + a.cross(&axq) * cb
}

/// Jacobian `∂(R(a)·q)/∂a`, smooth at `a = 0`.
pub fn rotate_jacobian(a: &Vec3, q: &Vec3) -> Mat3 {
    let (ca, cb, da, db) = rodrigues_coefficients(a.norm_squared());
    let axq = a.cross(q);
    let aaxq = a.cross(&axq);
    // a × (a × q) = a (a·q) − q |a|²
    let d_aaxq = a * q.transpose() + Mat3::identity() * a.dot(q) - q * a.transpose() * 2.0;
    -skew(q) * ca + d_aaxq * cb + axq * a.transpose() * da + aaxq * a.transpose() * db
}

fn wrap_angle(theta: f64) -> f64 {
    let mut w = theta.rem_euclid(2.0 * PI);
    if w > PI {
        w -= 2.0 * PI;
    }
    w
}

/// Folds the rotation magnitude into `[0, π]` while keeping the same rotation.
pub fn canonical_axis_angle(a: &Vec3) -> Vec3 {
    let theta = a.norm();
    if theta <= PI {
        return *a;
    }
    a * (wrap_angle(theta) / theta)
}

/// Jacobian of [`canonical_axis_angle`]; identity inside the principal ball.
pub fn canonical_axis_angle_jacobian(a: &Vec3) -> Mat3 {
    let theta = a.norm();
    if theta <= PI {
        return Mat3::identity();
    }
    let wrapped = wrap_angle(theta);
    let s = wrapped / theta;
    let ds = (theta - wrapped) / (theta * theta);
    Mat3::identity() * s + a * a.transpose() * (ds / theta)
}

/// Applies `pose` to every point.
pub fn apply_pose(pose: &Pose6DoF, pts: &[Vec3]) -> Result<Vec<Vec3>> {
    if !pose.is_finite() {
        return Err(Error::InvalidInput("non-finite pose".into()));
    }
    if pts.iter().any(|p| !is_finite(p)) {
        return Err(Error::InvalidInput("non-finite point".into()));
    }
    Ok(pts.iter().map(|p| pose.transform_point(p)).collect())
}

fn mean_nearest(from: &[Vec3], to: &[Vec3]) -> f64 {
    let total: f64 = from
        .iter()
        .map(|a| {
            to.iter()
                .map(|b| (a - b).norm())
                .fold(f64::INFINITY, f64::min)
        })
        .sum();
    total / from.len() as f64
}

/// Symmetric chamfer distance: the average of both directed mean-of-mins.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidInput("chamfer distance of an empty set".into()));
    }
    Ok(0.5 * (mean_nearest(a, b) + mean_nearest(b, a)))
}

/// Nearest point of the cloud to `q`; ties go to the lowest index.
pub fn snap_to_cloud(q: &Vec3, cloud: &PointCloud) -> (usize, Vec3) {
    let mut best = (0, f64::INFINITY);
    for (i, p) in cloud.points().iter().enumerate() {
        let d = (p - q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    (best.0, cloud.points()[best.0])
}

/// Surface point `index` pushed `distance` meters along its outward normal.
pub fn offset_outward(cloud: &PointCloud, index: usize, distance: f64) -> Result<Vec3> {
    let normals = cloud
        .normals()
        .ok_or_else(|| Error::Precondition("offset_outward needs cloud normals".into()))?;
    if !(distance >= 0.0) {
        return Err(Error::InvalidInput(format!("offset distance {distance} < 0")));
    }
    let p = cloud
        .points()
        .get(index)
        .ok_or_else(|| Error::InvalidInput(format!("point index {index} out of range")))?;
    let n = orient_outward(normals[index], &(p - cloud.centroid()));
    Ok(p + n * distance)
}

// Flip `n` to point along `radial`; when they are orthogonal (planar clouds),
// make the dominant component positive so the choice is consistent.
fn orient_outward(n: Vec3, radial: &Vec3) -> Vec3 {
    let d = n.dot(radial);
    if d.abs() > 1e-12 * radial.norm().max(1e-300) {
        return if d < 0.0 { -n } else { n };
    }
    let dominant = n.iter().copied().fold(0.0_f64, |best, c| {
        if c.abs() > best.abs() {
            c
        } else {
            best
        }
    });
    if dominant < 0.0 {
        -n
    } else {
        n
    }
}

/// Per-point unit normals from the smallest-eigenvalue direction of the
/// k-nearest-neighbor covariance, oriented away from the centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<Vec<Vec3>> {
    if k < 3 {
        return Err(Error::InvalidInput(format!("normal estimation needs k >= 3, got {k}")));
    }
    let pts = cloud.points();
    let c = cloud.centroid();
    let k = k.min(pts.len());
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(pts.len());
    let mut normals = Vec::with_capacity(pts.len());
    for p in pts {
        order.clear();
        order.extend(pts.iter().enumerate().map(|(j, q)| ((q - p).norm_squared(), j)));
        order.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap_or(Ordering::Equal).then(x.1.cmp(&y.1)));
        let nbrs = &order[..k];
        let mean = nbrs.iter().fold(Vec3::zeros(), |acc, &(_, j)| acc + pts[j]) / k as f64;
        let cov = nbrs.iter().fold(Mat3::zeros(), |acc, &(_, j)| {
            let d = pts[j] - mean;
            acc + d * d.transpose()
        }) / k as f64;
        let eig = SymmetricEigen::new(cov);
        let mut idx = [0usize, 1, 2];
        idx.sort_by(|&a, &b| {
            eig.eigenvalues[a]
                .partial_cmp(&eig.eigenvalues[b])
                .unwrap_or(Ordering::Equal)
        });
        let (l1, l2) = (eig.eigenvalues[idx[1]], eig.eigenvalues[idx[2]]);
        let radial = p - c;
        let n = if l2 <= 1e-24 || l1 <= 1e-12 * l2 {
            // Rank < 2: no plane to fit.
            let r = radial.norm();
            if r > 1e-12 {
                radial / r
            } else {
                Vec3::y()
            }
        } else {
            let v: Vec3 = eig.eigenvectors.column(idx[0]).into_owned();
            orient_outward(v.normalize(), &radial)
        };
        normals.push(n);
    }
    Ok(normals)
}
