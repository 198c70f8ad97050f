//! The 263-dimensional human motion features, their conversion to and from
//! global joint positions, and object contact-point trajectories.
//!
//! Channel map per frame (22 joints, joint 0 is the pelvis):
//!
//! | range       | content                                             |
//! |-------------|-----------------------------------------------------|
//! | `0`         | root yaw angular velocity (rad/frame)               |
//! | `1..3`      | root planar velocity (x, z) in the heading frame    |
//! | `3`         | root height                                         |
//! | `4..67`     | 21 root-relative joint positions, heading frame     |
//! | `67..193`   | 21 continuous 6D joint rotations                    |
//! | `193..259`  | 22 joint velocities, heading frame                  |
//! | `259..263`  | foot contacts (l ankle, l foot, r ankle, r foot)    |
//!
//! Heading `θ_l` is the cumulative sum of the yaw-rate channel over frames
//! `0..l`, so frame 0 always faces +z. World root xz at frame `l` is the sum
//! of the planar velocities of frames `0..l` rotated by their headings.

use std::f64::consts::PI;

use ndarray::{s, Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::geometry::{Pose6DoF, Vec3};
use crate::skeleton::{self, FOOT_JOINTS, L_HIP, L_SHOULDER, NUM_JOINTS, R_HIP, R_SHOULDER};

pub const FEATURE_DIM: usize = 263;
pub const OBJECT_DIM: usize = 6;

pub const ROOT_YAW_RATE: usize = 0;
pub const ROOT_VEL_X: usize = 1;
pub const ROOT_VEL_Z: usize = 2;
pub const ROOT_HEIGHT: usize = 3;
pub const LOCAL_POS: usize = 4;
pub const ROT6D: usize = 67;
pub const LOCAL_VEL: usize = 193;
pub const FOOT_CONTACT: usize = 259;

/// Frame rate of every sequence.
pub const FPS: f64 = 20.0;

/// Foot contact gates shared with the skate metric.
pub const CONTACT_SPEED: f64 = 0.025;
pub const CONTACT_HEIGHT: f64 = 0.05;

/// Per-frame global joint positions.
pub type Frame = [Vec3; NUM_JOINTS];

#[derive(Debug, Clone, PartialEq)]
pub struct HumanMotionSeq {
    frames: Array2<f64>,
    pub fps: f64,
}

impl HumanMotionSeq {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != FEATURE_DIM {
            return Err(Error::Layout(format!(
                "human features must be {FEATURE_DIM} wide, got {}",
                frames.ncols()
            )));
        }
        if frames.nrows() == 0 {
            return Err(Error::InvalidInput("empty human motion".into()));
        }
        if frames.column(ROOT_HEIGHT).iter().any(|h| !h.is_finite()) {
            return Err(Error::InvalidInput("non-finite root height".into()));
        }
        let contacts = frames.slice(s![.., FOOT_CONTACT..FEATURE_DIM]);
        if contacts.iter().any(|c| !(0.0..=1.0).contains(c)) {
            return Err(Error::InvalidInput("foot contacts outside [0, 1]".into()));
        }
        Ok(Self { frames, fps: FPS })
    }

    /// Accepts raw model output, clamping foot contacts into `[0, 1]`.
    pub fn from_prediction(mut frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() == FEATURE_DIM {
            frames
                .slice_mut(s![.., FOOT_CONTACT..FEATURE_DIM])
                .mapv_inplace(|c| if c.is_nan() { 0.0 } else { c.clamp(0.0, 1.0) });
        }
        Self::new(frames)
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn into_frames(self) -> Array2<f64> {
        self.frames
    }
}

/// Per-frame object pose, `[axis-angle | translation]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectMotionSeq {
    frames: Array2<f64>,
}

impl ObjectMotionSeq {
    pub fn new(frames: Array2<f64>) -> Result<Self> {
        if frames.ncols() != OBJECT_DIM {
            return Err(Error::Layout(format!(
                "object poses must be {OBJECT_DIM} wide, got {}",
                frames.ncols()
            )));
        }
        if frames.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite object pose".into()));
        }
        Ok(Self { frames })
    }

    pub fn from_poses(poses: &[Pose6DoF]) -> Result<Self> {
        let mut frames = Array2::zeros((poses.len(), OBJECT_DIM));
        for (l, p) in poses.iter().enumerate() {
            for (c, v) in p.to_array().into_iter().enumerate() {
                frames[[l, c]] = v;
            }
        }
        Self::new(frames)
    }

    pub fn frames(&self) -> &Array2<f64> {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.nrows() == 0
    }

    pub fn pose(&self, l: usize) -> Pose6DoF {
        Pose6DoF::from_slice(self.frames.row(l).as_slice().expect("standard layout"))
    }

    pub fn poses(&self) -> Vec<Pose6DoF> {
        (0..self.len()).map(|l| self.pose(l)).collect()
    }

    /// Rotations folded into `[0, π]`.
    pub fn canonicalized(&self) -> Self {
        Self::from_poses(&self.poses().iter().map(Pose6DoF::canonicalized).collect::<Vec<_>>())
            .expect("canonicalization keeps poses finite")
    }
}

/// `L×22` joint positions in the world frame.
#[derive(Debug, Clone, PartialEq)]
pub struct GlobalJoints {
    pub frames: Vec<Frame>,
}

impl GlobalJoints {
    pub fn new(frames: Vec<Frame>) -> Self {
        Self { frames }
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn max_abs_diff(&self, other: &GlobalJoints) -> f64 {
        self.frames
            .iter()
            .zip(&other.frames)
            .flat_map(|(a, b)| a.iter().zip(b.iter()).map(|(p, q)| (p - q).amax()))
            .fold(0.0, f64::max)
    }
}

/// Rotation about +y by `theta`.
pub fn yaw_rotate(theta: f64, v: &Vec3) -> Vec3 {
    let (s, c) = theta.sin_cos();
    Vec3::new(c * v.x + s * v.z, v.y, -s * v.x + c * v.z)
}

/// `d(yaw_rotate(θ, v))/dθ`.
pub fn yaw_rotate_derivative(theta: f64, v: &Vec3) -> Vec3 {
    let (s, c) = theta.sin_cos();
    Vec3::new(-s * v.x + c * v.z, 0.0, -c * v.x - s * v.z)
}

/// Per-frame heading: `θ_0 = 0`, `θ_l = Σ_{k<l} ω_k`.
pub fn headings(features: &ArrayView2<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(features.nrows());
    let mut theta = 0.0;
    for l in 0..features.nrows() {
        out.push(theta);
        theta += features[[l, ROOT_YAW_RATE]];
    }
    out
}

/// Recovers world joint positions from a raw feature matrix.
pub fn recover_joints(features: &ArrayView2<f64>) -> Result<GlobalJoints> {
    if features.ncols() != FEATURE_DIM {
        return Err(Error::Layout(format!(
            "human features must be {FEATURE_DIM} wide, got {}",
            features.ncols()
        )));
    }
    let theta = headings(features);
    let mut root_xz = (0.0, 0.0);
    let mut frames = Vec::with_capacity(features.nrows());
    for (l, row) in features.outer_iter().enumerate() {
        let root = Vec3::new(root_xz.0, row[ROOT_HEIGHT], root_xz.1);
        let mut frame = [root; NUM_JOINTS];
        for j in 1..NUM_JOINTS {
            let c = LOCAL_POS + 3 * (j - 1);
            let local = Vec3::new(row[c], row[c + 1], row[c + 2]);
            frame[j] = yaw_rotate(theta[l], &local) + root;
        }
        frames.push(frame);
        let v = yaw_rotate(theta[l], &Vec3::new(row[ROOT_VEL_X], 0.0, row[ROOT_VEL_Z]));
        root_xz.0 += v.x;
        root_xz.1 += v.z;
    }
    Ok(GlobalJoints::new(frames))
}

/// `R(·)`: features → global joints.
pub fn recover_global_joints(x: &HumanMotionSeq) -> GlobalJoints {
    recover_joints(&x.frames().view()).expect("validated width")
}

fn wrap(a: f64) -> f64 {
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}

/// Facing direction of a frame from hip and shoulder width vectors.
pub fn facing_angle(frame: &Frame) -> Option<f64> {
    let across = (frame[R_HIP] - frame[L_HIP]) + (frame[R_SHOULDER] - frame[L_SHOULDER]);
    // forward = up × across
    let fx = across.z;
    let fz = -across.x;
    if (fx * fx + fz * fz).sqrt() < 1e-9 {
        return None;
    }
    Some(fx.atan2(fz))
}

/// Moves a clip so frame 0 has its pelvis above the origin and faces +z.
/// Returns the canonical clip with the yaw and xz offset that were removed.
pub fn canonicalize_joints(joints: &GlobalJoints) -> (GlobalJoints, f64, Vec3) {
    let first = &joints.frames[0];
    let yaw = facing_angle(first).unwrap_or(0.0);
    let offset = Vec3::new(first[0].x, 0.0, first[0].z);
    let frames = joints
        .frames
        .iter()
        .map(|f| {
            let mut out = *f;
            for (o, p) in out.iter_mut().zip(f.iter()) {
                *o = yaw_rotate(-yaw, &(p - offset));
            }
            out
        })
        .collect();
    (GlobalJoints::new(frames), yaw, offset)
}

/// Encodes joints into features. The clip is canonicalized first, so
/// [`recover_global_joints`] returns [`canonicalize_joints`] of the input.
/// Rotation channels hold the identity since joint rotations are unknown.
pub fn encode_human(joints: &GlobalJoints) -> Result<HumanMotionSeq> {
    let n = joints.len();
    if n < 2 {
        return Err(Error::InvalidInput(format!("need at least 2 frames to encode, got {n}")));
    }
    let (canon, _, _) = canonicalize_joints(joints);
    let frames = &canon.frames;

    let mut facing = Vec::with_capacity(n);
    let mut last = 0.0;
    for f in frames {
        let phi = facing_angle(f).unwrap_or(last);
        facing.push(phi);
        last = phi;
    }
    let mut yaw_rate = vec![0.0; n];
    for l in 0..n - 1 {
        yaw_rate[l] = wrap(facing[l + 1] - facing[l]);
    }
    let mut theta = Vec::with_capacity(n);
    let mut acc = 0.0;
    for w in &yaw_rate {
        theta.push(acc);
        acc += w;
    }

    let mut out = Array2::zeros((n, FEATURE_DIM));
    for l in 0..n {
        let f = &frames[l];
        let root = f[0];
        let mut row = out.row_mut(l);
        row[ROOT_YAW_RATE] = yaw_rate[l];
        if l + 1 < n {
            let d = frames[l + 1][0] - root;
            let v = yaw_rotate(-theta[l], &Vec3::new(d.x, 0.0, d.z));
            row[ROOT_VEL_X] = v.x;
            row[ROOT_VEL_Z] = v.z;
        }
        row[ROOT_HEIGHT] = root.y;
        for j in 1..NUM_JOINTS {
            let local = yaw_rotate(-theta[l], &(f[j] - root));
            let c = LOCAL_POS + 3 * (j - 1);
            row[c] = local.x;
            row[c + 1] = local.y;
            row[c + 2] = local.z;
        }
        for j in 0..NUM_JOINTS - 1 {
            let c = ROT6D + 6 * j;
            row[c] = 1.0;
            row[c + 4] = 1.0;
        }
        let (a, b) = if l + 1 < n { (l, l + 1) } else { (l - 1, l) };
        for j in 0..NUM_JOINTS {
            let v = yaw_rotate(-theta[a], &(frames[b][j] - frames[a][j]));
            let c = LOCAL_VEL + 3 * j;
            row[c] = v.x;
            row[c + 1] = v.y;
            row[c + 2] = v.z;
        }
        for (k, &j) in FOOT_JOINTS.iter().enumerate() {
            let speed = (frames[b][j] - frames[a][j]).norm();
            let grounded = speed < CONTACT_SPEED && f[j].y < CONTACT_HEIGHT;
            row[FOOT_CONTACT + k] = if grounded { 1.0 } else { 0.0 };
        }
    }
    HumanMotionSeq::new(out)
}

/// `V(·)`: world trajectories of rest-frame contact points.
pub fn object_contact_trajectory(x_o: &ObjectMotionSeq, rest_points: &[Vec3; 2]) -> Vec<[Vec3; 2]> {
    x_o.poses()
        .iter()
        .map(|p| [p.transform_point(&rest_points[0]), p.transform_point(&rest_points[1])])
        .collect()
}

/// Maximum bone-length spread across frames.
pub fn bone_length_spread(joints: &GlobalJoints) -> f64 {
    let lengths: Vec<_> = joints.frames.iter().map(skeleton::bone_lengths).collect();
    (0..NUM_JOINTS)
        .map(|j| {
            let (lo, hi) = lengths
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b[j]), hi.max(b[j])));
            hi - lo
        })
        .fold(0.0, f64::max)
}
