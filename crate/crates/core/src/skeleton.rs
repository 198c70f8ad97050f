//! The fixed 22-joint body skeleton (+y up, facing +z, left side at +x).

use crate::geometry::Vec3;

pub const NUM_JOINTS: usize = 22;

pub const PELVIS: usize = 0;
pub const L_HIP: usize = 1;
pub const R_HIP: usize = 2;
pub const SPINE1: usize = 3;
pub const L_KNEE: usize = 4;
pub const R_KNEE: usize = 5;
pub const SPINE2: usize = 6;
pub const L_ANKLE: usize = 7;
pub const R_ANKLE: usize = 8;
pub const SPINE3: usize = 9;
pub const L_FOOT: usize = 10;
pub const R_FOOT: usize = 11;
pub const NECK: usize = 12;
pub const L_COLLAR: usize = 13;
pub const R_COLLAR: usize = 14;
pub const HEAD: usize = 15;
pub const L_SHOULDER: usize = 16;
pub const R_SHOULDER: usize = 17;
pub const L_ELBOW: usize = 18;
pub const R_ELBOW: usize = 19;
pub const L_WRIST: usize = 20;
pub const R_WRIST: usize = 21;

pub const PARENTS: [Option<usize>; NUM_JOINTS] = [
    None,
    Some(PELVIS),
    Some(PELVIS),
    Some(PELVIS),
    Some(L_HIP),
    Some(R_HIP),
    Some(SPINE1),
    Some(L_KNEE),
    Some(R_KNEE),
    Some(SPINE2),
    Some(L_ANKLE),
    Some(R_ANKLE),
    Some(SPINE3),
    Some(SPINE3),
    Some(SPINE3),
    Some(NECK),
    Some(L_COLLAR),
    Some(R_COLLAR),
    Some(L_SHOULDER),
    Some(R_SHOULDER),
    Some(L_ELBOW),
    Some(R_ELBOW),
];

pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "pelvis",
    "left_hip",
    "right_hip",
    "spine1",
    "left_knee",
    "right_knee",
    "spine2",
    "left_ankle",
    "right_ankle",
    "spine3",
    "left_foot",
    "right_foot",
    "neck",
    "left_collar",
    "right_collar",
    "head",
    "left_shoulder",
    "right_shoulder",
    "left_elbow",
    "right_elbow",
    "left_wrist",
    "right_wrist",
];

/// Ankles and feet, in the order of the foot-contact feature channels.
pub const FOOT_JOINTS: [usize; 4] = [L_ANKLE, L_FOOT, R_ANKLE, R_FOOT];

/// The eight joints that may carry a contact label, in label order:
/// pelvis, neck, left/right foot, left/right shoulder, left/right hand.
pub const CONTACT_JOINTS: [usize; 8] = [
    PELVIS, NECK, L_FOOT, R_FOOT, L_SHOULDER, R_SHOULDER, L_WRIST, R_WRIST,
];

pub const CONTACT_JOINT_NAMES: [&str; 8] = [
    "pelvis",
    "neck",
    "left foot",
    "right foot",
    "left shoulder",
    "right shoulder",
    "left hand",
    "right hand",
];

/// Standing pelvis height of the default skeleton in meters.
pub const PELVIS_HEIGHT: f64 = 0.915;

pub const THIGH: f64 = 0.40;
pub const SHIN: f64 = 0.40;
pub const UPPER_ARM: f64 = 0.27;
pub const FOREARM: f64 = 0.25;

/// Rest offsets of each joint from its parent.
pub fn rest_offsets() -> [Vec3; NUM_JOINTS] {
    [
        Vec3::new(0.0, PELVIS_HEIGHT, 0.0),
        Vec3::new(0.09, -0.07, 0.0),
        Vec3::new(-0.09, -0.07, 0.0),
        Vec3::new(0.0, 0.10, -0.01),
        Vec3::new(0.0, -THIGH, 0.0),
        Vec3::new(0.0, -THIGH, 0.0),
        Vec3::new(0.0, 0.13, 0.0),
        Vec3::new(0.0, -SHIN, 0.0),
        Vec3::new(0.0, -SHIN, 0.0),
        Vec3::new(0.0, 0.05, 0.01),
        Vec3::new(0.0, -0.025, 0.12),
        Vec3::new(0.0, -0.025, 0.12),
        Vec3::new(0.0, 0.22, 0.0),
        Vec3::new(0.07, 0.12, 0.0),
        Vec3::new(-0.07, 0.12, 0.0),
        Vec3::new(0.0, 0.10, 0.03),
        Vec3::new(0.10, 0.03, 0.0),
        Vec3::new(-0.10, 0.03, 0.0),
        Vec3::new(0.0, -UPPER_ARM, 0.0),
        Vec3::new(0.0, -UPPER_ARM, 0.0),
        Vec3::new(0.0, -FOREARM, 0.0),
        Vec3::new(0.0, -FOREARM, 0.0),
    ]
}

/// Rest-pose world positions (standing, arms hanging).
pub fn rest_positions() -> [Vec3; NUM_JOINTS] {
    let offsets = rest_offsets();
    let mut out = [Vec3::zeros(); NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        out[j] = match PARENTS[j] {
            Some(p) => out[p] + offsets[j],
            None => offsets[j],
        };
    }
    out
}

/// Bone lengths of a posed skeleton, indexed by child joint (0 for the root).
pub fn bone_lengths(joints: &[Vec3; NUM_JOINTS]) -> [f64; NUM_JOINTS] {
    let mut out = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        if let Some(p) = PARENTS[j] {
            out[j] = (joints[j] - joints[p]).norm();
        }
    }
    out
}
