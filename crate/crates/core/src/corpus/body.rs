//! Kinematic pose construction: rigid torso, two-bone limbs and a simple gait.

use crate::geometry::Vec3;
use crate::motion::{yaw_rotate, Frame};
use crate::skeleton::*;

/// Pelvis height while walking or standing with a slight knee bend.
pub const STAND_HEIGHT: f64 = 0.88;
/// Lowest pelvis reached when bending to grasp.
pub const CROUCH_HEIGHT: f64 = 0.48;
/// Largest forward torso lean in radians.
pub const MAX_LEAN: f64 = 1.2;
/// Fraction of the arm length a hand target may sit from the shoulder.
pub const REACH: f64 = 0.96;
pub const ANKLE_HEIGHT: f64 = PELVIS_HEIGHT - 0.07 - THIGH - SHIN;
pub const HIP_HALF_WIDTH: f64 = 0.09;

/// Torso rotation: yaw about +y, then forward lean about the local x axis.
fn torso(yaw: f64, lean: f64, v: &Vec3) -> Vec3 {
    let (s, c) = lean.sin_cos();
    let leaned = Vec3::new(v.x, c * v.y - s * v.z, s * v.y + c * v.z);
    yaw_rotate(yaw, &leaned)
}

/// Places the middle joint of a two-bone chain from `root` toward `target`,
/// bending toward `pole`. Returns (middle, end); the end lands on the target
/// whenever it is reachable.
pub fn two_bone_ik(root: Vec3, target: Vec3, a: f64, b: f64, pole: Vec3) -> (Vec3, Vec3) {
    let mut dir = target - root;
    let mut d = dir.norm();
    if d < 1e-9 {
        dir = pole;
        d = 1e-9;
    }
    let dir = dir.normalize();
    let d = d.clamp((a - b).abs() + 1e-6, (a + b) * 0.9999);
    let cos_a = ((a * a + d * d - b * b) / (2.0 * a * d)).clamp(-1.0, 1.0);
    let sin_a = (1.0 - cos_a * cos_a).sqrt();
    let mut perp = pole - dir * pole.dot(&dir);
    if perp.norm() < 1e-9 {
        perp = dir.cross(&Vec3::x()).cross(&dir);
        if perp.norm() < 1e-9 {
            perp = dir.cross(&Vec3::z()).cross(&dir);
        }
    }
    let perp = perp.normalize();
    let mid = root + dir * (a * cos_a) + perp * (a * sin_a);
    let end = root + dir * d;
    (mid, end)
}

/// Whole-body pose parameters for one frame.
#[derive(Clone, Copy, Debug)]
pub struct Posture {
    pub root_xz: (f64, f64),
    pub pelvis_height: f64,
    pub yaw: f64,
    pub lean: f64,
}

impl Posture {
    pub fn standing(x: f64, z: f64, yaw: f64) -> Self {
        Self {
            root_xz: (x, z),
            pelvis_height: STAND_HEIGHT,
            yaw,
            lean: 0.0,
        }
    }

    /// Blend between upright (`s = 0`) and fully bent (`s = 1`).
    pub fn bent(x: f64, z: f64, yaw: f64, s: f64) -> Self {
        Self {
            root_xz: (x, z),
            pelvis_height: STAND_HEIGHT - (STAND_HEIGHT - CROUCH_HEIGHT) * s,
            yaw,
            lean: MAX_LEAN * s,
        }
    }

    fn pelvis(&self) -> Vec3 {
        Vec3::new(self.root_xz.0, self.pelvis_height, self.root_xz.1)
    }

    /// Spine, neck, head, collars and shoulders.
    pub fn upper_body(&self) -> [Vec3; NUM_JOINTS] {
        let off = rest_offsets();
        let mut j = [Vec3::zeros(); NUM_JOINTS];
        j[PELVIS] = self.pelvis();
        for (child, parent) in [
            (SPINE1, PELVIS),
            (SPINE2, SPINE1),
            (SPINE3, SPINE2),
            (NECK, SPINE3),
            (L_COLLAR, SPINE3),
            (R_COLLAR, SPINE3),
            (HEAD, NECK),
            (L_SHOULDER, L_COLLAR),
            (R_SHOULDER, R_COLLAR),
        ] {
            j[child] = j[parent] + torso(self.yaw, self.lean, &off[child]);
        }
        for hip in [L_HIP, R_HIP] {
            j[hip] = j[PELVIS] + yaw_rotate(self.yaw, &off[hip]);
        }
        j
    }

    pub fn shoulders(&self) -> [Vec3; 2] {
        let j = self.upper_body();
        [j[L_SHOULDER], j[R_SHOULDER]]
    }

    /// Where a relaxed hand rests, beside the hip (index 0 left, 1 right).
    pub fn rest_hand(&self, side: usize) -> Vec3 {
        let sign = if side == 0 { 1.0 } else { -1.0 };
        self.pelvis() + yaw_rotate(self.yaw, &Vec3::new(0.2 * sign, -0.1, 0.06))
    }

    /// Whether both targets are within reach of their shoulders.
    pub fn reaches(&self, hands: &[Option<Vec3>; 2]) -> bool {
        let sh = self.shoulders();
        hands
            .iter()
            .zip(sh)
            .all(|(h, s)| h.is_none_or(|h| (h - s).norm() <= REACH * (UPPER_ARM + FOREARM)))
    }

    /// Full skeleton with ankles at `feet` and wrists at `hands`
    /// (resting beside the hips when `None`).
    pub fn build(&self, feet: [Vec3; 2], hands: [Option<Vec3>; 2]) -> Frame {
        let mut j = self.upper_body();
        let forward = yaw_rotate(self.yaw, &Vec3::z());
        let yaw = self.yaw;
        for (side, (hip, knee, ankle, foot)) in [(L_HIP, L_KNEE, L_ANKLE, L_FOOT), (R_HIP, R_KNEE, R_ANKLE, R_FOOT)]
            .into_iter()
            .enumerate()
        {
            let (k, a) = two_bone_ik(j[hip], feet[side], THIGH, SHIN, forward);
            j[knee] = k;
            j[ankle] = a;
            j[foot] = a + yaw_rotate(yaw, &rest_offsets()[foot]);
        }
        for (side, (shoulder, elbow, wrist)) in [(L_SHOULDER, L_ELBOW, L_WRIST), (R_SHOULDER, R_ELBOW, R_WRIST)]
            .into_iter()
            .enumerate()
        {
            let sign = if side == 0 { 1.0 } else { -1.0 };
            let target = hands[side].unwrap_or_else(|| self.rest_hand(side));
            let pole = yaw_rotate(yaw, &Vec3::new(0.5 * sign, -1.0, -0.6));
            let (e, w) = two_bone_ik(j[shoulder], target, UPPER_ARM, FOREARM, pole);
            j[elbow] = e;
            j[wrist] = w;
        }
        j
    }
}

/// Smallest bend (in `[0, 1]`) at which the hands are reachable from
/// `(x, z)` facing `yaw`, or `None` if even a full bend is not enough.
pub fn solve_bend(x: f64, z: f64, yaw: f64, hands: &[Option<Vec3>; 2]) -> Option<f64> {
    let at = |s: f64| Posture::bent(x, z, yaw, s).reaches(hands);
    if at(0.0) {
        return Some(0.0);
    }
    if !at(1.0) {
        return None;
    }
    let (mut lo, mut hi) = (0.0, 1.0);
    for _ in 0..40 {
        let mid = 0.5 * (lo + hi);
        if at(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Planted ankle position beside a root location.
pub fn plant(x: f64, z: f64, yaw: f64, side: usize, ahead: f64) -> Vec3 {
    let sign = if side == 0 { 1.0 } else { -1.0 };
    let p = Vec3::new(x, 0.0, z) + yaw_rotate(yaw, &Vec3::new(HIP_HALF_WIDTH * sign, 0.0, ahead));
    Vec3::new(p.x, ANKLE_HEIGHT, p.z)
}

/// Ankle targets for a root trajectory. A foot stays planted while the
/// other swings to a point a quarter step ahead of where the root will be
/// at the end of the half cycle. The swing foot clears the ground before
/// it moves forward and stops before it lands.
pub fn gait(root: &[(f64, f64)], yaw: &[f64], step: f64, lift: f64) -> Vec<[Vec3; 2]> {
    let n = root.len();
    let mut dist = vec![0.0; n];
    for l in 1..n {
        let (dx, dz) = (root[l].0 - root[l - 1].0, root[l].1 - root[l - 1].1);
        dist[l] = dist[l - 1] + (dx * dx + dz * dz).sqrt();
    }
    let half = step / 2.0;
    let mut feet = vec![[Vec3::zeros(); 2]; n];
    let mut planted = [plant(root[0].0, root[0].1, yaw[0], 0, 0.0), plant(root[0].0, root[0].1, yaw[0], 1, 0.0)];
    let total = dist[n - 1];
    let cycles = (total / half).ceil() as usize;
    if cycles == 0 {
        for f in feet.iter_mut() {
            *f = planted;
        }
        return feet;
    }
    let half = total / cycles as f64;
    let cycle: Vec<usize> = dist
        .iter()
        .map(|&d| (((d - 1e-9) / half).floor().max(0.0) as usize).min(cycles - 1))
        .collect();
    let mut l = 0;
    let mut start = 0;
    for k in 0..cycles {
        let swing = k % 2;
        let first = l;
        while l < n && cycle[l] == k {
            l += 1;
        }
        if l == first {
            continue;
        }
        let end = l - 1;
        let (d0, d1) = (dist[start], dist[end]);
        let (a, b) = (root[start], root[end]);
        let ahead = ((b.1 - a.1) * yaw[end].cos() + (b.0 - a.0) * yaw[end].sin()).signum();
        let reach = if k + 1 == cycles { 0.0 } else { ahead * half / 2.0 };
        let from = planted[swing];
        let to = plant(root[end].0, root[end].1, yaw[end], swing, reach);
        for f in first..=end {
            let phase = if d1 > d0 { ((dist[f] - d0) / (d1 - d0)).clamp(0.0, 1.0) } else { 1.0 };
            let mut p = from + (to - from) * smoothstep((phase - 0.15) / 0.7);
            p.y = if phase < 1.0 {
                ANKLE_HEIGHT + lift * (std::f64::consts::PI * phase).sin()
            } else {
                ANKLE_HEIGHT
            };
            feet[f][swing] = p;
            feet[f][1 - swing] = planted[1 - swing];
        }
        planted[swing] = to;
        start = end;
    }
    feet
}

pub fn smoothstep(u: f64) -> f64 {
    let u = u.clamp(0.0, 1.0);
    u * u * (3.0 - 2.0 * u)
}

pub fn lerp(a: f64, b: f64, w: f64) -> f64 {
    a + (b - a) * w
}
