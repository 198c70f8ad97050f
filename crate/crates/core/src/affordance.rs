//! Contact affordances: which joints touch the object, where on its surface,
//! and whether the object moves.

use ndarray::Array1;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{offset_outward, snap_to_cloud, PointCloud, Vec3};
use crate::models::pointset::cloud_matrix;
use crate::models::{text_embed, ApdmModel};
use crate::motion::{recover_global_joints, HumanMotionSeq, ObjectMotionSeq};
use crate::skeleton::CONTACT_JOINTS;

pub const LABEL_DIM: usize = 8;
pub const POINTS_DIM: usize = 6;
pub const AFFORDANCE_DIM: usize = LABEL_DIM + POINTS_DIM + 1;

/// Joint-to-surface distance below which a joint counts as in contact.
pub const CONTACT_THRESHOLD: f64 = 0.1;

/// Translation spread above which an object counts as moving.
pub const MOVING_THRESHOLD: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectState {
    Static,
    Moving,
}

impl ObjectState {
    pub fn as_f64(self) -> f64 {
        match self {
            ObjectState::Static => 0.0,
            ObjectState::Moving => 1.0,
        }
    }
}

/// Per-sequence contact description. Points live in the object rest frame
/// and are paired with the set labels in ascending label order; a record
/// with one label repeats its point.
#[derive(Clone, Debug, PartialEq)]
pub struct AffordanceRecord {
    labels: [bool; LABEL_DIM],
    points: [Vec3; 2],
    pub state: ObjectState,
}

impl AffordanceRecord {
    pub fn new(labels: [bool; LABEL_DIM], points: [Vec3; 2], state: ObjectState) -> Result<Self> {
        let count = labels.iter().filter(|l| **l).count();
        if count > 2 {
            return Err(Error::InvalidInput(format!("{count} contact labels set, at most 2 allowed")));
        }
        if points.iter().any(|p| !crate::geometry::is_finite(p)) {
            return Err(Error::InvalidInput("non-finite contact point".into()));
        }
        let points = if count == 1 { [points[0], points[0]] } else { points };
        Ok(Self { labels, points, state })
    }

    /// A record without contacts.
    pub fn empty(state: ObjectState) -> Self {
        Self {
            labels: [false; LABEL_DIM],
            points: [Vec3::zeros(); 2],
            state,
        }
    }

    pub fn labels(&self) -> &[bool; LABEL_DIM] {
        &self.labels
    }

    pub fn points(&self) -> &[Vec3; 2] {
        &self.points
    }

    pub fn is_empty(&self) -> bool {
        !self.labels.iter().any(|l| *l)
    }

    /// Label slots that are set, ascending.
    pub fn active(&self) -> Vec<usize> {
        (0..LABEL_DIM).filter(|&i| self.labels[i]).collect()
    }

    /// `(skeleton joint, rest-frame point)` for every contact.
    pub fn contacts(&self) -> Vec<(usize, Vec3)> {
        self.active()
            .into_iter()
            .enumerate()
            .map(|(k, slot)| (CONTACT_JOINTS[slot], self.points[k]))
            .collect()
    }

    /// `[labels | p0 | p1 | state]`.
    pub fn to_vector(&self) -> Array1<f64> {
        let mut v = Array1::zeros(AFFORDANCE_DIM);
        for (i, &l) in self.labels.iter().enumerate() {
            v[i] = if l { 1.0 } else { 0.0 };
        }
        for k in 0..2 {
            for c in 0..3 {
                v[LABEL_DIM + 3 * k + c] = self.points[k][c];
            }
        }
        v[AFFORDANCE_DIM - 1] = self.state.as_f64();
        v
    }

    pub fn with_points(&self, points: [Vec3; 2]) -> Result<Self> {
        Self::new(self.labels, points, self.state)
    }
}

/// Decodes a raw 15-d vector: labels above 0.5, at most the two largest;
/// state above 0.5 means moving.
pub fn decode_affordance(v: &[f64]) -> Result<AffordanceRecord> {
    if v.len() != AFFORDANCE_DIM {
        return Err(Error::InvalidInput(format!("affordance vector must be {AFFORDANCE_DIM}-d")));
    }
    let mut order: Vec<usize> = (0..LABEL_DIM).filter(|&i| v[i] > 0.5).collect();
    order.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    order.truncate(2);
    let mut labels = [false; LABEL_DIM];
    for &i in &order {
        labels[i] = true;
    }
    let p = |k: usize| Vec3::new(v[LABEL_DIM + 3 * k], v[LABEL_DIM + 3 * k + 1], v[LABEL_DIM + 3 * k + 2]);
    let state = if v[AFFORDANCE_DIM - 1] > 0.5 {
        ObjectState::Moving
    } else {
        ObjectState::Static
    };
    AffordanceRecord::new(labels, [p(0), p(1)], state)
}

/// Static or moving from the spread of the object translation.
pub fn object_state_of(x_o: &ObjectMotionSeq) -> ObjectState {
    let poses = x_o.poses();
    let mean = poses.iter().map(|p| p.translation).sum::<Vec3>() / poses.len().max(1) as f64;
    let spread = poses
        .iter()
        .map(|p| (p.translation - mean).norm())
        .fold(0.0, f64::max);
    if spread > MOVING_THRESHOLD {
        ObjectState::Moving
    } else {
        ObjectState::Static
    }
}

/// Ground-truth annotation from a paired motion.
///
/// For each of the eight contact joints the closest approach to the posed
/// cloud over all frames is found (earliest frame, then lowest point index
/// on ties). Joints closer than [`CONTACT_THRESHOLD`] are candidates; the
/// two closest are kept, and their nearest cloud points (rest frame) become
/// the contact points.
pub fn extract_gt_affordance(
    x_h: &HumanMotionSeq,
    x_o: &ObjectMotionSeq,
    cloud: &PointCloud,
) -> Result<AffordanceRecord> {
    if x_h.len() != x_o.len() {
        return Err(Error::InvalidInput(format!(
            "human has {} frames, object {}",
            x_h.len(),
            x_o.len()
        )));
    }
    let joints = recover_global_joints(x_h);
    let rest = cloud.points();
    let mut best = [(f64::INFINITY, 0usize); LABEL_DIM];
    for (l, pose) in x_o.poses().iter().enumerate() {
        let posed: Vec<Vec3> = rest.iter().map(|p| pose.transform_point(p)).collect();
        for (slot, &j) in CONTACT_JOINTS.iter().enumerate() {
            let q = joints.frames[l][j];
            for (pi, p) in posed.iter().enumerate() {
                let d = (p - q).norm_squared();
                if d < best[slot].0 {
                    best[slot] = (d, pi);
                }
            }
        }
    }
    let state = object_state_of(x_o);
    let mut candidates: Vec<usize> = (0..LABEL_DIM)
        .filter(|&s| best[s].0.sqrt() < CONTACT_THRESHOLD)
        .collect();
    if candidates.is_empty() {
        return Ok(AffordanceRecord::empty(state));
    }
    candidates.sort_by(|&a, &b| best[a].0.total_cmp(&best[b].0).then(a.cmp(&b)));
    candidates.truncate(2);
    candidates.sort_unstable();
    let mut labels = [false; LABEL_DIM];
    for &s in &candidates {
        labels[s] = true;
    }
    let first = rest[best[candidates[0]].1];
    let second = candidates.get(1).map_or(first, |&s| rest[best[s].1]);
    AffordanceRecord::new(labels, [first, second], state)
}

/// Snaps both contact points onto the cloud, then pushes them `offset`
/// meters outward along the surface normal.
pub fn postprocess_contacts(record: &AffordanceRecord, cloud: &PointCloud, offset: f64) -> Result<AffordanceRecord> {
    if cloud.normals().is_none() {
        return Err(Error::Precondition("contact post-processing needs cloud normals".into()));
    }
    if !(offset >= 0.0) {
        return Err(Error::InvalidInput(format!("offset must be non-negative, got {offset}")));
    }
    let mut out = [Vec3::zeros(); 2];
    for (o, p) in out.iter_mut().zip(record.points()) {
        let (idx, _) = snap_to_cloud(p, cloud);
        *o = offset_outward(cloud, idx, offset)?;
    }
    record.with_points(out)
}

/// Draws an affordance record from the trained model for a prompt and object.
pub fn sample_affordance(
    apdm: &ApdmModel,
    cloud: &PointCloud,
    prompt: &str,
    cfg_scale: f64,
    rng: &mut ChaCha8Rng,
) -> Result<AffordanceRecord> {
    let v = apdm.sample_vector(&cloud_matrix::<f64>(cloud), &text_embed(prompt), cfg_scale, rng)?;
    decode_affordance(v.as_slice().expect("contiguous"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Pose6DoF;
    use crate::motion::{encode_human, GlobalJoints, FEATURE_DIM, ROOT_HEIGHT};
    use ndarray::Array2;

    #[test]
    fn top_two_rule() {
        let mut v = vec![0.0; AFFORDANCE_DIM];
        v[..LABEL_DIM].copy_from_slice(&[0.9, 0.8, 0.7, 0.6, 0.1, 0.0, 0.2, 0.3]);
        let r = decode_affordance(&v).unwrap();
        assert_eq!(r.active(), vec![0, 1]);
        assert_eq!(r.state, ObjectState::Static);
        v[AFFORDANCE_DIM - 1] = 0.7;
        assert_eq!(decode_affordance(&v).unwrap().state, ObjectState::Moving);
    }

    #[test]
    fn too_many_labels_rejected() {
        let labels = [true, true, true, false, false, false, false, false];
        assert!(AffordanceRecord::new(labels, [Vec3::zeros(); 2], ObjectState::Static).is_err());
    }

    #[test]
    fn single_label_duplicates_point() {
        let mut labels = [false; LABEL_DIM];
        labels[6] = true;
        let r = AffordanceRecord::new(labels, [Vec3::new(1.0, 2.0, 3.0), Vec3::zeros()], ObjectState::Moving).unwrap();
        assert_eq!(r.points()[1], Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(r.to_vector()[LABEL_DIM + 3], 1.0);
    }

    #[test]
    fn far_human_gives_empty_record() {
        let mut x = Array2::zeros((4, FEATURE_DIM));
        x.column_mut(ROOT_HEIGHT).fill(0.9);
        let human = HumanMotionSeq::new(x).unwrap();
        let pose = Pose6DoF::new(Vec3::zeros(), Vec3::new(10.0, 0.0, 0.0));
        let object = ObjectMotionSeq::from_poses(&[pose; 4]).unwrap();
        let cloud = PointCloud::new_any_size(vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0)]).unwrap();
        let r = extract_gt_affordance(&human, &object, &cloud).unwrap();
        assert!(r.is_empty());
        assert_eq!(r.state, ObjectState::Static);
    }

    #[test]
    fn coincident_hand_is_labelled() {
        let rest = crate::skeleton::rest_positions();
        let clip = GlobalJoints::new(vec![rest; 3]);
        let human = encode_human(&clip).unwrap();
        let joints = recover_global_joints(&human);
        let hand = joints.frames[0][crate::skeleton::R_WRIST];
        let t = Vec3::new(0.0, 0.0, 0.5);
        let cloud = PointCloud::new_any_size(vec![hand - t, hand - t + Vec3::new(0.0, 0.0, 0.5)]).unwrap();
        let object = ObjectMotionSeq::from_poses(&[Pose6DoF::new(Vec3::zeros(), t); 3]).unwrap();
        let r = extract_gt_affordance(&human, &object, &cloud).unwrap();
        assert_eq!(r.active(), vec![7]);
        assert_eq!(r.points()[0], hand - t);
    }
}
