//! Evaluation metrics for generated interactions.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affordance::AffordanceRecord;
use crate::error::{Error, Result};
use crate::geometry::{chamfer_distance, Vec3};
use crate::models::Normalizer;
use crate::motion::{
    object_contact_trajectory, recover_global_joints, HumanMotionSeq, ObjectMotionSeq, CONTACT_HEIGHT, CONTACT_SPEED,
};
use crate::skeleton::{FOOT_JOINTS, NUM_JOINTS};

pub const DEFAULT_DIVERSITY_PAIRS: usize = 32;

/// Diagonal added to covariances that are numerically singular.
pub const FID_RIDGE: f64 = 1e-6;

/// Mean per-frame chamfer distance between the ground-truth contact joints
/// and the object's contact points. `None` when the record has no contacts.
pub fn contact_distance(
    x_h: &HumanMotionSeq,
    x_o: &ObjectMotionSeq,
    gt: &AffordanceRecord,
) -> Result<Option<f64>> {
    if x_h.len() != x_o.len() {
        return Err(Error::InvalidInput(format!(
            "human has {} frames, object {}",
            x_h.len(),
            x_o.len()
        )));
    }
    let contacts = gt.contacts();
    if contacts.is_empty() {
        return Ok(None);
    }
    let joints = recover_global_joints(x_h);
    let traj = object_contact_trajectory(x_o, gt.points());
    let mut total = 0.0;
    for (frame, points) in joints.frames.iter().zip(&traj) {
        let a: Vec<Vec3> = contacts.iter().map(|(j, _)| frame[*j]).collect();
        let b: Vec<Vec3> = points[..contacts.len()].to_vec();
        total += chamfer_distance(&a, &b)?;
    }
    Ok(Some(total / x_h.len() as f64))
}

/// Fraction of frame transitions in which some foot joint below `height`
/// slides more than `skid` on the ground plane before the next frame.
pub fn foot_skate_ratio_with(x_h: &HumanMotionSeq, height: f64, skid: f64) -> f64 {
    let joints = recover_global_joints(x_h);
    let n = joints.len();
    if n < 2 {
        return 0.0;
    }
    let skating = joints
        .frames
        .windows(2)
        .filter(|w| {
            FOOT_JOINTS.iter().any(|&j| {
                let (a, b) = (w[0][j], w[1][j]);
                let planar = ((b.x - a.x).powi(2) + (b.z - a.z).powi(2)).sqrt();
                a.y < height && planar > skid
            })
        })
        .count();
    skating as f64 / (n - 1) as f64
}

/// [`foot_skate_ratio_with`] at 5 cm height and 2.5 cm slip.
pub fn foot_skate_ratio(x_h: &HumanMotionSeq) -> f64 {
    foot_skate_ratio_with(x_h, CONTACT_HEIGHT, CONTACT_SPEED)
}

/// Maps a motion to a fixed-length feature vector.
pub trait MotionEncoder {
    fn dim(&self, len: usize) -> usize;
    fn encode(&self, x_h: &HumanMotionSeq) -> Vec<f64>;
}

/// Flattened (optionally normalized) features.
#[derive(Clone, Debug, Default)]
pub struct FlattenEncoder {
    pub normalizer: Option<Normalizer>,
}

impl MotionEncoder for FlattenEncoder {
    fn dim(&self, len: usize) -> usize {
        len * crate::motion::FEATURE_DIM
    }

    fn encode(&self, x_h: &HumanMotionSeq) -> Vec<f64> {
        match &self.normalizer {
            Some(n) => n.normalize(x_h.frames()).iter().copied().collect(),
            None => x_h.frames().iter().copied().collect(),
        }
    }
}

/// Per joint: mean height, height spread and mean planar speed (66 values).
#[derive(Clone, Copy, Debug, Default)]
pub struct JointStatsEncoder;

impl MotionEncoder for JointStatsEncoder {
    fn dim(&self, _len: usize) -> usize {
        3 * NUM_JOINTS
    }

    fn encode(&self, x_h: &HumanMotionSeq) -> Vec<f64> {
        let joints = recover_global_joints(x_h);
        let n = joints.len() as f64;
        let mut out = Vec::with_capacity(3 * NUM_JOINTS);
        for j in 0..NUM_JOINTS {
            let mean = joints.frames.iter().map(|f| f[j].y).sum::<f64>() / n;
            let var = joints.frames.iter().map(|f| (f[j].y - mean).powi(2)).sum::<f64>() / n;
            let speed = if joints.len() > 1 {
                joints
                    .frames
                    .windows(2)
                    .map(|w| ((w[1][j].x - w[0][j].x).powi(2) + (w[1][j].z - w[0][j].z).powi(2)).sqrt())
                    .sum::<f64>()
                    / (n - 1.0)
            } else {
                0.0
            };
            out.extend([mean, var.sqrt(), speed]);
        }
        out
    }
}

/// Mean distance between randomly paired feature vectors (distinct indices).
pub fn diversity(features: &[Vec<f64>], pairs: usize, rng: &mut impl Rng) -> Result<f64> {
    if features.len() < 2 {
        return Err(Error::InvalidInput("diversity needs at least 2 samples".into()));
    }
    if pairs == 0 {
        return Err(Error::InvalidInput("diversity needs at least one pair".into()));
    }
    let n = features.len();
    let mut total = 0.0;
    for _ in 0..pairs {
        let i = rng.random_range(0..n);
        let mut j = rng.random_range(0..n - 1);
        if j >= i {
            j += 1;
        }
        let d: f64 = features[i]
            .iter()
            .zip(&features[j])
            .map(|(a, b)| (a - b).powi(2))
            .sum();
        total += d.sqrt();
    }
    Ok(total / pairs as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidResult {
    pub value: f64,
    /// Whether the ridge was added to a singular covariance.
    pub regularized: bool,
}

fn mean_and_cov(x: &Array2<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let (n, d) = x.dim();
    let m = DMatrix::from_row_iterator(n, d, x.iter().copied());
    let mean = m.row_mean().transpose();
    let mut centered = m.clone();
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let denom = if n > 1 { (n - 1) as f64 } else { 1.0 };
    let cov = centered.transpose() * &centered / denom;
    (mean, cov)
}

fn sym_sqrt(m: &DMatrix<f64>) -> DMatrix<f64> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose()
}

fn is_singular(cov: &DMatrix<f64>) -> bool {
    let eig = SymmetricEigen::new(cov.clone());
    let max = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let min = eig.eigenvalues.iter().fold(f64::INFINITY, |m, v| m.min(*v));
    min <= 1e-12 * max.max(1e-300)
}

/// Fréchet distance between Gaussians fitted to two feature sets (rows are samples).
pub fn fid(real: &Array2<f64>, generated: &Array2<f64>) -> Result<FidResult> {
    if real.ncols() != generated.ncols() {
        return Err(Error::Shape(format!(
            "feature widths differ: {} vs {}",
            real.ncols(),
            generated.ncols()
        )));
    }
    if real.nrows() < 2 || generated.nrows() < 2 {
        return Err(Error::InvalidInput("fid needs at least 2 samples per side".into()));
    }
    if real.iter().chain(generated.iter()).any(|v| !v.is_finite()) {
        return Err(Error::InvalidInput("non-finite features".into()));
    }
    let (mr, mut sr) = mean_and_cov(real);
    let (mg, mut sg) = mean_and_cov(generated);
    let regularized = is_singular(&sr) || is_singular(&sg);
    if regularized {
        let ridge = DMatrix::identity(sr.nrows(), sr.ncols()) * FID_RIDGE;
        sr += &ridge;
        sg += &ridge;
    }
    let root_r = sym_sqrt(&sr);
    let cross = sym_sqrt(&(&root_r * &sg * &root_r));
    let diff = mr - mg;
    let value = diff.dot(&diff) + sr.trace() + sg.trace() - 2.0 * cross.trace();
    Ok(FidResult {
        value: value.max(0.0),
        regularized,
    })
}

/// One sequence to evaluate, with the ground-truth affordance of its source.
#[derive(Clone, Copy, Debug)]
pub struct EvalItem<'a> {
    pub human: &'a HumanMotionSeq,
    pub object: &'a ObjectMotionSeq,
    pub gt: &'a AffordanceRecord,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub contact_distance: Option<f64>,
    pub foot_skate_ratio: f64,
    pub diversity: Option<f64>,
    pub fid: Option<f64>,
    pub fid_regularized: bool,
    pub sample_count: usize,
}

impl EvalReport {
    pub fn csv_header() -> &'static str {
        "samples,fid,diversity,foot_skate_ratio,contact_distance"
    }

    pub fn csv_row(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| format!("{x}")).unwrap_or_default();
        format!(
            "{},{},{},{},{}",
            self.sample_count,
            opt(self.fid),
            opt(self.diversity),
            self.foot_skate_ratio,
            opt(self.contact_distance)
        )
    }
}

fn feature_matrix(items: &[EvalItem], encoder: &dyn MotionEncoder) -> Array2<f64> {
    let rows: Vec<Vec<f64>> = items.iter().map(|i| encoder.encode(i.human)).collect();
    let d = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), d), |(r, c)| rows[r][c])
}

/// Aggregate metrics of `generated` against `real`.
pub fn evaluate(
    real: &[EvalItem],
    generated: &[EvalItem],
    encoder: &dyn MotionEncoder,
    pairs: usize,
    seed: u64,
) -> Result<EvalReport> {
    if generated.is_empty() {
        return Err(Error::InvalidInput("nothing to evaluate".into()));
    }
    let mut cds = Vec::new();
    for item in generated {
        if let Some(cd) = contact_distance(item.human, item.object, item.gt)? {
            cds.push(cd);
        }
    }
    let skate = generated.iter().map(|i| foot_skate_ratio(i.human)).sum::<f64>() / generated.len() as f64;
    let gen_feats = feature_matrix(generated, encoder);
    let diversity = if generated.len() >= 2 {
        let rows: Vec<Vec<f64>> = gen_feats.outer_iter().map(|r| r.to_vec()).collect();
        Some(diversity(&rows, pairs, &mut ChaCha8Rng::seed_from_u64(seed))?)
    } else {
        None
    };
    let (fid_value, fid_regularized) = if real.len() >= 2 && generated.len() >= 2 {
        let r = fid(&feature_matrix(real, encoder), &gen_feats)?;
        (Some(r.value), r.regularized)
    } else {
        (None, false)
    };
    Ok(EvalReport {
        contact_distance: (!cds.is_empty()).then(|| cds.iter().sum::<f64>() / cds.len() as f64),
        foot_skate_ratio: skate,
        diversity,
        fid: fid_value,
        fid_regularized,
        sample_count: generated.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::{ObjectState, LABEL_DIM};
    use crate::geometry::Pose6DoF;
    use crate::motion::{encode_human, GlobalJoints};
    use crate::skeleton::{rest_positions, CONTACT_JOINTS};
    use approx::assert_relative_eq;

    /// Rest pose lowered so the lowest foot joint sits 1 cm above the floor.
    fn grounded_pose() -> [Vec3; NUM_JOINTS] {
        let mut pose = rest_positions();
        let floor = FOOT_JOINTS.iter().map(|&j| pose[j].y).fold(f64::INFINITY, f64::min);
        for p in pose.iter_mut() {
            p.y += 0.01 - floor;
        }
        pose
    }

    fn clip(offsets: &[f64]) -> HumanMotionSeq {
        let base = grounded_pose();
        let frames = offsets
            .iter()
            .map(|dx| {
                let mut f = base;
                for p in f.iter_mut() {
                    p.x += dx;
                }
                f
            })
            .collect();
        encode_human(&GlobalJoints::new(frames)).unwrap()
    }

    #[test]
    fn standing_still_never_skates() {
        assert_eq!(foot_skate_ratio(&clip(&[0.0; 12])), 0.0);
    }

    #[test]
    fn half_sliding_clip_skates_half_the_time() {
        // 10 transitions: 5 slides of 5 cm, then 5 still.
        let offsets: Vec<f64> = (0..11).map(|i| 0.05 * (i.min(5) as f64)).collect();
        assert_relative_eq!(foot_skate_ratio(&clip(&offsets)), 0.5, epsilon = 1e-12);
    }

    #[test]
    fn lifted_feet_do_not_count() {
        let offsets: Vec<f64> = (0..8).map(|i| 0.05 * i as f64).collect();
        let h = clip(&offsets);
        assert_eq!(foot_skate_ratio_with(&h, 0.0, CONTACT_SPEED), 0.0);
        assert_eq!(foot_skate_ratio_with(&h, 1.0, 0.1), 0.0);
        assert_eq!(foot_skate_ratio_with(&h, 1.0, 0.01), 1.0);
    }

    #[test]
    fn contact_distance_matches_offset() {
        let human = clip(&[0.0; 6]);
        let joints = recover_global_joints(&human);
        let pose = Pose6DoF::new(Vec3::new(0.3, -0.2, 0.4), Vec3::new(1.0, 0.5, 0.2));
        let d = Vec3::new(0.03, -0.04, 0.0);
        let mut labels = [false; LABEL_DIM];
        labels[7] = true;
        let p = pose.inverse_transform_point(&(joints.frames[0][CONTACT_JOINTS[7]] + d));
        let gt = AffordanceRecord::new(labels, [p, Vec3::zeros()], ObjectState::Static).unwrap();
        let object = ObjectMotionSeq::from_poses(&[pose; 6]).unwrap();
        let cd = contact_distance(&human, &object, &gt).unwrap().unwrap();
        assert_relative_eq!(cd, 0.05, epsilon = 1e-9);

        let none = AffordanceRecord::new([false; LABEL_DIM], [p, p], ObjectState::Static).unwrap();
        assert_eq!(contact_distance(&human, &object, &none).unwrap(), None);
    }

    #[test]
    fn fid_of_identical_sets_is_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let a = Array2::from_shape_fn((40, 5), |_| rng.random_range(-1.0..1.0));
        let r = fid(&a, &a).unwrap();
        assert!(r.value < 1e-8, "{}", r.value);
        assert!(!r.regularized);
    }

    #[test]
    fn fid_matches_diagonal_closed_form() {
        // Independent axes: FID = |mu1 - mu2|^2 + sum (s1 - s2)^2.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let base = Array2::from_shape_fn((200, 2), |_| rng.random_range(-1.0..1.0));
        let (m, _) = mean_and_cov(&base);
        let mut a = base.clone();
        for mut row in a.outer_iter_mut() {
            row[0] -= m[0];
            row[1] -= m[1];
        }
        // Remove the cross covariance so both sets are exactly diagonal.
        let (_, c) = mean_and_cov(&a);
        let k = c[(0, 1)] / c[(0, 0)];
        for mut row in a.outer_iter_mut() {
            row[1] -= k * row[0];
        }
        let (_, ca) = mean_and_cov(&a);
        let mut b = a.clone();
        for mut row in b.outer_iter_mut() {
            row[0] = 2.0 * row[0] + 1.0;
            row[1] = 0.5 * row[1] - 0.5;
        }
        let (s0, s1) = (ca[(0, 0)].sqrt(), ca[(1, 1)].sqrt());
        let expect = 1.0 + 0.25 + (s0 - 2.0 * s0).powi(2) + (s1 - 0.5 * s1).powi(2);
        assert_relative_eq!(fid(&a, &b).unwrap().value, expect, max_relative = 1e-9);
    }

    #[test]
    fn fid_regularizes_degenerate_features() {
        let a = Array2::from_shape_fn((3, 6), |(r, c)| (r * c) as f64);
        let r = fid(&a, &a).unwrap();
        assert!(r.regularized);
        assert!(r.value.is_finite());
    }

    #[test]
    fn diversity_of_two_points_is_their_distance() {
        let f = vec![vec![0.0, 0.0], vec![3.0, 4.0]];
        let d = diversity(&f, 10, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_relative_eq!(d, 5.0);
        assert!(diversity(&f[..1], 10, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn joint_stats_encoder_has_fixed_width() {
        let e = JointStatsEncoder;
        assert_eq!(e.encode(&clip(&[0.0; 5])).len(), e.dim(5));
        assert_eq!(e.encode(&clip(&[0.0; 9])).len(), 66);
    }

    #[test]
    fn csv_row_has_header_columns() {
        let r = EvalReport {
            contact_distance: None,
            foot_skate_ratio: 0.25,
            diversity: Some(1.5),
            fid: Some(2.0),
            fid_regularized: false,
            sample_count: 4,
        };
        assert_eq!(r.csv_row().split(',').count(), EvalReport::csv_header().split(',').count());
        assert_eq!(r.csv_row(), "4,2,1.5,0.25,");
    }
}
