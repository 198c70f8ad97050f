//! Procedural human-object interaction corpus.
//!
//! Every sample starts with the person at the origin facing +z. Objects are
//! placed relative to that frame, a kinematic template moves body and object
//! together, and the constructed contacts become the ground-truth affordance.

pub mod body;
pub mod shapes;

use std::f64::consts::{PI, TAU};

use nalgebra::Rotation3;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affordance::{extract_gt_affordance, AffordanceRecord, ObjectState, LABEL_DIM};
use crate::error::{Error, Result};
use crate::models::pointset::cloud_matrix;
use crate::models::{text_embed, AffordanceExample, HoiExample};
use crate::geometry::{snap_to_cloud, PointCloud, Pose6DoF, Vec3};
use crate::motion::{canonicalize_joints, encode_human, yaw_rotate, Frame, GlobalJoints, HumanMotionSeq, ObjectMotionSeq};
use body::{gait, smoothstep, solve_bend, Posture, ANKLE_HEIGHT, HIP_HALF_WIDTH};
pub use shapes::{ObjectKind, Shape};

/// Gap between a wrist joint and the surface it holds.
const HAND_GAP: f64 = 0.03;
/// Height of the pelvis joint above a seat.
const SEAT_GAP: f64 = 0.06;
/// Held objects sit at this point of the body frame.
const HOLD: Vec3 = Vec3::new(0.0, 1.0, 0.34);

const SLOT_PELVIS: usize = 0;
const SLOT_L_WRIST: usize = 6;
const SLOT_R_WRIST: usize = 7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Action {
    Carry,
    LiftLeft,
    LiftRight,
    Sit,
    Push,
    Pull,
}

impl Action {
    pub const ALL: [Action; 6] = [
        Action::Carry,
        Action::LiftLeft,
        Action::LiftRight,
        Action::Sit,
        Action::Push,
        Action::Pull,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Action::Carry => "carry",
            Action::LiftLeft => "lift-left",
            Action::LiftRight => "lift-right",
            Action::Sit => "sit",
            Action::Push => "push",
            Action::Pull => "pull",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|a| a.name() == s)
    }

    /// Word stem present in every prompt of the action.
    pub fn keyword(self) -> &'static str {
        match self {
            Action::Carry => "carr",
            Action::LiftLeft | Action::LiftRight => "lift",
            Action::Sit => "sit",
            Action::Push => "push",
            Action::Pull => "pull",
        }
    }

    /// Paraphrase templates; `{o}` is replaced by the object name.
    pub fn templates(self) -> [&'static str; 3] {
        match self {
            Action::Carry => [
                "a person picks up the {o} and carries it",
                "someone carries a {o} with both hands",
                "carry the {o} forward",
            ],
            Action::LiftLeft => [
                "a person lifts the {o} with the left hand",
                "someone uses the left hand to lift a {o}",
                "lift the {o} with your left hand",
            ],
            Action::LiftRight => [
                "a person lifts the {o} with the right hand",
                "someone uses the right hand to lift a {o}",
                "lift the {o} with your right hand",
            ],
            Action::Sit => [
                "a person sits down on the {o}",
                "someone sits on a {o} and rests",
                "sit on the {o}",
            ],
            Action::Push => [
                "a person pushes the {o} forward",
                "someone pushes a {o} across the floor",
                "push the {o} away",
            ],
            Action::Pull => [
                "a person pulls the {o} backward",
                "someone pulls a {o} toward themselves",
                "pull the {o} closer",
            ],
        }
    }

    pub fn prompt(self, object: ObjectKind, variant: usize) -> String {
        self.templates()[variant % 3].replace("{o}", object.name())
    }

    pub fn state(self) -> ObjectState {
        match self {
            Action::Sit => ObjectState::Static,
            _ => ObjectState::Moving,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub actions: Vec<Action>,
    pub objects: Vec<ObjectKind>,
    pub samples_per_pair: usize,
    pub length: usize,
    pub seed: u64,
}

impl Default for CorpusSpec {
    fn default() -> Self {
        Self {
            actions: Action::ALL.to_vec(),
            objects: ObjectKind::ALL.to_vec(),
            samples_per_pair: 4,
            length: 196,
            seed: 0,
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.actions.is_empty() || self.objects.is_empty() {
            return Err(Error::Config("corpus needs at least one action and one object".into()));
        }
        if self.length < 8 {
            return Err(Error::Config(format!("sequence length must be at least 8, got {}", self.length)));
        }
        if self.samples_per_pair == 0 {
            return Err(Error::Config("samples_per_pair must be positive".into()));
        }
        Ok(())
    }
}

/// A paired human and object sequence with its prompt and affordance.
#[derive(Clone, Debug, PartialEq)]
pub struct HoiSample {
    pub id: String,
    pub prompt: String,
    pub human: HumanMotionSeq,
    pub object: ObjectMotionSeq,
    pub cloud: PointCloud,
    pub affordance: AffordanceRecord,
    pub action: Option<Action>,
    pub object_kind: Option<ObjectKind>,
}

impl HoiSample {
    pub fn len(&self) -> usize {
        self.human.len()
    }

    pub fn is_empty(&self) -> bool {
        self.human.is_empty()
    }

    /// Copy with every numeric field rounded to f32, the precision datasets
    /// store.
    pub fn quantized(&self) -> Result<Self> {
        let human = HumanMotionSeq::new(self.human.frames().mapv(quantize))?;
        let object = ObjectMotionSeq::new(self.object.frames().mapv(quantize))?;
        let mut cloud = PointCloud::new_any_size(self.cloud.points().iter().map(quantize_vec).collect())?;
        if let Some(n) = self.cloud.normals() {
            cloud = cloud.with_normals(n.iter().map(quantize_vec).collect())?;
        }
        let pts = self.affordance.points();
        let affordance = self.affordance.with_points([quantize_vec(&pts[0]), quantize_vec(&pts[1])])?;
        Ok(Self {
            human,
            object,
            cloud,
            affordance,
            ..self.clone()
        })
    }

    /// Training pair in raw units, conditioned on the prompt.
    pub fn hoi_example(&self) -> HoiExample {
        HoiExample {
            human: self.human.frames().clone(),
            object: self.object.frames().clone(),
            text: text_embed(&self.prompt),
        }
    }

    /// Affordance training target with its cloud and prompt.
    pub fn affordance_example(&self) -> AffordanceExample {
        AffordanceExample {
            target: self.affordance.to_vector(),
            cloud: cloud_matrix(&self.cloud),
            text: text_embed(&self.prompt),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.human.len() != self.object.len() {
            return Err(Error::InvalidInput(format!(
                "sample {}: human has {} frames, object {}",
                self.id,
                self.human.len(),
                self.object.len()
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkipRecord {
    pub id: String,
    pub action: Action,
    pub object: ObjectKind,
    pub reason: String,
}

#[derive(Clone, Debug, Default)]
pub struct Corpus {
    pub samples: Vec<HoiSample>,
    pub skipped: Vec<SkipRecord>,
}

#[derive(Clone, Copy, Debug)]
struct Grasp {
    point: Vec3,
    normal: Vec3,
}

impl Grasp {
    fn new(point: Vec3, normal: Vec3) -> Self {
        Self {
            point,
            normal: normal.normalize(),
        }
    }

    fn wrist(&self) -> Vec3 {
        self.point + self.normal * HAND_GAP
    }
}

fn yaw_pose(yaw: f64, translation: Vec3) -> Pose6DoF {
    Pose6DoF::new(Vec3::new(0.0, yaw, 0.0), translation)
}

/// Contact points for the hand actions, left hand first.
fn hand_grasps(action: Action, shape: &Shape) -> Vec<Grasp> {
    let s = shape.size;
    let (w, h, d) = (s.x, s.y, s.z);
    let one = |sign: f64| -> Grasp {
        match shape.kind {
            ObjectKind::Box => Grasp::new(Vec3::new(0.08 * sign, h, 0.0), Vec3::y()),
            ObjectKind::Chair => Grasp::new(Vec3::new(0.1 * sign, h, -shape.seat_depth / 2.0 + 0.025), Vec3::y()),
            ObjectKind::Table => Grasp::new(Vec3::new(0.25 * sign, h - 0.02, -d / 2.0), -Vec3::z()),
            ObjectKind::Ball => Grasp::new(Vec3::new(0.0, 2.0 * shape.radius(), 0.0), Vec3::y()),
        }
    };
    let pair = |f: &dyn Fn(f64) -> Grasp| vec![f(1.0), f(-1.0)];
    match action {
        Action::LiftLeft => vec![one(1.0)],
        Action::LiftRight => vec![one(-1.0)],
        Action::Carry => match shape.kind {
            ObjectKind::Box => pair(&|sg| Grasp::new(Vec3::new(sg * w / 2.0, 0.7 * h, 0.0), Vec3::x() * sg)),
            ObjectKind::Chair => pair(&|sg| {
                Grasp::new(Vec3::new(sg * w / 2.0, shape.seat_height - 0.025, -0.08), Vec3::x() * sg)
            }),
            ObjectKind::Table => pair(&|sg| Grasp::new(Vec3::new(0.25 * sg, h - 0.02, -d / 2.0), -Vec3::z())),
            ObjectKind::Ball => {
                let r = shape.radius();
                pair(&|sg| {
                    let n = Vec3::new(sg * (PI / 6.0).cos(), (PI / 6.0).sin(), 0.0);
                    Grasp::new(Vec3::new(0.0, r, 0.0) + n * r, n)
                })
            }
        },
        Action::Push | Action::Pull => match shape.kind {
            ObjectKind::Box => pair(&|sg| Grasp::new(Vec3::new(0.3 * sg * w, 0.8 * h, -d / 2.0), -Vec3::z())),
            ObjectKind::Chair => pair(&|sg| Grasp::new(Vec3::new(0.15 * sg, h, -shape.seat_depth / 2.0 + 0.025), Vec3::y())),
            ObjectKind::Table => pair(&|sg| Grasp::new(Vec3::new(0.25 * sg, h - 0.02, -d / 2.0), -Vec3::z())),
            ObjectKind::Ball => {
                let r = shape.radius();
                pair(&|sg| {
                    let n = Vec3::new(0.45 * sg, 0.45, -0.77).normalize();
                    Grasp::new(Vec3::new(0.0, r, 0.0) + n * r, n)
                })
            }
        },
        Action::Sit => Vec::new(),
    }
}

/// Translation that puts the object's nearest point `clearance` ahead of the
/// origin with the grasp midpoint centered on the body's midline.
fn place_in_front(cloud: &PointCloud, yaw: f64, mid: Vec3, clearance: f64) -> Vec3 {
    let min_z = cloud
        .points()
        .iter()
        .map(|p| yaw_rotate(yaw, p).z)
        .fold(f64::INFINITY, f64::min);
    let m = yaw_rotate(yaw, &mid);
    Vec3::new(-m.x, 0.0, clearance - min_z)
}

/// Per-frame body targets and object poses of a hand-driven template.
struct Plan {
    root: Vec<(f64, f64)>,
    yaw: Vec<f64>,
    hands: Vec<[Option<Vec3>; 2]>,
    poses: Vec<Pose6DoF>,
    step: f64,
}

impl Plan {
    fn realize(&self) -> std::result::Result<Vec<Frame>, String> {
        let feet = gait(&self.root, &self.yaw, self.step, 0.06);
        let mut frames = Vec::with_capacity(self.root.len());
        for l in 0..self.root.len() {
            let (x, z) = self.root[l];
            let s = solve_bend(x, z, self.yaw[l], &self.hands[l])
                .ok_or_else(|| format!("hand target out of reach at frame {l}"))?;
            frames.push(Posture::bent(x, z, self.yaw[l], s).build(feet[l], self.hands[l]));
        }
        Ok(frames)
    }
}

/// Shrinks walking distances for short clips to keep the pace natural.
fn travel_scale(n: usize) -> f64 {
    (n as f64 / 100.0).min(1.0)
}

fn phase(u: f64, a: f64, b: f64) -> f64 {
    smoothstep((u - a) / (b - a))
}

fn assign_hands(grasps: &[Grasp], action: Action, pose: &Pose6DoF, rest: [Vec3; 2], w: f64) -> [Option<Vec3>; 2] {
    let mut hands = [None, None];
    let sides: Vec<usize> = match action {
        Action::LiftLeft => vec![0],
        Action::LiftRight => vec![1],
        _ => vec![0, 1],
    };
    for (g, side) in grasps.iter().zip(sides) {
        let contact = pose.transform_point(&g.wrist());
        hands[side] = Some(rest[side] + (contact - rest[side]) * w);
    }
    hands
}

fn carry_plan(grasps: &[Grasp], cloud: &PointCloud, n: usize, rng: &mut ChaCha8Rng) -> Plan {
    let psi = rng.random_range(-0.25..0.25);
    let clearance = rng.random_range(0.36..0.42);
    let walk = rng.random_range(0.5..1.0) * travel_scale(n);
    let turn = rng.random_range(-0.5..0.5);
    let mid = (grasps[0].wrist() + grasps[1].wrist()) / 2.0;
    let t0 = place_in_front(cloud, psi, mid, clearance);
    let t1 = HOLD - yaw_rotate(psi, &mid);
    let mut plan = Plan {
        root: Vec::with_capacity(n),
        yaw: Vec::with_capacity(n),
        hands: Vec::with_capacity(n),
        poses: Vec::with_capacity(n),
        step: 0.5,
    };
    let mut root = (0.0, 0.0);
    let mut prev_walk = 0.0;
    for l in 0..n {
        let u = l as f64 / (n - 1) as f64;
        let (w_reach, w_lift, w_walk) = (phase(u, 0.0, 0.3), phase(u, 0.3, 0.55), phase(u, 0.55, 1.0));
        let yaw = turn * w_walk;
        let step = yaw_rotate(yaw, &Vec3::new(0.0, 0.0, walk * (w_walk - prev_walk)));
        prev_walk = w_walk;
        root = (root.0 + step.x, root.1 + step.z);
        let rel = t0 + (t1 - t0) * w_lift;
        let pose = yaw_pose(psi + yaw, Vec3::new(root.0, 0.0, root.1) + yaw_rotate(yaw, &rel));
        let upright = Posture::standing(root.0, root.1, yaw);
        let rest = [upright.rest_hand(0), upright.rest_hand(1)];
        plan.hands.push(assign_hands(grasps, Action::Carry, &pose, rest, w_reach));
        plan.root.push(root);
        plan.yaw.push(yaw);
        plan.poses.push(pose);
    }
    plan
}

fn lift_plan(action: Action, grasps: &[Grasp], cloud: &PointCloud, n: usize, rng: &mut ChaCha8Rng) -> Plan {
    let psi = rng.random_range(-0.25..0.25);
    let clearance = rng.random_range(0.36..0.42);
    let rise = rng.random_range(0.25..0.4);
    let sway = rng.random_range(0.0..0.04);
    let t0 = place_in_front(cloud, psi, grasps[0].wrist(), clearance);
    let upright = Posture::standing(0.0, 0.0, 0.0);
    let rest = [upright.rest_hand(0), upright.rest_hand(1)];
    let mut plan = Plan {
        root: vec![(0.0, 0.0); n],
        yaw: vec![0.0; n],
        hands: Vec::with_capacity(n),
        poses: Vec::with_capacity(n),
        step: 0.5,
    };
    for l in 0..n {
        let u = l as f64 / (n - 1) as f64;
        let (w_reach, w_lift) = (phase(u, 0.0, 0.3), phase(u, 0.3, 0.65));
        let hold = if u > 0.65 { sway * (TAU * (u - 0.65) / 0.35).sin() } else { 0.0 };
        let t = t0 + Vec3::new(hold, rise * w_lift, -0.08 * w_lift);
        let pose = yaw_pose(psi, t);
        plan.hands.push(assign_hands(grasps, action, &pose, rest, w_reach));
        plan.poses.push(pose);
    }
    plan
}

fn slide_plan(action: Action, grasps: &[Grasp], cloud: &PointCloud, n: usize, rng: &mut ChaCha8Rng) -> Plan {
    let psi = rng.random_range(-0.25..0.25);
    let clearance = rng.random_range(0.36..0.42);
    let dist = rng.random_range(0.4..0.9) * travel_scale(n) * if action == Action::Pull { -1.0 } else { 1.0 };
    let mid = (grasps[0].wrist() + grasps[1].wrist()) / 2.0;
    let t0 = place_in_front(cloud, psi, mid, clearance);
    let mut plan = Plan {
        root: Vec::with_capacity(n),
        yaw: vec![0.0; n],
        hands: Vec::with_capacity(n),
        poses: Vec::with_capacity(n),
        step: 0.4,
    };
    for l in 0..n {
        let u = l as f64 / (n - 1) as f64;
        let (w_reach, w_move) = (phase(u, 0.0, 0.25), phase(u, 0.25, 1.0));
        let shift = dist * w_move;
        let pose = yaw_pose(psi, t0 + Vec3::new(0.0, 0.0, shift));
        let upright = Posture::standing(0.0, shift, 0.0);
        let rest = [upright.rest_hand(0), upright.rest_hand(1)];
        plan.hands.push(assign_hands(grasps, action, &pose, rest, w_reach));
        plan.root.push((0.0, shift));
        plan.poses.push(pose);
    }
    plan
}

/// Seat point in the rest frame, or `None` for objects one cannot sit on.
fn seat_point(shape: &Shape, rng: &mut ChaCha8Rng) -> Option<Vec3> {
    let h = shape.seat_height;
    match shape.kind {
        ObjectKind::Chair => Some(Vec3::new(rng.random_range(-0.04..0.04), h, rng.random_range(-0.02..0.05))),
        ObjectKind::Box => Some(Vec3::new(rng.random_range(-0.05..0.05), h, rng.random_range(-0.04..0.04))),
        ObjectKind::Table => {
            let side = if rng.random::<bool>() { 1.0 } else { -1.0 };
            let x = side * rng.random_range(0.22..0.35);
            let z = shape.size.z / 2.0 - rng.random_range(0.12..0.16);
            Some(Vec3::new(x, h, z))
        }
        ObjectKind::Ball => None,
    }
}

fn sit_frames(shape: &Shape, seat: Vec3, n: usize, rng: &mut ChaCha8Rng) -> (Vec<Frame>, Vec<Pose6DoF>) {
    let psi = rng.random_range(-0.2..0.2);
    let s = yaw_rotate(psi, &seat);
    let pose = yaw_pose(psi, Vec3::new(-s.x, 0.0, -s.z));
    let freq = rng.random_range(0.5..1.5);
    let offset = rng.random_range(0.0..TAU);
    let gesture_side = rng.random_range(0..2usize);
    let gesture_start = rng.random_range(0.3..0.6);
    let seat_h = shape.seat_height;
    let hip_y = seat_h + SEAT_GAP - 0.07;
    let ankle_y = ANKLE_HEIGHT.max(hip_y - 0.40);
    let feet = [
        Vec3::new(HIP_HALF_WIDTH, ankle_y, 0.40),
        Vec3::new(-HIP_HALF_WIDTH, ankle_y, 0.40),
    ];
    let mut frames = Vec::with_capacity(n);
    for l in 0..n {
        let u = l as f64 / (n - 1) as f64;
        let posture = Posture {
            root_xz: (0.0, 0.0),
            pelvis_height: seat_h + SEAT_GAP + 0.08 * (1.0 - phase(u, 0.0, 0.12)),
            yaw: 0.0,
            lean: 0.12 + 0.08 * (TAU * freq * u + offset).sin(),
        };
        let pelvis = Vec3::new(0.0, posture.pelvis_height, 0.0);
        let mut hands = [None, None];
        for (side, hand) in hands.iter_mut().enumerate() {
            let sign = if side == 0 { 1.0 } else { -1.0 };
            let lap = pelvis + Vec3::new(0.13 * sign, 0.14, 0.22);
            let target = if side == gesture_side {
                let raise = pelvis + Vec3::new(0.25 * sign, 0.5, 0.3);
                let g = ((u - gesture_start) / 0.3).clamp(0.0, 1.0);
                let bump = (PI * g).sin().powi(2);
                lap + (raise - lap) * bump
            } else {
                lap
            };
            *hand = Some(target);
        }
        frames.push(posture.build(feet, hands));
    }
    (frames, vec![pose; n])
}

fn quantize(x: f64) -> f64 {
    x as f32 as f64
}

fn quantize_vec(v: &Vec3) -> Vec3 {
    v.map(quantize)
}

/// Moves an object pose by the rigid yaw/offset removed from the body.
fn canonical_pose(p: &Pose6DoF, yaw: f64, offset: Vec3) -> Pose6DoF {
    let r = Rotation3::from_scaled_axis(Vec3::new(0.0, -yaw, 0.0)) * Rotation3::from_scaled_axis(p.rotation);
    Pose6DoF::new(r.scaled_axis(), yaw_rotate(-yaw, &(p.translation - offset)))
}

/// Generates one sample; `Err` carries the reason it was skipped.
pub fn generate_sample(
    action: Action,
    kind: ObjectKind,
    length: usize,
    id: String,
    rng: &mut ChaCha8Rng,
) -> std::result::Result<HoiSample, String> {
    if length < 8 {
        return Err(format!("length {length} is below the minimum of 8"));
    }
    let shape = Shape::random(kind, rng);
    let cloud = shape.cloud(rng).map_err(|e| e.to_string())?;
    let cloud = {
        let points = cloud.points().iter().map(quantize_vec).collect();
        let normals = cloud
            .normals()
            .expect("estimated")
            .iter()
            .map(|n| quantize_vec(&n.normalize()))
            .collect();
        PointCloud::new(points)
            .and_then(|c| c.with_normals(normals))
            .map_err(|e| e.to_string())?
    };

    let (frames, poses, slots, rest_points) = match action {
        Action::Sit => {
            let seat = seat_point(&shape, rng).ok_or_else(|| format!("cannot sit on a {}", kind.name()))?;
            let (frames, poses) = sit_frames(&shape, seat, length, rng);
            (frames, poses, vec![SLOT_PELVIS], vec![seat])
        }
        _ => {
            let grasps = hand_grasps(action, &shape);
            let plan = match action {
                Action::Carry => carry_plan(&grasps, &cloud, length, rng),
                Action::LiftLeft | Action::LiftRight => lift_plan(action, &grasps, &cloud, length, rng),
                _ => slide_plan(action, &grasps, &cloud, length, rng),
            };
            let frames = plan.realize()?;
            let slots = match action {
                Action::LiftLeft => vec![SLOT_L_WRIST],
                Action::LiftRight => vec![SLOT_R_WRIST],
                _ => vec![SLOT_L_WRIST, SLOT_R_WRIST],
            };
            (frames, plan.poses, slots, grasps.iter().map(|g| g.point).collect())
        }
    };

    let joints = GlobalJoints::new(frames);
    let (_, yaw, offset) = canonicalize_joints(&joints);
    let human = encode_human(&joints).map_err(|e| e.to_string())?;
    let human = HumanMotionSeq::new(human.frames().mapv(quantize)).map_err(|e| e.to_string())?;
    let poses: Vec<Pose6DoF> = poses
        .iter()
        .map(|p| {
            let c = canonical_pose(p, yaw, offset);
            Pose6DoF::new(quantize_vec(&c.rotation), quantize_vec(&c.translation))
        })
        .collect();
    let object = ObjectMotionSeq::from_poses(&poses).map_err(|e| e.to_string())?;

    let mut labels = [false; LABEL_DIM];
    for &s in &slots {
        labels[s] = true;
    }
    let snapped: Vec<Vec3> = rest_points.iter().map(|p| snap_to_cloud(p, &cloud).1).collect();
    let points = [snapped[0], *snapped.get(1).unwrap_or(&snapped[0])];
    let affordance = AffordanceRecord::new(labels, points, action.state()).map_err(|e| e.to_string())?;
    let prompt = action.prompt(kind, rng.random_range(0..3));
    Ok(HoiSample {
        id,
        prompt,
        human,
        object,
        cloud,
        affordance,
        action: Some(action),
        object_kind: Some(kind),
    })
}

/// Generates `samples_per_pair` sequences for every (action, object) pair.
/// Each sample draws from its own RNG stream, so output does not depend on
/// how work is split across threads.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &a in &spec.actions {
        for &o in &spec.objects {
            for i in 0..spec.samples_per_pair {
                let id = format!("{}-{}-{:04}", a.name(), o.name(), i);
                jobs.push((jobs.len() as u64, a, o, id));
            }
        }
    }
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get()).min(jobs.len().max(1));
    let chunk = jobs.len().div_ceil(threads);
    let results: Vec<std::result::Result<HoiSample, SkipRecord>> = std::thread::scope(|scope| {
        let handles: Vec<_> = jobs
            .chunks(chunk.max(1))
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|(k, a, o, id)| {
                            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
                            rng.set_stream(*k);
                            generate_sample(*a, *o, spec.length, id.clone(), &mut rng).map_err(|reason| SkipRecord {
                                id: id.clone(),
                                action: *a,
                                object: *o,
                                reason,
                            })
                        })
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("corpus worker panicked")).collect()
    });
    let mut corpus = Corpus::default();
    for r in results {
        match r {
            Ok(s) => corpus.samples.push(s),
            Err(skip) => {
                log::warn!("skipped {}: {}", skip.id, skip.reason);
                corpus.skipped.push(skip);
            }
        }
    }
    Ok(corpus)
}

/// Seeded 90/10 train/test split of `n` indices (test gets at least one
/// index when `n ≥ 2`).
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let test = if n >= 2 { (n / 10).max(1) } else { 0 };
    let mut test_set = idx[..test].to_vec();
    let mut train_set = idx[test..].to_vec();
    test_set.sort_unstable();
    train_set.sort_unstable();
    (train_set, test_set)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub checked: usize,
    pub agreeing: usize,
    pub disagreeing: Vec<String>,
}

impl AuditReport {
    pub fn agreement(&self) -> f64 {
        if self.checked == 0 {
            1.0
        } else {
            self.agreeing as f64 / self.checked as f64
        }
    }
}

/// Compares stored labels and state with a fresh extraction.
pub fn audit_labels(samples: &[HoiSample]) -> Result<AuditReport> {
    let mut report = AuditReport {
        checked: 0,
        agreeing: 0,
        disagreeing: Vec::new(),
    };
    for s in samples {
        let got = extract_gt_affordance(&s.human, &s.object, &s.cloud)?;
        report.checked += 1;
        if got.labels() == s.affordance.labels() && got.state == s.affordance.state {
            report.agreeing += 1;
        } else {
            report.disagreeing.push(s.id.clone());
        }
    }
    Ok(report)
}
