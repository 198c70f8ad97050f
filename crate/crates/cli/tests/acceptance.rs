//! End-to-end acceptance checks, one pass/fail line per criterion.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use hoi_core::affordance::{extract_gt_affordance, CONTACT_THRESHOLD, LABEL_DIM};
use hoi_core::diffusion::{make_schedule, posterior_mean, q_sample};
use hoi_core::geometry::Pose6DoF;
use hoi_core::guidance::{correct_means, gradient, objective};
use hoi_core::io::{load_hoi, read_dataset, save_hoi, write_dataset};
use hoi_core::metrics::{contact_distance, fid, foot_skate_ratio};
use hoi_core::motion::{
    canonicalize_joints, encode_human, recover_global_joints, GlobalJoints, FEATURE_DIM, OBJECT_DIM, ROOT_HEIGHT,
    ROOT_YAW_RATE,
};
use hoi_core::skeleton::{rest_positions, CONTACT_JOINTS, FOOT_JOINTS, NUM_JOINTS};
use hoi_core::{AffordanceRecord, GuidanceConfig, HoiSample, ObjectMotionSeq, ObjectState, PointCloud, Vec3};
use nalgebra::Rotation3;
use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Frames per sequence in the acceptance corpus.
const LENGTH: usize = 64;
/// Paired seeds for the guidance-effect comparison.
const PAIRS: usize = 50;
/// Sequences in the static-object comparison.
const STATIC_RUNS: usize = 8;
/// Per-frame translation deviation allowed for static objects, in meters.
const STATIC_TOLERANCE: f64 = 0.01;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn vec3(rng: &mut ChaCha8Rng, r: f64) -> Vec3 {
    Vec3::new(rng.random_range(-r..r), rng.random_range(-r..r), rng.random_range(-r..r))
}

fn max_rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
}

fn diffusion_identities() -> Outcome {
    let s = make_schedule(1000, 1e-4, 0.02).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let x0 = Array2::from_shape_fn((4, 7), |_| rng.random_range(-2.0..2.0));
    let xt = Array2::from_shape_fn((4, 7), |_| rng.random_range(-2.0..2.0));
    let at_one = posterior_mean(&x0, &xt, 1, &s).unwrap() == x0;
    let sigma_one = s.sigma(1) == 0.0;

    // Independent recomputation of every schedule quantity.
    let mut worst: f64 = 0.0;
    let mut invariants = true;
    let mut prod = 1.0;
    for t in 1..=1000 {
        let beta = 1e-4 + (0.02 - 1e-4) * (t - 1) as f64 / 999.0;
        let prev = prod;
        prod *= 1.0 - beta;
        let sigma = beta * (1.0 - prev) / (1.0 - prod);
        worst = worst.max(max_rel(s.beta(t), beta)).max(max_rel(s.alpha_bar(t), prod));
        if t > 1 {
            worst = worst.max(max_rel(s.sigma(t), sigma));
            invariants &= s.beta(t) > s.beta(t - 1) && s.alpha_bar(t) < s.alpha_bar(t - 1);
        }
        invariants &= s.beta(t) > 0.0 && s.beta(t) < 1.0 && s.alpha_bar(t) > 0.0 && s.sigma(t) >= 0.0;
        invariants &= s.sigma(t) <= s.beta(t) + 1e-15;
        let (c0, ct) = s.posterior_coefficients(t);
        worst = worst
            .max(max_rel(c0, prev.sqrt() * beta / (1.0 - prod)))
            .max(max_rel(ct, (1.0 - beta).sqrt() * (1.0 - prev) / (1.0 - prod)));
    }
    // Forward noising agrees with its closed form.
    let noise = Array2::from_shape_fn((4, 7), |_| rng.random_range(-1.0..1.0));
    let q = q_sample(&x0, 500, &noise, &s).unwrap();
    let ab = s.alpha_bar(500);
    for ((v, a), n) in q.iter().zip(&x0).zip(&noise) {
        worst = worst.max(max_rel(*v, ab.sqrt() * a + (1.0 - ab).sqrt() * n));
    }
    outcome(
        at_one && sigma_one && invariants && worst < 1e-12,
        format!("mean(t=1)==x0 {at_one}, sigma_1==0 {sigma_one}, invariants {invariants}, max rel err {worst:.1e}"),
    )
}

fn random_record(rng: &mut ChaCha8Rng, state: ObjectState) -> AffordanceRecord {
    let mut labels = [false; LABEL_DIM];
    let count = rng.random_range(1..=2);
    while labels.iter().filter(|l| **l).count() < count {
        labels[rng.random_range(0..LABEL_DIM)] = true;
    }
    AffordanceRecord::new(labels, [vec3(rng, 0.3), vec3(rng, 0.3)], state).unwrap()
}

/// Random means with a turning, drifting root and tilted object poses.
fn random_means(rng: &mut ChaCha8Rng, len: usize) -> (Array2<f64>, Array2<f64>) {
    let mut h = Array2::from_shape_fn((len, FEATURE_DIM), |_| rng.random_range(-0.5..0.5));
    for l in 0..len {
        h[[l, ROOT_YAW_RATE]] = rng.random_range(-0.3..0.3);
        h[[l, ROOT_HEIGHT]] = rng.random_range(0.7..1.0);
    }
    let mut o = Array2::zeros((len, OBJECT_DIM));
    for l in 0..len {
        let a = vec3(rng, 1.0).normalize() * rng.random_range(0.2..3.0);
        for c in 0..3 {
            o[[l, c]] = a[c];
            o[[l, 3 + c]] = rng.random_range(-0.5..0.5);
        }
    }
    (h, o)
}

fn central_difference(h: &Array2<f64>, o: &Array2<f64>, record: &AffordanceRecord, cfg: &GuidanceConfig) -> Vec<f64> {
    let eps = 1e-6;
    let g = |h: &Array2<f64>, o: &Array2<f64>| objective(&h.view(), &o.view(), record, cfg).unwrap().total;
    let mut out = Vec::with_capacity(h.len() + o.len());
    for i in 0..h.len() {
        let (mut p, mut m) = (h.clone(), h.clone());
        p.as_slice_mut().unwrap()[i] += eps;
        m.as_slice_mut().unwrap()[i] -= eps;
        out.push((g(&p, o) - g(&m, o)) / (2.0 * eps));
    }
    for i in 0..o.len() {
        let (mut p, mut m) = (o.clone(), o.clone());
        p.as_slice_mut().unwrap()[i] += eps;
        m.as_slice_mut().unwrap()[i] -= eps;
        out.push((g(h, &p) - g(h, &m)) / (2.0 * eps));
    }
    out
}

fn gradient_fidelity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let cfg = GuidanceConfig::default();
    let mut worst: f64 = 0.0;
    let mut root_gradients = 0;
    for case in 0..100 {
        let state = if case % 2 == 0 { ObjectState::Static } else { ObjectState::Moving };
        let record = random_record(&mut rng, state);
        let (h, o) = random_means(&mut rng, 8);
        let (_, gh, go) = gradient(&h.view(), &o.view(), &record, &cfg).unwrap();
        if gh.column(hoi_core::motion::ROOT_VEL_X).iter().any(|v| *v != 0.0) {
            root_gradients += 1;
        }
        let analytic: Vec<f64> = gh.iter().chain(go.iter()).copied().collect();
        let numeric = central_difference(&h, &o, &record, &cfg);
        let diff = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
        let scale = numeric.iter().map(|n| n * n).sum::<f64>().sqrt();
        worst = worst.max(diff / scale.max(1e-12));
    }
    outcome(
        worst < 1e-4 && root_gradients == 100,
        format!("100 instances at L=8, max relative error {worst:.2e}, root-integration gradient in {root_gradients}/100"),
    )
}

fn random_clip(rng: &mut ChaCha8Rng, len: usize) -> GlobalJoints {
    let rest = rest_positions();
    let drift = vec3(rng, 0.05);
    let turn = rng.random_range(-0.2..0.2);
    let frames = (0..len)
        .map(|l| {
            let r = Rotation3::from_scaled_axis(Vec3::new(0.0, turn * l as f64, 0.0));
            let mut f = [Vec3::zeros(); NUM_JOINTS];
            for j in 0..NUM_JOINTS {
                f[j] = r * rest[j] + drift * l as f64 + vec3(rng, 0.02);
            }
            f
        })
        .collect();
    GlobalJoints::new(frames)
}

/// Scans every (frame, point) pair for each contact joint.
fn brute_force(joints: &GlobalJoints, poses: &[Pose6DoF], rest: &[Vec3]) -> (Vec<usize>, Vec<Vec3>) {
    let mut per_slot = Vec::new();
    for (slot, &j) in CONTACT_JOINTS.iter().enumerate() {
        let mut all = Vec::new();
        for (l, pose) in poses.iter().enumerate() {
            let r = Rotation3::from_scaled_axis(pose.rotation);
            for (pi, p) in rest.iter().enumerate() {
                all.push(((r * p + pose.translation - joints.frames[l][j]).norm(), l, pi));
            }
        }
        all.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
        per_slot.push((all[0].0, slot, all[0].2));
    }
    per_slot.retain(|c| c.0 < CONTACT_THRESHOLD);
    per_slot.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    per_slot.truncate(2);
    per_slot.sort_by_key(|c| c.1);
    (per_slot.iter().map(|c| c.1).collect(), per_slot.iter().map(|c| rest[c.2]).collect())
}

fn affordance_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let (mut agree, mut with_contacts) = (0, 0);
    for case in 0..100 {
        let len = 2 + case % 7;
        let human = encode_human(&random_clip(&mut rng, len)).unwrap();
        let joints = recover_global_joints(&human);
        let anchor = joints.frames[0][CONTACT_JOINTS[rng.random_range(0..LABEL_DIM)]];
        let rest: Vec<Vec3> = (0..32).map(|_| vec3(&mut rng, 0.25)).collect();
        let poses: Vec<Pose6DoF> = (0..len).map(|_| Pose6DoF::new(vec3(&mut rng, 2.0), anchor + vec3(&mut rng, 0.2))).collect();
        let object = ObjectMotionSeq::from_poses(&poses).unwrap();
        let cloud = PointCloud::new_any_size(rest.clone()).unwrap();
        let record = extract_gt_affordance(&human, &object, &cloud).unwrap();
        let (slots, points) = brute_force(&joints, &object.poses(), &rest);
        let got: Vec<Vec3> = record.contacts().into_iter().map(|(_, p)| p).collect();
        if record.active() == slots && got == points {
            agree += 1;
        }
        if !slots.is_empty() {
            with_contacts += 1;
        }
    }
    outcome(
        agree == 100,
        format!("{agree}/100 exact agreements, {with_contacts} cases with contacts"),
    )
}

fn single_frame_reconvergence() -> Outcome {
    let human = encode_human(&GlobalJoints::new(vec![rest_positions(); 2])).unwrap();
    let joints = recover_global_joints(&human);
    let pose = Pose6DoF::new(Vec3::new(0.1, 0.4, -0.2), Vec3::new(0.0, 0.5, 0.3));
    let mut labels = [false; LABEL_DIM];
    labels[6] = true;
    labels[7] = true;
    let points = [
        pose.inverse_transform_point(&joints.frames[0][CONTACT_JOINTS[6]]),
        pose.inverse_transform_point(&joints.frames[0][CONTACT_JOINTS[7]]),
    ];
    let record = AffordanceRecord::new(labels, points, ObjectState::Static).unwrap();
    let mut h = human.frames().slice(s![..1, ..]).to_owned();
    let mut o = ObjectMotionSeq::from_poses(&[pose]).unwrap().frames().clone();
    o[[0, 1]] += 0.5;
    o[[0, 3]] += 0.3;
    o[[0, 5]] -= 0.2;
    let cfg = GuidanceConfig::default();
    let schedule = make_schedule(1000, 1e-4, 0.02).unwrap();
    let rep = correct_means(&mut h, &mut o, &record, 1, &schedule, &cfg, None, true).unwrap();
    let monotone = rep.trace.windows(2).all(|w| w[1] <= w[0]);
    let ratio = rep.g_after / rep.g_before;
    outcome(
        cfg.k_final == 100 && ratio < 1e-3 && monotone,
        format!(
            "K={} G {:.3e} -> {:.3e} (ratio {ratio:.1e}), non-increasing {monotone}, {} backoffs",
            cfg.k_final, rep.g_before, rep.g_after, rep.backoffs
        ),
    )
}

fn grounded_clip(offsets: &[f64]) -> hoi_core::HumanMotionSeq {
    let mut base = rest_positions();
    let floor = FOOT_JOINTS.iter().map(|&j| base[j].y).fold(f64::INFINITY, f64::min);
    for p in base.iter_mut() {
        p.y += 0.01 - floor;
    }
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

fn metric_fixtures() -> Outcome {
    // 20 transitions: 10 slides of 5 cm, then 10 still.
    let offsets: Vec<f64> = (0..21).map(|i| 0.05 * (i.min(10) as f64)).collect();
    let skate = foot_skate_ratio(&grounded_clip(&offsets));
    let skate_ok = (skate - 0.5).abs() <= 1.0 / 20.0;

    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let a = Array2::from_shape_fn((50, 6), |_| rng.random_range(-1.0..1.0));
    let fid_aa = fid(&a, &a).unwrap().value;

    let human = grounded_clip(&[0.0; 6]);
    let joints = recover_global_joints(&human);
    let pose = Pose6DoF::new(Vec3::new(0.3, -0.2, 0.4), Vec3::new(1.0, 0.5, 0.2));
    let object = ObjectMotionSeq::from_poses(&[pose; 6]).unwrap();
    let (d1, d2) = (Vec3::new(0.03, -0.04, 0.0), Vec3::new(0.0, 0.012, -0.009));
    let mut labels = [false; LABEL_DIM];
    labels[7] = true;
    let p7 = pose.inverse_transform_point(&(joints.frames[0][CONTACT_JOINTS[7]] + d1));
    let one = AffordanceRecord::new(labels, [p7, p7], ObjectState::Static).unwrap();
    let cd_one = contact_distance(&human, &object, &one).unwrap().unwrap();
    labels[6] = true;
    let p6 = pose.inverse_transform_point(&(joints.frames[0][CONTACT_JOINTS[6]] + d2));
    let two = AffordanceRecord::new(labels, [p6, p7], ObjectState::Static).unwrap();
    let cd_two = contact_distance(&human, &object, &two).unwrap().unwrap();
    let expect_two = (d1.norm() + d2.norm()) / 2.0;
    let none = contact_distance(&human, &object, &AffordanceRecord::empty(ObjectState::Static)).unwrap();
    let cd_ok = (cd_one - 0.05).abs() < 1e-9 && (cd_two - expect_two).abs() < 1e-9 && none.is_none();
    outcome(
        skate_ok && fid_aa < 1e-8 && cd_ok,
        format!(
            "skate {skate:.3} (0.5 +- 0.05), fid(A,A) {fid_aa:.1e}, contact distance {cd_one:.12} / {cd_two:.12} vs {:.12}",
            expect_two
        ),
    )
}

/// Checkpoints and datasets produced by the CLI pipeline.
struct Pipeline {
    dir: PathBuf,
    elapsed: Duration,
    hoi_drop: f64,
    apdm_drop: f64,
}

impl Pipeline {
    fn hoi(&self, args: &[&str]) -> Result<Duration, String> {
        let start = Instant::now();
        let out = Command::new(env!("CARGO_BIN_EXE_hoi"))
            .args(args)
            .env("HOI_DATA_ROOT", &self.dir)
            .env_remove("RUST_LOG")
            .output()
            .map_err(|e| e.to_string())?;
        if !out.status.success() {
            return Err(format!("hoi {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr).trim()));
        }
        Ok(start.elapsed())
    }

    fn path(&self, p: &str) -> PathBuf {
        self.dir.join(p)
    }

    fn drop_of(&self, report: &str) -> Result<f64, String> {
        let text = fs::read(self.path(report)).map_err(|e| e.to_string())?;
        let v: serde_json::Value = serde_json::from_slice(&text).map_err(|e| e.to_string())?;
        v["relative_drop"].as_f64().ok_or_else(|| format!("{report} has no relative_drop"))
    }

    fn build(dir: &Path) -> Result<Self, String> {
        let mut p = Pipeline {
            dir: dir.to_path_buf(),
            elapsed: Duration::ZERO,
            hoi_drop: 0.0,
            apdm_drop: 0.0,
        };
        let len = LENGTH.to_string();
        p.elapsed += p.hoi(&["gen-data", "--out", "data", "--length", &len, "--seed", "0"])?;
        p.elapsed += p.hoi(&["train-apdm", "--data", "data/train", "--out", "apdm.ckpt"])?;
        p.elapsed += p.hoi(&["train-hoi", "--data", "data/train", "--out", "hoi.ckpt"])?;
        p.apdm_drop = p.drop_of("apdm.ckpt.report.json")?;
        p.hoi_drop = p.drop_of("hoi.ckpt.report.json")?;
        Ok(p)
    }

    fn sample(&self, out: &str, from: &str, count: usize, guided: bool, apdm: bool) -> Result<Duration, String> {
        let count = count.to_string();
        let mut args = vec!["sample", "--hoi", "hoi.ckpt", "--from", from, "--count", &count, "--out", out, "--seed", "100"];
        if apdm {
            args.extend(["--apdm", "apdm.ckpt"]);
        }
        if !guided {
            args.extend(["--guidance", "off"]);
        }
        self.hoi(&args)
    }
}

fn read(dir: &Path) -> Vec<HoiSample> {
    read_dataset(dir).unwrap()
}

fn guidance_effect(p: &mut Pipeline) -> Result<Outcome, String> {
    p.elapsed += p.sample("c4_guided", "data/train", PAIRS, true, true)?;
    p.sample("c4_plain", "data/train", PAIRS, false, true)?;
    p.elapsed += p.hoi(&["evaluate", "--real", "data/test", "--generated", "c4_guided", "--out", "c4_guided.eval.json"])?;
    let (guided, plain) = (read(&p.path("c4_guided")), read(&p.path("c4_plain")));
    let (mut improved, mut defined) = (0, 0);
    let (mut sum_g, mut sum_p) = (0.0, 0.0);
    for (g, u) in guided.iter().zip(&plain) {
        if g.affordance != u.affordance {
            return Err(format!("{}: paired runs drew different affordances", g.id));
        }
        let cg = contact_distance(&g.human, &g.object, &g.affordance).map_err(|e| e.to_string())?;
        let cu = contact_distance(&u.human, &u.object, &u.affordance).map_err(|e| e.to_string())?;
        if let (Some(cg), Some(cu)) = (cg, cu) {
            defined += 1;
            sum_g += cg;
            sum_p += cu;
            if cg < cu {
                improved += 1;
            }
        }
    }
    let n = defined.max(1) as f64;
    let (mean_g, mean_p) = (sum_g / n, sum_p / n);
    Ok(outcome(
        defined == PAIRS && mean_g < mean_p && improved * 10 >= PAIRS * 9,
        format!(
            "contact distance {mean_g:.4} guided vs {mean_p:.4} unguided, {improved}/{PAIRS} pairs improve ({defined} with contacts)"
        ),
    ))
}

/// Mean and maximum distance of the object translation from its sequence mean.
fn translation_deviation(x_o: &ObjectMotionSeq) -> (f64, f64) {
    let poses = x_o.poses();
    let mean = poses.iter().map(|p| p.translation).sum::<Vec3>() / poses.len() as f64;
    let d: Vec<f64> = poses.iter().map(|p| (p.translation - mean).norm()).collect();
    (d.iter().sum::<f64>() / d.len() as f64, d.iter().copied().fold(0.0, f64::max))
}

fn static_enforcement(p: &Pipeline) -> Result<Outcome, String> {
    let statics: Vec<HoiSample> = read(&p.path("data/train"))
        .into_iter()
        .filter(|s| s.affordance.state == ObjectState::Static && !s.affordance.is_empty())
        .take(STATIC_RUNS)
        .collect();
    if statics.len() < STATIC_RUNS {
        return Err(format!("only {} static sequences in the corpus", statics.len()));
    }
    write_dataset(&statics, &p.path("static")).map_err(|e| e.to_string())?;
    p.sample("c5_guided", "static", STATIC_RUNS, true, false)?;
    p.sample("c5_plain", "static", STATIC_RUNS, false, false)?;
    let (guided, plain) = (read(&p.path("c5_guided")), read(&p.path("c5_plain")));
    let dev = |v: &[HoiSample]| v.iter().map(|s| translation_deviation(&s.object)).collect::<Vec<_>>();
    let (dg, dp) = (dev(&guided), dev(&plain));
    let mean = |d: &[(f64, f64)]| d.iter().map(|x| x.0).sum::<f64>() / d.len() as f64;
    let worst_mean = dg.iter().map(|x| x.0).fold(0.0, f64::max);
    let worst_frame = dg.iter().map(|x| x.1).fold(0.0, f64::max);
    let (mg, mp) = (mean(&dg), mean(&dp));
    Ok(outcome(
        worst_mean < STATIC_TOLERANCE && mp >= 2.0 * mg && mp > STATIC_TOLERANCE,
        format!(
            "guided per-frame deviation {mg:.4} m mean, {worst_mean:.4} worst sequence, {worst_frame:.4} worst frame; unguided {mp:.4} m"
        ),
    ))
}

fn round_trips(p: &Pipeline) -> Result<Outcome, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut joint_err: f64 = 0.0;
    for _ in 0..20 {
        let clip = random_clip(&mut rng, 40);
        let (canonical, _, _) = canonicalize_joints(&clip);
        let back = recover_global_joints(&encode_human(&clip).unwrap());
        joint_err = joint_err.max(back.max_abs_diff(&canonical));
    }

    let data = read(&p.path("data/train"));
    write_dataset(&data, &p.path("rt_data")).map_err(|e| e.to_string())?;
    let dataset_exact = read(&p.path("rt_data")) == data && same_files(&p.path("data/train"), &p.path("rt_data"));

    let model = load_hoi(&p.path("hoi.ckpt")).map_err(|e| e.to_string())?;
    save_hoi(&model, &p.path("rt.ckpt")).map_err(|e| e.to_string())?;
    let ckpt_exact = fs::read(p.path("hoi.ckpt")).ok() == fs::read(p.path("rt.ckpt")).ok();

    for out in ["rt_a", "rt_b"] {
        p.hoi(&[
            "sample", "--hoi", "hoi.ckpt", "--apdm", "apdm.ckpt", "--object", "table", "--prompt", "push the table",
            "--length", "16", "--count", "2", "--seed", "3", "--out", out,
        ])?;
    }
    let sampling_exact = same_files(&p.path("rt_a"), &p.path("rt_b"));
    Ok(outcome(
        joint_err < 1e-4 && dataset_exact && ckpt_exact && sampling_exact,
        format!(
            "joint error {joint_err:.1e} m, dataset bitwise {dataset_exact}, checkpoint bitwise {ckpt_exact}, seeded sampling bitwise {sampling_exact}"
        ),
    ))
}

fn same_files(a: &Path, b: &Path) -> bool {
    let names = |d: &Path| {
        let mut v: Vec<_> = fs::read_dir(d).unwrap().map(|e| e.unwrap().file_name()).collect();
        v.sort();
        v
    };
    let (na, nb) = (names(a), names(b));
    na == nb && na.iter().all(|n| fs::read(a.join(n)).unwrap() == fs::read(b.join(n)).unwrap())
}

fn report(results: &mut Vec<bool>, id: usize, name: &str, took: Duration, r: Result<Outcome, String>) {
    let (pass, detail) = match r {
        Ok(o) => (o.pass, o.detail),
        Err(e) => (false, e),
    };
    println!(
        "[{}] {id}. {name}: {detail} ({:.1?})",
        if pass { "PASS" } else { "FAIL" },
        took
    );
    results.push(pass);
}

fn main() {
    let mut results = Vec::new();
    let timed = |f: fn() -> Outcome| {
        let start = Instant::now();
        (start, f())
    };

    let (t, o) = timed(diffusion_identities);
    let fast = t.elapsed() < Duration::from_secs(1);
    report(&mut results, 1, "diffusion identities", t.elapsed(), Ok(outcome(o.pass && fast, o.detail)));
    let (t, o) = timed(gradient_fidelity);
    let fast = t.elapsed() < Duration::from_secs(60);
    report(&mut results, 2, "gradient fidelity", t.elapsed(), Ok(outcome(o.pass && fast, o.detail)));
    let (t, o) = timed(affordance_oracle);
    let fast = t.elapsed() < Duration::from_secs(60);
    report(&mut results, 3, "affordance oracle equivalence", t.elapsed(), Ok(outcome(o.pass && fast, o.detail)));

    let tmp = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let pipeline = Pipeline::build(tmp.path());
    let built = start.elapsed();
    match pipeline {
        Ok(mut p) => {
            let t = Instant::now();
            let c4 = guidance_effect(&mut p).map(|o| {
                let fast = t.elapsed() < Duration::from_secs(20 * 60);
                outcome(o.pass && fast, o.detail)
            });
            report(&mut results, 4, "guidance effect", t.elapsed(), c4);
            let t = Instant::now();
            let c5 = static_enforcement(&p);
            report(&mut results, 5, "static-object enforcement", t.elapsed(), c5);
            let (t, o) = timed(single_frame_reconvergence);
            report(&mut results, 6, "final-step re-convergence", t.elapsed(), Ok(o));
            let t = Instant::now();
            let c7 = round_trips(&p);
            report(&mut results, 7, "round trips", t.elapsed(), c7);
            let pass = p.hoi_drop >= 0.5 && p.apdm_drop >= 0.5 && p.elapsed < Duration::from_secs(30 * 60);
            let detail = format!(
                "loss drop hoi {:.1}% apdm {:.1}%, pipeline (gen, train x2, sample {PAIRS}, evaluate) {:.1?}",
                100.0 * p.hoi_drop,
                100.0 * p.apdm_drop,
                p.elapsed
            );
            report(&mut results, 8, "training smoke", built, Ok(outcome(pass, detail)));
        }
        Err(e) => {
            for (id, name) in [(4, "guidance effect"), (5, "static-object enforcement")] {
                report(&mut results, id, name, start.elapsed(), Err(e.clone()));
            }
            let (t, o) = timed(single_frame_reconvergence);
            report(&mut results, 6, "final-step re-convergence", t.elapsed(), Ok(o));
            report(&mut results, 7, "round trips", start.elapsed(), Err(e.clone()));
            report(&mut results, 8, "training smoke", start.elapsed(), Err(e));
        }
    }
    let (t, o) = timed(metric_fixtures);
    report(&mut results, 9, "metric fixtures", t.elapsed(), Ok(o));

    let passed = results.iter().filter(|p| **p).count();
    println!("acceptance: {passed}/{} criteria passed", results.len());
    if passed != results.len() {
        std::process::exit(1);
    }
}
