//! Affordance-guided correction of the sampling means.
//!
//! The objective `G = G_con + α·G_sta + β·G_smo` measures how far the
//! contact joints are from the object's contact points, how much a static
//! object moves, and how rough the object trajectory is. During sampling the
//! posterior means are moved down its gradient, once per step and
//! `k_final` times at the last step.

use ndarray::{s, Array1, Array2, ArrayView2, ArrayViewMut2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::affordance::{postprocess_contacts, sample_affordance, AffordanceRecord, ObjectState};
use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::geometry::{
    canonical_axis_angle, canonical_axis_angle_jacobian, rotate, rotate_jacobian, PointCloud, Pose6DoF, Vec3,
    DEFAULT_CONTACT_OFFSET,
};
use crate::models::{text_embed, ApdmModel, HoiModel, SampleOptions};
use crate::motion::{
    headings, recover_joints, yaw_rotate, yaw_rotate_derivative, HumanMotionSeq, ObjectMotionSeq, FEATURE_DIM,
    LOCAL_POS, OBJECT_DIM, ROOT_HEIGHT, ROOT_VEL_X, ROOT_VEL_Z, ROOT_YAW_RATE,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidanceConfig {
    pub tau1: f64,
    pub tau2: f64,
    pub alpha: f64,
    pub beta: f64,
    /// Number of corrections at the final step.
    pub k_final: usize,
    /// Upper bound on the step variance; also the variance used at `t = 1`,
    /// where the posterior variance is zero.
    pub sigma_clamp: f64,
    /// Treat the integrated root trajectory as constant when differentiating.
    pub detach_root: bool,
    /// Fraction of the predicted first-order decrease a step must achieve
    /// before it is accepted; rejected steps halve the step scale.
    pub sufficient_decrease: f64,
    pub max_halvings: usize,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            tau1: 1.0,
            tau2: 100.0,
            alpha: 4.0,
            beta: 0.1,
            k_final: 100,
            sigma_clamp: 0.01,
            detach_root: false,
            sufficient_decrease: 0.5,
            max_halvings: 40,
        }
    }
}

impl GuidanceConfig {
    /// Guidance with both strengths zeroed.
    pub fn disabled() -> Self {
        Self {
            tau1: 0.0,
            tau2: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let finite = [self.tau1, self.tau2, self.alpha, self.beta, self.sigma_clamp]
            .iter()
            .all(|v| v.is_finite());
        if !finite || self.tau1 < 0.0 || self.tau2 < 0.0 || self.alpha < 0.0 || self.beta < 0.0 {
            return Err(Error::Config("guidance weights must be finite and non-negative".into()));
        }
        if self.k_final == 0 || !(self.sigma_clamp > 0.0) {
            return Err(Error::Config("k_final must be at least 1 and sigma_clamp positive".into()));
        }
        if !(0.0..1.0).contains(&self.sufficient_decrease) {
            return Err(Error::Config("sufficient_decrease must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct GuidanceTerms {
    pub contact: f64,
    pub stationary: f64,
    pub smooth: f64,
    pub total: f64,
}

impl GuidanceTerms {
    fn new(contact: f64, stationary: f64, smooth: f64, cfg: &GuidanceConfig) -> Self {
        Self {
            contact,
            stationary,
            smooth,
            total: contact + cfg.alpha * stationary + cfg.beta * smooth,
        }
    }
}

fn check_shapes(mu_h: &ArrayView2<f64>, mu_o: &ArrayView2<f64>) -> Result<()> {
    if mu_h.ncols() != FEATURE_DIM || mu_o.ncols() != OBJECT_DIM {
        return Err(Error::Layout(format!(
            "guidance needs {FEATURE_DIM}- and {OBJECT_DIM}-wide inputs, got {} and {}",
            mu_h.ncols(),
            mu_o.ncols()
        )));
    }
    if mu_h.nrows() != mu_o.nrows() || mu_h.nrows() == 0 {
        return Err(Error::InvalidInput(format!(
            "frame counts differ or are zero: {} vs {}",
            mu_h.nrows(),
            mu_o.nrows()
        )));
    }
    Ok(())
}

fn pose_row(mu_o: &ArrayView2<f64>, l: usize) -> (Vec3, Vec3) {
    let r = mu_o.row(l);
    (Vec3::new(r[0], r[1], r[2]), Vec3::new(r[3], r[4], r[5]))
}

fn stationary_active(record: &AffordanceRecord, cfg: &GuidanceConfig) -> bool {
    record.state == ObjectState::Static && cfg.alpha > 0.0
}

/// Evaluates `G` through the public joint-recovery and pose routines.
pub fn objective(
    mu_h: &ArrayView2<f64>,
    mu_o: &ArrayView2<f64>,
    record: &AffordanceRecord,
    cfg: &GuidanceConfig,
) -> Result<GuidanceTerms> {
    check_shapes(mu_h, mu_o)?;
    let joints = recover_joints(mu_h)?;
    let len = mu_h.nrows();
    let mut contact = 0.0;
    for (joint, point) in record.contacts() {
        for l in 0..len {
            let pose = Pose6DoF::from_slice(mu_o.row(l).as_slice().unwrap_or(&mu_o.row(l).to_vec()));
            contact += (joints.frames[l][joint] - pose.transform_point(&point)).norm_squared();
        }
    }
    let mut stationary = 0.0;
    if stationary_active(record, cfg) {
        let mean = mu_o.mean_axis(Axis(0)).expect("non-empty");
        stationary = mu_o.outer_iter().map(|r| (&r - &mean).mapv(|v| v * v).sum()).sum();
    }
    let mut smooth = 0.0;
    let canon = |l: usize| {
        let (a, t) = pose_row(mu_o, l);
        (canonical_axis_angle(&a), t)
    };
    for l in 0..len.saturating_sub(1) {
        let (a0, t0) = canon(l);
        let (a1, t1) = canon(l + 1);
        smooth += (a1 - a0).norm_squared() + (t1 - t0).norm_squared();
    }
    Ok(GuidanceTerms::new(contact, stationary, smooth, cfg))
}

fn add3(mut row: ArrayViewMut2<f64>, l: usize, c: usize, v: &Vec3) {
    row[[l, c]] += v.x;
    row[[l, c + 1]] += v.y;
    row[[l, c + 2]] += v.z;
}

/// `G` and its exact gradients with respect to both means.
pub fn gradient(
    mu_h: &ArrayView2<f64>,
    mu_o: &ArrayView2<f64>,
    record: &AffordanceRecord,
    cfg: &GuidanceConfig,
) -> Result<(GuidanceTerms, Array2<f64>, Array2<f64>)> {
    check_shapes(mu_h, mu_o)?;
    let len = mu_h.nrows();
    let mut gh = Array2::zeros((len, FEATURE_DIM));
    let mut go = Array2::zeros((len, OBJECT_DIM));

    let theta = headings(mu_h);
    let mut root = Vec::with_capacity(len);
    let mut acc = Vec3::zeros();
    for l in 0..len {
        root.push(Vec3::new(acc.x, mu_h[[l, ROOT_HEIGHT]], acc.z));
        acc += yaw_rotate(theta[l], &Vec3::new(mu_h[[l, ROOT_VEL_X]], 0.0, mu_h[[l, ROOT_VEL_Z]]));
    }

    let mut contact = 0.0;
    let mut d_root_xz = vec![Vec3::zeros(); len];
    let mut d_theta = vec![0.0; len];
    for (joint, point) in record.contacts() {
        for l in 0..len {
            let (a, t) = pose_row(mu_o, l);
            let target = rotate(&a, &point) + t;
            let (pos, local) = if joint == 0 {
                (root[l], None)
            } else {
                let c = LOCAL_POS + 3 * (joint - 1);
                let local = Vec3::new(mu_h[[l, c]], mu_h[[l, c + 1]], mu_h[[l, c + 2]]);
                (yaw_rotate(theta[l], &local) + root[l], Some((c, local)))
            };
            let diff = pos - target;
            contact += diff.norm_squared();
            let g = diff * 2.0;

            gh[[l, ROOT_HEIGHT]] += g.y;
            d_root_xz[l] += Vec3::new(g.x, 0.0, g.z);
            if let Some((c, local)) = local {
                add3(gh.view_mut(), l, c, &yaw_rotate(-theta[l], &g));
                d_theta[l] += g.dot(&yaw_rotate_derivative(theta[l], &local));
            }
            add3(go.view_mut(), l, 3, &(-g));
            add3(go.view_mut(), l, 0, &(-(rotate_jacobian(&a, &point).transpose() * g)));
        }
    }

    if !cfg.detach_root {
        // Root xz at frame l sums rotated velocities of frames k < l.
        let mut suffix = Vec3::zeros();
        for k in (0..len).rev() {
            let v = Vec3::new(mu_h[[k, ROOT_VEL_X]], 0.0, mu_h[[k, ROOT_VEL_Z]]);
            let dv = yaw_rotate(-theta[k], &suffix);
            gh[[k, ROOT_VEL_X]] += dv.x;
            gh[[k, ROOT_VEL_Z]] += dv.z;
            d_theta[k] += suffix.dot(&yaw_rotate_derivative(theta[k], &v));
            suffix += d_root_xz[k];
        }
        // Heading at frame l sums yaw rates of frames k < l.
        let mut suffix_theta = 0.0;
        for k in (0..len).rev() {
            gh[[k, ROOT_YAW_RATE]] += suffix_theta;
            suffix_theta += d_theta[k];
        }
    }

    let mut stationary = 0.0;
    if stationary_active(record, cfg) {
        let mean = mu_o.mean_axis(Axis(0)).expect("non-empty");
        for l in 0..len {
            let dev = &mu_o.row(l) - &mean;
            stationary += dev.mapv(|v| v * v).sum();
            let mut row = go.row_mut(l);
            row.scaled_add(2.0 * cfg.alpha, &dev);
        }
    }

    let mut smooth = 0.0;
    if len > 1 {
        let canon: Vec<(Vec3, Vec3)> = (0..len)
            .map(|l| {
                let (a, t) = pose_row(mu_o, l);
                (canonical_axis_angle(&a), t)
            })
            .collect();
        let mut d_rot = vec![Vec3::zeros(); len];
        for l in 0..len - 1 {
            let da = canon[l + 1].0 - canon[l].0;
            let dt = canon[l + 1].1 - canon[l].1;
            smooth += da.norm_squared() + dt.norm_squared();
            let k = 2.0 * cfg.beta;
            d_rot[l + 1] += da * k;
            d_rot[l] -= da * k;
            let (mut row1, mut row0) = (Array1::zeros(3), Array1::zeros(3));
            for c in 0..3 {
                row1[c] = dt[c] * k;
                row0[c] = -dt[c] * k;
            }
            let mut t1 = go.slice_mut(s![l + 1, 3..6]);
            t1 += &row1;
            let mut t0 = go.slice_mut(s![l, 3..6]);
            t0 += &row0;
        }
        for (l, d) in d_rot.iter().enumerate() {
            let (a, _) = pose_row(mu_o, l);
            add3(go.view_mut(), l, 0, &(canonical_axis_angle_jacobian(&a).transpose() * d));
        }
    }

    Ok((GuidanceTerms::new(contact, stationary, smooth, cfg), gh, go))
}

/// Affine map from the working space of the means to raw motion units,
/// `x = z ⊙ scale + offset`, applied per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelMap {
    pub scale: Array1<f64>,
    pub offset: Array1<f64>,
}

impl ChannelMap {
    pub fn identity(dim: usize) -> Self {
        Self {
            scale: Array1::ones(dim),
            offset: Array1::zeros(dim),
        }
    }

    fn to_raw(&self, z: &Array2<f64>) -> Array2<f64> {
        z * &self.scale + &self.offset
    }
}

/// Log entry of one correction call.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrectionReport {
    pub t: usize,
    pub sigma: f64,
    pub g_before: f64,
    pub g_after: f64,
    pub terms_after: GuidanceTerms,
    pub iterations: usize,
    /// Rejected steps; each halved the step scale.
    pub backoffs: usize,
    pub step_scale: f64,
    /// Every accepted value of G, starting with the initial one.
    #[serde(skip_serializing_if = "Vec::is_empty", default)]
    pub trace: Vec<f64>,
}

/// Step variance used by the correction: `min(Σ_t, clamp)`, or the clamp
/// itself at the last step.
pub fn effective_sigma(schedule: &NoiseSchedule, t: usize, cfg: &GuidanceConfig) -> f64 {
    let sigma = schedule.sigma(t);
    if sigma > 0.0 {
        sigma.min(cfg.sigma_clamp)
    } else {
        cfg.sigma_clamp
    }
}

fn all_finite(a: &Array2<f64>) -> bool {
    a.iter().all(|v| v.is_finite())
}

/// Moves the means down the gradient of `G`.
///
/// `z_h`, `z_o` are the means in working units, related to raw motion by
/// `maps` (identity when `None`). Runs `k_final` iterations at `t = 1` and
/// one otherwise, gradients recomputed every iteration. A step is accepted
/// only if it achieves at least `sufficient_decrease` of its first-order
/// predicted decrease; otherwise the step scale halves and the step is retried.
/// A step accepted without halving doubles the scale again, up to 1.
#[allow(clippy::too_many_arguments)]
pub fn correct_means(
    z_h: &mut Array2<f64>,
    z_o: &mut Array2<f64>,
    record: &AffordanceRecord,
    t: usize,
    schedule: &NoiseSchedule,
    cfg: &GuidanceConfig,
    maps: Option<(&ChannelMap, &ChannelMap)>,
    keep_trace: bool,
) -> Result<CorrectionReport> {
    cfg.validate()?;
    let identity = (ChannelMap::identity(FEATURE_DIM), ChannelMap::identity(OBJECT_DIM));
    let (map_h, map_o) = maps.unwrap_or((&identity.0, &identity.1));
    let sigma = effective_sigma(schedule, t, cfg);
    let iterations = if t == 1 { cfg.k_final } else { 1 };

    let eval = |zh: &Array2<f64>, zo: &Array2<f64>| -> Result<(GuidanceTerms, Array2<f64>, Array2<f64>)> {
        let (terms, gx_h, gx_o) = gradient(&map_h.to_raw(zh).view(), &map_o.to_raw(zo).view(), record, cfg)?;
        let (gz_h, gz_o) = (gx_h * &map_h.scale, gx_o * &map_o.scale);
        if !terms.total.is_finite() || !all_finite(&gz_h) || !all_finite(&gz_o) {
            return Err(Error::Guidance { step: t });
        }
        Ok((terms, gz_h, gz_o))
    };

    let (mut terms, mut g_h, mut g_o) = eval(z_h, z_o)?;
    let mut report = CorrectionReport {
        t,
        sigma,
        g_before: terms.total,
        g_after: terms.total,
        terms_after: terms,
        iterations: 0,
        backoffs: 0,
        step_scale: 1.0,
        trace: if keep_trace { vec![terms.total] } else { Vec::new() },
    };
    let (wh, wo) = (cfg.tau1 * sigma, cfg.tau2 * sigma);
    if wh == 0.0 && wo == 0.0 {
        return Ok(report);
    }

    let mut scale = 1.0;
    'outer: for _ in 0..iterations {
        let slope = wh * g_h.mapv(|v| v * v).sum() + wo * g_o.mapv(|v| v * v).sum();
        if slope == 0.0 {
            break;
        }
        let mut halvings = 0;
        loop {
            let cand_h = &*z_h - &(&g_h * (scale * wh));
            let cand_o = &*z_o - &(&g_o * (scale * wo));
            let (ct, ch, co) = eval(&cand_h, &cand_o)?;
            if ct.total <= terms.total - cfg.sufficient_decrease * scale * slope {
                *z_h = cand_h;
                *z_o = cand_o;
                terms = ct;
                g_h = ch;
                g_o = co;
                report.iterations += 1;
                if halvings == 0 {
                    scale = (scale * 2.0).min(1.0);
                }
                if keep_trace {
                    report.trace.push(terms.total);
                }
                break;
            }
            scale *= 0.5;
            report.backoffs += 1;
            halvings += 1;
            if halvings > cfg.max_halvings {
                log::debug!("guidance step {t}: no acceptable step after {halvings} halvings");
                break 'outer;
            }
        }
    }
    if report.backoffs > 0 {
        log::debug!("guidance step {t}: {} backoffs, final scale {scale}", report.backoffs);
    }
    report.g_after = terms.total;
    report.terms_after = terms;
    report.step_scale = scale;
    Ok(report)
}

/// Options of a guided sampling run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuidedSampleConfig {
    pub guidance: GuidanceConfig,
    /// When false, sampling runs without any correction hook.
    pub enabled: bool,
    pub sample: SampleOptions,
    pub affordance_cfg_scale: f64,
    pub contact_offset: f64,
    pub length: usize,
}

impl Default for GuidedSampleConfig {
    fn default() -> Self {
        Self {
            guidance: GuidanceConfig::default(),
            enabled: true,
            sample: SampleOptions::default(),
            affordance_cfg_scale: crate::diffusion::DEFAULT_CFG_SCALE,
            contact_offset: DEFAULT_CONTACT_OFFSET,
            length: 196,
        }
    }
}

/// One sampling request.
#[derive(Clone, Debug)]
pub struct GuidedRequest {
    pub prompt: String,
    pub cloud: PointCloud,
    pub seed: u64,
    /// Use this affordance instead of sampling one (already post-processed).
    pub record: Option<AffordanceRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub prompt: String,
    pub seed: u64,
    pub guided: bool,
    pub corrections: Vec<CorrectionReport>,
}

#[derive(Clone, Debug)]
pub struct GuidedOutput {
    pub human: HumanMotionSeq,
    pub object: ObjectMotionSeq,
    pub record: AffordanceRecord,
    pub report: RunReport,
}

/// Generator for the affordance draw, independent of the motion draw so that
/// switching guidance off leaves motion sampling untouched.
fn affordance_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    rng
}

/// Samples an affordance (unless given), post-processes it, and samples
/// motions for a batch of requests with the correction hook in the loop.
pub fn guided_sample_batch(
    hoi: &HoiModel,
    apdm: Option<&ApdmModel>,
    requests: &[GuidedRequest],
    cfg: &GuidedSampleConfig,
) -> Result<Vec<GuidedOutput>> {
    cfg.guidance.validate()?;
    if requests.is_empty() {
        return Ok(Vec::new());
    }
    let mut records = Vec::with_capacity(requests.len());
    for r in requests {
        let record = match &r.record {
            Some(rec) => rec.clone(),
            None => {
                let apdm = apdm.ok_or_else(|| Error::Config("an affordance model is required".into()))?;
                let raw = sample_affordance(apdm, &r.cloud, &r.prompt, cfg.affordance_cfg_scale, &mut affordance_rng(r.seed))?;
                postprocess_contacts(&raw, &r.cloud, cfg.contact_offset)?
            }
        };
        records.push(record);
    }

    let texts: Vec<_> = requests.iter().map(|r| text_embed(&r.prompt)).collect();
    let mut rngs: Vec<ChaCha8Rng> = requests.iter().map(|r| ChaCha8Rng::seed_from_u64(r.seed)).collect();
    let maps = (
        ChannelMap {
            scale: hoi.human_norm.std.clone(),
            offset: hoi.human_norm.mean.clone(),
        },
        ChannelMap {
            scale: hoi.object_norm.std.clone(),
            offset: hoi.object_norm.mean.clone(),
        },
    );
    let mut logs: Vec<Vec<CorrectionReport>> = vec![Vec::new(); requests.len()];
    let len = cfg.length;
    let samples = if cfg.enabled {
        let hook = |mu: ndarray::ArrayD<f64>, t: usize| -> Result<ndarray::ArrayD<f64>> {
            let batch = mu.shape()[0];
            let (mut h, mut o) = HoiModel::split_state(&mu);
            for b in 0..batch {
                let rows = s![b * len..(b + 1) * len, ..];
                let mut zh = h.slice(rows).to_owned();
                let mut zo = o.slice(rows).to_owned();
                let rep = correct_means(&mut zh, &mut zo, &records[b], t, &hoi.schedule, &cfg.guidance, Some((&maps.0, &maps.1)), t == 1)?;
                h.slice_mut(rows).assign(&zh);
                o.slice_mut(rows).assign(&zo);
                logs[b].push(rep);
            }
            Ok(HoiModel::join_state(&h, &o, batch))
        };
        hoi.sample(&texts, len, &cfg.sample, hook, &mut rngs)?
    } else {
        hoi.sample(&texts, len, &cfg.sample, crate::diffusion::no_correction, &mut rngs)?
    };

    samples
        .into_iter()
        .zip(records)
        .zip(logs)
        .zip(requests)
        .map(|(((motion, record), corrections), req)| {
            Ok(GuidedOutput {
                human: HumanMotionSeq::from_prediction(motion.0)?,
                object: ObjectMotionSeq::new(motion.1)?,
                record,
                report: RunReport {
                    prompt: req.prompt.clone(),
                    seed: req.seed,
                    guided: cfg.enabled,
                    corrections,
                },
            })
        })
        .collect()
}

/// Single-request form of [`guided_sample_batch`].
pub fn guided_sample(
    hoi: &HoiModel,
    apdm: Option<&ApdmModel>,
    request: &GuidedRequest,
    cfg: &GuidedSampleConfig,
) -> Result<GuidedOutput> {
    Ok(guided_sample_batch(hoi, apdm, std::slice::from_ref(request), cfg)?
        .pop()
        .expect("one output per request"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::affordance::LABEL_DIM;
    use crate::diffusion::make_schedule;
    use crate::motion::{encode_human, GlobalJoints};
    use crate::skeleton::{rest_positions, CONTACT_JOINTS};
    use rand::Rng;

    fn random_record(rng: &mut ChaCha8Rng, state: ObjectState) -> AffordanceRecord {
        let mut labels = [false; LABEL_DIM];
        let count = rng.random_range(1..=2);
        while labels.iter().filter(|l| **l).count() < count {
            labels[rng.random_range(0..LABEL_DIM)] = true;
        }
        let mut p = || Vec3::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3));
        AffordanceRecord::new(labels, [p(), p()], state).unwrap()
    }

    fn random_means(rng: &mut ChaCha8Rng, len: usize) -> (Array2<f64>, Array2<f64>) {
        let mut h = Array2::from_shape_fn((len, FEATURE_DIM), |_| rng.random_range(-0.5..0.5));
        for l in 0..len {
            h[[l, ROOT_YAW_RATE]] = rng.random_range(-0.3..0.3);
            h[[l, ROOT_HEIGHT]] = rng.random_range(0.7..1.0);
        }
        let mut o = Array2::zeros((len, OBJECT_DIM));
        for l in 0..len {
            let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            let angle = rng.random_range(0.2..3.0);
            let a = axis.normalize() * angle;
            for c in 0..3 {
                o[[l, c]] = a[c];
                o[[l, 3 + c]] = rng.random_range(-0.5..0.5);
            }
        }
        (h, o)
    }

    fn fd_gradient(h: &Array2<f64>, o: &Array2<f64>, record: &AffordanceRecord, cfg: &GuidanceConfig) -> (Array2<f64>, Array2<f64>) {
        let eps = 1e-6;
        let g = |h: &Array2<f64>, o: &Array2<f64>| objective(&h.view(), &o.view(), record, cfg).unwrap().total;
        let mut gh = Array2::zeros(h.dim());
        let mut go = Array2::zeros(o.dim());
        for idx in ndarray::indices(h.dim()) {
            let (mut a, mut b) = (h.clone(), h.clone());
            a[idx] += eps;
            b[idx] -= eps;
            gh[idx] = (g(&a, o) - g(&b, o)) / (2.0 * eps);
        }
        for idx in ndarray::indices(o.dim()) {
            let (mut a, mut b) = (o.clone(), o.clone());
            a[idx] += eps;
            b[idx] -= eps;
            go[idx] = (g(h, &a) - g(h, &b)) / (2.0 * eps);
        }
        (gh, go)
    }

    fn rel_err(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
        let diff = (a - b).mapv(|v| v * v).sum().sqrt();
        let scale = b.mapv(|v| v * v).sum().sqrt().max(1e-8);
        diff / scale
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let cfg = GuidanceConfig::default();
        for case in 0..12 {
            let state = if case % 2 == 0 { ObjectState::Static } else { ObjectState::Moving };
            let record = random_record(&mut rng, state);
            let (h, o) = random_means(&mut rng, 8);
            let (terms, gh, go) = gradient(&h.view(), &o.view(), &record, &cfg).unwrap();
            let direct = objective(&h.view(), &o.view(), &record, &cfg).unwrap();
            assert!((terms.total - direct.total).abs() <= 1e-10 * direct.total.max(1.0));
            let (fh, fo) = fd_gradient(&h, &o, &record, &cfg);
            assert!(rel_err(&gh, &fh) < 1e-4, "case {case}: human {}", rel_err(&gh, &fh));
            assert!(rel_err(&go, &fo) < 1e-4, "case {case}: object {}", rel_err(&go, &fo));
        }
    }

    #[test]
    fn detached_root_drops_integration_terms() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let record = random_record(&mut rng, ObjectState::Moving);
        let (h, o) = random_means(&mut rng, 6);
        let cfg = GuidanceConfig {
            detach_root: true,
            ..GuidanceConfig::default()
        };
        let (_, gh, _) = gradient(&h.view(), &o.view(), &record, &cfg).unwrap();
        for l in 0..6 {
            assert_eq!(gh[[l, ROOT_YAW_RATE]], 0.0);
            assert_eq!(gh[[l, ROOT_VEL_X]], 0.0);
            assert_eq!(gh[[l, ROOT_VEL_Z]], 0.0);
        }
    }

    /// A still person with a static object whose contact points sit exactly
    /// on the labelled joints.
    fn fixed_point() -> (Array2<f64>, Array2<f64>, AffordanceRecord) {
        let clip = GlobalJoints::new(vec![rest_positions(); 4]);
        let human = encode_human(&clip).unwrap();
        let joints = crate::motion::recover_global_joints(&human);
        let pose = Pose6DoF::new(Vec3::new(0.1, 0.4, -0.2), Vec3::new(0.0, 0.5, 0.3));
        let mut labels = [false; LABEL_DIM];
        labels[6] = true;
        labels[7] = true;
        let points = [
            pose.inverse_transform_point(&joints.frames[0][CONTACT_JOINTS[6]]),
            pose.inverse_transform_point(&joints.frames[0][CONTACT_JOINTS[7]]),
        ];
        let record = AffordanceRecord::new(labels, points, ObjectState::Static).unwrap();
        let object = ObjectMotionSeq::from_poses(&[pose; 4]).unwrap();
        (human.frames().clone(), object.frames().clone(), record)
    }

    #[test]
    fn gradient_vanishes_at_fixed_point() {
        let (h, o, record) = fixed_point();
        let (terms, gh, go) = gradient(&h.view(), &o.view(), &record, &GuidanceConfig::default()).unwrap();
        assert!(terms.total < 1e-24);
        assert!(gh.iter().chain(go.iter()).all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn zero_strength_leaves_means_bitwise_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let record = random_record(&mut rng, ObjectState::Static);
        let (h0, o0) = random_means(&mut rng, 5);
        let schedule = make_schedule(50, 1e-4, 0.02).unwrap();
        let (mut h, mut o) = (h0.clone(), o0.clone());
        for t in [10, 1] {
            correct_means(&mut h, &mut o, &record, t, &schedule, &GuidanceConfig::disabled(), None, false).unwrap();
        }
        assert_eq!(h, h0);
        assert_eq!(o, o0);
    }

    #[test]
    fn single_frame_recovers_contact() {
        let (h, o, record) = fixed_point();
        let (mut h, mut o) = (h.slice(s![..1, ..]).to_owned(), o.slice(s![..1, ..]).to_owned());
        o[[0, 3]] += 0.3;
        o[[0, 5]] -= 0.2;
        o[[0, 1]] += 0.5;
        let schedule = make_schedule(20, 1e-4, 0.02).unwrap();
        let cfg = GuidanceConfig::default();
        let rep = correct_means(&mut h, &mut o, &record, 1, &schedule, &cfg, None, true).unwrap();
        assert!(rep.g_before > 0.01);
        assert!(rep.g_after < 1e-3 * rep.g_before, "{} -> {}", rep.g_before, rep.g_after);
        assert!(rep.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn working_space_gradient_scales_by_channel() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let record = random_record(&mut rng, ObjectState::Static);
        let (h, o) = random_means(&mut rng, 3);
        let map_h = ChannelMap {
            scale: Array1::from_shape_fn(FEATURE_DIM, |_| rng.random_range(0.5..2.0)),
            offset: Array1::from_shape_fn(FEATURE_DIM, |_| rng.random_range(-0.1..0.1)),
        };
        let map_o = ChannelMap {
            scale: Array1::from_shape_fn(OBJECT_DIM, |_| rng.random_range(0.5..2.0)),
            offset: Array1::zeros(OBJECT_DIM),
        };
        let zh = (&h - &map_h.offset) / &map_h.scale;
        let zo = (&o - &map_o.offset) / &map_o.scale;
        let schedule = make_schedule(20, 1e-4, 0.02).unwrap();
        let cfg = GuidanceConfig {
            tau1: 1e-3,
            tau2: 1e-3,
            sufficient_decrease: 0.0,
            ..GuidanceConfig::default()
        };
        let (mut ah, mut ao) = (zh.clone(), zo.clone());
        let rep = correct_means(&mut ah, &mut ao, &record, 5, &schedule, &cfg, Some((&map_h, &map_o)), false).unwrap();
        let (_, gx_h, gx_o) = gradient(&h.view(), &o.view(), &record, &cfg).unwrap();
        let w = effective_sigma(&schedule, 5, &cfg);
        let expect_h = &zh - &(gx_h * &map_h.scale * (cfg.tau1 * w));
        let expect_o = &zo - &(gx_o * &map_o.scale * (cfg.tau2 * w));
        assert_eq!(rep.iterations, 1);
        assert!(rel_err(&ah, &expect_h) < 1e-12);
        assert!(rel_err(&ao, &expect_o) < 1e-12);
    }
}
