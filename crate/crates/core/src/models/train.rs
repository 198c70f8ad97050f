//! Trained-model bundles, their objectives, training loops and samplers.

use ndarray::{concatenate, s, Array1, Array2, ArrayD, Axis, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::apdm::{AffordanceDenoiser, ApdmConfig};
use super::common::{to_f64, to_scalar, Normalizer};
use super::hoi::{HoiConfig, HoiDenoiser};
use super::text::{null_embedding, TEXT_DIM};
use crate::affordance::AFFORDANCE_DIM;
use crate::diffusion::{cfg_mix, q_sample, sample_loop, NoiseSchedule, DEFAULT_COND_DROP};
use crate::error::{Error, Result};
use crate::motion::{FEATURE_DIM, OBJECT_DIM};
use crate::nn::{clip_grad_norm, Adam, AdamConfig, Dropout, ParamStore, Scalar, Tape};

/// Width of the joint diffusion state: human features then object pose.
pub const HOI_DIM: usize = FEATURE_DIM + OBJECT_DIM;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub cond_drop: f64,
    /// Gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub seed: u64,
    /// Size of the fixed held-out batch used to measure the loss drop.
    pub eval_size: usize,
    /// Human-only steps (communication severed) run before joint training.
    /// They count towards `steps`.
    pub pretrain_steps: usize,
    /// Relative weight of object channels in the joint loss.
    pub object_weight: f64,
}

impl TrainConfig {
    pub fn hoi() -> Self {
        Self {
            steps: 2000,
            batch_size: 32,
            adam: AdamConfig {
                lr: 1e-3,
                ..Default::default()
            },
            cond_drop: DEFAULT_COND_DROP,
            grad_clip: 1.0,
            seed: 0,
            eval_size: 32,
            pretrain_steps: 500,
            object_weight: 1.0,
        }
    }

    pub fn apdm() -> Self {
        Self {
            steps: 1000,
            pretrain_steps: 0,
            ..Self::hoi()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.eval_size == 0 {
            return Err(Error::Config("batch sizes must be positive".into()));
        }
        if self.pretrain_steps > self.steps {
            return Err(Error::Config(format!(
                "pretraining ({}) exceeds the step budget ({})",
                self.pretrain_steps, self.steps
            )));
        }
        if !(0.0..=1.0).contains(&self.cond_drop) {
            return Err(Error::Config(format!("condition drop {} outside [0, 1]", self.cond_drop)));
        }
        if !(self.adam.lr > 0.0) || self.object_weight < 0.0 {
            return Err(Error::Config("learning rate must be positive, object weight non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepLog {
    pub step: usize,
    pub phase: String,
    pub loss: f64,
    pub grad_norm: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub steps: Vec<StepLog>,
    /// Loss on the fixed evaluation batch before and after training.
    pub eval_before: f64,
    pub eval_after: f64,
}

impl TrainReport {
    pub fn relative_drop(&self) -> f64 {
        1.0 - self.eval_after / self.eval_before
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,phase,loss,grad_norm\n");
        for s in &self.steps {
            out.push_str(&format!("{},{},{},{}\n", s.step, s.phase, s.loss, s.grad_norm));
        }
        out
    }
}

/// A paired training sequence in raw (unnormalized) units.
#[derive(Clone, Debug)]
pub struct HoiExample {
    pub human: Array2<f64>,
    pub object: Array2<f64>,
    pub text: Array1<f64>,
}

#[derive(Clone, Debug)]
pub struct AffordanceExample {
    pub target: Array1<f64>,
    pub cloud: Array2<f64>,
    pub text: Array1<f64>,
}

fn stack_rows(rows: &[Array1<f64>]) -> Array2<f64> {
    let views: Vec<_> = rows.iter().map(|r| r.view().insert_axis(Axis(0))).collect();
    concatenate(Axis(0), &views).expect("equal widths")
}

fn stack_blocks(blocks: &[&Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
    concatenate(Axis(0), &views).expect("equal widths")
}

fn normal_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))
}

fn check_finite(step: usize, loss: f64) -> Result<()> {
    if !loss.is_finite() {
        return Err(Error::NonFiniteLoss { step, loss });
    }
    Ok(())
}

/// A noised training batch in normalized units.
struct HoiBatch {
    x_h: Array2<f64>,
    x_o: Array2<f64>,
    target_h: Array2<f64>,
    target_o: Array2<f64>,
    t: Vec<usize>,
    text: Array2<f64>,
}

/// The dual-branch denoiser together with its schedule and normalization.
#[derive(Clone, Debug)]
pub struct HoiModel {
    pub config: HoiConfig,
    pub denoiser: HoiDenoiser,
    pub params: ParamStore<f32>,
    pub schedule: NoiseSchedule,
    pub human_norm: Normalizer,
    pub object_norm: Normalizer,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub cfg_scale: f64,
    pub use_cm: bool,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            cfg_scale: crate::diffusion::DEFAULT_CFG_SCALE,
            use_cm: true,
        }
    }
}

impl HoiModel {
    pub fn new(
        config: HoiConfig,
        schedule: NoiseSchedule,
        human_norm: Normalizer,
        object_norm: Normalizer,
        seed: u64,
    ) -> Result<Self> {
        if human_norm.dim() != FEATURE_DIM || object_norm.dim() != OBJECT_DIM {
            return Err(Error::Config("normalization widths do not match the motion layout".into()));
        }
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let denoiser = HoiDenoiser::new(&mut params, config.clone(), &mut rng)?;
        log::info!("hoi denoiser: {} parameters", params.num_scalars());
        Ok(Self {
            config,
            denoiser,
            params,
            schedule,
            human_norm,
            object_norm,
        })
    }

    /// Fits normalization statistics on raw examples.
    pub fn fit_normalizers(data: &[HoiExample]) -> Result<(Normalizer, Normalizer)> {
        let h = Normalizer::fit(data.iter().flat_map(|e| e.human.outer_iter()))?;
        let o = Normalizer::fit(data.iter().flat_map(|e| e.object.outer_iter()))?;
        Ok((h, o))
    }

    /// Clean-motion prediction on normalized inputs (dropout off).
    ///
    /// `z_h`/`z_o` stack `t.len()` sequences row-wise; `text` has one row each.
    pub fn predict(
        &self,
        z_h: &Array2<f64>,
        z_o: &Array2<f64>,
        t: &[usize],
        text: &Array2<f64>,
        use_cm: bool,
    ) -> Result<(Array2<f64>, Array2<f64>)> {
        let tape = Tape::new(&self.params);
        let out = self.denoiser.forward(
            &tape,
            &tape.constant(to_scalar::<f32>(z_h)),
            &tape.constant(to_scalar::<f32>(z_o)),
            t,
            &tape.constant(to_scalar::<f32>(text)),
            use_cm && self.config.use_cm,
            &mut Dropout::eval(),
        )?;
        Ok((to_f64(&out.human.value()), to_f64(&out.object.value())))
    }

    fn make_batch(&self, data: &[HoiExample], idx: &[usize], rng: &mut ChaCha8Rng, cond_drop: f64) -> HoiBatch {
        let steps = self.schedule.steps();
        let mut x_h = Vec::new();
        let mut x_o = Vec::new();
        let mut target_h = Vec::new();
        let mut target_o = Vec::new();
        let mut t = Vec::new();
        let mut text = Vec::new();
        for &i in idx {
            let e = &data[i];
            let zh = self.human_norm.normalize(&e.human);
            let zo = self.object_norm.normalize(&e.object);
            let ti = rng.random_range(1..=steps);
            let nh = normal_matrix(rng, zh.nrows(), zh.ncols());
            let no = normal_matrix(rng, zo.nrows(), zo.ncols());
            x_h.push(q_sample(&zh, ti, &nh, &self.schedule).expect("matching shapes"));
            x_o.push(q_sample(&zo, ti, &no, &self.schedule).expect("matching shapes"));
            target_h.push(zh);
            target_o.push(zo);
            t.push(ti);
            let drop = rng.random::<f64>() < cond_drop;
            text.push(if drop { null_embedding() } else { e.text.clone() });
        }
        HoiBatch {
            x_h: stack_blocks(&x_h.iter().collect::<Vec<_>>()),
            x_o: stack_blocks(&x_o.iter().collect::<Vec<_>>()),
            target_h: stack_blocks(&target_h.iter().collect::<Vec<_>>()),
            target_o: stack_blocks(&target_o.iter().collect::<Vec<_>>()),
            t,
            text: stack_rows(&text),
        }
    }

    /// Reconstruction loss; with `human_only` the object branch and the
    /// communication block are left out.
    fn batch_loss<'t, 'p, S: Scalar>(
        &self,
        tape: &'t Tape<'p, S>,
        batch: &HoiBatch,
        human_only: bool,
        object_weight: f64,
        dropout: &mut Dropout,
    ) -> Result<crate::nn::Var<'t, 'p, S>> {
        let pred = self.denoiser.forward(
            tape,
            &tape.constant(to_scalar(&batch.x_h)),
            &tape.constant(to_scalar(&batch.x_o)),
            &batch.t,
            &tape.constant(to_scalar(&batch.text)),
            !human_only && self.config.use_cm,
            dropout,
        )?;
        let lh = pred.human.mse(to_scalar(&batch.target_h));
        if human_only {
            return Ok(lh);
        }
        let lo = pred.object.mse(to_scalar(&batch.target_o));
        let total = (FEATURE_DIM as f64 + object_weight * OBJECT_DIM as f64).max(f64::MIN_POSITIVE);
        Ok(lh
            .scale(FEATURE_DIM as f64 / total)
            .add(&lo.scale(object_weight * OBJECT_DIM as f64 / total)))
    }

    /// Loss of an arbitrary batch of examples, for diagnostics and tests.
    pub fn loss_on(&self, data: &[HoiExample], seed: u64, object_weight: f64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..data.len()).collect();
        let batch = self.make_batch(data, &idx, &mut rng, 0.0);
        let tape = Tape::new(&self.params);
        Ok(self.batch_loss(&tape, &batch, false, object_weight, &mut Dropout::eval())?.scalar())
    }

    /// Two-phase training: human-only pretraining, then the joint objective.
    pub fn train(
        &mut self,
        data: &[HoiExample],
        cfg: &TrainConfig,
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<TrainReport> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidInput("no training sequences".into()));
        }
        let eval: Vec<HoiExample> = (0..cfg.eval_size).map(|i| data[i % data.len()].clone()).collect();
        let eval_seed = cfg.seed ^ 0x5eed_e7a1;
        let mut report = TrainReport {
            eval_before: self.loss_on(&eval, eval_seed, cfg.object_weight)?,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut dropout = Dropout::train(self.config.dropout, ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)));
        let mut adam = Adam::new(&self.params, cfg.adam);
        for step in 0..cfg.steps {
            let human_only = step < cfg.pretrain_steps;
            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..data.len())).collect();
            let batch = self.make_batch(data, &idx, &mut rng, cfg.cond_drop);
            let (loss, mut grads) = {
                let tape = Tape::new(&self.params);
                let loss = self.batch_loss(&tape, &batch, human_only, cfg.object_weight, &mut dropout)?;
                (loss.scalar(), tape.backward(&loss))
            };
            check_finite(step, loss)?;
            let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
            adam.step(&mut self.params, &grads);
            let log = StepLog {
                step,
                phase: if human_only { "pretrain" } else { "joint" }.into(),
                loss,
                grad_norm,
            };
            on_step(&log);
            report.steps.push(log);
        }
        report.eval_after = self.loss_on(&eval, eval_seed, cfg.object_weight)?;
        Ok(report)
    }

    /// Splits a `[B, L, 269]` state into stacked human and object rows.
    pub fn split_state(state: &ArrayD<f64>) -> (Array2<f64>, Array2<f64>) {
        let (b, l) = (state.shape()[0], state.shape()[1]);
        let flat = state
            .to_shape((b * l, HOI_DIM))
            .expect("contiguous state")
            .to_owned();
        (
            flat.slice(s![.., ..FEATURE_DIM]).to_owned(),
            flat.slice(s![.., FEATURE_DIM..]).to_owned(),
        )
    }

    pub fn join_state(h: &Array2<f64>, o: &Array2<f64>, batch: usize) -> ArrayD<f64> {
        let flat = concatenate(Axis(1), &[h.view(), o.view()]).expect("equal rows");
        let len = flat.nrows() / batch;
        flat.as_standard_layout()
            .into_owned()
            .into_shape_with_order(IxDyn(&[batch, len, HOI_DIM]))
            .expect("row count divides into the batch")
    }

    /// Classifier-free-guided clean prediction on a `[B, L, 269]` state.
    pub fn denoise(&self, state: &ArrayD<f64>, t: usize, texts: &Array2<f64>, opts: &SampleOptions) -> Result<ArrayD<f64>> {
        let batch = state.shape()[0];
        let (z_h, z_o) = Self::split_state(state);
        let steps = vec![t; batch];
        if (opts.cfg_scale - 1.0).abs() < f64::EPSILON {
            let (h, o) = self.predict(&z_h, &z_o, &steps, texts, opts.use_cm)?;
            return Ok(Self::join_state(&h, &o, batch));
        }
        let null = stack_rows(&vec![null_embedding(); batch]);
        let both_h = concatenate(Axis(0), &[z_h.view(), z_h.view()]).expect("equal widths");
        let both_o = concatenate(Axis(0), &[z_o.view(), z_o.view()]).expect("equal widths");
        let both_text = concatenate(Axis(0), &[texts.view(), null.view()]).expect("equal widths");
        let steps2 = vec![t; 2 * batch];
        let (h, o) = self.predict(&both_h, &both_o, &steps2, &both_text, opts.use_cm)?;
        let rows = z_h.nrows();
        let cond = Self::join_state(&h.slice(s![..rows, ..]).to_owned(), &o.slice(s![..rows, ..]).to_owned(), batch);
        let uncond = Self::join_state(&h.slice(s![rows.., ..]).to_owned(), &o.slice(s![rows.., ..]).to_owned(), batch);
        Ok(cfg_mix(&uncond, &cond, opts.cfg_scale))
    }

    /// Samples one sequence per prompt embedding, returning raw motions.
    ///
    /// The hook sees posterior means in normalized units (see
    /// [`HoiModel::split_state`]).
    pub fn sample<H>(
        &self,
        texts: &[Array1<f64>],
        len: usize,
        opts: &SampleOptions,
        hook: H,
        rngs: &mut [ChaCha8Rng],
    ) -> Result<Vec<(Array2<f64>, Array2<f64>)>>
    where
        H: FnMut(ArrayD<f64>, usize) -> Result<ArrayD<f64>>,
    {
        if texts.iter().any(|t| t.len() != TEXT_DIM) {
            return Err(Error::InvalidInput(format!("prompt embeddings must be {TEXT_DIM}-d")));
        }
        let text = stack_rows(texts);
        let batch = texts.len();
        let out = sample_loop(
            |x, t| self.denoise(x, t, &text, opts),
            &[batch, len, HOI_DIM],
            &self.schedule,
            hook,
            rngs,
        )?;
        let (h, o) = Self::split_state(&out);
        Ok((0..batch)
            .map(|b| {
                let rows = s![b * len..(b + 1) * len, ..];
                (
                    self.human_norm.denormalize(&h.slice(rows).to_owned()),
                    self.object_norm.denormalize(&o.slice(rows).to_owned()),
                )
            })
            .collect())
    }
}

/// The affordance denoiser together with its schedule and normalization.
#[derive(Clone, Debug)]
pub struct ApdmModel {
    pub config: ApdmConfig,
    pub denoiser: AffordanceDenoiser,
    pub params: ParamStore<f32>,
    pub schedule: NoiseSchedule,
    pub norm: Normalizer,
}

struct AffordanceBatch {
    y: Array2<f64>,
    target: Array2<f64>,
    n: Vec<usize>,
    clouds: Array2<f64>,
    text: Array2<f64>,
}

impl ApdmModel {
    pub fn new(config: ApdmConfig, schedule: NoiseSchedule, norm: Normalizer, seed: u64) -> Result<Self> {
        if norm.dim() != AFFORDANCE_DIM {
            return Err(Error::Config("affordance normalization must be 15-d".into()));
        }
        let mut params = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let denoiser = AffordanceDenoiser::new(&mut params, config.clone(), &mut rng)?;
        log::info!("affordance denoiser: {} parameters", params.num_scalars());
        Ok(Self {
            config,
            denoiser,
            params,
            schedule,
            norm,
        })
    }

    pub fn fit_normalizer(data: &[AffordanceExample]) -> Result<Normalizer> {
        Normalizer::fit(data.iter().map(|e| e.target.view()))
    }

    /// Normalized clean prediction; `clouds` stacks one cloud per row of `y`.
    pub fn predict(&self, y: &Array2<f64>, n: &[usize], clouds: &Array2<f64>, text: &Array2<f64>) -> Result<Array2<f64>> {
        let tape = Tape::new(&self.params);
        let emb = self.denoiser.encode_clouds(&tape, to_scalar::<f32>(clouds), n.len());
        let out = self.denoiser.forward(
            &tape,
            &tape.constant(to_scalar(y)),
            n,
            &emb,
            &tape.constant(to_scalar(text)),
            &mut Dropout::eval(),
        )?;
        Ok(to_f64(&out.value()))
    }

    /// Embedding of one cloud by the set encoder.
    pub fn encode_cloud(&self, cloud: &crate::geometry::PointCloud) -> Vec<f64> {
        self.denoiser.encoder.encode(&self.params, cloud)
    }

    fn make_batch(&self, data: &[AffordanceExample], idx: &[usize], rng: &mut ChaCha8Rng, cond_drop: f64) -> AffordanceBatch {
        let mut y = Vec::new();
        let mut target = Vec::new();
        let mut n = Vec::new();
        let mut clouds = Vec::new();
        let mut text = Vec::new();
        for &i in idx {
            let e = &data[i];
            let z = self.norm.normalize(&e.target.view().insert_axis(Axis(0)).to_owned());
            let ni = rng.random_range(1..=self.schedule.steps());
            let noise = normal_matrix(rng, 1, AFFORDANCE_DIM);
            y.push(q_sample(&z, ni, &noise, &self.schedule).expect("matching shapes"));
            target.push(z);
            n.push(ni);
            clouds.push(&e.cloud);
            let drop = rng.random::<f64>() < cond_drop;
            text.push(if drop { null_embedding() } else { e.text.clone() });
        }
        AffordanceBatch {
            y: stack_blocks(&y.iter().collect::<Vec<_>>()),
            target: stack_blocks(&target.iter().collect::<Vec<_>>()),
            n,
            clouds: stack_blocks(&clouds),
            text: stack_rows(&text),
        }
    }

    fn batch_loss<'t, 'p, S: Scalar>(
        &self,
        tape: &'t Tape<'p, S>,
        batch: &AffordanceBatch,
        dropout: &mut Dropout,
    ) -> Result<crate::nn::Var<'t, 'p, S>> {
        let emb = self.denoiser.encode_clouds(tape, to_scalar(&batch.clouds), batch.n.len());
        let pred = self.denoiser.forward(
            tape,
            &tape.constant(to_scalar(&batch.y)),
            &batch.n,
            &emb,
            &tape.constant(to_scalar(&batch.text)),
            dropout,
        )?;
        Ok(pred.mse(to_scalar(&batch.target)))
    }

    pub fn loss_on(&self, data: &[AffordanceExample], seed: u64) -> Result<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let idx: Vec<usize> = (0..data.len()).collect();
        let batch = self.make_batch(data, &idx, &mut rng, 0.0);
        let tape = Tape::new(&self.params);
        Ok(self.batch_loss(&tape, &batch, &mut Dropout::eval())?.scalar())
    }

    pub fn train(
        &mut self,
        data: &[AffordanceExample],
        cfg: &TrainConfig,
        mut on_step: impl FnMut(&StepLog),
    ) -> Result<TrainReport> {
        cfg.validate()?;
        if data.is_empty() {
            return Err(Error::InvalidInput("no training records".into()));
        }
        let eval: Vec<AffordanceExample> = (0..cfg.eval_size).map(|i| data[i % data.len()].clone()).collect();
        let eval_seed = cfg.seed ^ 0x5eed_e7a1;
        let mut report = TrainReport {
            eval_before: self.loss_on(&eval, eval_seed)?,
            ..Default::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut dropout = Dropout::train(self.config.dropout, ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(1)));
        let mut adam = Adam::new(&self.params, cfg.adam);
        for step in 0..cfg.steps {
            let idx: Vec<usize> = (0..cfg.batch_size).map(|_| rng.random_range(0..data.len())).collect();
            let batch = self.make_batch(data, &idx, &mut rng, cfg.cond_drop);
            let (loss, mut grads) = {
                let tape = Tape::new(&self.params);
                let loss = self.batch_loss(&tape, &batch, &mut dropout)?;
                (loss.scalar(), tape.backward(&loss))
            };
            check_finite(step, loss)?;
            let grad_norm = clip_grad_norm(&mut grads, cfg.grad_clip);
            adam.step(&mut self.params, &grads);
            let log = StepLog {
                step,
                phase: "affordance".into(),
                loss,
                grad_norm,
            };
            on_step(&log);
            report.steps.push(log);
        }
        report.eval_after = self.loss_on(&eval, eval_seed)?;
        Ok(report)
    }

    /// Draws one raw 15-d affordance vector.
    pub fn sample_vector(&self, cloud: &Array2<f64>, text: &Array1<f64>, cfg_scale: f64, rng: &mut ChaCha8Rng) -> Result<Array1<f64>> {
        let text_row = text.view().insert_axis(Axis(0)).to_owned();
        let null_row = null_embedding().insert_axis(Axis(0));
        let out = sample_loop(
            |x, n| {
                let y = x.view().into_dimensionality::<ndarray::Ix2>().expect("2-d state").to_owned();
                let cond = self.predict(&y, &[n], cloud, &text_row)?;
                let mixed = if (cfg_scale - 1.0).abs() < f64::EPSILON {
                    cond
                } else {
                    let uncond = self.predict(&y, &[n], cloud, &null_row)?;
                    cfg_mix(&uncond, &cond, cfg_scale)
                };
                Ok(mixed.into_dyn())
            },
            &[1, AFFORDANCE_DIM],
            &self.schedule,
            crate::diffusion::no_correction,
            std::slice::from_mut(rng),
        )?;
        let z = out.into_dimensionality::<ndarray::Ix2>().expect("2-d state");
        Ok(self.norm.denormalize(&z).row(0).to_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffusion::make_schedule;
    use crate::models::text::text_embed;

    fn micro_hoi() -> HoiConfig {
        HoiConfig {
            latent_dim: 16,
            heads: 2,
            ff_dim: 32,
            human_layers: 2,
            object_layers: 1,
            cm_human_layer: 1,
            dropout: 0.0,
            use_cm: true,
        }
    }

    fn micro_apdm() -> ApdmConfig {
        ApdmConfig {
            latent_dim: 16,
            heads: 2,
            ff_dim: 32,
            layers: 1,
            dropout: 0.0,
            cloud_hidden: 8,
            cloud_dim: 8,
        }
    }

    fn quick(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 4,
            eval_size: 4,
            pretrain_steps: steps / 4,
            adam: AdamConfig {
                lr: 3e-3,
                ..Default::default()
            },
            ..TrainConfig::hoi()
        }
    }

    fn hoi_data() -> Vec<HoiExample> {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        (0..4)
            .map(|i| HoiExample {
                human: normal_matrix(&mut rng, 6, FEATURE_DIM),
                object: normal_matrix(&mut rng, 6, OBJECT_DIM),
                text: text_embed(&format!("prompt {i}")),
            })
            .collect()
    }

    fn hoi_model(data: &[HoiExample]) -> HoiModel {
        let (h, o) = HoiModel::fit_normalizers(data).unwrap();
        HoiModel::new(micro_hoi(), make_schedule(20, 1e-4, 0.02).unwrap(), h, o, 3).unwrap()
    }

    #[test]
    fn hoi_training_reduces_loss_and_is_deterministic() {
        let data = hoi_data();
        let mut a = hoi_model(&data);
        let mut b = hoi_model(&data);
        let ra = a.train(&data, &quick(60), |_| {}).unwrap();
        let rb = b.train(&data, &quick(60), |_| {}).unwrap();
        assert_eq!(ra, rb);
        assert!(ra.eval_after < ra.eval_before, "{} -> {}", ra.eval_before, ra.eval_after);
        assert_eq!(ra.steps.iter().filter(|s| s.phase == "pretrain").count(), 15);
        let csv = ra.to_csv();
        assert_eq!(csv.lines().count(), 61);
        assert!(csv.starts_with("step,phase,loss,grad_norm\n"));
    }

    #[test]
    fn hoi_sampler_returns_raw_motions() {
        let data = hoi_data();
        let model = hoi_model(&data);
        let mut calls = 0;
        let hook = |x: ArrayD<f64>, _t: usize| {
            calls += 1;
            Ok(x)
        };
        let mut rngs = vec![ChaCha8Rng::seed_from_u64(1), ChaCha8Rng::seed_from_u64(2)];
        let out = model
            .sample(&[data[0].text.clone(), data[1].text.clone()], 5, &SampleOptions::default(), hook, &mut rngs)
            .unwrap();
        assert_eq!(calls, 20);
        assert_eq!(out.len(), 2);
        assert_eq!(out[0].0.dim(), (5, FEATURE_DIM));
        assert_eq!(out[0].1.dim(), (5, OBJECT_DIM));
        assert!(out.iter().all(|(h, o)| h.iter().chain(o.iter()).all(|v| v.is_finite())));
    }

    #[test]
    fn unit_guidance_scale_is_the_conditional_prediction() {
        let data = hoi_data();
        let model = hoi_model(&data);
        let z_h = model.human_norm.normalize(&data[0].human);
        let z_o = model.object_norm.normalize(&data[0].object);
        let text = stack_rows(&[data[0].text.clone()]);
        let (h, o) = model.predict(&z_h, &z_o, &[7], &text, true).unwrap();
        let state = HoiModel::join_state(&z_h, &z_o, 1);
        let opts = SampleOptions {
            cfg_scale: 1.0,
            use_cm: true,
        };
        assert_eq!(model.denoise(&state, 7, &text, &opts).unwrap(), HoiModel::join_state(&h, &o, 1));
    }

    #[test]
    fn state_split_inverts_join() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (h, o) = (normal_matrix(&mut rng, 6, FEATURE_DIM), normal_matrix(&mut rng, 6, OBJECT_DIM));
        let state = HoiModel::join_state(&h, &o, 2);
        assert_eq!(state.shape(), &[2, 3, HOI_DIM]);
        assert_eq!(HoiModel::split_state(&state), (h, o));
    }

    #[test]
    fn rejects_invalid_training_config() {
        let mut cfg = quick(10);
        cfg.pretrain_steps = 11;
        assert!(cfg.validate().is_err());
        cfg.pretrain_steps = 0;
        cfg.batch_size = 0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn apdm_training_reduces_loss_and_samples() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let data: Vec<AffordanceExample> = (0..4)
            .map(|i| AffordanceExample {
                target: Array1::from_shape_fn(AFFORDANCE_DIM, |_| rng.sample(StandardNormal)),
                cloud: normal_matrix(&mut rng, 16, 3),
                text: text_embed(&format!("object {i}")),
            })
            .collect();
        let norm = ApdmModel::fit_normalizer(&data).unwrap();
        let mut model = ApdmModel::new(micro_apdm(), make_schedule(20, 1e-4, 0.02).unwrap(), norm, 1).unwrap();
        let cfg = TrainConfig {
            pretrain_steps: 0,
            ..quick(60)
        };
        let report = model.train(&data, &cfg, |_| {}).unwrap();
        assert!(report.eval_after < report.eval_before, "{} -> {}", report.eval_before, report.eval_after);
        let mut r1 = ChaCha8Rng::seed_from_u64(3);
        let mut r2 = ChaCha8Rng::seed_from_u64(3);
        let a = model.sample_vector(&data[0].cloud, &data[0].text, 2.5, &mut r1).unwrap();
        let b = model.sample_vector(&data[0].cloud, &data[0].text, 2.5, &mut r2).unwrap();
        assert_eq!(a.len(), AFFORDANCE_DIM);
        assert_eq!(a, b);
    }
}
