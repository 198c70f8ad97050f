//! Linear noise schedules, forward noising, the x0-parameterized posterior
//! mean, and the ancestral sampling loop with a per-step mean hook.

use ndarray::{Array, ArrayD, Axis, Dimension, IxDyn, Zip};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const DEFAULT_BETA_START: f64 = 1e-4;
pub const DEFAULT_BETA_END: f64 = 0.02;
pub const DEFAULT_STEPS_HOI: usize = 1000;
pub const DEFAULT_STEPS_AFFORDANCE: usize = 500;
pub const DEFAULT_CFG_SCALE: f64 = 2.5;
pub const DEFAULT_COND_DROP: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
}

impl ScheduleConfig {
    pub fn linear(steps: usize) -> Self {
        Self {
            steps,
            beta_start: DEFAULT_BETA_START,
            beta_end: DEFAULT_BETA_END,
        }
    }

    pub fn build(&self) -> Result<NoiseSchedule> {
        make_schedule(self.steps, self.beta_start, self.beta_end)
    }
}

/// Per-step `β_t`, `ᾱ_t` and posterior variance `Σ_t`, indexed by `t ∈ 1..=T`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseSchedule {
    config: ScheduleConfig,
    beta: Vec<f64>,
    alpha_bar: Vec<f64>,
    sigma: Vec<f64>,
}

pub fn make_schedule(steps: usize, beta_start: f64, beta_end: f64) -> Result<NoiseSchedule> {
    if steps == 0 {
        return Err(Error::Config("schedule needs at least one step".into()));
    }
    if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
        return Err(Error::Config(format!(
            "need 0 < beta_start <= beta_end < 1, got ({beta_start}, {beta_end})"
        )));
    }
    let beta: Vec<f64> = (0..steps)
        .map(|i| {
            if steps == 1 {
                beta_start
            } else {
                beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
            }
        })
        .collect();
    let mut alpha_bar = Vec::with_capacity(steps);
    let mut acc = 1.0;
    for b in &beta {
        acc *= 1.0 - b;
        alpha_bar.push(acc);
    }
    let sigma = (0..steps)
        .map(|i| {
            let prev = if i == 0 { 1.0 } else { alpha_bar[i - 1] };
            (1.0 - prev) / (1.0 - alpha_bar[i]) * beta[i]
        })
        .collect();
    Ok(NoiseSchedule {
        config: ScheduleConfig {
            steps,
            beta_start,
            beta_end,
        },
        beta,
        alpha_bar,
        sigma,
    })
}

impl NoiseSchedule {
    pub fn config(&self) -> ScheduleConfig {
        self.config
    }

    pub fn steps(&self) -> usize {
        self.beta.len()
    }

    fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            return Err(Error::InvalidInput(format!(
                "diffusion step {t} outside 1..={}",
                self.steps()
            )));
        }
        Ok(())
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.beta[t - 1]
    }

    /// `ᾱ_t`, with `ᾱ_0 = 1`.
    pub fn alpha_bar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.alpha_bar[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigma[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.beta
    }

    pub fn alpha_bars(&self) -> &[f64] {
        &self.alpha_bar
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigma
    }

    /// Coefficients `(c_x0, c_xt)` of the posterior mean at step `t`.
    pub fn posterior_coefficients(&self, t: usize) -> (f64, f64) {
        if t == 1 {
            // ᾱ_0 = 1 makes the posterior collapse onto the prediction.
            return (1.0, 0.0);
        }
        let ab = self.alpha_bar(t);
        let ab_prev = self.alpha_bar(t - 1);
        let b = self.beta(t);
        let c0 = ab_prev.sqrt() * b / (1.0 - ab);
        let ct = (1.0 - b).sqrt() * (1.0 - ab_prev) / (1.0 - ab);
        (c0, ct)
    }
}

fn same_shape<D: Dimension>(a: &Array<f64, D>, b: &Array<f64, D>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

/// `x_t = √ᾱ_t·x0 + √(1−ᾱ_t)·noise`.
pub fn q_sample<D: Dimension>(
    x0: &Array<f64, D>,
    t: usize,
    noise: &Array<f64, D>,
    schedule: &NoiseSchedule,
) -> Result<Array<f64, D>> {
    schedule.check_step(t)?;
    same_shape(x0, noise, "q_sample noise")?;
    let ab = schedule.alpha_bar(t);
    let (a, b) = (ab.sqrt(), (1.0 - ab).sqrt());
    Ok(Zip::from(x0).and(noise).map_collect(|&x, &e| a * x + b * e))
}

/// Posterior mean of `x_{t−1}` given the clean prediction and `x_t`.
pub fn posterior_mean<D: Dimension>(
    x0_hat: &Array<f64, D>,
    x_t: &Array<f64, D>,
    t: usize,
    schedule: &NoiseSchedule,
) -> Result<Array<f64, D>> {
    schedule.check_step(t)?;
    same_shape(x0_hat, x_t, "posterior_mean")?;
    let (c0, ct) = schedule.posterior_coefficients(t);
    if ct == 0.0 {
        return Ok(x0_hat.mapv(|v| c0 * v));
    }
    Ok(Zip::from(x0_hat).and(x_t).map_collect(|&a, &b| c0 * a + ct * b))
}

/// Classifier-free mix `uncond + scale·(cond − uncond)`.
pub fn cfg_mix<D: Dimension>(uncond: &Array<f64, D>, cond: &Array<f64, D>, scale: f64) -> Array<f64, D> {
    Zip::from(uncond).and(cond).map_collect(|&u, &c| u + scale * (c - u))
}

/// Fills `out` with standard normals, one generator per leading-axis slice.
pub fn fill_normal<R: Rng>(out: &mut ArrayD<f64>, rngs: &mut [R]) {
    for (mut slot, rng) in out.axis_iter_mut(Axis(0)).zip(rngs.iter_mut()) {
        slot.iter_mut().for_each(|v| *v = rng.sample(StandardNormal));
    }
}

/// Runs `t = T..1`: denoise, form the posterior mean, hand it to `hook`, then
/// draw `x_{t−1} ~ N(μ, Σ_t)`. Axis 0 of `shape` is the batch; each batch
/// element draws from its own generator so results do not depend on batching.
pub fn sample_loop<R, F, H>(
    mut denoiser: F,
    shape: &[usize],
    schedule: &NoiseSchedule,
    mut hook: H,
    rngs: &mut [R],
) -> Result<ArrayD<f64>>
where
    R: Rng,
    F: FnMut(&ArrayD<f64>, usize) -> Result<ArrayD<f64>>,
    H: FnMut(ArrayD<f64>, usize) -> Result<ArrayD<f64>>,
{
    if shape.first() != Some(&rngs.len()) {
        return Err(Error::Shape(format!(
            "batch axis {:?} needs one generator per element, got {}",
            shape.first(),
            rngs.len()
        )));
    }
    let mut x = ArrayD::zeros(IxDyn(shape));
    fill_normal(&mut x, rngs);
    for t in (1..=schedule.steps()).rev() {
        let x0_hat = denoiser(&x, t)?;
        if x0_hat.shape() != x.shape() {
            return Err(Error::Model(format!(
                "denoiser returned {:?} for input {:?}",
                x0_hat.shape(),
                x.shape()
            )));
        }
        let mu = hook(posterior_mean(&x0_hat, &x, t, schedule)?, t)?;
        if mu.shape() != x.shape() {
            return Err(Error::Shape("correction hook changed the state shape".into()));
        }
        let var = schedule.sigma(t);
        if var > 0.0 {
            let mut noise = ArrayD::zeros(IxDyn(shape));
            fill_normal(&mut noise, rngs);
            let sd = var.sqrt();
            x = Zip::from(&mu).and(&noise).map_collect(|&m, &e| m + sd * e);
        } else {
            x = mu;
        }
    }
    Ok(x)
}

/// Identity hook for [`sample_loop`].
pub fn no_correction(mu: ArrayD<f64>, _t: usize) -> Result<ArrayD<f64>> {
    Ok(mu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array1};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rngs(seeds: &[u64]) -> Vec<ChaCha8Rng> {
        seeds.iter().map(|&s| ChaCha8Rng::seed_from_u64(s)).collect()
    }

    #[test]
    fn single_step_schedule() {
        let s = make_schedule(1, 0.3, 0.3).unwrap();
        assert_eq!(s.alpha_bar(1), 1.0 - 0.3);
        assert_eq!(s.sigma(1), 0.0);
    }

    #[test]
    fn default_schedule_shape_and_invariants() {
        let s = ScheduleConfig::linear(1000).build().unwrap();
        assert_eq!(s.betas().len(), 1000);
        assert_eq!(s.alpha_bars().len(), 1000);
        assert_eq!(s.sigmas().len(), 1000);
        assert!(s.alpha_bar(1000) < 1e-4);
        assert_eq!(s.sigma(1), 0.0);
        for t in 2..=1000 {
            assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            assert!(s.sigma(t) > 0.0);
            assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
        }
        assert_eq!(s.posterior_coefficients(1), (1.0, 0.0));
    }

    #[test]
    fn bad_ranges_rejected() {
        assert!(matches!(make_schedule(0, 1e-4, 0.02), Err(Error::Config(_))));
        assert!(matches!(make_schedule(10, 0.0, 0.02), Err(Error::Config(_))));
        assert!(matches!(make_schedule(10, 0.03, 0.02), Err(Error::Config(_))));
        assert!(matches!(make_schedule(10, 1e-4, 1.0), Err(Error::Config(_))));
    }

    #[test]
    fn q_sample_limits() {
        let s = ScheduleConfig::linear(1000).build().unwrap();
        let x0 = arr1(&[1.0, -2.0, 0.5]);
        let zero = Array1::zeros(3);
        let xt = q_sample(&x0, 10, &zero, &s).unwrap();
        assert_eq!(xt, x0.mapv(|v| s.alpha_bar(10).sqrt() * v));

        let noise = arr1(&[0.3, 0.1, -0.7]);
        let late = q_sample(&x0, 1000, &noise, &s).unwrap();
        let bound = s.alpha_bar(1000).sqrt() * x0.mapv(|v| v * v).sum().sqrt();
        assert!((late - &noise).mapv(f64::abs).fold(0.0, |a: f64, &b| a.max(b)) <= bound + 1e-12);

        assert!(q_sample(&x0, 0, &zero, &s).is_err());
        assert!(matches!(q_sample(&x0, 5, &Array1::zeros(2), &s), Err(Error::Shape(_))));
    }

    #[test]
    fn q_sample_variance_monte_carlo() {
        let s = ScheduleConfig::linear(1000).build().unwrap();
        let t = 300;
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let n = 100_000;
        let noise = Array1::from_shape_fn(n, |_| rng.sample::<f64, _>(StandardNormal));
        let xt = q_sample(&Array1::zeros(n), t, &noise, &s).unwrap();
        let mean = xt.sum() / n as f64;
        let var = xt.mapv(|v| (v - mean).powi(2)).sum() / (n - 1) as f64;
        let want = 1.0 - s.alpha_bar(t);
        assert!((var - want).abs() / want < 0.02, "{var} vs {want}");
    }

    #[test]
    fn posterior_mean_fixtures() {
        let s = ScheduleConfig::linear(50).build().unwrap();
        let x0 = arr1(&[0.4, -1.2]);
        let xt = arr1(&[2.0, 3.0]);
        assert_eq!(posterior_mean(&x0, &xt, 1, &s).unwrap(), x0);
        let z = Array1::zeros(2);
        assert_eq!(posterior_mean(&z, &z, 17, &s).unwrap(), z);
        assert!(posterior_mean(&x0, &xt, 51, &s).is_err());
    }

    #[test]
    fn cfg_mix_fixtures() {
        let u = arr1(&[0.0, 1.0]);
        let c = arr1(&[1.0, 3.0]);
        assert_eq!(cfg_mix(&u, &c, 0.0), u);
        assert_eq!(cfg_mix(&u, &c, 1.0), c);
        assert_eq!(cfg_mix(&arr1(&[0.0]), &arr1(&[1.0]), 2.5), arr1(&[2.5]));
    }

    #[test]
    fn constant_denoiser_returns_constant() {
        let s = ScheduleConfig::linear(100).build().unwrap();
        for seed in [1, 2, 3] {
            let out = sample_loop(
                |x: &ArrayD<f64>, _| Ok(ArrayD::from_elem(x.raw_dim(), 0.75)),
                &[2, 3],
                &s,
                no_correction,
                &mut rngs(&[seed, seed + 10]),
            )
            .unwrap();
            assert!(out.iter().all(|&v| v == 0.75));
        }
    }

    #[test]
    fn seeded_loop_is_reproducible() {
        let s = ScheduleConfig::linear(60).build().unwrap();
        let run = || {
            sample_loop(
                |x: &ArrayD<f64>, t| Ok(x.mapv(|v| 0.9 * v + t as f64 * 1e-3)),
                &[3, 4],
                &s,
                no_correction,
                &mut rngs(&[4, 5, 6]),
            )
            .unwrap()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn batching_does_not_change_per_element_results() {
        let s = ScheduleConfig::linear(40).build().unwrap();
        let den = |x: &ArrayD<f64>, _t: usize| Ok(x.mapv(|v| 0.5 * v));
        let both = sample_loop(den, &[2, 3], &s, no_correction, &mut rngs(&[8, 9])).unwrap();
        let second = sample_loop(den, &[1, 3], &s, no_correction, &mut rngs(&[9])).unwrap();
        assert_eq!(both.index_axis(Axis(0), 1), second.index_axis(Axis(0), 0));
    }

    #[test]
    fn last_step_perturbation_passes_through() {
        let s = ScheduleConfig::linear(30).build().unwrap();
        let delta = 0.125;
        let out = sample_loop(
            |x: &ArrayD<f64>, _| Ok(ArrayD::from_elem(x.raw_dim(), -1.0)),
            &[1, 5],
            &s,
            |mu: ArrayD<f64>, t| Ok(if t == 1 { mu + delta } else { mu }),
            &mut rngs(&[3]),
        )
        .unwrap();
        assert!(out.iter().all(|&v| v == -1.0 + delta));
    }

    #[test]
    fn perfect_denoiser_recovers_target() {
        let s = ScheduleConfig::linear(80).build().unwrap();
        let target = ArrayD::from_shape_fn(IxDyn(&[1, 6]), |i| i[1] as f64 * 0.3 - 1.0);
        let out = sample_loop(|_x: &ArrayD<f64>, _| Ok(target.clone()), &[1, 6], &s, no_correction, &mut rngs(&[0]))
            .unwrap();
        assert_eq!(out, target);
    }

    #[test]
    fn denoiser_shape_error_aborts() {
        let s = ScheduleConfig::linear(5).build().unwrap();
        let res = sample_loop(
            |_x: &ArrayD<f64>, _| Ok(ArrayD::zeros(IxDyn(&[1, 2]))),
            &[1, 3],
            &s,
            no_correction,
            &mut rngs(&[0]),
        );
        assert!(matches!(res, Err(Error::Model(_))));
    }
}
