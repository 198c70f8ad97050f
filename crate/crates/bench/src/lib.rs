//! Fixtures shared by the benchmarks.

use hoi_core::affordance::{AffordanceRecord, LABEL_DIM};
use hoi_core::corpus::{generate_sample, Action, ObjectKind};
use hoi_core::diffusion::make_schedule;
use hoi_core::models::text_embed;
use hoi_core::motion::{FEATURE_DIM, OBJECT_DIM};
use hoi_core::{HoiConfig, HoiModel, HoiSample, ObjectState, Vec3};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_points(n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)))
        .collect()
}

/// A corpus clip of `len` frames.
pub fn clip(len: usize) -> HoiSample {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    generate_sample(Action::Carry, ObjectKind::Box, len, "bench".into(), &mut rng).expect("carry a box is feasible")
}

/// Both-wrist contact on a static object.
pub fn two_hand_record() -> AffordanceRecord {
    let mut labels = [false; LABEL_DIM];
    labels[LABEL_DIM - 2] = true;
    labels[LABEL_DIM - 1] = true;
    AffordanceRecord::new(labels, [Vec3::new(-0.2, 0.0, 0.0), Vec3::new(0.2, 0.0, 0.0)], ObjectState::Static)
        .expect("two labels")
}

/// An untrained toy model with identity normalization statistics.
pub fn toy_model(seed: u64) -> HoiModel {
    let clip = clip(32);
    let example = clip.hoi_example();
    let (h, o) = HoiModel::fit_normalizers(std::slice::from_ref(&example)).expect("non-empty");
    HoiModel::new(HoiConfig::toy(), make_schedule(1000, 1e-4, 0.02).expect("valid"), h, o, seed).expect("valid config")
}

/// A normalized noisy input batch of `batch` sequences of `len` frames.
pub fn noisy_inputs(batch: usize, len: usize, seed: u64) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h = Array2::from_shape_fn((batch * len, FEATURE_DIM), |_| rng.random_range(-1.0..1.0));
    let o = Array2::from_shape_fn((batch * len, OBJECT_DIM), |_| rng.random_range(-1.0..1.0));
    let text = text_embed("carry the box");
    let texts = Array2::from_shape_fn((batch, text.len()), |(_, c)| text[c]);
    (h, o, texts)
}
