use ndarray::{Array1, Array2, ArrayView1, Axis};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Dropout, Linear, ParamStore, Scalar, Tape, Var};

/// Sinusoidal features of integer positions: `[sin(p·ω_i) | cos(p·ω_i)]`.
pub fn sinusoidal<S: Scalar>(positions: &[usize], dim: usize) -> Array2<S> {
    let half = dim / 2;
    let mut out = Array2::zeros((positions.len(), dim));
    for (r, &p) in positions.iter().enumerate() {
        for i in 0..half {
            let freq = (-(10000f64.ln()) * i as f64 / half as f64).exp();
            let a = p as f64 * freq;
            out[[r, i]] = S::c(a.sin());
            out[[r, half + i]] = S::c(a.cos());
        }
    }
    out
}

/// Sinusoidal position table repeated for every sample of a batch.
pub fn tiled_positions<S: Scalar>(batch: usize, tokens: usize, dim: usize) -> Array2<S> {
    let table = sinusoidal::<S>(&(0..tokens).collect::<Vec<_>>(), dim);
    let views: Vec<_> = (0..batch).map(|_| table.view()).collect();
    ndarray::concatenate(Axis(0), &views).expect("equal widths")
}

/// Diffusion step embedding: sinusoid followed by a two-layer SiLU MLP.
#[derive(Clone, Debug)]
pub struct TimestepEmbedding {
    pub fc1: Linear,
    pub fc2: Linear,
    pub dim: usize,
}

impl TimestepEmbedding {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), dim, dim, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), dim, dim, true, rng),
            dim,
        }
    }

    pub fn forward<'t, 'p, S: Scalar>(&self, tape: &'t Tape<'p, S>, steps: &[usize]) -> Var<'t, 'p, S> {
        let x = tape.constant(sinusoidal(steps, self.dim));
        let h = self.fc1.forward(tape, &x).silu();
        self.fc2.forward(tape, &h)
    }
}

/// Prefixes each sample's `len` frame rows with its condition row.
pub fn prepend_tokens<'t, 'p, S: Scalar>(
    cond: &Var<'t, 'p, S>,
    frames: &Var<'t, 'p, S>,
    batch: usize,
    len: usize,
) -> Var<'t, 'p, S> {
    let mut parts = Vec::with_capacity(2 * batch);
    for b in 0..batch {
        parts.push(cond.slice_rows(b, b + 1));
        parts.push(frames.slice_rows(b * len, (b + 1) * len));
    }
    Var::concat_rows(&parts)
}

/// Removes the leading `skip` rows of each sample block of `block` rows.
pub fn strip_tokens<'t, 'p, S: Scalar>(x: &Var<'t, 'p, S>, batch: usize, block: usize, skip: usize) -> Var<'t, 'p, S> {
    if batch == 1 {
        return x.slice_rows(skip, block);
    }
    let parts: Vec<_> = (0..batch)
        .map(|b| x.slice_rows(b * block + skip, (b + 1) * block))
        .collect();
    Var::concat_rows(&parts)
}

/// Adds the positional table and applies dropout.
pub fn embed_positions<'t, 'p, S: Scalar>(
    tape: &'t Tape<'p, S>,
    x: Var<'t, 'p, S>,
    batch: usize,
    tokens: usize,
    dropout: &mut Dropout,
) -> Var<'t, 'p, S> {
    let (_, d) = x.shape();
    let pe = tape.constant(tiled_positions(batch, tokens, d));
    dropout.apply(x.add(&pe))
}

/// Per-channel affine normalization fitted on a corpus.
#[derive(Clone, Debug, PartialEq)]
pub struct Normalizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

/// Channels with less spread than this are left unscaled.
pub const MIN_STD: f64 = 1e-4;

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Self {
            mean: Array1::zeros(dim),
            std: Array1::ones(dim),
        }
    }

    pub fn fit<'a>(rows: impl IntoIterator<Item = ArrayView1<'a, f64>>) -> Result<Self> {
        let mut count = 0usize;
        let mut sum: Option<Array1<f64>> = None;
        let mut sq: Option<Array1<f64>> = None;
        for r in rows {
            count += 1;
            match (&mut sum, &mut sq) {
                (Some(s), Some(q)) => {
                    *s += &r;
                    *q += &r.mapv(|v| v * v);
                }
                _ => {
                    sum = Some(r.to_owned());
                    sq = Some(r.mapv(|v| v * v));
                }
            }
        }
        let (Some(sum), Some(sq)) = (sum, sq) else {
            return Err(Error::InvalidInput("cannot fit normalization on no data".into()));
        };
        let n = count as f64;
        let mean = sum / n;
        let var = sq / n - mean.mapv(|m| m * m);
        let std = var.mapv(|v| {
            let s = v.max(0.0).sqrt();
            if s < MIN_STD {
                1.0
            } else {
                s
            }
        });
        // Stored at f32 precision so checkpoints restore them exactly.
        Ok(Self {
            mean: mean.mapv(|v| v as f32 as f64),
            std: std.mapv(|v| v as f32 as f64),
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn normalize(&self, x: &Array2<f64>) -> Array2<f64> {
        (x - &self.mean) / &self.std
    }

    pub fn denormalize(&self, z: &Array2<f64>) -> Array2<f64> {
        z * &self.std + &self.mean
    }
}

pub(crate) fn to_scalar<S: Scalar>(x: &Array2<f64>) -> Array2<S> {
    x.mapv(S::c)
}

pub(crate) fn to_f64<S: Scalar>(x: &Array2<S>) -> Array2<f64> {
    x.mapv(|v| v.to_f64().unwrap())
}

pub(crate) fn check_width(what: &str, got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::Model(format!("{what}: expected width {want}, got {got}")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn normalizer_round_trip_and_constant_channels() {
        let data = array![[1.0, 5.0], [3.0, 5.0], [5.0, 5.0]];
        let n = Normalizer::fit(data.outer_iter()).unwrap();
        assert_eq!(n.mean, array![3.0, 5.0]);
        assert_eq!(n.std[1], 1.0);
        let z = n.normalize(&data);
        // Statistics are kept at f32 precision.
        assert!((z.column(0).mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-6);
        let back = n.denormalize(&z);
        assert!((back - &data).iter().all(|d| d.abs() < 1e-12));
    }

    #[test]
    fn sinusoid_at_zero() {
        let s = sinusoidal::<f64>(&[0], 6);
        assert_eq!(s.row(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0, 1.0, 1.0]);
    }
}
