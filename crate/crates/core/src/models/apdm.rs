//! Affordance denoiser over the 15-d `(labels | points | state)` vector.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::common::{check_width, sinusoidal, TimestepEmbedding};
use super::pointset::PointSetEncoder;
use super::text::TEXT_DIM;
use crate::affordance::{AFFORDANCE_DIM, LABEL_DIM, POINTS_DIM};
use crate::error::{Error, Result};
use crate::nn::{Dropout, LayerNorm, Linear, ParamId, ParamStore, Scalar, Tape, TransformerLayer, Var};

/// Tokens per sample: step, text, cloud, then labels, points and state.
const TOKENS: usize = 6;
const FIRST_OUTPUT_TOKEN: usize = 3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApdmConfig {
    pub latent_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub layers: usize,
    pub dropout: f64,
    pub cloud_hidden: usize,
    pub cloud_dim: usize,
}

impl Default for ApdmConfig {
    fn default() -> Self {
        Self {
            latent_dim: 512,
            heads: 4,
            ff_dim: 1024,
            layers: 8,
            dropout: 0.1,
            cloud_hidden: 128,
            cloud_dim: 512,
        }
    }
}

impl ApdmConfig {
    pub fn toy() -> Self {
        Self {
            latent_dim: 32,
            heads: 4,
            ff_dim: 64,
            layers: 2,
            dropout: 0.1,
            cloud_hidden: 32,
            cloud_dim: 32,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.latent_dim % self.heads != 0 || self.latent_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "latent width {} must be even and divisible by {} heads",
                self.latent_dim, self.heads
            )));
        }
        if self.layers == 0 || self.cloud_dim == 0 || self.cloud_hidden == 0 {
            return Err(Error::Config("affordance model sizes must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AffordanceDenoiser {
    pub config: ApdmConfig,
    pub encoder: PointSetEncoder,
    time: TimestepEmbedding,
    text: Linear,
    cloud: Linear,
    in_labels: Linear,
    in_points: Linear,
    in_state: Linear,
    token_type: ParamId,
    layers: Vec<TransformerLayer>,
    norm: LayerNorm,
    out_labels: Linear,
    out_points: Linear,
    out_state: Linear,
}

impl AffordanceDenoiser {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, config: ApdmConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let state_dim = AFFORDANCE_DIM - LABEL_DIM - POINTS_DIM;
        let token_type = store.add("affordance.token_type", sinusoidal::<S>(&(0..TOKENS).collect::<Vec<_>>(), d));
        Ok(Self {
            encoder: PointSetEncoder::new(store, "affordance.cloud_encoder", config.cloud_hidden, config.cloud_dim, rng),
            time: TimestepEmbedding::new(store, "affordance.time", d, rng),
            text: Linear::new(store, "affordance.text", TEXT_DIM, d, true, rng),
            cloud: Linear::new(store, "affordance.cloud", config.cloud_dim, d, true, rng),
            in_labels: Linear::new(store, "affordance.in_labels", LABEL_DIM, d, true, rng),
            in_points: Linear::new(store, "affordance.in_points", POINTS_DIM, d, true, rng),
            in_state: Linear::new(store, "affordance.in_state", state_dim, d, true, rng),
            token_type,
            layers: (0..config.layers)
                .map(|i| TransformerLayer::new(store, &format!("affordance.layer{i}"), d, config.heads, config.ff_dim, rng))
                .collect(),
            norm: LayerNorm::new(store, "affordance.norm", d),
            out_labels: Linear::new(store, "affordance.out_labels", d, LABEL_DIM, true, rng),
            out_points: Linear::new(store, "affordance.out_points", d, POINTS_DIM, true, rng),
            out_state: Linear::new(store, "affordance.out_state", d, state_dim, true, rng),
            config,
        })
    }

    /// Predicts clean affordance vectors.
    ///
    /// `y` is `batch × 15`; `cloud_emb` is `batch × cloud_dim` (see
    /// [`PointSetEncoder::forward`]); `text` is `batch × 512`.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<'t, 'p, S: Scalar>(
        &self,
        tape: &'t Tape<'p, S>,
        y: &Var<'t, 'p, S>,
        n: &[usize],
        cloud_emb: &Var<'t, 'p, S>,
        text: &Var<'t, 'p, S>,
        dropout: &mut Dropout,
    ) -> Result<Var<'t, 'p, S>> {
        let batch = n.len();
        let (rows, width) = y.shape();
        check_width("affordance input", width, AFFORDANCE_DIM)?;
        check_width("cloud embedding", cloud_emb.shape().1, self.config.cloud_dim)?;
        check_width("text input", text.shape().1, TEXT_DIM)?;
        if rows != batch || cloud_emb.shape().0 != batch || text.shape().0 != batch || batch == 0 {
            return Err(Error::Model(format!("affordance batch mismatch: {rows} rows for {batch} steps")));
        }

        let kinds = [
            self.time.forward(tape, n),
            self.text.forward(tape, text),
            self.cloud.forward(tape, cloud_emb),
            self.in_labels.forward(tape, &y.slice_cols(0, LABEL_DIM)),
            self.in_points.forward(tape, &y.slice_cols(LABEL_DIM, LABEL_DIM + POINTS_DIM)),
            self.in_state.forward(tape, &y.slice_cols(LABEL_DIM + POINTS_DIM, AFFORDANCE_DIM)),
        ];
        let types = tape.param(self.token_type);
        let mut rows_out = Vec::with_capacity(batch * TOKENS);
        for b in 0..batch {
            for k in &kinds {
                rows_out.push(k.slice_rows(b, b + 1));
            }
        }
        let seq = Var::concat_rows(&rows_out);
        let tiled = Var::concat_rows(&vec![types; batch]);
        let mut h = dropout.apply(seq.add(&tiled));
        for layer in &self.layers {
            h = layer.forward(tape, &h, batch, dropout);
        }
        let h = self.norm.forward(tape, &h);

        let pick = |offset: usize| {
            let parts: Vec<_> = (0..batch)
                .map(|b| h.slice_rows(b * TOKENS + offset, b * TOKENS + offset + 1))
                .collect();
            if batch == 1 {
                parts[0]
            } else {
                Var::concat_rows(&parts)
            }
        };
        let labels = self.out_labels.forward(tape, &pick(FIRST_OUTPUT_TOKEN));
        let points = self.out_points.forward(tape, &pick(FIRST_OUTPUT_TOKEN + 1));
        let state = self.out_state.forward(tape, &pick(FIRST_OUTPUT_TOKEN + 2));
        Ok(Var::concat_cols(&[labels, points, state]))
    }

    /// Encodes `batch` clouds of equal size, stacked row-wise.
    pub fn encode_clouds<'t, 'p, S: Scalar>(
        &self,
        tape: &'t Tape<'p, S>,
        stacked: Array2<S>,
        batch: usize,
    ) -> Var<'t, 'p, S> {
        let x = tape.constant(stacked);
        self.encoder.forward(tape, &x, batch)
    }
}
