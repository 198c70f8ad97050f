//! Dual-branch human/object denoiser with a cross-branch communication block.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::common::{embed_positions, prepend_tokens, strip_tokens, TimestepEmbedding};
use super::text::TEXT_DIM;
use crate::error::{Error, Result};
use crate::motion::{FEATURE_DIM, OBJECT_DIM};
use crate::nn::{attend, Dropout, FeedForward, LayerNorm, Linear, ParamStore, Scalar, Tape, TransformerLayer, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HoiConfig {
    pub latent_dim: usize,
    pub heads: usize,
    pub ff_dim: usize,
    pub human_layers: usize,
    pub object_layers: usize,
    /// The exchange happens after this many human layers and after the
    /// last object layer.
    pub cm_human_layer: usize,
    pub dropout: f64,
    pub use_cm: bool,
}

impl Default for HoiConfig {
    fn default() -> Self {
        Self {
            latent_dim: 512,
            heads: 4,
            ff_dim: 1024,
            human_layers: 8,
            object_layers: 4,
            cm_human_layer: 4,
            dropout: 0.1,
            use_cm: true,
        }
    }
}

impl HoiConfig {
    /// Small widths and depths that train on one CPU core in minutes.
    pub fn toy() -> Self {
        Self {
            latent_dim: 32,
            heads: 4,
            ff_dim: 64,
            human_layers: 2,
            object_layers: 1,
            cm_human_layer: 1,
            dropout: 0.1,
            use_cm: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.latent_dim % self.heads != 0 || self.latent_dim % 2 != 0 {
            return Err(Error::Config(format!(
                "latent width {} must be even and divisible by {} heads",
                self.latent_dim, self.heads
            )));
        }
        if self.human_layers == 0 || self.object_layers == 0 {
            return Err(Error::Config("both branches need at least one layer".into()));
        }
        if self.cm_human_layer == 0 || self.cm_human_layer > self.human_layers {
            return Err(Error::Config(format!(
                "communication layer {} outside 1..={}",
                self.cm_human_layer, self.human_layers
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// One direction of the communication block: `MLP(Attn(f_q·W_Q, f_kv·W_K, f_kv·W_V))`.
#[derive(Clone, Debug)]
pub struct CrossAttention {
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub mlp: FeedForward,
    pub heads: usize,
}

impl CrossAttention {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            wq: Linear::new(store, &format!("{name}.wq"), dim, dim, false, rng),
            wk: Linear::new(store, &format!("{name}.wk"), dim, dim, false, rng),
            wv: Linear::new(store, &format!("{name}.wv"), dim, dim, true, rng),
            mlp: FeedForward::new(store, &format!("{name}.mlp"), dim, hidden, rng),
            heads,
        }
    }

    pub fn forward<'t, 'p, S: Scalar>(
        &self,
        tape: &'t Tape<'p, S>,
        f_q: &Var<'t, 'p, S>,
        f_kv: &Var<'t, 'p, S>,
        batch: usize,
        dropout: &mut Dropout,
    ) -> Var<'t, 'p, S> {
        let q = self.wq.forward(tape, f_q);
        let k = self.wk.forward(tape, f_kv);
        let v = self.wv.forward(tape, f_kv);
        let a = attend(&q, &k, &v, batch, self.heads);
        self.mlp.forward(tape, &a, dropout)
    }

    /// Per-head attention weights for a single sample (`nq × nk` each).
    pub fn weights<S: Scalar>(&self, store: &ParamStore<S>, f_q: &Array2<S>, f_kv: &Array2<S>) -> Vec<Array2<S>> {
        let tape = Tape::new(store);
        let q = self.wq.forward(&tape, &tape.constant(f_q.clone()));
        let k = self.wk.forward(&tape, &tape.constant(f_kv.clone()));
        let (_, d) = q.shape();
        let dh = d / self.heads;
        (0..self.heads)
            .map(|h| {
                q.slice_cols(h * dh, (h + 1) * dh)
                    .matmul_t(&k.slice_cols(h * dh, (h + 1) * dh))
                    .scale(1.0 / (dh as f64).sqrt())
                    .softmax()
                    .value()
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct CommunicationModule {
    pub human_from_object: CrossAttention,
    pub object_from_human: CrossAttention,
}

impl CommunicationModule {
    /// Returns the two feature updates `(f̃_h, f̃_o)`.
    pub fn forward<'t, 'p, S: Scalar>(
        &self,
        tape: &'t Tape<'p, S>,
        f_h: &Var<'t, 'p, S>,
        f_o: &Var<'t, 'p, S>,
        batch: usize,
        dropout: &mut Dropout,
    ) -> Result<(Var<'t, 'p, S>, Var<'t, 'p, S>)> {
        let (dh, wo) = (f_h.shape().1, f_o.shape().1);
        if dh != wo || dh != self.human_from_object.wq.in_dim {
            return Err(Error::Model(format!(
                "communication widths differ: human {dh}, object {wo}, module {}",
                self.human_from_object.wq.in_dim
            )));
        }
        let h = self.human_from_object.forward(tape, f_h, f_o, batch, dropout);
        let o = self.object_from_human.forward(tape, f_o, f_h, batch, dropout);
        Ok((h, o))
    }
}

/// Both branches' clean-motion predictions (frame rows only).
pub struct HoiPrediction<'t, 'p, S: Scalar> {
    pub human: Var<'t, 'p, S>,
    pub object: Var<'t, 'p, S>,
}

#[derive(Clone, Debug)]
pub struct HoiDenoiser {
    pub config: HoiConfig,
    time_h: TimestepEmbedding,
    time_o: TimestepEmbedding,
    text_h: Linear,
    text_o: Linear,
    in_h: Linear,
    in_o: Linear,
    layers_h: Vec<TransformerLayer>,
    layers_o: Vec<TransformerLayer>,
    pub cm: CommunicationModule,
    norm_h: LayerNorm,
    norm_o: LayerNorm,
    out_h: Linear,
    out_o: Linear,
}

impl HoiDenoiser {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, config: HoiConfig, rng: &mut ChaCha8Rng) -> Result<Self> {
        config.validate()?;
        let d = config.latent_dim;
        let (heads, ff) = (config.heads, config.ff_dim);
        let layers = |store: &mut ParamStore<S>, rng: &mut ChaCha8Rng, prefix: &str, n: usize| {
            (0..n)
                .map(|i| TransformerLayer::new(store, &format!("{prefix}.layer{i}"), d, heads, ff, rng))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            time_h: TimestepEmbedding::new(store, "human.time", d, rng),
            time_o: TimestepEmbedding::new(store, "object.time", d, rng),
            text_h: Linear::new(store, "human.text", TEXT_DIM, d, true, rng),
            text_o: Linear::new(store, "object.text", TEXT_DIM, d, true, rng),
            in_h: Linear::new(store, "human.input", FEATURE_DIM, d, true, rng),
            in_o: Linear::new(store, "object.input", OBJECT_DIM, d, true, rng),
            layers_h: layers(store, rng, "human", config.human_layers),
            layers_o: layers(store, rng, "object", config.object_layers),
            cm: CommunicationModule {
                human_from_object: CrossAttention::new(store, "cm.human", d, heads, ff, rng),
                object_from_human: CrossAttention::new(store, "cm.object", d, heads, ff, rng),
            },
            norm_h: LayerNorm::new(store, "human.norm", d),
            norm_o: LayerNorm::new(store, "object.norm", d),
            out_h: Linear::new(store, "human.output", d, FEATURE_DIM, true, rng),
            out_o: Linear::new(store, "object.output", d, OBJECT_DIM, true, rng),
            config,
        })
    }

    /// Runs both branches on `batch` stacked sequences.
    ///
    /// `x_h` is `batch·L × 263`, `x_o` is `batch·L × 6`, `text` is `batch × 512`.
    /// `use_cm = false` severs the communication pathway.
    #[allow(clippy::too_many_arguments)]
    pub fn forward<'t, 'p, S: Scalar>(
        &self,
        tape: &'t Tape<'p, S>,
        x_h: &Var<'t, 'p, S>,
        x_o: &Var<'t, 'p, S>,
        t: &[usize],
        text: &Var<'t, 'p, S>,
        use_cm: bool,
        dropout: &mut Dropout,
    ) -> Result<HoiPrediction<'t, 'p, S>> {
        let batch = t.len();
        let (rh, wh) = x_h.shape();
        let (ro, wo) = x_o.shape();
        super::common::check_width("human input", wh, FEATURE_DIM)?;
        super::common::check_width("object input", wo, OBJECT_DIM)?;
        super::common::check_width("text input", text.shape().1, TEXT_DIM)?;
        if batch == 0 || rh % batch != 0 || rh != ro || text.shape().0 != batch {
            return Err(Error::Model(format!(
                "branch lengths disagree: {rh} human rows, {ro} object rows, {batch} steps"
            )));
        }
        let len = rh / batch;
        let tokens = len + 1;

        let cond_h = self.time_h.forward(tape, t).add(&self.text_h.forward(tape, text));
        let cond_o = self.time_o.forward(tape, t).add(&self.text_o.forward(tape, text));
        let h = prepend_tokens(&cond_h, &self.in_h.forward(tape, x_h), batch, len);
        let o = prepend_tokens(&cond_o, &self.in_o.forward(tape, x_o), batch, len);
        let mut h = embed_positions(tape, h, batch, tokens, dropout);
        let mut o = embed_positions(tape, o, batch, tokens, dropout);

        for layer in &self.layers_h[..self.config.cm_human_layer] {
            h = layer.forward(tape, &h, batch, dropout);
        }
        for layer in &self.layers_o {
            o = layer.forward(tape, &o, batch, dropout);
        }
        if use_cm {
            let (dh, d_o) = self.cm.forward(tape, &h, &o, batch, dropout)?;
            h = h.add(&dh);
            o = o.add(&d_o);
        }
        for layer in &self.layers_h[self.config.cm_human_layer..] {
            h = layer.forward(tape, &h, batch, dropout);
        }

        let human = self.out_h.forward(tape, &self.norm_h.forward(tape, &h));
        let object = self.out_o.forward(tape, &self.norm_o.forward(tape, &o));
        Ok(HoiPrediction {
            human: strip_tokens(&human, batch, tokens, 1),
            object: strip_tokens(&object, batch, tokens, 1),
        })
    }
}
