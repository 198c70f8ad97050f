use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::{ParamId, ParamStore, Scalar, Tape, Var};

/// Inverted dropout; a no-op without an RNG (evaluation mode).
pub struct Dropout {
    p: f64,
    rng: Option<ChaCha8Rng>,
}

impl Dropout {
    pub fn train(p: f64, rng: ChaCha8Rng) -> Self {
        Self { p, rng: Some(rng) }
    }

    pub fn eval() -> Self {
        Self { p: 0.0, rng: None }
    }

    pub fn is_training(&self) -> bool {
        self.rng.is_some()
    }

    pub fn apply<'t, 'p, S: Scalar>(&mut self, x: Var<'t, 'p, S>) -> Var<'t, 'p, S> {
        let Some(rng) = self.rng.as_mut() else { return x };
        if self.p <= 0.0 {
            return x;
        }
        let keep = 1.0 - self.p;
        let scale = S::c(1.0 / keep);
        let (r, c) = x.shape();
        let mask = Array2::from_shape_fn((r, c), |_| if rng.random::<f64>() < keep { scale } else { S::zero() });
        x.mul_const(mask)
    }

    /// Access to the RNG for other stochastic training decisions.
    pub fn rng(&mut self) -> Option<&mut ChaCha8Rng> {
        self.rng.as_mut()
    }
}

fn uniform<S: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, bound: f64) -> Array2<S> {
    Array2::from_shape_fn((rows, cols), |_| S::c(rng.random_range(-bound..bound)))
}

#[derive(Clone, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        bias: bool,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), uniform(rng, in_dim, out_dim, bound));
        let bias = bias.then(|| store.add(format!("{name}.bias"), uniform(rng, 1, out_dim, bound)));
        Self {
            weight,
            bias,
            in_dim,
            out_dim,
        }
    }

    pub fn forward<'t, 'p, S: Scalar>(&self, tape: &'t Tape<'p, S>, x: &Var<'t, 'p, S>) -> Var<'t, 'p, S> {
        let y = x.matmul(&tape.param(self.weight));
        match self.bias {
            Some(b) => y.add_row(&tape.param(b)),
            None => y,
        }
    }
}

#[derive(Clone, Debug)]
pub struct LayerNorm {
    pub gain: ParamId,
    pub bias: ParamId,
}

impl LayerNorm {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize) -> Self {
        Self {
            gain: store.add(format!("{name}.gain"), Array2::from_elem((1, dim), S::one())),
            bias: store.add(format!("{name}.bias"), Array2::zeros((1, dim))),
        }
    }

    pub fn forward<'t, 'p, S: Scalar>(&self, tape: &'t Tape<'p, S>, x: &Var<'t, 'p, S>) -> Var<'t, 'p, S> {
        x.layer_norm(&tape.param(self.gain), &tape.param(self.bias))
    }
}

/// Multi-head scaled dot-product attention over a batch of token blocks.
///
/// Inputs stack `batch` samples vertically: queries are `batch·nq × d`,
/// keys/values `batch·nk × d`. Samples never attend to each other.
#[derive(Clone, Debug)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub heads: usize,
}

impl MultiHeadAttention {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize, heads: usize, rng: &mut ChaCha8Rng) -> Self {
        assert!(heads > 0 && dim % heads == 0, "model width must divide into heads");
        Self {
            q: Linear::new(store, &format!("{name}.q"), dim, dim, true, rng),
            k: Linear::new(store, &format!("{name}.k"), dim, dim, true, rng),
            v: Linear::new(store, &format!("{name}.v"), dim, dim, true, rng),
            out: Linear::new(store, &format!("{name}.out"), dim, dim, true, rng),
            heads,
        }
    }

    pub fn forward<'t, 'p, S: Scalar>(
        &self,
        tape: &'t Tape<'p, S>,
        xq: &Var<'t, 'p, S>,
        xkv: &Var<'t, 'p, S>,
        batch: usize,
    ) -> Var<'t, 'p, S> {
        let q = self.q.forward(tape, xq);
        let k = self.k.forward(tape, xkv);
        let v = self.v.forward(tape, xkv);
        let mixed = attend(&q, &k, &v, batch, self.heads);
        self.out.forward(tape, &mixed)
    }
}

/// Softmax attention on already projected queries, keys and values.
pub fn attend<'t, 'p, S: Scalar>(
    q: &Var<'t, 'p, S>,
    k: &Var<'t, 'p, S>,
    v: &Var<'t, 'p, S>,
    batch: usize,
    heads: usize,
) -> Var<'t, 'p, S> {
    q.attention(k, v, batch, heads)
}

#[derive(Clone, Debug)]
pub struct FeedForward {
    pub up: Linear,
    pub down: Linear,
}

impl FeedForward {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, dim: usize, hidden: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            up: Linear::new(store, &format!("{name}.up"), dim, hidden, true, rng),
            down: Linear::new(store, &format!("{name}.down"), hidden, dim, true, rng),
        }
    }

    pub fn forward<'t, 'p, S: Scalar>(
        &self,
        tape: &'t Tape<'p, S>,
        x: &Var<'t, 'p, S>,
        dropout: &mut Dropout,
    ) -> Var<'t, 'p, S> {
        let h = dropout.apply(self.up.forward(tape, x).gelu());
        self.down.forward(tape, &h)
    }
}

/// Pre-norm transformer encoder layer.
#[derive(Clone, Debug)]
pub struct TransformerLayer {
    pub norm1: LayerNorm,
    pub attn: MultiHeadAttention,
    pub norm2: LayerNorm,
    pub ff: FeedForward,
}

impl TransformerLayer {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        dim: usize,
        heads: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        Self {
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), dim),
            attn: MultiHeadAttention::new(store, &format!("{name}.attn"), dim, heads, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), dim),
            ff: FeedForward::new(store, &format!("{name}.ff"), dim, hidden, rng),
        }
    }

    pub fn forward<'t, 'p, S: Scalar>(
        &self,
        tape: &'t Tape<'p, S>,
        x: &Var<'t, 'p, S>,
        batch: usize,
        dropout: &mut Dropout,
    ) -> Var<'t, 'p, S> {
        let h = self.norm1.forward(tape, x);
        let a = dropout.apply(self.attn.forward(tape, &h, &h, batch));
        let x = x.add(&a);
        let h = self.norm2.forward(tape, &x);
        let f = self.ff.forward(tape, &h, dropout);
        let f = dropout.apply(f);
        x.add(&f)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn attention_keeps_samples_separate() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f64>::new();
        let layer = TransformerLayer::new(&mut store, "l", 8, 2, 16, &mut rng);
        let a = Array2::from_shape_fn((3, 8), |_| rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_fn((3, 8), |_| rng.random_range(-1.0..1.0));
        let both = ndarray::concatenate(ndarray::Axis(0), &[a.view(), b.view()]).unwrap();

        let tape = Tape::new(&store);
        let joint = layer.forward(&tape, &tape.constant(both), 2, &mut Dropout::eval()).value();
        let alone = layer.forward(&tape, &tape.constant(a), 1, &mut Dropout::eval()).value();
        let diff = (&joint.slice(ndarray::s![0..3, ..]) - &alone).mapv(f64::abs);
        assert!(diff.iter().all(|d| *d < 1e-12));
    }

    #[test]
    fn eval_dropout_is_identity() {
        let store = ParamStore::<f64>::new();
        let tape = Tape::new(&store);
        let x = tape.constant(Array2::from_elem((2, 2), 1.5));
        let y = Dropout::eval().apply(x);
        assert_eq!(y.value(), Array2::from_elem((2, 2), 1.5));
    }

    #[test]
    fn train_dropout_preserves_mean() {
        let store = ParamStore::<f64>::new();
        let tape = Tape::new(&store);
        let x = tape.constant(Array2::from_elem((200, 200), 1.0));
        let mut d = Dropout::train(0.1, ChaCha8Rng::seed_from_u64(0));
        let y = d.apply(x).value();
        let mean = y.mean().unwrap();
        assert!((mean - 1.0).abs() < 0.01, "{mean}");
        let dropped = y.iter().filter(|v| **v == 0.0).count() as f64 / 40000.0;
        assert!((dropped - 0.1).abs() < 0.01);
    }
}
