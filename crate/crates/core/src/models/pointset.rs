use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use crate::geometry::PointCloud;
use crate::nn::{Linear, ParamStore, Scalar, Tape, Var};

/// Permutation-invariant set encoder: a shared per-point MLP followed by a
/// coordinate-wise max over points.
#[derive(Clone, Debug)]
pub struct PointSetEncoder {
    pub fc1: Linear,
    pub fc2: Linear,
    pub out_dim: usize,
}

impl PointSetEncoder {
    pub fn new<S: Scalar>(store: &mut ParamStore<S>, name: &str, hidden: usize, out_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            fc1: Linear::new(store, &format!("{name}.fc1"), 3, hidden, true, rng),
            fc2: Linear::new(store, &format!("{name}.fc2"), hidden, out_dim, true, rng),
            out_dim,
        }
    }

    /// Encodes `batch` clouds stacked as `batch·n × 3` rows into `batch × out_dim`.
    pub fn forward<'t, 'p, S: Scalar>(&self, tape: &'t Tape<'p, S>, points: &Var<'t, 'p, S>, batch: usize) -> Var<'t, 'p, S> {
        let h = self.fc1.forward(tape, points).gelu();
        let h = self.fc2.forward(tape, &h);
        let (rows, _) = h.shape();
        let n = rows / batch;
        if batch == 1 {
            return h.max_rows();
        }
        let pooled: Vec<_> = (0..batch).map(|b| h.slice_rows(b * n, (b + 1) * n).max_rows()).collect();
        Var::concat_rows(&pooled)
    }

    /// Embedding of a single cloud.
    pub fn encode<S: Scalar>(&self, store: &ParamStore<S>, cloud: &PointCloud) -> Vec<f64> {
        let tape = Tape::new(store);
        let x = tape.constant(cloud_matrix(cloud));
        self.forward(&tape, &x, 1)
            .value()
            .iter()
            .map(|v| v.to_f64().unwrap())
            .collect()
    }
}

pub fn cloud_matrix<S: Scalar>(cloud: &PointCloud) -> Array2<S> {
    let pts = cloud.points();
    Array2::from_shape_fn((pts.len(), 3), |(r, c)| S::c(pts[r][c]))
}
