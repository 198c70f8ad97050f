//! Reverse-mode automatic differentiation over row-major matrices.
//!
//! A [`Tape`] records every operation applied to [`Var`] handles. Calling
//! [`Tape::backward`] on a `1×1` result walks the record in reverse and
//! returns the gradient of every parameter that took part.

use std::cell::RefCell;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis, Zip};

use super::{ParamId, ParamStore, Scalar};

const LN_EPS: f64 = 1e-5;

enum Value<S> {
    Owned(Array2<S>),
    Param(ParamId),
}

enum Op<S> {
    Leaf,
    MatMul(usize, usize),
    MatMulT(usize, usize),
    Add(usize, usize),
    AddRow(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    MulConst(usize, Array2<S>),
    Gelu(usize),
    Silu(usize),
    Relu(usize),
    Softmax(usize),
    LayerNorm {
        x: usize,
        gain: usize,
        bias: usize,
        xhat: Array2<S>,
        inv_std: Vec<S>,
    },
    SliceCols(usize, usize),
    SliceRows(usize, usize),
    ConcatCols(Vec<usize>),
    ConcatRows(Vec<usize>),
    MaxRows(usize, Vec<usize>),
    BroadcastRows(usize),
    Mean(usize),
    Mse(usize, Array2<S>),
    Attention {
        q: usize,
        k: usize,
        v: usize,
        batch: usize,
        heads: usize,
        probs: Vec<Array2<S>>,
    },
}

struct Node<S> {
    value: Value<S>,
    op: Op<S>,
}

pub struct Tape<'p, S: Scalar> {
    params: &'p ParamStore<S>,
    nodes: RefCell<Vec<Node<S>>>,
    param_nodes: RefCell<Vec<Option<usize>>>,
}

/// Handle to a recorded value.
#[derive(Clone, Copy)]
pub struct Var<'t, 'p, S: Scalar> {
    tape: &'t Tape<'p, S>,
    id: usize,
}

/// Parameter gradients, indexed by [`ParamId`].
pub struct Gradients<S> {
    grads: Vec<Option<Array2<S>>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn get(&self, id: ParamId) -> Option<&Array2<S>> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Array2<S>)> {
        self.grads
            .iter()
            .enumerate()
            .filter_map(|(i, g)| g.as_ref().map(|g| (ParamId(i), g)))
    }

    /// Global L2 norm across all parameter gradients.
    pub fn norm(&self) -> f64 {
        self.iter()
            .map(|(_, g)| g.iter().map(|v| v.to_f64().unwrap().powi(2)).sum::<f64>())
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        let f = S::c(factor);
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|v| v * f);
        }
    }
}

fn accumulate<S: Scalar>(slot: &mut Option<Array2<S>>, delta: Array2<S>) {
    match slot {
        Some(g) => *g += &delta,
        None => *slot = Some(delta),
    }
}

fn gelu<S: Scalar>(x: S) -> (S, S) {
    // tanh approximation; returns (value, derivative)
    let k = S::c((2.0 / std::f64::consts::PI).sqrt());
    let c = S::c(0.044715);
    let half = S::c(0.5);
    let one = S::one();
    let x2 = x * x;
    let u = k * (x + c * x2 * x);
    let th = u.tanh();
    let y = half * x * (one + th);
    let dy = half * (one + th) + half * x * (one - th * th) * k * (one + S::c(3.0) * c * x2);
    (y, dy)
}

/// Row blocks of sample `b` and column block of head `h`.
fn block(rows: usize, dh: usize, b: usize, h: usize) -> ndarray::SliceInfo<[ndarray::SliceInfoElem; 2], ndarray::Ix2, ndarray::Ix2> {
    s![b * rows..(b + 1) * rows, h * dh..(h + 1) * dh]
}

fn attention_forward<S: Scalar>(
    q: &Array2<S>,
    k: &Array2<S>,
    v: &Array2<S>,
    batch: usize,
    heads: usize,
) -> (Array2<S>, Vec<Array2<S>>) {
    let (nq, nk) = (q.nrows() / batch, k.nrows() / batch);
    let dh = q.ncols() / heads;
    let scale = S::c(1.0 / (dh as f64).sqrt());
    let mut out = Array2::zeros(q.dim());
    let mut probs = Vec::with_capacity(batch * heads);
    for b in 0..batch {
        for h in 0..heads {
            let mut w = Array2::zeros((nq, nk));
            general_mat_mul(scale, &q.slice(block(nq, dh, b, h)), &k.slice(block(nk, dh, b, h)).t(), S::zero(), &mut w);
            for mut row in w.outer_iter_mut() {
                let m = row.fold(S::neg_infinity(), |m, &x| if x > m { x } else { m });
                row.mapv_inplace(|x| (x - m).exp());
                let sum = row.sum();
                row.mapv_inplace(|x| x / sum);
            }
            general_mat_mul(S::one(), &w, &v.slice(block(nk, dh, b, h)), S::zero(), &mut out.slice_mut(block(nq, dh, b, h)));
            probs.push(w);
        }
    }
    (out, probs)
}

fn attention_backward<S: Scalar>(
    g: &Array2<S>,
    q: &Array2<S>,
    k: &Array2<S>,
    v: &Array2<S>,
    batch: usize,
    heads: usize,
    probs: &[Array2<S>],
) -> (Array2<S>, Array2<S>, Array2<S>) {
    let (nq, nk) = (q.nrows() / batch, k.nrows() / batch);
    let dh = q.ncols() / heads;
    let scale = S::c(1.0 / (dh as f64).sqrt());
    let (mut gq, mut gk, mut gv) = (Array2::zeros(q.dim()), Array2::zeros(k.dim()), Array2::zeros(v.dim()));
    let mut dp = Array2::zeros((nq, nk));
    for b in 0..batch {
        for h in 0..heads {
            let p = &probs[b * heads + h];
            let go = g.slice(block(nq, dh, b, h));
            general_mat_mul(S::one(), &p.t(), &go, S::zero(), &mut gv.slice_mut(block(nk, dh, b, h)));
            general_mat_mul(S::one(), &go, &v.slice(block(nk, dh, b, h)).t(), S::zero(), &mut dp);
            for (mut drow, prow) in dp.outer_iter_mut().zip(p.outer_iter()) {
                let dot = Zip::from(&drow).and(&prow).fold(S::zero(), |acc, &d, &pv| acc + d * pv);
                Zip::from(&mut drow).and(&prow).for_each(|d, &pv| *d = pv * (*d - dot));
            }
            general_mat_mul(scale, &dp, &k.slice(block(nk, dh, b, h)), S::zero(), &mut gq.slice_mut(block(nq, dh, b, h)));
            general_mat_mul(scale, &dp.t(), &q.slice(block(nq, dh, b, h)), S::zero(), &mut gk.slice_mut(block(nk, dh, b, h)));
        }
    }
    (gq, gk, gv)
}

impl<'p, S: Scalar> Tape<'p, S> {
    pub fn new(params: &'p ParamStore<S>) -> Self {
        Self {
            params,
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(vec![None; params.len()]),
        }
    }

    pub fn params(&self) -> &'p ParamStore<S> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Array2<S>, op: Op<S>) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Value::Owned(value),
            op,
        });
        nodes.len() - 1
    }

    fn resolve<'a>(&'a self, node: &'a Node<S>) -> &'a Array2<S> {
        match &node.value {
            Value::Owned(v) => v,
            Value::Param(p) => self.params.get(*p),
        }
    }

    fn map1(&self, a: usize, f: impl FnOnce(&Array2<S>) -> Array2<S>) -> Array2<S> {
        let nodes = self.nodes.borrow();
        f(self.resolve(&nodes[a]))
    }

    fn map2(&self, a: usize, b: usize, f: impl FnOnce(&Array2<S>, &Array2<S>) -> Array2<S>) -> Array2<S> {
        let nodes = self.nodes.borrow();
        f(self.resolve(&nodes[a]), self.resolve(&nodes[b]))
    }

    /// Records a constant input.
    pub fn constant<'t>(&'t self, value: Array2<S>) -> Var<'t, 'p, S> {
        let id = self.push(value, Op::Leaf);
        Var { tape: self, id }
    }

    /// The (single) node standing for a parameter.
    pub fn param<'t>(&'t self, pid: ParamId) -> Var<'t, 'p, S> {
        if let Some(id) = self.param_nodes.borrow()[pid.0] {
            return Var { tape: self, id };
        }
        let id = {
            let mut nodes = self.nodes.borrow_mut();
            nodes.push(Node {
                value: Value::Param(pid),
                op: Op::Leaf,
            });
            nodes.len() - 1
        };
        self.param_nodes.borrow_mut()[pid.0] = Some(id);
        Var { tape: self, id }
    }

    pub fn value(&self, v: &Var<'_, 'p, S>) -> Array2<S> {
        self.map1(v.id, |a| a.clone())
    }

    /// Gradients of a `1×1` output with respect to every parameter.
    pub fn backward(&self, output: &Var<'_, 'p, S>) -> Gradients<S> {
        let nodes = self.nodes.borrow();
        let mut grads: Vec<Option<Array2<S>>> = (0..nodes.len()).map(|_| None).collect();
        let shape = self.resolve(&nodes[output.id]).dim();
        assert_eq!(shape, (1, 1), "backward needs a scalar output");
        grads[output.id] = Some(Array2::from_elem((1, 1), S::one()));

        for id in (0..=output.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            let val = |i: usize| self.resolve(&nodes[i]);
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::MatMul(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = Array2::zeros(va.dim());
                    general_mat_mul(S::one(), &g, &vb.t(), S::zero(), &mut ga);
                    let mut gb = Array2::zeros(vb.dim());
                    general_mat_mul(S::one(), &va.t(), &g, S::zero(), &mut gb);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::MatMulT(a, b) => {
                    let (va, vb) = (val(*a), val(*b));
                    let mut ga = Array2::zeros(va.dim());
                    general_mat_mul(S::one(), &g, vb, S::zero(), &mut ga);
                    let mut gb = Array2::zeros(vb.dim());
                    general_mat_mul(S::one(), &g.t(), va, S::zero(), &mut gb);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads[*b], g.clone());
                    accumulate(&mut grads[*a], g);
                }
                Op::AddRow(a, b) => {
                    accumulate(&mut grads[*b], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads[*a], g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads[*b], g.mapv(|v| -v));
                    accumulate(&mut grads[*a], g);
                }
                Op::Mul(a, b) => {
                    let ga = &g * val(*b);
                    let gb = &g * val(*a);
                    accumulate(&mut grads[*a], ga);
                    accumulate(&mut grads[*b], gb);
                }
                Op::Scale(a, c) => {
                    let c = S::c(*c);
                    accumulate(&mut grads[*a], g.mapv(|v| v * c));
                }
                Op::MulConst(a, m) => {
                    accumulate(&mut grads[*a], &g * m);
                }
                Op::Gelu(a) => {
                    let ga = Zip::from(&g).and(val(*a)).map_collect(|&gv, &x| gv * gelu(x).1);
                    accumulate(&mut grads[*a], ga);
                }
                Op::Silu(a) => {
                    let one = S::one();
                    let ga = Zip::from(&g).and(val(*a)).map_collect(|&gv, &x| {
                        let sg = one / (one + (-x).exp());
                        gv * sg * (one + x * (one - sg))
                    });
                    accumulate(&mut grads[*a], ga);
                }
                Op::Relu(a) => {
                    let ga = Zip::from(&g)
                        .and(val(*a))
                        .map_collect(|&gv, &x| if x > S::zero() { gv } else { S::zero() });
                    accumulate(&mut grads[*a], ga);
                }
                Op::Softmax(a) => {
                    let y = self.resolve(node);
                    let mut ga = &g * y;
                    for (mut row, yrow) in ga.outer_iter_mut().zip(y.outer_iter()) {
                        let dot = row.sum();
                        Zip::from(&mut row).and(&yrow).for_each(|r, &yv| *r = *r - yv * dot);
                    }
                    accumulate(&mut grads[*a], ga);
                }
                Op::LayerNorm {
                    x,
                    gain,
                    bias,
                    xhat,
                    inv_std,
                } => {
                    let gv = val(*gain);
                    accumulate(&mut grads[*bias], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    accumulate(&mut grads[*gain], (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0)));
                    let dxhat = &g * gv;
                    let n = S::c(xhat.ncols() as f64);
                    let mut gx = Array2::zeros(xhat.dim());
                    for r in 0..xhat.nrows() {
                        let dr = dxhat.row(r);
                        let xr = xhat.row(r);
                        let sum_d = dr.sum();
                        let sum_dx = dr.dot(&xr);
                        let k = inv_std[r] / n;
                        Zip::from(gx.row_mut(r))
                            .and(&dr)
                            .and(&xr)
                            .for_each(|o, &d, &xh| *o = k * (n * d - sum_d - xh * sum_dx));
                    }
                    accumulate(&mut grads[*x], gx);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    accumulate(&mut grads[*a], ga);
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    accumulate(&mut grads[*a], ga);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let w = val(*p).ncols();
                        accumulate(&mut grads[*p], g.slice(s![.., off..off + w]).to_owned());
                        off += w;
                    }
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let h = val(*p).nrows();
                        accumulate(&mut grads[*p], g.slice(s![off..off + h, ..]).to_owned());
                        off += h;
                    }
                }
                Op::MaxRows(a, argmax) => {
                    let mut ga = Array2::zeros(val(*a).dim());
                    for (j, &r) in argmax.iter().enumerate() {
                        ga[[r, j]] = g[[0, j]];
                    }
                    accumulate(&mut grads[*a], ga);
                }
                Op::BroadcastRows(a) => {
                    accumulate(&mut grads[*a], g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
                Op::Mean(a) => {
                    let va = val(*a);
                    let k = g[[0, 0]] / S::c(va.len() as f64);
                    accumulate(&mut grads[*a], Array2::from_elem(va.dim(), k));
                }
                Op::Mse(a, target) => {
                    let va = val(*a);
                    let k = g[[0, 0]] * S::c(2.0 / va.len() as f64);
                    accumulate(&mut grads[*a], Zip::from(va).and(target).map_collect(|&p, &t| k * (p - t)));
                }
                Op::Attention {
                    q,
                    k,
                    v,
                    batch,
                    heads,
                    probs,
                } => {
                    let (vq, vk, vv) = (val(*q), val(*k), val(*v));
                    let (gq, gk, gv) = attention_backward(&g, vq, vk, vv, *batch, *heads, probs);
                    accumulate(&mut grads[*q], gq);
                    accumulate(&mut grads[*k], gk);
                    accumulate(&mut grads[*v], gv);
                }
            }
        }

        let mut out: Vec<Option<Array2<S>>> = vec![None; self.params.len()];
        for (pid, node) in self.param_nodes.borrow().iter().enumerate() {
            if let Some(n) = node {
                out[pid] = grads[*n].take();
            }
        }
        Gradients { grads: out }
    }
}

impl<'t, 'p, S: Scalar> Var<'t, 'p, S> {
    pub fn tape(&self) -> &'t Tape<'p, S> {
        self.tape
    }

    pub fn value(&self) -> Array2<S> {
        self.tape.value(self)
    }

    pub fn shape(&self) -> (usize, usize) {
        let nodes = self.tape.nodes.borrow();
        self.tape.resolve(&nodes[self.id]).dim()
    }

    fn wrap(&self, value: Array2<S>, op: Op<S>) -> Self {
        Var {
            tape: self.tape,
            id: self.tape.push(value, op),
        }
    }

    pub fn matmul(&self, other: &Self) -> Self {
        let v = self.tape.map2(self.id, other.id, |a, b| a.dot(b));
        self.wrap(v, Op::MatMul(self.id, other.id))
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Self) -> Self {
        let v = self.tape.map2(self.id, other.id, |a, b| a.dot(&b.t()));
        self.wrap(v, Op::MatMulT(self.id, other.id))
    }

    pub fn add(&self, other: &Self) -> Self {
        let v = self.tape.map2(self.id, other.id, |a, b| {
            assert_eq!(a.dim(), b.dim(), "add shape mismatch");
            a + b
        });
        self.wrap(v, Op::Add(self.id, other.id))
    }

    /// Adds a `1×n` row to every row.
    pub fn add_row(&self, row: &Self) -> Self {
        let v = self.tape.map2(self.id, row.id, |a, b| {
            assert_eq!(b.dim(), (1, a.ncols()), "add_row needs a 1×n row");
            a + b
        });
        self.wrap(v, Op::AddRow(self.id, row.id))
    }

    pub fn sub(&self, other: &Self) -> Self {
        let v = self.tape.map2(self.id, other.id, |a, b| a - b);
        self.wrap(v, Op::Sub(self.id, other.id))
    }

    pub fn mul(&self, other: &Self) -> Self {
        let v = self.tape.map2(self.id, other.id, |a, b| a * b);
        self.wrap(v, Op::Mul(self.id, other.id))
    }

    pub fn scale(&self, c: f64) -> Self {
        let k = S::c(c);
        let v = self.tape.map1(self.id, |a| a.mapv(|x| x * k));
        self.wrap(v, Op::Scale(self.id, c))
    }

    /// Elementwise product with a constant (dropout masks).
    pub fn mul_const(&self, mask: Array2<S>) -> Self {
        let v = self.tape.map1(self.id, |a| a * &mask);
        self.wrap(v, Op::MulConst(self.id, mask))
    }

    pub fn gelu(&self) -> Self {
        let v = self.tape.map1(self.id, |a| a.mapv(|x| gelu(x).0));
        self.wrap(v, Op::Gelu(self.id))
    }

    pub fn silu(&self) -> Self {
        let v = self.tape.map1(self.id, |a| a.mapv(|x| x / (S::one() + (-x).exp())));
        self.wrap(v, Op::Silu(self.id))
    }

    pub fn relu(&self) -> Self {
        let v = self.tape.map1(self.id, |a| a.mapv(|x| if x > S::zero() { x } else { S::zero() }));
        self.wrap(v, Op::Relu(self.id))
    }

    /// Row-wise softmax.
    pub fn softmax(&self) -> Self {
        let v = self.tape.map1(self.id, |a| {
            let mut out = a.clone();
            for mut row in out.outer_iter_mut() {
                let m = row.fold(S::neg_infinity(), |m, &x| if x > m { x } else { m });
                row.mapv_inplace(|x| (x - m).exp());
                let sum = row.sum();
                row.mapv_inplace(|x| x / sum);
            }
            out
        });
        self.wrap(v, Op::Softmax(self.id))
    }

    /// Row-wise layer normalization with learned gain and bias (`1×n`).
    pub fn layer_norm(&self, gain: &Self, bias: &Self) -> Self {
        let nodes = self.tape.nodes.borrow();
        let x = self.tape.resolve(&nodes[self.id]);
        let g = self.tape.resolve(&nodes[gain.id]);
        let b = self.tape.resolve(&nodes[bias.id]);
        let n = S::c(x.ncols() as f64);
        let eps = S::c(LN_EPS);
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in xhat.outer_iter_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.fold(S::zero(), |acc, &v| acc + v * v) / n;
            let is = S::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * is);
            inv_std.push(is);
        }
        let out = &xhat * g + b;
        drop(nodes);
        self.wrap(
            out,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                xhat,
                inv_std,
            },
        )
    }

    pub fn slice_cols(&self, start: usize, end: usize) -> Self {
        let v = self.tape.map1(self.id, |a| a.slice(s![.., start..end]).to_owned());
        self.wrap(v, Op::SliceCols(self.id, start))
    }

    pub fn slice_rows(&self, start: usize, end: usize) -> Self {
        let v = self.tape.map1(self.id, |a| a.slice(s![start..end, ..]).to_owned());
        self.wrap(v, Op::SliceRows(self.id, start))
    }

    pub fn concat_cols(parts: &[Self]) -> Self {
        let tape = parts[0].tape;
        let v = {
            let nodes = tape.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| tape.resolve(&nodes[p.id]).view()).collect();
            ndarray::concatenate(Axis(1), &views).expect("concat_cols row counts differ")
        };
        parts[0].wrap(v, Op::ConcatCols(parts.iter().map(|p| p.id).collect()))
    }

    pub fn concat_rows(parts: &[Self]) -> Self {
        let tape = parts[0].tape;
        let v = {
            let nodes = tape.nodes.borrow();
            let views: Vec<_> = parts.iter().map(|p| tape.resolve(&nodes[p.id]).view()).collect();
            ndarray::concatenate(Axis(0), &views).expect("concat_rows column counts differ")
        };
        parts[0].wrap(v, Op::ConcatRows(parts.iter().map(|p| p.id).collect()))
    }

    /// Column-wise maximum over rows, `n×d → 1×d`. Ties keep the first row.
    pub fn max_rows(&self) -> Self {
        let (v, argmax) = {
            let nodes = self.tape.nodes.borrow();
            let a = self.tape.resolve(&nodes[self.id]);
            let mut best = a.row(0).to_owned();
            let mut arg = vec![0usize; a.ncols()];
            for (r, row) in a.outer_iter().enumerate().skip(1) {
                for (j, &x) in row.iter().enumerate() {
                    if x > best[j] {
                        best[j] = x;
                        arg[j] = r;
                    }
                }
            }
            (best.insert_axis(Axis(0)), arg)
        };
        self.wrap(v, Op::MaxRows(self.id, argmax))
    }

    /// Repeats a `1×n` row.
    pub fn broadcast_rows(&self, rows: usize) -> Self {
        let v = self.tape.map1(self.id, |a| {
            assert_eq!(a.nrows(), 1, "broadcast_rows needs a single row");
            a.broadcast((rows, a.ncols())).unwrap().to_owned()
        });
        self.wrap(v, Op::BroadcastRows(self.id))
    }

    pub fn mean(&self) -> Self {
        let v = self.tape.map1(self.id, |a| Array2::from_elem((1, 1), a.mean().unwrap_or(S::zero())));
        self.wrap(v, Op::Mean(self.id))
    }

    /// Mean squared error against a constant target.
    pub fn mse(&self, target: Array2<S>) -> Self {
        let v = self.tape.map1(self.id, |a| {
            assert_eq!(a.dim(), target.dim(), "mse shape mismatch");
            let sum = Zip::from(a).and(&target).fold(S::zero(), |acc, &p, &t| acc + (p - t) * (p - t));
            Array2::from_elem((1, 1), sum / S::c(a.len() as f64))
        });
        self.wrap(v, Op::Mse(self.id, target))
    }

    /// Multi-head softmax attention of `batch` stacked samples; `self` holds
    /// the queries. Samples never attend to each other.
    pub fn attention(&self, k: &Self, v: &Self, batch: usize, heads: usize) -> Self {
        let (out, probs) = {
            let nodes = self.tape.nodes.borrow();
            let (q, kk, vv) = (
                self.tape.resolve(&nodes[self.id]),
                self.tape.resolve(&nodes[k.id]),
                self.tape.resolve(&nodes[v.id]),
            );
            assert!(
                batch > 0 && q.nrows() % batch == 0 && kk.nrows() % batch == 0 && kk.dim() == vv.dim(),
                "rows must split evenly into the batch"
            );
            assert!(heads > 0 && q.ncols() % heads == 0 && q.ncols() == kk.ncols(), "width must divide into heads");
            attention_forward(q, kk, vv, batch, heads)
        };
        self.wrap(
            out,
            Op::Attention {
                q: self.id,
                k: k.id,
                v: v.id,
                batch,
                heads,
                probs,
            },
        )
    }

    /// The `1×1` value as `f64`.
    pub fn scalar(&self) -> f64 {
        let nodes = self.tape.nodes.borrow();
        self.tape.resolve(&nodes[self.id])[[0, 0]].to_f64().unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ParamStore;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    // Checks every parameter entry against central differences.
    fn check<F>(store: &mut ParamStore<f64>, f: F)
    where
        F: for<'t, 'p> Fn(&'t Tape<'p, f64>) -> Var<'t, 'p, f64>,
    {
        let grads = {
            let tape = Tape::new(store);
            let out = f(&tape);
            tape.backward(&out)
        };
        let h = 1e-5;
        for pid in store.ids() {
            let analytic = grads.get(pid).cloned().unwrap_or_else(|| Array2::zeros(store.get(pid).dim()));
            for idx in 0..store.get(pid).len() {
                let (r, c) = (idx / store.get(pid).ncols(), idx % store.get(pid).ncols());
                let orig = store.get(pid)[[r, c]];
                store.get_mut(pid)[[r, c]] = orig + h;
                let up = f(&Tape::new(store)).scalar();
                store.get_mut(pid)[[r, c]] = orig - h;
                let down = f(&Tape::new(store)).scalar();
                store.get_mut(pid)[[r, c]] = orig;
                let fd = (up - down) / (2.0 * h);
                let a = analytic[[r, c]];
                assert!(
                    (a - fd).abs() <= 1e-6 * a.abs().max(fd.abs()).max(1.0),
                    "{} [{r},{c}]: analytic {a} vs fd {fd}",
                    store.name(pid)
                );
            }
        }
    }

    #[test]
    fn ops_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::new();
        let a = store.add("a", random(&mut rng, 4, 3));
        let b = store.add("b", random(&mut rng, 3, 5));
        let row = store.add("row", random(&mut rng, 1, 5));
        let g = store.add("g", random(&mut rng, 1, 5));
        let bias = store.add("bias", random(&mut rng, 1, 5));
        let c = store.add("c", random(&mut rng, 2, 5));
        let target = random(&mut rng, 4, 5);
        let mask = random(&mut rng, 4, 5);
        check(&mut store, |t: &Tape<f64>| {
            let x = t.param(a).matmul(&t.param(b)).add_row(&t.param(row));
            let y = x.layer_norm(&t.param(g), &t.param(bias)).gelu();
            let z = y.matmul_t(&t.param(c)).softmax(); // 4×2
            let w = z.matmul(&t.param(c)).silu().mul(&x).scale(0.7); // 4×5
            let parts = Var::concat_cols(&[w.slice_cols(0, 2), w.slice_cols(2, 5).relu()]);
            let stacked = Var::concat_rows(&[parts.slice_rows(0, 1), parts.slice_rows(1, 4)]);
            let pooled = stacked.max_rows().broadcast_rows(4);
            let q = stacked.add(&pooled).sub(&x.mul_const(mask.clone()));
            q.mse(target.clone()).add(&q.mean())
        });
    }

    fn composite_attention<'t, 'p>(q: &Var<'t, 'p, f64>, k: &Var<'t, 'p, f64>, v: &Var<'t, 'p, f64>, batch: usize, heads: usize) -> Var<'t, 'p, f64> {
        let (nq, nk) = (q.shape().0 / batch, k.shape().0 / batch);
        let dh = q.shape().1 / heads;
        let rows: Vec<_> = (0..batch)
            .map(|b| {
                let (qb, kb, vb) = (
                    q.slice_rows(b * nq, (b + 1) * nq),
                    k.slice_rows(b * nk, (b + 1) * nk),
                    v.slice_rows(b * nk, (b + 1) * nk),
                );
                let heads: Vec<_> = (0..heads)
                    .map(|h| {
                        let (c0, c1) = (h * dh, (h + 1) * dh);
                        qb.slice_cols(c0, c1)
                            .matmul_t(&kb.slice_cols(c0, c1))
                            .scale(1.0 / (dh as f64).sqrt())
                            .softmax()
                            .matmul(&vb.slice_cols(c0, c1))
                    })
                    .collect();
                Var::concat_cols(&heads)
            })
            .collect();
        Var::concat_rows(&rows)
    }

    #[test]
    fn fused_attention_matches_composite() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut store = ParamStore::new();
        let q = store.add("q", random(&mut rng, 6, 4));
        let k = store.add("k", random(&mut rng, 8, 4));
        let v = store.add("v", random(&mut rng, 8, 4));
        let target = random(&mut rng, 6, 4);
        let tape = Tape::new(&store);
        let fused = tape.param(q).attention(&tape.param(k), &tape.param(v), 2, 2).value();
        let plain = composite_attention(&tape.param(q), &tape.param(k), &tape.param(v), 2, 2).value();
        assert!((&fused - &plain).iter().all(|d| d.abs() < 1e-14));
        drop(tape);
        check(&mut store, |t: &Tape<f64>| t.param(q).attention(&t.param(k), &t.param(v), 2, 2).mse(target.clone()));
    }
}
