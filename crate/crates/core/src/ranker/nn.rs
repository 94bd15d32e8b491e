//! Flat parameter storage and dense layers with manual backpropagation.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::rng::Rng;

/// Which sub-network a tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Group {
    String,
    Context,
    Final,
    /// Shared invariant layer `h_s0`.
    Invariant,
    /// Language classifier `h_adv`.
    Classifier,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TensorSpec {
    pub name: String,
    /// `[rows, cols]`; biases are `[rows, 1]`.
    pub shape: [usize; 2],
    pub offset: usize,
    pub group: Group,
}

impl TensorSpec {
    pub fn len(&self) -> usize {
        self.shape[0] * self.shape[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn range(&self) -> std::ops::Range<usize> {
        self.offset..self.offset + self.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Act {
    Relu,
    Identity,
}

/// A dense layer `y = act(W x + b)`, `W` stored row-major as `out × inp`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Dense {
    pub inp: usize,
    pub out: usize,
    pub weight: usize,
    pub bias: usize,
    pub act: Act,
    /// Inverted dropout on the output when training.
    pub dropout: bool,
}

#[derive(Debug, Default, Clone)]
pub struct Layout {
    pub tensors: Vec<TensorSpec>,
    pub total: usize,
}

impl Layout {
    fn push(&mut self, name: String, shape: [usize; 2], group: Group) -> usize {
        let offset = self.total;
        self.total += shape[0] * shape[1];
        self.tensors.push(TensorSpec { name, shape, offset, group });
        offset
    }

    #[allow(clippy::too_many_arguments)]
    pub fn dense(&mut self, prefix: &str, i: usize, inp: usize, out: usize, group: Group, act: Act, dropout: bool) -> Dense {
        let weight = self.push(format!("{prefix}.{i}.weight"), [out, inp], group);
        let bias = self.push(format!("{prefix}.{i}.bias"), [out, 1], group);
        Dense { inp, out, weight, bias, act, dropout }
    }

    /// Per-parameter mask selecting the given groups.
    pub fn mask(&self, keep: impl Fn(Group) -> bool) -> Vec<bool> {
        let mut m = vec![false; self.total];
        for t in &self.tensors {
            if keep(t.group) {
                m[t.range()].iter_mut().for_each(|x| *x = true);
            }
        }
        m
    }
}

/// Values saved by a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct Trace {
    pub input: Vec<f64>,
    /// `output = mask ⊙ (W x + b)`: activation derivative times dropout scale.
    pub mask: Vec<f64>,
}

/// Symmetric uniform fan-in init: `U(-1/√inp, 1/√inp)` for weights and biases.
pub fn init_dense(params: &mut [f64], layer: &Dense, rng: &mut Rng) {
    let bound = 1.0 / (layer.inp as f64).sqrt();
    for x in &mut params[layer.weight..layer.weight + layer.inp * layer.out] {
        *x = rng.random_range(-bound..bound);
    }
    for x in &mut params[layer.bias..layer.bias + layer.out] {
        *x = rng.random_range(-bound..bound);
    }
}

pub fn affine(params: &[f64], layer: &Dense, x: &[f64]) -> Vec<f64> {
    debug_assert_eq!(x.len(), layer.inp);
    let w = &params[layer.weight..layer.weight + layer.inp * layer.out];
    let b = &params[layer.bias..layer.bias + layer.out];
    w.chunks_exact(layer.inp).zip(b).map(|(row, &bi)| bi + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()).collect()
}

/// Forward through one layer. `dropout` is `(rng, p)` in training mode.
pub fn forward(params: &[f64], layer: &Dense, x: Vec<f64>, dropout: &mut Option<(&mut Rng, f64)>) -> (Vec<f64>, Trace) {
    let z = affine(params, layer, &x);
    let mut mask: Vec<f64> = match layer.act {
        Act::Relu => z.iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect(),
        Act::Identity => vec![1.0; z.len()],
    };
    if layer.dropout {
        if let Some((rng, p)) = dropout.as_mut() {
            let p = *p;
            if p > 0.0 {
                let keep = 1.0 / (1.0 - p);
                for m in &mut mask {
                    let u: f64 = rng.random();
                    *m *= if u < p { 0.0 } else { keep };
                }
            }
        }
    }
    let y = z.iter().zip(&mask).map(|(a, m)| a * m).collect();
    (y, Trace { input: x, mask })
}

/// Accumulates parameter gradients into `grad` and returns `dL/dx`.
pub fn backward(params: &[f64], layer: &Dense, trace: &Trace, dy: &[f64], grad: &mut [f64]) -> Vec<f64> {
    let dz: Vec<f64> = dy.iter().zip(&trace.mask).map(|(a, m)| a * m).collect();
    let w = &params[layer.weight..layer.weight + layer.inp * layer.out];
    let gw = &mut grad[layer.weight..layer.weight + layer.inp * layer.out];
    let mut dx = vec![0.0; layer.inp];
    for (o, &d) in dz.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let row = &w[o * layer.inp..(o + 1) * layer.inp];
        let grow = &mut gw[o * layer.inp..(o + 1) * layer.inp];
        for ((g, &xi), (dxi, &wi)) in grow.iter_mut().zip(&trace.input).zip(dx.iter_mut().zip(row)) {
            *g += d * xi;
            *dxi += d * wi;
        }
    }
    for (g, &d) in grad[layer.bias..layer.bias + layer.out].iter_mut().zip(&dz) {
        *g += d;
    }
    dx
}

pub fn forward_stack(
    params: &[f64],
    layers: &[Dense],
    mut x: Vec<f64>,
    dropout: &mut Option<(&mut Rng, f64)>,
) -> (Vec<f64>, Vec<Trace>) {
    let mut traces = Vec::with_capacity(layers.len());
    for layer in layers {
        let (y, t) = forward(params, layer, x, dropout);
        traces.push(t);
        x = y;
    }
    (x, traces)
}

pub fn backward_stack(params: &[f64], layers: &[Dense], traces: &[Trace], mut dy: Vec<f64>, grad: &mut [f64]) -> Vec<f64> {
    for (layer, trace) in layers.iter().zip(traces).rev() {
        dy = backward(params, layer, trace, &dy, grad);
    }
    dy
}

pub fn softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = z.iter().map(|v| (v - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Given `p = softmax(z)` and `dL/dp`, returns `dL/dz`.
pub fn softmax_backward(p: &[f64], dp: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(dp).map(|(a, b)| a * b).sum();
    p.iter().zip(dp).map(|(pi, di)| pi * (di - dot)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream_rng;

    #[test]
    fn dense_gradient_matches_finite_difference() {
        let mut layout = Layout::default();
        let l0 = layout.dense("t", 0, 3, 4, Group::String, Act::Relu, false);
        let l1 = layout.dense("t", 1, 4, 2, Group::String, Act::Identity, false);
        let mut params = vec![0.0; layout.total];
        let mut rng = stream_rng(3, 0);
        init_dense(&mut params, &l0, &mut rng);
        init_dense(&mut params, &l1, &mut rng);
        let x = vec![0.3, -0.7, 0.9];
        let layers = [l0, l1];
        let loss = |p: &[f64]| {
            let (y, _) = forward_stack(p, &layers, x.clone(), &mut None);
            y[0] * 0.5 - y[1] * 2.0
        };
        let (_, traces) = forward_stack(&params, &layers, x.clone(), &mut None);
        let mut grad = vec![0.0; layout.total];
        backward_stack(&params, &layers, &traces, vec![0.5, -2.0], &mut grad);
        let h = 1e-6;
        for i in 0..params.len() {
            let mut a = params.clone();
            a[i] += h;
            let mut b = params.clone();
            b[i] -= h;
            let fd = (loss(&a) - loss(&b)) / (2.0 * h);
            assert!((fd - grad[i]).abs() < 1e-7, "param {i}: fd {fd} vs {}", grad[i]);
        }
    }

    #[test]
    fn softmax_is_normalized_and_stable() {
        let p = softmax(&[1000.0, 1000.0]);
        assert_eq!(p, vec![0.5, 0.5]);
        let p = softmax(&[0.0, 2.0_f64.ln()]);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn dropout_zeroes_and_rescales() {
        let mut layout = Layout::default();
        let l = layout.dense("t", 0, 2, 1000, Group::Final, Act::Identity, true);
        let mut params = vec![0.0; layout.total];
        params[l.bias..l.bias + 1000].iter_mut().for_each(|b| *b = 1.0);
        let mut rng = stream_rng(1, 0);
        let (y, _) = forward(&params, &l, vec![0.0, 0.0], &mut Some((&mut rng, 0.2)));
        let zeros = y.iter().filter(|&&v| v == 0.0).count();
        assert!((150..250).contains(&zeros));
        assert!(y.iter().all(|&v| v == 0.0 || (v - 1.25).abs() < 1e-12));
        let (y, _) = forward(&params, &l, vec![0.0, 0.0], &mut None);
        assert!(y.iter().all(|&v| v == 1.0));
    }
}
