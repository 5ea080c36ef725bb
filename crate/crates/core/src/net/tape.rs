//! A minimal reverse-mode gradient tape over vector-valued nodes.
//!
//! Parameters are referenced in place from a borrowed [`ParamStore`]; only
//! activations are recorded. `backward` walks the tape once in reverse and
//! returns gradients for every parameter tensor. Frozen entries never
//! receive gradient.

use super::params::{Gradients, ParamId, ParamStore};
use crate::distribution::{log1mexp, log_sigmoid, log_sum_exp, sigmoid};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Debug)]
enum Op {
    Input,
    Param(ParamId),
    Gather { param: ParamId, row: usize },
    MatVec { param: ParamId, x: NodeId },
    Add(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    Offset(NodeId),
    Tanh(NodeId),
    Sigmoid(NodeId),
    LogSigmoid(NodeId),
    Log1mExp(NodeId),
    Slice { x: NodeId, start: usize },
    Pick { x: NodeId, index: usize },
    LogSoftmaxPick { x: NodeId, index: usize, exclude: Option<usize> },
    Dropout { x: NodeId, mask: Vec<f64> },
    Sum(Vec<NodeId>),
}

struct Node {
    value: Vec<f64>,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Self {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParamStore {
        self.params
    }

    fn push(&mut self, value: Vec<f64>, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &[f64] {
        &self.nodes[id.0].value
    }

    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[0]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn input(&mut self, value: Vec<f64>) -> NodeId {
        self.push(value, Op::Input)
    }

    pub fn param(&mut self, p: ParamId) -> NodeId {
        let v = self.params.get(p).data.clone();
        self.push(v, Op::Param(p))
    }

    pub fn gather(&mut self, p: ParamId, row: usize) -> NodeId {
        let v = self.params.get(p).row(row).to_vec();
        self.push(v, Op::Gather { param: p, row })
    }

    pub fn matvec(&mut self, p: ParamId, x: NodeId) -> NodeId {
        let w = self.params.get(p);
        let xv = &self.nodes[x.0].value;
        assert_eq!(w.cols, xv.len(), "matvec shape mismatch for {}", w.name);
        let v = (0..w.rows)
            .map(|r| w.row(r).iter().zip(xv).map(|(a, b)| a * b).sum())
            .collect();
        self.push(v, Op::MatVec { param: p, x })
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        self.push(v, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).iter().map(|x| x * c).collect();
        self.push(v, Op::Scale(a, c))
    }

    pub fn offset(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).iter().map(|x| x + c).collect();
        self.push(v, Op::Offset(a))
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|x| x.tanh()).collect();
        self.push(v, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|&x| sigmoid(x)).collect();
        self.push(v, Op::Sigmoid(a))
    }

    pub fn log_sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|&x| log_sigmoid(x)).collect();
        self.push(v, Op::LogSigmoid(a))
    }

    /// `log(1 − exp(x))`, for `x < 0`.
    pub fn log1mexp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).iter().map(|&x| log1mexp(x)).collect();
        self.push(v, Op::Log1mExp(a))
    }

    pub fn slice(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a)[start..start + len].to_vec();
        self.push(v, Op::Slice { x: a, start })
    }

    pub fn pick(&mut self, a: NodeId, index: usize) -> NodeId {
        let v = vec![self.value(a)[index]];
        self.push(v, Op::Pick { x: a, index })
    }

    /// `log softmax(x)[index]` with the normalizer optionally skipping `exclude`.
    pub fn log_softmax_pick(&mut self, a: NodeId, index: usize, exclude: Option<usize>) -> NodeId {
        let x = self.value(a);
        debug_assert!(Some(index) != exclude);
        let lse = log_sum_exp(
            x.iter()
                .enumerate()
                .filter(|&(i, _)| Some(i) != exclude)
                .map(|(_, &z)| z),
        );
        let v = vec![x[index] - lse];
        self.push(v, Op::LogSoftmaxPick { x: a, index, exclude })
    }

    /// Multiplies by a fixed mask (already scaled by the keep probability).
    pub fn dropout(&mut self, a: NodeId, mask: Vec<f64>) -> NodeId {
        let v = zip_map(self.value(a), &mask, |x, m| x * m);
        self.push(v, Op::Dropout { x: a, mask })
    }

    /// Elementwise sum of equally sized nodes.
    pub fn sum(&mut self, ids: Vec<NodeId>) -> NodeId {
        let n = ids.first().map_or(1, |&i| self.value(i).len());
        let mut v = vec![0.0; n];
        for &i in &ids {
            for (acc, x) in v.iter_mut().zip(self.value(i)) {
                *acc += x;
            }
        }
        self.push(v, Op::Sum(ids))
    }

    /// Gradients of the scalar node `loss` with respect to every parameter.
    pub fn backward(&self, loss: NodeId) -> Gradients {
        let mut out = Gradients::zeros_like(self.params);
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(vec![1.0; self.nodes[loss.0].value.len()]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Input => {}
                Op::Param(p) => self.accumulate_param(&mut out, *p, 0, &g),
                Op::Gather { param, row } => {
                    let cols = self.params.get(*param).cols;
                    self.accumulate_param(&mut out, *param, row * cols, &g);
                }
                Op::MatVec { param, x } => {
                    let w = self.params.get(*param);
                    let xv = &self.nodes[x.0].value;
                    let mask = self.params.frozen_mask(*param);
                    let gw = &mut out.tensors[param.0];
                    for (r, &gr) in g.iter().enumerate() {
                        if gr == 0.0 {
                            continue;
                        }
                        let base = r * w.cols;
                        for (c, &xc) in xv.iter().enumerate() {
                            if mask.is_none_or(|m| !m[base + c]) {
                                gw[base + c] += gr * xc;
                            }
                        }
                    }
                    let mut gx = vec![0.0; w.cols];
                    for (r, &gr) in g.iter().enumerate() {
                        for (acc, &wv) in gx.iter_mut().zip(w.row(r)) {
                            *acc += wv * gr;
                        }
                    }
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, &g);
                    accumulate(&mut grads, *b, &g);
                }
                Op::Mul(a, b) => {
                    let ga = zip_map(&g, &self.nodes[b.0].value, |x, y| x * y);
                    let gb = zip_map(&g, &self.nodes[a.0].value, |x, y| x * y);
                    accumulate(&mut grads, *a, &ga);
                    accumulate(&mut grads, *b, &gb);
                }
                Op::Scale(a, c) => {
                    let ga: Vec<f64> = g.iter().map(|x| x * c).collect();
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Offset(a) => accumulate(&mut grads, *a, &g),
                Op::Tanh(a) => {
                    let ga = zip_map(&g, &node.value, |gi, y| gi * (1.0 - y * y));
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Sigmoid(a) => {
                    let ga = zip_map(&g, &node.value, |gi, y| gi * y * (1.0 - y));
                    accumulate(&mut grads, *a, &ga);
                }
                Op::LogSigmoid(a) => {
                    let ga = zip_map(&g, &self.nodes[a.0].value, |gi, x| gi * sigmoid(-x));
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Log1mExp(a) => {
                    let ga = zip_map(&g, &self.nodes[a.0].value, |gi, x| -gi / (-x).exp_m1());
                    accumulate(&mut grads, *a, &ga);
                }
                Op::Slice { x, start } => {
                    let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                    gx[*start..*start + g.len()].copy_from_slice(&g);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Pick { x, index } => {
                    let mut gx = vec![0.0; self.nodes[x.0].value.len()];
                    gx[*index] = g[0];
                    accumulate(&mut grads, *x, &gx);
                }
                Op::LogSoftmaxPick { x, index, exclude } => {
                    let xv = &self.nodes[x.0].value;
                    let lse = xv[*index] - node.value[0];
                    let gx: Vec<f64> = xv
                        .iter()
                        .enumerate()
                        .map(|(j, &z)| {
                            if Some(j) == *exclude {
                                0.0
                            } else {
                                let delta = if j == *index { 1.0 } else { 0.0 };
                                g[0] * (delta - (z - lse).exp())
                            }
                        })
                        .collect();
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Dropout { x, mask } => {
                    let gx = zip_map(&g, mask, |a, b| a * b);
                    accumulate(&mut grads, *x, &gx);
                }
                Op::Sum(ids) => {
                    for &id in ids {
                        accumulate(&mut grads, id, &g);
                    }
                }
            }
        }
        out
    }

    fn accumulate_param(&self, out: &mut Gradients, p: ParamId, offset: usize, g: &[f64]) {
        let mask = self.params.frozen_mask(p);
        let dst = &mut out.tensors[p.0][offset..offset + g.len()];
        for (k, (d, gi)) in dst.iter_mut().zip(g).enumerate() {
            if mask.is_none_or(|m| !m[offset + k]) {
                *d += gi;
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Vec<f64>>], id: NodeId, g: &[f64]) {
    match &mut grads[id.0] {
        Some(acc) => {
            for (a, b) in acc.iter_mut().zip(g) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(g.to_vec()),
    }
}

fn zip_map(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}
