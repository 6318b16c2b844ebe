//! Reverse-mode automatic differentiation on an append-only operation tape.
//!
//! Forward ops append nodes in topological order; `backward` walks the tape
//! in reverse, dispatching each node to its gradient rule and accumulating
//! into parents. A `Session` binds `ParamStore` entries to tape leaves so a
//! parameter used on several edges appears once and its fan-out gradients
//! accumulate on that single node.

use crate::cdc::{cdc_backward, cdc_forward, CdcConfig};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::ops::elementwise::*;
use crate::ops::linear::{linear_backward, linear_forward};
use crate::ops::norm::{batch_norm_backward, BnSaved};
use crate::ops::pool::*;
use crate::params::{ParamGrads, ParamId, ParamStore};
use crate::tensor::{Shape5, Tensor};
use std::collections::HashMap;

/// Handle to one node on the tape.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Val(usize);

enum Op<E: Elem> {
    Leaf,
    Add(Val, Val),
    Scale(Val, f64),
    Exp(Val),
    Relu(Val),
    ScaleByEntry {
        x: Val,
        coef: Val,
        idx: usize,
    },
    WeightedSum {
        x: Val,
        coef: Tensor<E>,
    },
    SumAll(Val),
    Conv {
        x: Val,
        w: Val,
        bias: Option<Val>,
        cfg: Box<CdcConfig>,
    },
    MaxPool {
        x: Val,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Val),
    BatchNorm {
        x: Val,
        gamma: Val,
        beta: Val,
        saved: BnSaved<E>,
    },
    Linear {
        x: Val,
        w: Val,
        bias: Option<Val>,
    },
    ConcatChannels(Vec<Val>),
    SliceChannels {
        x: Val,
        start: usize,
    },
    Softmax(Val),
    CrossEntropy {
        logits: Val,
        labels: Vec<usize>,
        probs: Tensor<E>,
    },
}

struct Node<E: Elem> {
    value: Tensor<E>,
    op: Op<E>,
}

pub struct Tape<E: Elem> {
    nodes: Vec<Node<E>>,
}

impl<E: Elem> Default for Tape<E> {
    fn default() -> Self {
        Self::new()
    }
}

impl<E: Elem> Tape<E> {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<E>, op: Op<E>) -> Val {
        self.nodes.push(Node { value, op });
        Val(self.nodes.len() - 1)
    }

    pub fn leaf(&mut self, value: Tensor<E>) -> Val {
        self.push(value, Op::Leaf)
    }

    pub fn value(&self, v: Val) -> &Tensor<E> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Val) -> Shape5 {
        self.nodes[v.0].value.shape()
    }

    pub fn add(&mut self, a: Val, b: Val) -> Result<Val> {
        let y = add_forward(self.value(a), self.value(b))?;
        Ok(self.push(y, Op::Add(a, b)))
    }

    /// Sum a non-empty list with a left fold (fixed association order).
    pub fn add_n(&mut self, vs: &[Val]) -> Result<Val> {
        let mut it = vs.iter();
        let first = *it
            .next()
            .ok_or_else(|| Error::shape("add_n of zero values"))?;
        let mut acc = first;
        for &v in it {
            acc = self.add(acc, v)?;
        }
        Ok(acc)
    }

    pub fn scale(&mut self, x: Val, k: f64) -> Val {
        let y = scale_forward(self.value(x), k);
        self.push(y, Op::Scale(x, k))
    }

    pub fn exp(&mut self, x: Val) -> Val {
        let y = exp_forward(self.value(x));
        self.push(y, Op::Exp(x))
    }

    pub fn relu(&mut self, x: Val) -> Val {
        let y = relu_forward(self.value(x));
        self.push(y, Op::Relu(x))
    }

    pub fn scale_by_entry(&mut self, x: Val, coef: Val, idx: usize) -> Result<Val> {
        let y = scale_by_entry_forward(self.value(x), self.value(coef), idx)?;
        Ok(self.push(y, Op::ScaleByEntry { x, coef, idx }))
    }

    pub fn weighted_sum(&mut self, x: Val, coef: Tensor<E>) -> Result<Val> {
        let y = weighted_sum_forward(self.value(x), &coef)?;
        Ok(self.push(y, Op::WeightedSum { x, coef }))
    }

    pub fn sum_all(&mut self, x: Val) -> Val {
        let y = Tensor::scalar(self.value(x).sum());
        self.push(y, Op::SumAll(x))
    }

    /// Convolution in the CDC family; a `Vanilla` config is a plain conv3d.
    pub fn conv(&mut self, x: Val, w: Val, bias: Option<Val>, cfg: CdcConfig) -> Result<Val> {
        let y = cdc_forward(
            self.value(x),
            self.value(w),
            bias.map(|b| self.value(b)),
            &cfg,
        )?;
        Ok(self.push(
            y,
            Op::Conv {
                x,
                w,
                bias,
                cfg: Box::new(cfg),
            },
        ))
    }

    pub fn maxpool(
        &mut self,
        x: Val,
        window: (usize, usize, usize),
        stride: (usize, usize, usize),
    ) -> Result<Val> {
        let (y, argmax) = maxpool3d_forward(self.value(x), window, stride)?;
        Ok(self.push(y, Op::MaxPool { x, argmax }))
    }

    pub fn global_avg_pool(&mut self, x: Val) -> Val {
        let y = global_avg_pool_forward(self.value(x));
        self.push(y, Op::GlobalAvgPool(x))
    }

    /// Record a batch-norm output computed by the caller (the caller owns
    /// mode selection and running-statistics updates).
    pub fn record_batch_norm(
        &mut self,
        x: Val,
        gamma: Val,
        beta: Val,
        saved: BnSaved<E>,
        y: Tensor<E>,
    ) -> Val {
        self.push(
            y,
            Op::BatchNorm {
                x,
                gamma,
                beta,
                saved,
            },
        )
    }

    pub fn linear(&mut self, x: Val, w: Val, bias: Option<Val>) -> Result<Val> {
        let y = linear_forward(self.value(x), self.value(w), bias.map(|b| self.value(b)))?;
        Ok(self.push(y, Op::Linear { x, w, bias }))
    }

    pub fn concat_channels(&mut self, xs: &[Val]) -> Result<Val> {
        let tensors: Vec<&Tensor<E>> = xs.iter().map(|&v| self.value(v)).collect();
        let y = concat_channels_forward(&tensors)?;
        Ok(self.push(y, Op::ConcatChannels(xs.to_vec())))
    }

    pub fn slice_channels(&mut self, x: Val, start: usize, len: usize) -> Result<Val> {
        let y = slice_channels_forward(self.value(x), start, len)?;
        Ok(self.push(y, Op::SliceChannels { x, start }))
    }

    pub fn softmax(&mut self, x: Val) -> Val {
        let y = softmax_forward(self.value(x));
        self.push(y, Op::Softmax(x))
    }

    pub fn cross_entropy(&mut self, logits: Val, labels: Vec<usize>) -> Result<Val> {
        let (loss, probs) = cross_entropy_forward(self.value(logits), &labels)?;
        Ok(self.push(
            loss,
            Op::CrossEntropy {
                logits,
                labels,
                probs,
            },
        ))
    }

    /// Reverse-mode pass from a scalar loss. Returns per-node gradients for
    /// every leaf reachable from the loss; interior gradients are dropped as
    /// soon as they have been propagated.
    pub fn backward(&self, loss: Val) -> Result<Grads<E>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::shape(format!(
                "backward needs a scalar loss, got {}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor<E>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::scalar(E::ONE));

        fn acc<E: Elem>(grads: &mut [Option<Tensor<E>>], v: Val, t: Tensor<E>) -> Result<()> {
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&t)?,
                slot @ None => *slot = Some(t),
            }
            Ok(())
        }

        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {
                    grads[id] = Some(g);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone())?;
                    acc(&mut grads, *b, g)?;
                }
                Op::Scale(x, k) => {
                    acc(&mut grads, *x, scale_forward(&g, *k))?;
                }
                Op::Exp(x) => {
                    let gx = g.zip_map(&node.value, |gv, yv| gv * yv)?;
                    acc(&mut grads, *x, gx)?;
                }
                Op::Relu(x) => {
                    let gx = relu_backward(self.value(*x), &g);
                    acc(&mut grads, *x, gx)?;
                }
                Op::ScaleByEntry { x, coef, idx } => {
                    let k = self.value(*coef).data()[*idx];
                    let gx = g.map(|v| v * k);
                    let mut gk = E::ZERO;
                    for (&gv, &xv) in g.data().iter().zip(self.value(*x).data()) {
                        gk += gv * xv;
                    }
                    let mut gcoef = Tensor::zeros(self.value(*coef).shape());
                    gcoef.data_mut()[*idx] = gk;
                    acc(&mut grads, *x, gx)?;
                    acc(&mut grads, *coef, gcoef)?;
                }
                Op::WeightedSum { x, coef } => {
                    let gs = g.data()[0];
                    acc(&mut grads, *x, coef.map(|v| v * gs))?;
                }
                Op::SumAll(x) => {
                    let gs = g.data()[0];
                    acc(&mut grads, *x, Tensor::full(self.shape(*x), gs))?;
                }
                Op::Conv { x, w, bias, cfg } => {
                    let grads_out = cdc_backward(
                        self.value(*x),
                        self.value(*w),
                        cfg,
                        &g,
                        bias.is_some(),
                    )?;
                    acc(&mut grads, *x, grads_out.gx)?;
                    acc(&mut grads, *w, grads_out.gw)?;
                    if let (Some(b), Some(gb)) = (bias, grads_out.gbias) {
                        acc(&mut grads, *b, gb)?;
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let gx = maxpool3d_backward(self.shape(*x), argmax, &g);
                    acc(&mut grads, *x, gx)?;
                }
                Op::GlobalAvgPool(x) => {
                    let gx = global_avg_pool_backward(self.shape(*x), &g);
                    acc(&mut grads, *x, gx)?;
                }
                Op::BatchNorm {
                    x,
                    gamma,
                    beta,
                    saved,
                } => {
                    let (gx, ggamma, gbeta) =
                        batch_norm_backward(self.value(*x), self.value(*gamma), saved, &g);
                    acc(&mut grads, *x, gx)?;
                    acc(&mut grads, *gamma, ggamma)?;
                    acc(&mut grads, *beta, gbeta)?;
                }
                Op::Linear { x, w, bias } => {
                    let (gx, gw, gb) =
                        linear_backward(self.value(*x), self.value(*w), &g, bias.is_some());
                    acc(&mut grads, *x, gx)?;
                    acc(&mut grads, *w, gw)?;
                    if let (Some(b), Some(gb)) = (bias, gb) {
                        acc(&mut grads, *b, gb)?;
                    }
                }
                Op::ConcatChannels(xs) => {
                    let shapes: Vec<Shape5> = xs.iter().map(|&v| self.shape(v)).collect();
                    for (v, gx) in xs.iter().zip(concat_channels_backward(&shapes, &g)) {
                        acc(&mut grads, *v, gx)?;
                    }
                }
                Op::SliceChannels { x, start } => {
                    let gx = slice_channels_backward(self.shape(*x), *start, &g);
                    acc(&mut grads, *x, gx)?;
                }
                Op::Softmax(x) => {
                    let gx = softmax_backward(&node.value, &g);
                    acc(&mut grads, *x, gx)?;
                }
                Op::CrossEntropy {
                    logits,
                    labels,
                    probs,
                } => {
                    let gx = cross_entropy_backward(probs, labels, g.data()[0]);
                    acc(&mut grads, *logits, gx)?;
                }
            }
        }
        Ok(Grads { grads })
    }
}

/// Leaf gradients produced by one backward pass.
pub struct Grads<E: Elem> {
    grads: Vec<Option<Tensor<E>>>,
}

impl<E: Elem> Grads<E> {
    pub fn get(&self, v: Val) -> Option<&Tensor<E>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Val) -> Option<Tensor<E>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }

    /// Gradient of a leaf, or zeros when the loss never reached it.
    pub fn get_or_zero(&self, v: Val, shape: Shape5) -> Tensor<E> {
        self.get(v).cloned().unwrap_or_else(|| Tensor::zeros(shape))
    }
}

/// One forward/backward round over a parameter store: binds parameters to
/// tape leaves on first use and maps leaf gradients back to parameter ids.
pub struct Session<'s, E: Elem> {
    pub tape: Tape<E>,
    pub store: &'s mut ParamStore<E>,
    bound: HashMap<ParamId, Val>,
    pub train: bool,
}

impl<'s, E: Elem> Session<'s, E> {
    pub fn new(store: &'s mut ParamStore<E>, train: bool) -> Self {
        Session {
            tape: Tape::new(),
            store,
            bound: HashMap::new(),
            train,
        }
    }

    /// Tape leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Val {
        if let Some(&v) = self.bound.get(&id) {
            return v;
        }
        let v = self.tape.leaf(self.store.get(id).clone());
        self.bound.insert(id, v);
        v
    }

    /// Tape leaf for an input tensor (no parameter binding).
    pub fn input(&mut self, t: Tensor<E>) -> Val {
        self.tape.leaf(t)
    }

    /// Backward from `loss`, returning gradients keyed by parameter id.
    pub fn backward(&mut self, loss: Val) -> Result<ParamGrads<E>> {
        let mut node_grads = self.tape.backward(loss)?;
        let mut out = ParamGrads::new();
        for (&id, &v) in &self.bound {
            if let Some(g) = node_grads.take(v) {
                out.insert(id, g);
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::Partition;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sum_of_scaled_input_grad_is_constant() {
        let mut tape = Tape::<f64>::new();
        let x = tape.leaf(Tensor::from_fn(Shape5::new(1, 2, 1, 2, 2), |i| i as f64));
        let y = tape.scale(x, 3.0);
        let loss = tape.sum_all(y);
        let grads = tape.backward(loss).unwrap();
        let gx = grads.get(x).unwrap();
        assert!(gx.data().iter().all(|&v| v == 3.0));
    }

    #[test]
    fn unused_parameter_gets_zero() {
        let mut store = ParamStore::<f64>::new();
        let used = store
            .add_param("used", Tensor::scalar(2.0), Partition::Weight)
            .unwrap();
        let unused = store
            .add_param("unused", Tensor::scalar(5.0), Partition::Weight)
            .unwrap();
        let mut sess = Session::new(&mut store, true);
        let a = sess.param(used);
        let _ = sess.param(unused);
        let loss = sess.tape.sum_all(a);
        let grads = sess.backward(loss).unwrap();
        assert_eq!(grads.get(used).unwrap().data()[0], 1.0);
        assert!(grads.get(unused).is_none());
        let z = grads.get_or_zero(unused, &sess.store);
        assert_eq!(z.data()[0], 0.0);
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut tape = Tape::<f32>::new();
        let x = tape.leaf(Tensor::zeros(Shape5::new(1, 2, 1, 1, 1)));
        assert!(tape.backward(x).is_err());
    }

    #[test]
    fn backward_is_linear_in_the_loss() {
        // Gradient of (l1 + l2) equals grad(l1) + grad(l2).
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let xt = Tensor::<f64>::randn(Shape5::new(1, 3, 2, 3, 3), 1.0, &mut rng);
        let ct1 = Tensor::<f64>::randn(xt.shape(), 1.0, &mut rng);
        let ct2 = Tensor::<f64>::randn(xt.shape(), 1.0, &mut rng);

        let run = |losses: &[&Tensor<f64>]| -> Tensor<f64> {
            let mut tape = Tape::<f64>::new();
            let x = tape.leaf(xt.clone());
            let r = tape.relu(x);
            let parts: Vec<Val> = losses
                .iter()
                .map(|c| tape.weighted_sum(r, (*c).clone()).unwrap())
                .collect();
            let total = tape.add_n(&parts).unwrap();
            let grads = tape.backward(total).unwrap();
            grads.get(x).unwrap().clone()
        };

        let g_sum = run(&[&ct1, &ct2]);
        let g1 = run(&[&ct1]);
        let g2 = run(&[&ct2]);
        let combined = g1.zip_map(&g2, |a, b| a + b).unwrap();
        assert!(crate::tensor::max_abs_diff(&g_sum, &combined) < 1e-12);
    }

    #[test]
    fn param_bound_once_accumulates_fanout() {
        // The same parameter used twice must receive the sum of both paths.
        let mut store = ParamStore::<f64>::new();
        let w = store
            .add_param("w", Tensor::scalar(3.0), Partition::Weight)
            .unwrap();
        let mut sess = Session::new(&mut store, true);
        let wv = sess.param(w);
        let wv2 = sess.param(w);
        assert_eq!(wv, wv2);
        let doubled = sess.tape.add(wv, wv2).unwrap();
        let loss = sess.tape.sum_all(doubled);
        let grads = sess.backward(loss).unwrap();
        assert_eq!(grads.get(w).unwrap().data()[0], 2.0);
    }
}
