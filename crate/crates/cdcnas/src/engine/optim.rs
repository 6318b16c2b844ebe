//! SGD (network weights) and Adam (architecture parameters), each locked to
//! one parameter partition.

use crate::elem::Elem;
use crate::error::Result;
use crate::params::{ParamGrads, ParamId, ParamStore, Partition};
use crate::tensor::Tensor;
use std::collections::HashMap;

/// SGD with momentum and L2 weight decay. With a zero data gradient one step
/// scales a parameter by exactly (1 - lr * decay).
pub struct Sgd<E: Elem> {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    partition: Partition,
    velocity: HashMap<ParamId, Tensor<E>>,
}

impl<E: Elem> Sgd<E> {
    pub fn new(lr: f64, momentum: f64, weight_decay: f64, partition: Partition) -> Self {
        Sgd {
            lr,
            momentum,
            weight_decay,
            partition,
            velocity: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<E>, grads: &ParamGrads<E>) -> Result<()> {
        let lr = E::from_f64(self.lr);
        let mu = E::from_f64(self.momentum);
        let wd = E::from_f64(self.weight_decay);
        for id in store.ids_in(self.partition) {
            let g = grads.get(id);
            let p = store.get(id).clone();
            let v = self
                .velocity
                .entry(id)
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for i in 0..p.numel() {
                let grad = g.map(|t| t.data()[i]).unwrap_or(E::ZERO) + wd * p.data()[i];
                let vel = mu * v.data()[i] + grad;
                v.data_mut()[i] = vel;
                store.get_mut(id).data_mut()[i] = p.data()[i] - lr * vel;
            }
        }
        Ok(())
    }
}

/// Adam with L2 weight decay folded into the gradient.
pub struct Adam<E: Elem> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    partition: Partition,
    t: u64,
    m: HashMap<ParamId, Tensor<E>>,
    v: HashMap<ParamId, Tensor<E>>,
}

impl<E: Elem> Adam<E> {
    pub fn new(lr: f64, weight_decay: f64, partition: Partition) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            partition,
            t: 0,
            m: HashMap::new(),
            v: HashMap::new(),
        }
    }

    pub fn step(&mut self, store: &mut ParamStore<E>, grads: &ParamGrads<E>) -> Result<()> {
        self.t += 1;
        let b1 = E::from_f64(self.beta1);
        let b2 = E::from_f64(self.beta2);
        let lr = E::from_f64(self.lr);
        let eps = E::from_f64(self.eps);
        let wd = E::from_f64(self.weight_decay);
        let bc1 = E::from_f64(1.0 - self.beta1.powi(self.t as i32));
        let bc2 = E::from_f64(1.0 - self.beta2.powi(self.t as i32));
        for id in store.ids_in(self.partition) {
            let g = grads.get(id);
            let p = store.get(id).clone();
            let m = self
                .m
                .entry(id)
                .or_insert_with(|| Tensor::zeros(p.shape()));
            let v = self
                .v
                .entry(id)
                .or_insert_with(|| Tensor::zeros(p.shape()));
            for i in 0..p.numel() {
                let grad = g.map(|t| t.data()[i]).unwrap_or(E::ZERO) + wd * p.data()[i];
                let mi = b1 * m.data()[i] + (E::ONE - b1) * grad;
                let vi = b2 * v.data()[i] + (E::ONE - b2) * grad * grad;
                m.data_mut()[i] = mi;
                v.data_mut()[i] = vi;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                store.get_mut(id).data_mut()[i] = p.data()[i] - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape5;

    #[test]
    fn sgd_weight_decay_scales_parameter_exactly() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add_param("w", Tensor::scalar(2.0), Partition::Weight)
            .unwrap();
        let mut opt = Sgd::new(0.1, 0.9, 0.05, Partition::Weight);
        // Zero data gradient: parameter absent from the grad map.
        opt.step(&mut store, &ParamGrads::new()).unwrap();
        let expect = 2.0 * (1.0 - 0.1 * 0.05);
        assert!((store.get(id).data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn sgd_only_touches_its_partition() {
        let mut store = ParamStore::<f64>::new();
        let w = store
            .add_param("w", Tensor::scalar(1.0), Partition::Weight)
            .unwrap();
        let a = store
            .add_param("alpha", Tensor::scalar(1.0), Partition::Arch)
            .unwrap();
        let mut grads = ParamGrads::new();
        grads.insert(w, Tensor::scalar(1.0));
        grads.insert(a, Tensor::scalar(1.0));
        let mut opt = Sgd::new(0.5, 0.0, 0.0, Partition::Weight);
        opt.step(&mut store, &grads).unwrap();
        assert!((store.get(w).data()[0] - 0.5).abs() < 1e-15);
        assert_eq!(store.get(a).data()[0], 1.0);
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut store = ParamStore::<f64>::new();
        let id = store
            .add_param("alpha", Tensor::zeros(Shape5::vector(2)), Partition::Arch)
            .unwrap();
        let mut grads = ParamGrads::new();
        grads.insert(id, Tensor::from_vec(vec![1.0, -2.0]));
        let mut opt = Adam::new(1e-2, 0.0, Partition::Arch);
        opt.step(&mut store, &grads).unwrap();
        // First Adam step is ~ -lr * sign(grad).
        let got = store.get(id).data();
        assert!((got[0] + 0.01).abs() < 1e-6);
        assert!((got[1] - 0.01).abs() < 1e-6);
    }
}
