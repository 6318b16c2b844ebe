//! Layer wrappers: parameter registration, initialization, and forward
//! recording on a session.

use crate::cdc::CdcConfig;
use crate::elem::Elem;
use crate::error::Result;
use crate::ops::norm::{batch_norm_eval, batch_norm_train};
use crate::params::{ParamId, ParamStore, Partition, BufferId};
use crate::tape::{Session, Val};
use crate::tensor::{Shape5, Tensor};
use rand::Rng;

/// Convolution layer; the config decides whether it is vanilla or one of the
/// CDC variants, with identical parameter shapes either way.
#[derive(Clone, Debug)]
pub struct ConvLayer {
    pub w: ParamId,
    pub bias: Option<ParamId>,
    pub cfg: CdcConfig,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl ConvLayer {
    pub fn new<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        cfg: CdcConfig,
        with_bias: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let (kt, kh, kw) = cfg.kernel();
        let fan_in = (in_channels / cfg.groups) * kt * kh * kw;
        let std = (2.0 / fan_in as f64).sqrt();
        let ws = Shape5::new(out_channels, in_channels / cfg.groups, kt, kh, kw);
        let w = store.add_param(
            format!("{name}/w"),
            Tensor::randn(ws, std, rng),
            Partition::Weight,
        )?;
        let bias = if with_bias {
            Some(store.add_param(
                format!("{name}/b"),
                Tensor::zeros(Shape5::vector(out_channels)),
                Partition::Weight,
            )?)
        } else {
            None
        };
        Ok(ConvLayer {
            w,
            bias,
            cfg,
            in_channels,
            out_channels,
        })
    }

    pub fn forward<E: Elem>(&self, s: &mut Session<E>, x: Val) -> Result<Val> {
        let w = s.param(self.w);
        let b = self.bias.map(|b| s.param(b));
        s.tape.conv(x, w, b, self.cfg.clone())
    }

    /// Scalar parameter count (kernel + optional bias).
    pub fn param_count<E: Elem>(&self, store: &ParamStore<E>) -> usize {
        store.get(self.w).numel() + self.bias.map(|b| store.get(b).numel()).unwrap_or(0)
    }
}

#[derive(Clone, Debug)]
pub struct BnLayer {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: BufferId,
    pub running_var: BufferId,
    pub eps: f64,
    pub momentum: f64,
}

impl BnLayer {
    pub fn new<E: Elem>(store: &mut ParamStore<E>, name: &str, channels: usize) -> Result<Self> {
        let gamma = store.add_param(
            format!("{name}/gamma"),
            Tensor::full(Shape5::vector(channels), E::ONE),
            Partition::Weight,
        )?;
        let beta = store.add_param(
            format!("{name}/beta"),
            Tensor::zeros(Shape5::vector(channels)),
            Partition::Weight,
        )?;
        let running_mean =
            store.add_buffer(format!("{name}/rmean"), Tensor::zeros(Shape5::vector(channels)));
        let running_var = store.add_buffer(
            format!("{name}/rvar"),
            Tensor::full(Shape5::vector(channels), E::ONE),
        );
        Ok(BnLayer {
            gamma,
            beta,
            running_mean,
            running_var,
            eps: 1e-5,
            momentum: 0.1,
        })
    }

    pub fn forward<E: Elem>(&self, s: &mut Session<E>, x: Val) -> Result<Val> {
        let gamma = s.param(self.gamma);
        let beta = s.param(self.beta);
        let (y, saved) = if s.train {
            let (y, saved, mean, var) = batch_norm_train(
                s.tape.value(x),
                s.tape.value(gamma),
                s.tape.value(beta),
                self.eps,
            )?;
            let m = E::from_f64(self.momentum);
            let keep = E::from_f64(1.0 - self.momentum);
            for (r, &b) in s
                .store
                .buffer_mut(self.running_mean)
                .data_mut()
                .iter_mut()
                .zip(&mean)
            {
                *r = *r * keep + b * m;
            }
            for (r, &b) in s
                .store
                .buffer_mut(self.running_var)
                .data_mut()
                .iter_mut()
                .zip(&var)
            {
                *r = *r * keep + b * m;
            }
            (y, saved)
        } else {
            let rm = s.store.buffer(self.running_mean).data().to_vec();
            let rv = s.store.buffer(self.running_var).data().to_vec();
            batch_norm_eval(
                s.tape.value(x),
                s.tape.value(gamma),
                s.tape.value(beta),
                &rm,
                &rv,
                self.eps,
            )?
        };
        Ok(s.tape.record_batch_norm(x, gamma, beta, saved, y))
    }

    pub fn param_count<E: Elem>(&self, store: &ParamStore<E>) -> usize {
        store.get(self.gamma).numel() + store.get(self.beta).numel()
    }
}

#[derive(Clone, Debug)]
pub struct LinearLayer {
    pub w: ParamId,
    pub b: ParamId,
}

impl LinearLayer {
    pub fn new<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        in_features: usize,
        out_features: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let std = (1.0 / in_features as f64).sqrt();
        let w = store.add_param(
            format!("{name}/w"),
            Tensor::randn(Shape5::new(out_features, in_features, 1, 1, 1), std, rng),
            Partition::Weight,
        )?;
        let b = store.add_param(
            format!("{name}/b"),
            Tensor::zeros(Shape5::vector(out_features)),
            Partition::Weight,
        )?;
        Ok(LinearLayer { w, b })
    }

    pub fn forward<E: Elem>(&self, s: &mut Session<E>, x: Val) -> Result<Val> {
        let w = s.param(self.w);
        let b = s.param(self.b);
        s.tape.linear(x, w, Some(b))
    }
}

/// Conv -> BN -> ReLU block, the building unit of stems, preprocessing and
/// all convolutional candidates. The conv carries no bias; BN absorbs it.
#[derive(Clone, Debug)]
pub struct ConvBnRelu {
    pub conv: ConvLayer,
    pub bn: BnLayer,
}

impl ConvBnRelu {
    pub fn new<E: Elem>(
        store: &mut ParamStore<E>,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        cfg: CdcConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let conv = ConvLayer::new(store, &format!("{name}/conv"), in_channels, out_channels, cfg, false, rng)?;
        let bn = BnLayer::new(store, &format!("{name}/bn"), out_channels)?;
        Ok(ConvBnRelu { conv, bn })
    }

    pub fn forward<E: Elem>(&self, s: &mut Session<E>, x: Val) -> Result<Val> {
        let y = self.conv.forward(s, x)?;
        let y = self.bn.forward(s, y)?;
        Ok(s.tape.relu(y))
    }

    pub fn param_count<E: Elem>(&self, store: &ParamStore<E>) -> usize {
        self.conv.param_count(store) + self.bn.param_count(store)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdc::CdcVariant;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn conv_block_forward_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut store = ParamStore::<f32>::new();
        let cfg = CdcConfig::new(CdcVariant::T, 0.6, (3, 3, 3), (1, 1, 1)).unwrap();
        let block = ConvBnRelu::new(&mut store, "blk", 2, 4, cfg, &mut rng).unwrap();
        let mut s = Session::new(&mut store, true);
        let x = s.input(Tensor::randn(Shape5::new(2, 2, 4, 6, 6), 1.0, &mut rng));
        let y = block.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.shape(y), Shape5::new(2, 4, 4, 6, 6));
        assert!(s.tape.value(y).is_all_finite());
    }

    #[test]
    fn cdc_and_vanilla_have_equal_param_counts() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::<f32>::new();
        let cdc = CdcConfig::new(CdcVariant::Tr, 0.3, (3, 1, 1), (1, 1, 1)).unwrap();
        let van = CdcConfig::vanilla((3, 1, 1), (1, 1, 1)).unwrap();
        let a = ConvLayer::new(&mut store, "a", 8, 8, cdc, true, &mut rng).unwrap();
        let b = ConvLayer::new(&mut store, "b", 8, 8, van, true, &mut rng).unwrap();
        assert_eq!(a.param_count(&store), b.param_count(&store));
    }

    #[test]
    fn bn_running_stats_update_in_train_only() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::<f32>::new();
        let bn = BnLayer::new(&mut store, "bn", 2).unwrap();
        let x = Tensor::<f32>::randn(Shape5::new(2, 2, 2, 4, 4), 1.0, &mut rng);
        {
            let mut s = Session::new(&mut store, false);
            let xv = s.input(x.clone());
            bn.forward(&mut s, xv).unwrap();
        }
        assert_eq!(store.buffer(bn.running_mean).data(), &[0.0, 0.0]);
        {
            let mut s = Session::new(&mut store, true);
            let xv = s.input(x);
            bn.forward(&mut s, xv).unwrap();
        }
        assert!(store.buffer(bn.running_mean).data().iter().any(|&v| v != 0.0));
    }
}
