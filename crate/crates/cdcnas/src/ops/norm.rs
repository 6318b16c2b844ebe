//! Batch normalization over (N, T, H, W) per channel, with learnable affine
//! and running statistics for eval mode.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor};

/// Per-channel statistics saved by the forward pass for backward.
#[derive(Clone, Debug)]
pub struct BnSaved<E: Elem> {
    pub mean: Vec<E>,
    pub inv_std: Vec<E>,
    /// True when the forward used batch statistics (training mode).
    pub batch_stats: bool,
}

fn check_affine<E: Elem>(xs: Shape5, gamma: &Tensor<E>, beta: &Tensor<E>) -> Result<()> {
    let want = Shape5::vector(xs.c);
    if gamma.shape() != want || beta.shape() != want {
        return Err(Error::shape(format!(
            "batch norm affine shapes {} / {} do not match {} channels",
            gamma.shape(),
            beta.shape(),
            xs.c
        )));
    }
    Ok(())
}

/// Iterate (sample, channel) blocks of length T*H*W for channel `c`.
#[inline]
fn channel_blocks(xs: Shape5, c: usize) -> impl Iterator<Item = std::ops::Range<usize>> {
    let vol = xs.volume();
    let cs = xs.c;
    (0..xs.n).map(move |n| {
        let base = (n * cs + c) * vol;
        base..base + vol
    })
}

/// Training-mode forward: normalize by the biased batch variance. Returns the
/// batch mean and unbiased variance too, so the caller can update any running
/// statistics (running = (1 - momentum) * running + momentum * batch).
pub fn batch_norm_train<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    eps: f64,
) -> Result<(Tensor<E>, BnSaved<E>, Vec<E>, Vec<E>)> {
    let xs = x.shape();
    check_affine(xs, gamma, beta)?;
    let m = (xs.n * xs.volume()) as f64;
    if m < 1.0 {
        return Err(Error::shape("batch norm on empty tensor"));
    }
    let xd = x.data();
    let mut mean = vec![E::ZERO; xs.c];
    let mut inv_std = vec![E::ZERO; xs.c];
    let mut var_unbiased = vec![E::ZERO; xs.c];
    let mut out = Tensor::zeros(xs);

    for c in 0..xs.c {
        let mut acc = E::ZERO;
        for r in channel_blocks(xs, c) {
            for &v in &xd[r] {
                acc += v;
            }
        }
        let mu = acc * E::from_f64(1.0 / m);
        let mut vacc = E::ZERO;
        for r in channel_blocks(xs, c) {
            for &v in &xd[r] {
                let d = v - mu;
                vacc += d * d;
            }
        }
        let var_b = vacc * E::from_f64(1.0 / m);
        let istd = E::ONE / (var_b + E::from_f64(eps)).sqrt();
        mean[c] = mu;
        inv_std[c] = istd;
        var_unbiased[c] = if m > 1.0 {
            vacc * E::from_f64(1.0 / (m - 1.0))
        } else {
            vacc
        };
        let g = gamma.data()[c];
        let b = beta.data()[c];
        let od = out.data_mut();
        for r in channel_blocks(xs, c) {
            for (o, &v) in od[r.clone()].iter_mut().zip(&xd[r]) {
                *o = (v - mu) * istd * g + b;
            }
        }
    }
    let saved = BnSaved {
        mean: mean.clone(),
        inv_std,
        batch_stats: true,
    };
    Ok((out, saved, mean, var_unbiased))
}

/// Eval-mode forward using running statistics.
pub fn batch_norm_eval<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    beta: &Tensor<E>,
    running_mean: &[E],
    running_var: &[E],
    eps: f64,
) -> Result<(Tensor<E>, BnSaved<E>)> {
    let xs = x.shape();
    check_affine(xs, gamma, beta)?;
    if running_mean.len() != xs.c || running_var.len() != xs.c {
        return Err(Error::shape("running statistics length mismatch"));
    }
    let xd = x.data();
    let mut out = Tensor::zeros(xs);
    let mut inv_std = vec![E::ZERO; xs.c];
    for c in 0..xs.c {
        let mu = running_mean[c];
        let istd = E::ONE / (running_var[c] + E::from_f64(eps)).sqrt();
        inv_std[c] = istd;
        let g = gamma.data()[c];
        let b = beta.data()[c];
        let od = out.data_mut();
        for r in channel_blocks(xs, c) {
            for (o, &v) in od[r.clone()].iter_mut().zip(&xd[r]) {
                *o = (v - mu) * istd * g + b;
            }
        }
    }
    let saved = BnSaved {
        mean: running_mean.to_vec(),
        inv_std,
        batch_stats: false,
    };
    Ok((out, saved))
}

/// Backward for both modes. With batch statistics the mean/variance terms
/// feed back into the input gradient; with running statistics the transform
/// is a fixed affine map per channel.
pub fn batch_norm_backward<E: Elem>(
    x: &Tensor<E>,
    gamma: &Tensor<E>,
    saved: &BnSaved<E>,
    gout: &Tensor<E>,
) -> (Tensor<E>, Tensor<E>, Tensor<E>) {
    let xs = x.shape();
    let m = (xs.n * xs.volume()) as f64;
    let xd = x.data();
    let gd = gout.data();
    let mut gx = Tensor::zeros(xs);
    let mut ggamma = Tensor::zeros(Shape5::vector(xs.c));
    let mut gbeta = Tensor::zeros(Shape5::vector(xs.c));

    for c in 0..xs.c {
        let mu = saved.mean[c];
        let istd = saved.inv_std[c];
        let g = gamma.data()[c];
        let mut sum_g = E::ZERO;
        let mut sum_gx = E::ZERO;
        for r in channel_blocks(xs, c) {
            for (&gv, &xv) in gd[r.clone()].iter().zip(&xd[r]) {
                sum_g += gv;
                sum_gx += gv * (xv - mu) * istd;
            }
        }
        ggamma.data_mut()[c] = sum_gx;
        gbeta.data_mut()[c] = sum_g;
        let gxd = gx.data_mut();
        if saved.batch_stats {
            let inv_m = E::from_f64(1.0 / m);
            let mean_g = sum_g * inv_m;
            let mean_gx = sum_gx * inv_m;
            for r in channel_blocks(xs, c) {
                for ((o, &gv), &xv) in gxd[r.clone()].iter_mut().zip(&gd[r.clone()]).zip(&xd[r]) {
                    let xhat = (xv - mu) * istd;
                    *o = g * istd * (gv - mean_g - xhat * mean_gx);
                }
            }
        } else {
            let k = g * istd;
            for r in channel_blocks(xs, c) {
                for (o, &gv) in gxd[r.clone()].iter_mut().zip(&gd[r]) {
                    *o = gv * k;
                }
            }
        }
    }
    (gx, ggamma, gbeta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn normalizes_to_affine_stats() {
        // Sample-statistics check: output mean ~ beta, std ~ gamma.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let xs = Shape5::new(4, 3, 8, 16, 16); // N*T*H*W = 8192 per channel
        let x = Tensor::<f32>::randn(xs, 1.0, &mut rng);
        let gamma = Tensor::from_vec(vec![1.5f32, 0.5, 2.0]);
        let beta = Tensor::from_vec(vec![0.3f32, -0.7, 0.0]);
        let (y, _, _, _) = batch_norm_train(&x, &gamma, &beta, 1e-5).unwrap();
        let ys = y.shape();
        let vol = ys.volume();
        for c in 0..3 {
            let mut acc = 0.0f64;
            let mut count = 0usize;
            for n in 0..ys.n {
                let base = (n * ys.c + c) * vol;
                for &v in &y.data()[base..base + vol] {
                    acc += v as f64;
                    count += 1;
                }
            }
            let mean = acc / count as f64;
            let mut vacc = 0.0f64;
            for n in 0..ys.n {
                let base = (n * ys.c + c) * vol;
                for &v in &y.data()[base..base + vol] {
                    vacc += (v as f64 - mean).powi(2);
                }
            }
            let std = (vacc / count as f64).sqrt();
            assert!(
                (mean - beta.data()[c] as f64).abs() < 1e-2,
                "channel {c} mean {mean}"
            );
            assert!(
                (std - gamma.data()[c] as f64).abs() < 5e-2,
                "channel {c} std {std}"
            );
        }
    }

    #[test]
    fn eval_mode_uses_running_stats() {
        let x = Tensor::<f32>::full(Shape5::new(2, 1, 2, 2, 2), 3.0);
        let gamma = Tensor::from_vec(vec![2.0f32]);
        let beta = Tensor::from_vec(vec![1.0f32]);
        let (y, _) = batch_norm_eval(&x, &gamma, &beta, &[1.0], &[4.0 - 1e-5], 1e-5).unwrap();
        // (3 - 1) / 2 * 2 + 1 = 3
        for &v in y.data() {
            assert!((v - 3.0).abs() < 1e-4);
        }
    }
}
