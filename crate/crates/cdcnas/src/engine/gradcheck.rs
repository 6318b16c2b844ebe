//! Central finite-difference verification of every registered gradient rule.
//!
//! All checks run in f64: the difference quotient carries O(h^2) truncation
//! error plus O(eps/h) rounding error, and at h = 1e-4 only f64 keeps both
//! comfortably under the 1e-3 acceptance bound.

use crate::cdc::{CdcConfig, CdcVariant};
use crate::error::Result;
use crate::ops::norm::batch_norm_train;
use crate::tape::{Tape, Val};
use crate::tensor::{Shape5, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-4;
pub const GRAD_TOL: f64 = 1e-3;

/// Max over all input elements of |g_ad - g_fd| / max(1, |g_fd|) for the
/// scalar loss built by `f` over leaves of the given inputs.
pub fn finite_diff_check<F>(inputs: &[Tensor<f64>], f: F, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Val]) -> Result<Val>,
{
    let mut tape = Tape::new();
    let vals: Vec<Val> = inputs.iter().map(|t| tape.leaf(t.clone())).collect();
    let loss = f(&mut tape, &vals)?;
    let grads = tape.backward(loss)?;
    let analytic: Vec<Tensor<f64>> = vals
        .iter()
        .zip(inputs)
        .map(|(&v, t)| grads.get_or_zero(v, t.shape()))
        .collect();

    let eval = |work: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vals: Vec<Val> = work.iter().map(|t| tape.leaf(t.clone())).collect();
        let loss = f(&mut tape, &vals)?;
        Ok(tape.value(loss).data()[0])
    };

    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut worst = 0.0f64;
    for i in 0..work.len() {
        for j in 0..work[i].numel() {
            let orig = work[i].data()[j];
            work[i].data_mut()[j] = orig + h;
            let lp = eval(&work)?;
            work[i].data_mut()[j] = orig - h;
            let lm = eval(&work)?;
            work[i].data_mut()[j] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let err = (analytic[i].data()[j] - fd).abs() / fd.abs().max(1.0);
            if err > worst {
                worst = err;
            }
        }
    }
    Ok(worst)
}

/// Record a train-mode batch norm on a raw tape (fresh affine leaves come in
/// through `inputs`), for checks that need BN without a parameter store.
pub fn tape_batch_norm_train(
    tape: &mut Tape<f64>,
    x: Val,
    gamma: Val,
    beta: Val,
    eps: f64,
) -> Result<Val> {
    let (y, saved, _, _) = batch_norm_train(
        tape.value(x),
        tape.value(gamma),
        tape.value(beta),
        eps,
    )?;
    Ok(tape.record_batch_norm(x, gamma, beta, saved, y))
}

/// A tensor of shuffled, well-separated values (minimum gap 0.1): safe for
/// ops whose gradient is only piecewise smooth (max pooling, relu).
fn separated(shape: Shape5, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    let n = shape.numel();
    let mut vals: Vec<f64> = (0..n).map(|i| (i as f64 - n as f64 / 2.0) * 0.1).collect();
    vals.shuffle(rng);
    Tensor::new(shape, vals).expect("length matches by construction")
}

/// Fixed random projection making a scalar loss out of any output tensor;
/// more sensitive than a plain sum because sign errors cannot cancel.
fn projector(shape: Shape5, rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::uniform(shape, -1.0, 1.0, rng)
}

pub struct OpCheck {
    pub name: String,
    pub max_rel_err: f64,
}

/// Run the whole finite-difference suite. Each entry exercises one primitive
/// or one CDC variant/theta combination end to end through the tape.
pub fn run_suite() -> Result<Vec<OpCheck>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFD);
    let mut out: Vec<OpCheck> = Vec::new();

    let mut check = |name: String,
                     inputs: &[Tensor<f64>],
                     f: &dyn Fn(&mut Tape<f64>, &[Val]) -> Result<Val>|
     -> Result<()> {
        let err = finite_diff_check(inputs, f, FD_STEP)?;
        out.push(OpCheck {
            name,
            max_rel_err: err,
        });
        Ok(())
    };

    // conv3d, plain and with stride/dilation/groups/bias.
    {
        let x = Tensor::uniform(Shape5::new(2, 2, 3, 4, 4), -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(Shape5::new(3, 2, 3, 3, 3), -0.5, 0.5, &mut rng);
        let b = Tensor::uniform(Shape5::vector(3), -0.5, 0.5, &mut rng);
        let cfg = CdcConfig::vanilla((3, 3, 3), (1, 1, 1))?;
        let proj = projector(Shape5::new(2, 3, 3, 4, 4), &mut rng);
        check(
            "conv3d".into(),
            &[x, w, b],
            &move |t, v| {
                let y = t.conv(v[0], v[1], Some(v[2]), cfg.clone())?;
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }
    {
        let x = Tensor::uniform(Shape5::new(1, 4, 5, 6, 6), -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(Shape5::new(4, 2, 3, 3, 3), -0.5, 0.5, &mut rng);
        let cfg = CdcConfig::with_options(
            CdcVariant::Vanilla,
            0.0,
            (3, 3, 3),
            (1, 2, 2),
            (2, 1, 1),
            2,
        )?;
        let os = crate::ops::conv3d::conv_out_shape(x.shape(), w.shape(), &cfg.conv_spec())?;
        let proj = projector(os, &mut rng);
        check(
            "conv3d_stride_dilation_groups".into(),
            &[x, w],
            &move |t, v| {
                let y = t.conv(v[0], v[1], None, cfg.clone())?;
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    // CDC variants over the theta grid, plus the 5x1x1 lateral geometry.
    for variant in [CdcVariant::St, CdcVariant::T, CdcVariant::Tr] {
        for theta in [0.0, 0.3, 0.6, 1.0] {
            let x = Tensor::uniform(Shape5::new(1, 2, 4, 5, 5), -1.0, 1.0, &mut rng);
            let w = Tensor::uniform(Shape5::new(2, 2, 3, 3, 3), -0.5, 0.5, &mut rng);
            let cfg = CdcConfig::new(variant, theta, (3, 3, 3), (1, 1, 1))?;
            let os = crate::ops::conv3d::conv_out_shape(x.shape(), w.shape(), &cfg.conv_spec())?;
            let proj = projector(os, &mut rng);
            check(
                format!("cdc_{}_theta_{theta}", variant.name()),
                &[x, w],
                &move |t, v| {
                    let y = t.conv(v[0], v[1], None, cfg.clone())?;
                    t.weighted_sum(y, proj.clone())
                },
            )?;
        }
    }
    {
        let x = Tensor::uniform(Shape5::new(1, 2, 8, 3, 3), -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(Shape5::new(2, 2, 5, 1, 1), -0.5, 0.5, &mut rng);
        let cfg = CdcConfig::new(CdcVariant::Tr, 0.3, (5, 1, 1), (4, 1, 1))?;
        let os = crate::ops::conv3d::conv_out_shape(x.shape(), w.shape(), &cfg.conv_spec())?;
        let proj = projector(os, &mut rng);
        check(
            "cdc_tr_5x1x1_stride4".into(),
            &[x, w],
            &move |t, v| {
                let y = t.conv(v[0], v[1], None, cfg.clone())?;
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    // Max pool needs well-separated values so the argmax is stable under h.
    {
        let x = separated(Shape5::new(1, 2, 4, 6, 6), &mut rng);
        let proj = projector(Shape5::new(1, 2, 4, 3, 3), &mut rng);
        check(
            "maxpool3d".into(),
            &[x],
            &move |t, v| {
                let y = t.maxpool(v[0], (1, 2, 2), (1, 2, 2))?;
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    // ReLU: keep inputs away from the kink at zero.
    {
        let x = separated(Shape5::new(1, 3, 2, 4, 4), &mut rng)
            .map(|v| if v >= 0.0 { v + 0.05 } else { v - 0.05 });
        let proj = projector(x.shape(), &mut rng);
        check(
            "relu".into(),
            &[x],
            &move |t, v| {
                let y = t.relu(v[0]);
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    {
        let x = Tensor::uniform(Shape5::new(2, 3, 3, 4, 4), -1.0, 1.0, &mut rng);
        let gamma = Tensor::uniform(Shape5::vector(3), 0.5, 1.5, &mut rng);
        let beta = Tensor::uniform(Shape5::vector(3), -0.5, 0.5, &mut rng);
        let proj = projector(x.shape(), &mut rng);
        check(
            "batch_norm3d".into(),
            &[x, gamma, beta],
            &move |t, v| {
                let y = tape_batch_norm_train(t, v[0], v[1], v[2], 1e-5)?;
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    {
        let x = Tensor::uniform(Shape5::new(2, 3, 3, 4, 4), -1.0, 1.0, &mut rng);
        let proj = projector(Shape5::new(2, 3, 1, 1, 1), &mut rng);
        check(
            "global_avg_pool".into(),
            &[x],
            &move |t, v| {
                let y = t.global_avg_pool(v[0]);
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    {
        let x = Tensor::uniform(Shape5::new(3, 5, 1, 1, 1), -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(Shape5::new(4, 5, 1, 1, 1), -0.5, 0.5, &mut rng);
        let b = Tensor::uniform(Shape5::vector(4), -0.5, 0.5, &mut rng);
        let proj = projector(Shape5::new(3, 4, 1, 1, 1), &mut rng);
        check(
            "linear".into(),
            &[x, w, b],
            &move |t, v| {
                let y = t.linear(v[0], v[1], Some(v[2]))?;
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    {
        let a = Tensor::uniform(Shape5::new(2, 2, 2, 3, 3), -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(Shape5::new(2, 3, 2, 3, 3), -1.0, 1.0, &mut rng);
        let proj = projector(Shape5::new(2, 5, 2, 3, 3), &mut rng);
        check(
            "concat_channels".into(),
            &[a, b],
            &move |t, v| {
                let y = t.concat_channels(&[v[0], v[1]])?;
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    {
        let x = Tensor::uniform(Shape5::new(2, 6, 2, 3, 3), -1.0, 1.0, &mut rng);
        let proj = projector(Shape5::new(2, 3, 2, 3, 3), &mut rng);
        check(
            "slice_channels".into(),
            &[x],
            &move |t, v| {
                let y = t.slice_channels(v[0], 2, 3)?;
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    {
        let x = Tensor::uniform(Shape5::new(2, 6, 1, 1, 1), -2.0, 2.0, &mut rng);
        let proj = projector(x.shape(), &mut rng);
        check(
            "softmax".into(),
            &[x],
            &move |t, v| {
                let y = t.softmax(v[0]);
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    {
        let x = Tensor::uniform(Shape5::new(3, 5, 1, 1, 1), -2.0, 2.0, &mut rng);
        check(
            "cross_entropy".into(),
            &[x],
            &move |t, v| t.cross_entropy(v[0], vec![1, 4, 0]),
        )?;
    }

    {
        let x = Tensor::uniform(Shape5::new(1, 4, 2, 3, 3), -1.0, 1.0, &mut rng);
        let proj = projector(x.shape(), &mut rng);
        check(
            "scalar_mul".into(),
            &[x],
            &move |t, v| {
                let y = t.scale(v[0], -1.7);
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    {
        let a = Tensor::uniform(Shape5::new(1, 4, 2, 3, 3), -1.0, 1.0, &mut rng);
        let b = Tensor::uniform(Shape5::new(1, 4, 2, 3, 3), -1.0, 1.0, &mut rng);
        let proj = projector(a.shape(), &mut rng);
        check(
            "add".into(),
            &[a, b],
            &move |t, v| {
                let y = t.add(v[0], v[1])?;
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    {
        let x = Tensor::uniform(Shape5::vector(6), -1.0, 1.0, &mut rng);
        let proj = projector(x.shape(), &mut rng);
        check(
            "exp".into(),
            &[x],
            &move |t, v| {
                let y = t.exp(v[0]);
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    {
        let x = Tensor::uniform(Shape5::new(1, 3, 2, 2, 2), -1.0, 1.0, &mut rng);
        let coef = Tensor::uniform(Shape5::vector(4), -1.0, 1.0, &mut rng);
        let proj = projector(x.shape(), &mut rng);
        check(
            "scale_by_entry".into(),
            &[x, coef],
            &move |t, v| {
                let y = t.scale_by_entry(v[0], v[1], 2)?;
                t.weighted_sum(y, proj.clone())
            },
        )?;
    }

    // Composite graph: conv -> relu -> gap -> cross entropy.
    {
        let x = Tensor::uniform(Shape5::new(1, 2, 4, 6, 6), -1.0, 1.0, &mut rng);
        let w = Tensor::uniform(Shape5::new(3, 2, 3, 3, 3), -0.5, 0.5, &mut rng);
        let b = Tensor::uniform(Shape5::vector(3), -0.2, 0.2, &mut rng);
        let cfg = CdcConfig::vanilla((3, 3, 3), (1, 1, 1))?;
        check(
            "composite_conv_relu_gap_xent".into(),
            &[x, w, b],
            &move |t, v| {
                let y = t.conv(v[0], v[1], Some(v[2]), cfg.clone())?;
                let y = t.relu(y);
                let y = t.global_avg_pool(y);
                t.cross_entropy(y, vec![2])
            },
        )?;
    }

    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn full_suite_under_tolerance() {
        let results = run_suite().unwrap();
        assert!(results.len() >= 25, "suite unexpectedly small");
        for r in &results {
            assert!(
                r.max_rel_err <= GRAD_TOL,
                "{} failed gradient check: {}",
                r.name,
                r.max_rel_err
            );
        }
    }
}
