//! Pointwise ops, channel concat/slice, softmax and cross entropy.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor};

pub fn relu_forward<E: Elem>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| v.maximum(E::ZERO))
}

pub fn relu_backward<E: Elem>(x: &Tensor<E>, gout: &Tensor<E>) -> Tensor<E> {
    let mut gx = gout.clone();
    for (g, &v) in gx.data_mut().iter_mut().zip(x.data()) {
        if v <= E::ZERO {
            *g = E::ZERO;
        }
    }
    gx
}

pub fn add_forward<E: Elem>(a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    a.zip_map(b, |x, y| x + y)
}

pub fn scale_forward<E: Elem>(x: &Tensor<E>, k: f64) -> Tensor<E> {
    let kv = E::from_f64(k);
    x.map(|v| v * kv)
}

pub fn exp_forward<E: Elem>(x: &Tensor<E>) -> Tensor<E> {
    x.map(|v| v.exp())
}

/// Multiply a whole tensor by one entry of a coefficient tensor (used to
/// apply one softmax weight or edge coefficient to a candidate output).
pub fn scale_by_entry_forward<E: Elem>(
    x: &Tensor<E>,
    coef: &Tensor<E>,
    idx: usize,
) -> Result<Tensor<E>> {
    if idx >= coef.numel() {
        return Err(Error::shape(format!(
            "coefficient index {idx} out of range for {} entries",
            coef.numel()
        )));
    }
    let k = coef.data()[idx];
    Ok(x.map(|v| v * k))
}

/// Concatenate along the channel axis; all other extents must agree.
pub fn concat_channels_forward<E: Elem>(xs: &[&Tensor<E>]) -> Result<Tensor<E>> {
    if xs.is_empty() {
        return Err(Error::shape("concat of zero tensors"));
    }
    let first = xs[0].shape();
    let mut c_total = 0usize;
    for x in xs {
        let s = x.shape();
        if (s.n, s.t, s.h, s.w) != (first.n, first.t, first.h, first.w) {
            return Err(Error::shape(format!(
                "concat extents mismatch: {} vs {}",
                s, first
            )));
        }
        c_total += s.c;
    }
    let os = Shape5::new(first.n, c_total, first.t, first.h, first.w);
    let vol = first.volume();
    let mut out = Tensor::zeros(os);
    let od = out.data_mut();
    for n in 0..first.n {
        let mut c_off = 0usize;
        for x in xs {
            let s = x.shape();
            let src = &x.data()[n * s.c * vol..(n + 1) * s.c * vol];
            let dst_base = (n * c_total + c_off) * vol;
            od[dst_base..dst_base + s.c * vol].copy_from_slice(src);
            c_off += s.c;
        }
    }
    Ok(out)
}

/// Split a concat gradient back into per-input gradients.
pub fn concat_channels_backward<E: Elem>(
    shapes: &[Shape5],
    gout: &Tensor<E>,
) -> Vec<Tensor<E>> {
    let os = gout.shape();
    let vol = os.volume();
    let mut grads: Vec<Tensor<E>> = shapes.iter().map(|&s| Tensor::zeros(s)).collect();
    for n in 0..os.n {
        let mut c_off = 0usize;
        for (gi, s) in shapes.iter().enumerate() {
            let src_base = (n * os.c + c_off) * vol;
            let dst = &mut grads[gi].data_mut()[n * s.c * vol..(n + 1) * s.c * vol];
            dst.copy_from_slice(&gout.data()[src_base..src_base + s.c * vol]);
            c_off += s.c;
        }
    }
    grads
}

/// Copy channels [start, start+len) of the input.
pub fn slice_channels_forward<E: Elem>(
    x: &Tensor<E>,
    start: usize,
    len: usize,
) -> Result<Tensor<E>> {
    let xs = x.shape();
    if start + len > xs.c || len == 0 {
        return Err(Error::shape(format!(
            "channel slice [{start}, {}) out of range for {} channels",
            start + len,
            xs.c
        )));
    }
    let vol = xs.volume();
    let os = Shape5::new(xs.n, len, xs.t, xs.h, xs.w);
    let mut out = Tensor::zeros(os);
    let od = out.data_mut();
    for n in 0..xs.n {
        let src_base = (n * xs.c + start) * vol;
        od[n * len * vol..(n + 1) * len * vol]
            .copy_from_slice(&x.data()[src_base..src_base + len * vol]);
    }
    Ok(out)
}

pub fn slice_channels_backward<E: Elem>(
    input_shape: Shape5,
    start: usize,
    gout: &Tensor<E>,
) -> Tensor<E> {
    let os = gout.shape();
    let vol = os.volume();
    let mut gx = Tensor::zeros(input_shape);
    let gd = gx.data_mut();
    for n in 0..os.n {
        let dst_base = (n * input_shape.c + start) * vol;
        gd[dst_base..dst_base + os.c * vol]
            .copy_from_slice(&gout.data()[n * os.c * vol..(n + 1) * os.c * vol]);
    }
    gx
}

/// Softmax over the channel axis, per (n, t, h, w) position.
pub fn softmax_forward<E: Elem>(x: &Tensor<E>) -> Tensor<E> {
    let xs = x.shape();
    let vol = xs.volume();
    let mut out = Tensor::zeros(xs);
    let xd = x.data();
    let od = out.data_mut();
    for n in 0..xs.n {
        for p in 0..vol {
            let mut maxv = E::from_f64(f64::NEG_INFINITY);
            for c in 0..xs.c {
                let v = xd[(n * xs.c + c) * vol + p];
                maxv = maxv.maximum(v);
            }
            let mut denom = E::ZERO;
            for c in 0..xs.c {
                let e = (xd[(n * xs.c + c) * vol + p] - maxv).exp();
                od[(n * xs.c + c) * vol + p] = e;
                denom += e;
            }
            let inv = E::ONE / denom;
            for c in 0..xs.c {
                od[(n * xs.c + c) * vol + p] *= inv;
            }
        }
    }
    out
}

/// d softmax: gx_c = y_c * (g_c - sum_k g_k y_k), per position.
pub fn softmax_backward<E: Elem>(y: &Tensor<E>, gout: &Tensor<E>) -> Tensor<E> {
    let ys = y.shape();
    let vol = ys.volume();
    let mut gx = Tensor::zeros(ys);
    let yd = y.data();
    let gd = gout.data();
    let od = gx.data_mut();
    for n in 0..ys.n {
        for p in 0..vol {
            let mut dot = E::ZERO;
            for c in 0..ys.c {
                let i = (n * ys.c + c) * vol + p;
                dot += gd[i] * yd[i];
            }
            for c in 0..ys.c {
                let i = (n * ys.c + c) * vol + p;
                od[i] = yd[i] * (gd[i] - dot);
            }
        }
    }
    gx
}

/// Mean cross entropy of logits (N, C, 1, 1, 1) against integer labels.
/// Returns the scalar loss and the softmax probabilities for backward.
pub fn cross_entropy_forward<E: Elem>(
    logits: &Tensor<E>,
    labels: &[usize],
) -> Result<(Tensor<E>, Tensor<E>)> {
    let xs = logits.shape();
    if xs.volume() != 1 {
        return Err(Error::shape(format!(
            "cross entropy expects (N, C, 1, 1, 1) logits, got {xs}"
        )));
    }
    if labels.len() != xs.n {
        return Err(Error::shape(format!(
            "{} labels for batch of {}",
            labels.len(),
            xs.n
        )));
    }
    for &l in labels {
        if l >= xs.c {
            return Err(Error::shape(format!(
                "label {l} out of range for {} classes",
                xs.c
            )));
        }
    }
    let probs = softmax_forward(logits);
    let mut loss = E::ZERO;
    for (n, &l) in labels.iter().enumerate() {
        let p = probs.data()[n * xs.c + l].maximum(E::from_f64(1e-30));
        loss -= p.ln();
    }
    loss *= E::from_f64(1.0 / xs.n as f64);
    Ok((Tensor::scalar(loss), probs))
}

/// d loss / d logits = (probs - onehot) / N, scaled by the upstream scalar.
pub fn cross_entropy_backward<E: Elem>(
    probs: &Tensor<E>,
    labels: &[usize],
    gloss: E,
) -> Tensor<E> {
    let xs = probs.shape();
    let mut gx = probs.clone();
    let scale = gloss * E::from_f64(1.0 / xs.n as f64);
    let gd = gx.data_mut();
    for (n, &l) in labels.iter().enumerate() {
        gd[n * xs.c + l] -= E::ONE;
    }
    for v in gd.iter_mut() {
        *v *= scale;
    }
    gx
}

/// Scalar loss sum(x * coef) with a fixed coefficient tensor; the workhorse
/// of the finite-difference harness.
pub fn weighted_sum_forward<E: Elem>(x: &Tensor<E>, coef: &Tensor<E>) -> Result<Tensor<E>> {
    if x.shape() != coef.shape() {
        return Err(Error::shape("weighted_sum coefficient shape mismatch"));
    }
    let mut acc = E::ZERO;
    for (&a, &b) in x.data().iter().zip(coef.data()) {
        acc += a * b;
    }
    Ok(Tensor::scalar(acc))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_logits() {
        let x = Tensor::<f32>::full(Shape5::new(1, 5, 1, 1, 1), 2.5);
        let y = softmax_forward(&x);
        for &v in y.data() {
            assert!((v - 0.2).abs() < 1e-6);
        }
    }

    #[test]
    fn cross_entropy_confident_prediction() {
        // Loss tends to 0 as the correct-class logit dominates.
        let mut prev = f32::INFINITY;
        for conf in [1.0f32, 4.0, 16.0, 64.0] {
            let x = Tensor::<f32>::new(
                Shape5::new(1, 3, 1, 1, 1),
                vec![conf, 0.0, 0.0],
            )
            .unwrap();
            let (loss, _) = cross_entropy_forward(&x, &[0]).unwrap();
            let l = loss.data()[0];
            assert!(l < prev);
            prev = l;
        }
        assert!(prev < 1e-6);
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let x = Tensor::<f32>::zeros(Shape5::new(1, 3, 1, 1, 1));
        assert!(cross_entropy_forward(&x, &[3]).is_err());
    }

    #[test]
    fn concat_and_slice_roundtrip() {
        let a = Tensor::<f32>::from_fn(Shape5::new(2, 2, 1, 2, 2), |i| i as f32);
        let b = Tensor::<f32>::from_fn(Shape5::new(2, 3, 1, 2, 2), |i| 100.0 + i as f32);
        let y = concat_channels_forward(&[&a, &b]).unwrap();
        assert_eq!(y.shape(), Shape5::new(2, 5, 1, 2, 2));
        let a2 = slice_channels_forward(&y, 0, 2).unwrap();
        let b2 = slice_channels_forward(&y, 2, 3).unwrap();
        assert_eq!(a, a2);
        assert_eq!(b, b2);
    }

    #[test]
    fn concat_rejects_mismatched_extents() {
        let a = Tensor::<f32>::zeros(Shape5::new(1, 2, 2, 2, 2));
        let b = Tensor::<f32>::zeros(Shape5::new(1, 2, 3, 2, 2));
        assert!(concat_channels_forward(&[&a, &b]).is_err());
    }
}
