//! Max pooling and global average pooling.

use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor};

/// Max pool with explicit window/stride. Returns the pooled tensor and the
/// flat input index of each selected maximum (ties go to the first index in
/// scan order, which keeps the backward pass deterministic).
pub fn maxpool3d_forward<E: Elem>(
    x: &Tensor<E>,
    window: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<(Tensor<E>, Vec<usize>)> {
    let xs = x.shape();
    if window.0 == 0
        || window.1 == 0
        || window.2 == 0
        || window.0 > xs.t
        || window.1 > xs.h
        || window.2 > xs.w
    {
        return Err(Error::shape(format!(
            "pool window {:?} invalid for input {}",
            window, xs
        )));
    }
    if stride.0 == 0 || stride.1 == 0 || stride.2 == 0 {
        return Err(Error::shape("pool stride components must be >= 1"));
    }
    let to = (xs.t - window.0) / stride.0 + 1;
    let ho = (xs.h - window.1) / stride.1 + 1;
    let wo = (xs.w - window.2) / stride.2 + 1;
    let os = Shape5::new(xs.n, xs.c, to, ho, wo);
    let mut out = Tensor::zeros(os);
    let mut argmax = vec![0usize; os.numel()];
    let xd = x.data();
    let od = out.data_mut();
    let mut oi = 0usize;
    for n in 0..xs.n {
        for c in 0..xs.c {
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = E::from_f64(f64::NEG_INFINITY);
                        let mut best_idx = 0usize;
                        for jt in 0..window.0 {
                            let t = ot * stride.0 + jt;
                            for jh in 0..window.1 {
                                let h = oh * stride.1 + jh;
                                let row = xs.index(n, c, t, h, ow * stride.2);
                                for jw in 0..window.2 {
                                    let v = xd[row + jw];
                                    if v > best {
                                        best = v;
                                        best_idx = row + jw;
                                    }
                                }
                            }
                        }
                        od[oi] = best;
                        argmax[oi] = best_idx;
                        oi += 1;
                    }
                }
            }
        }
    }
    Ok((out, argmax))
}

pub fn maxpool3d_backward<E: Elem>(
    input_shape: Shape5,
    argmax: &[usize],
    gout: &Tensor<E>,
) -> Tensor<E> {
    let mut gx = Tensor::zeros(input_shape);
    let gxd = gx.data_mut();
    for (gi, &src) in gout.data().iter().zip(argmax) {
        gxd[src] += *gi;
    }
    gx
}

/// Mean over (T, H, W) per (sample, channel); output shape (N, C, 1, 1, 1).
pub fn global_avg_pool_forward<E: Elem>(x: &Tensor<E>) -> Tensor<E> {
    let xs = x.shape();
    let vol = xs.volume();
    let inv = E::from_f64(1.0 / vol as f64);
    let mut out = Tensor::zeros(Shape5::new(xs.n, xs.c, 1, 1, 1));
    let od = out.data_mut();
    let xd = x.data();
    for (i, o) in od.iter_mut().enumerate() {
        let base = i * vol;
        let mut acc = E::ZERO;
        for &v in &xd[base..base + vol] {
            acc += v;
        }
        *o = acc * inv;
    }
    out
}

pub fn global_avg_pool_backward<E: Elem>(input_shape: Shape5, gout: &Tensor<E>) -> Tensor<E> {
    let vol = input_shape.volume();
    let inv = E::from_f64(1.0 / vol as f64);
    let mut gx = Tensor::zeros(input_shape);
    let gd = gx.data_mut();
    for (i, &g) in gout.data().iter().enumerate() {
        let gv = g * inv;
        for v in &mut gd[i * vol..(i + 1) * vol] {
            *v = gv;
        }
    }
    gx
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn arange_cube_max() {
        let x = Tensor::<f32>::from_fn(Shape5::new(1, 1, 2, 2, 2), |i| i as f32);
        let (y, arg) = maxpool3d_forward(&x, (2, 2, 2), (2, 2, 2)).unwrap();
        assert_eq!(y.shape(), Shape5::new(1, 1, 1, 1, 1));
        assert_eq!(y.data()[0], 7.0);
        assert_eq!(arg[0], 7);
    }

    #[test]
    fn tie_goes_to_first_index() {
        let x = Tensor::<f32>::full(Shape5::new(1, 1, 2, 2, 2), 3.0);
        let (y, arg) = maxpool3d_forward(&x, (2, 2, 2), (2, 2, 2)).unwrap();
        assert_eq!(y.data()[0], 3.0);
        assert_eq!(arg[0], 0);
        let gout = Tensor::<f32>::scalar(1.0);
        let gx = maxpool3d_backward(x.shape(), &arg, &gout);
        assert_eq!(gx.data()[0], 1.0);
        assert!(gx.data()[1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matches_naive_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let x = Tensor::<f32>::randn(Shape5::new(1, 3, 8, 16, 16), 1.0, &mut rng);
        let (y, _) = maxpool3d_forward(&x, (1, 2, 2), (1, 2, 2)).unwrap();
        let naive = oracle::maxpool3d_naive(&x, (1, 2, 2), (1, 2, 2)).unwrap();
        assert_eq!(y, naive);
    }

    #[test]
    fn invalid_window_rejected() {
        let x = Tensor::<f32>::zeros(Shape5::new(1, 1, 2, 2, 2));
        assert!(maxpool3d_forward(&x, (3, 1, 1), (1, 1, 1)).is_err());
        assert!(maxpool3d_forward(&x, (0, 1, 1), (1, 1, 1)).is_err());
    }

    #[test]
    fn gap_mean_and_backward() {
        let x = Tensor::<f32>::from_fn(Shape5::new(1, 2, 1, 2, 2), |i| i as f32);
        let y = global_avg_pool_forward(&x);
        assert_eq!(y.data(), &[1.5, 5.5]);
        let g = Tensor::<f32>::new(Shape5::new(1, 2, 1, 1, 1), vec![4.0, 8.0]).unwrap();
        let gx = global_avg_pool_backward(x.shape(), &g);
        assert_eq!(gx.data(), &[1.0, 1.0, 1.0, 1.0, 2.0, 2.0, 2.0, 2.0]);
    }
}
