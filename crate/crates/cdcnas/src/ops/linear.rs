//! Fully connected layer over pooled feature vectors.

use crate::elem::{gemm_a_bt, gemm_at_b, gemm_rowmajor, Elem};
use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor};

fn check_vector_batch(xs: Shape5) -> Result<()> {
    if xs.volume() != 1 {
        return Err(Error::shape(format!(
            "linear expects (N, C, 1, 1, 1) features, got {xs}"
        )));
    }
    Ok(())
}

/// y[n,k] = sum_c w[k,c] * x[n,c] + b[k]; weight shape (K, C, 1, 1, 1).
pub fn linear_forward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: Option<&Tensor<E>>,
) -> Result<Tensor<E>> {
    let xs = x.shape();
    let ws = w.shape();
    check_vector_batch(xs)?;
    if ws.volume() != 1 || ws.c != xs.c {
        return Err(Error::shape(format!(
            "linear weight {} incompatible with input {}",
            ws, xs
        )));
    }
    let (n, c, k) = (xs.n, xs.c, ws.n);
    let mut out = Tensor::zeros(Shape5::new(n, k, 1, 1, 1));
    gemm_a_bt(n, c, k, E::ONE, x.data(), w.data(), E::ZERO, out.data_mut());
    if let Some(b) = bias {
        if b.shape() != Shape5::vector(k) {
            return Err(Error::shape("linear bias length mismatch"));
        }
        let bd = b.data();
        let od = out.data_mut();
        for ni in 0..n {
            for ki in 0..k {
                od[ni * k + ki] += bd[ki];
            }
        }
    }
    Ok(out)
}

pub fn linear_backward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    gout: &Tensor<E>,
    need_bias: bool,
) -> (Tensor<E>, Tensor<E>, Option<Tensor<E>>) {
    let xs = x.shape();
    let ws = w.shape();
    let (n, c, k) = (xs.n, xs.c, ws.n);
    let mut gx = Tensor::zeros(xs);
    // gx (n x c) = gout (n x k) . w (k x c)
    gemm_rowmajor(n, k, c, E::ONE, gout.data(), w.data(), E::ZERO, gx.data_mut());
    let mut gw = Tensor::zeros(ws);
    // gw (k x c) = gout^T (k x n) . x (n x c)
    gemm_at_b(k, n, c, E::ONE, gout.data(), x.data(), E::ZERO, gw.data_mut());
    let gbias = need_bias.then(|| {
        let mut gb = Tensor::zeros(Shape5::vector(k));
        let gbd = gb.data_mut();
        for ni in 0..n {
            for ki in 0..k {
                gbd[ki] += gout.data()[ni * k + ki];
            }
        }
        gb
    });
    (gx, gw, gbias)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forward_matches_manual() {
        let x = Tensor::<f32>::new(Shape5::new(2, 3, 1, 1, 1), vec![1., 2., 3., 4., 5., 6.]).unwrap();
        let w = Tensor::<f32>::new(Shape5::new(2, 3, 1, 1, 1), vec![1., 0., -1., 0.5, 0.5, 0.5]).unwrap();
        let b = Tensor::from_vec(vec![10.0f32, 0.0]);
        let y = linear_forward(&x, &w, Some(&b)).unwrap();
        assert_eq!(y.data(), &[8.0, 3.0, 8.0, 7.5]);
    }

    #[test]
    fn rejects_unpooled_input() {
        let x = Tensor::<f32>::zeros(Shape5::new(1, 3, 2, 1, 1));
        let w = Tensor::<f32>::zeros(Shape5::new(2, 3, 1, 1, 1));
        assert!(linear_forward(&x, &w, None).is_err());
    }
}
