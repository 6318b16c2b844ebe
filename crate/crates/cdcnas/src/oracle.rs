//! Reference implementations used to verify (and benchmark against) the
//! production kernels.
//!
//! Everything here is written as direct nested loops over the defining sums,
//! with no im2col, no GEMM and no decomposition of the difference term, so a
//! bug in the fast path cannot hide in a shared code path. These functions
//! are deliberately slow; they exist for tests and for `cdcnas bench`.

use crate::cdc::{CdcConfig, CdcVariant};
use crate::elem::Elem;
use crate::error::{Error, Result};
use crate::ops::conv3d::{conv_out_shape, ConvSpec};
use crate::tensor::{Shape5, Tensor};

/// Zero-padded read.
#[inline]
fn padded<E: Elem>(x: &Tensor<E>, n: usize, c: usize, t: isize, h: isize, w: isize) -> E {
    let s = x.shape();
    if t < 0 || h < 0 || w < 0 || t as usize >= s.t || h as usize >= s.h || w as usize >= s.w {
        E::ZERO
    } else {
        x.at(n, c, t as usize, h as usize, w as usize)
    }
}

/// Direct seven-nested-loop 3-D convolution.
pub fn conv3d_naive<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    let xs = x.shape();
    let ws = w.shape();
    let os = conv_out_shape(xs, ws, spec)?;
    let cin_g = xs.c / spec.groups;
    let cout_g = ws.n / spec.groups;
    let mut out = Tensor::zeros(os);
    for n in 0..os.n {
        for o in 0..os.c {
            let g = o / cout_g;
            let b = bias.map(|bb| bb.data()[o]).unwrap_or(E::ZERO);
            for ot in 0..os.t {
                for oh in 0..os.h {
                    for ow in 0..os.w {
                        let mut acc = E::ZERO;
                        for cg in 0..cin_g {
                            let c = g * cin_g + cg;
                            for jt in 0..ws.t {
                                let t = (ot * spec.stride.0 + jt * spec.dilation.0) as isize
                                    - spec.padding.0 as isize;
                                for jh in 0..ws.h {
                                    let h = (oh * spec.stride.1 + jh * spec.dilation.1) as isize
                                        - spec.padding.1 as isize;
                                    for jw in 0..ws.w {
                                        let wi = (ow * spec.stride.2 + jw * spec.dilation.2)
                                            as isize
                                            - spec.padding.2 as isize;
                                        acc += w.at(o, cg, jt, jh, jw)
                                            * padded(x, n, c, t, h, wi);
                                    }
                                }
                            }
                        }
                        out.set(n, o, ot, oh, ow, acc + b);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Center value of the difference term at one output position, per the
/// sampled-difference definition: the center tap for `St`/`T`, the mean of
/// the spatial-center taps over all temporal planes for `Tr`.
#[allow(clippy::too_many_arguments)]
fn literal_center<E: Elem>(
    x: &Tensor<E>,
    cfg: &CdcConfig,
    n: usize,
    c: usize,
    ot: usize,
    oh: usize,
    ow: usize,
) -> E {
    let (kt, kh, kw) = cfg.geometry.extents;
    let (dt, dh, dw) = cfg.geometry.dilation;
    let (st, sh, sw) = cfg.stride;
    let (pt, ph, pw) = cfg.padding;
    let (ct, ch, cw) = ((kt - 1) / 2, (kh - 1) / 2, (kw - 1) / 2);
    let hh = (oh * sh + ch * dh) as isize - ph as isize;
    let ww = (ow * sw + cw * dw) as isize - pw as isize;
    match cfg.variant {
        CdcVariant::Tr => {
            let mut acc = E::ZERO;
            for jt in 0..kt {
                let tt = (ot * st + jt * dt) as isize - pt as isize;
                acc += padded(x, n, c, tt, hh, ww);
            }
            acc * E::from_f64(1.0 / kt as f64)
        }
        _ => {
            let tt = (ot * st + ct * dt) as isize - pt as isize;
            padded(x, n, c, tt, hh, ww)
        }
    }
}

/// Literal sampled-difference CDC forward: per tap, the in-region part of the
/// kernel aggregates `theta * (x(p0+pn) - center) + (1-theta) * x(p0+pn)` and
/// the out-of-region part aggregates plain samples.
pub fn cdc_literal_forward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    cfg: &CdcConfig,
) -> Result<Tensor<E>> {
    let spec = cfg.conv_spec();
    let xs = x.shape();
    let ws = w.shape();
    let os = conv_out_shape(xs, ws, &spec)?;
    let cin_g = xs.c / spec.groups;
    let cout_g = ws.n / spec.groups;
    let theta = E::from_f64(cfg.theta);
    let region = cfg.region_indices();
    let mut in_region = vec![false; ws.t * ws.h * ws.w];
    for &r in &region {
        in_region[r] = true;
    }
    let mut out = Tensor::zeros(os);
    for n in 0..os.n {
        for o in 0..os.c {
            let g = o / cout_g;
            let b = bias.map(|bb| bb.data()[o]).unwrap_or(E::ZERO);
            for ot in 0..os.t {
                for oh in 0..os.h {
                    for ow in 0..os.w {
                        let mut acc = E::ZERO;
                        for cg in 0..cin_g {
                            let c = g * cin_g + cg;
                            let center = literal_center(x, cfg, n, c, ot, oh, ow);
                            let mut tap = 0usize;
                            for jt in 0..ws.t {
                                let t = (ot * spec.stride.0 + jt * spec.dilation.0) as isize
                                    - spec.padding.0 as isize;
                                for jh in 0..ws.h {
                                    let h = (oh * spec.stride.1 + jh * spec.dilation.1) as isize
                                        - spec.padding.1 as isize;
                                    for jw in 0..ws.w {
                                        let wi = (ow * spec.stride.2 + jw * spec.dilation.2)
                                            as isize
                                            - spec.padding.2 as isize;
                                        let sample = padded(x, n, c, t, h, wi);
                                        let wv = w.at(o, cg, jt, jh, jw);
                                        if in_region[tap] {
                                            acc += wv * (theta * (sample - center)
                                                + (E::ONE - theta) * sample);
                                        } else {
                                            acc += wv * sample;
                                        }
                                        tap += 1;
                                    }
                                }
                            }
                        }
                        out.set(n, o, ot, oh, ow, acc + b);
                    }
                }
            }
        }
    }
    Ok(out)
}

pub struct LiteralGrads<E: Elem> {
    pub gx: Tensor<E>,
    pub gw: Tensor<E>,
    pub gbias: Tensor<E>,
}

/// Analytic gradients of the literal sampled-difference form, derived tap by
/// tap from the forward loops. Independent of both the im2col machinery and
/// the decomposed correction used by the production backward.
pub fn cdc_literal_backward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    cfg: &CdcConfig,
    gout: &Tensor<E>,
) -> Result<LiteralGrads<E>> {
    let spec = cfg.conv_spec();
    let xs = x.shape();
    let ws = w.shape();
    let os = conv_out_shape(xs, ws, &spec)?;
    if gout.shape() != os {
        return Err(Error::shape("gradient shape mismatch in literal backward"));
    }
    let cin_g = xs.c / spec.groups;
    let cout_g = ws.n / spec.groups;
    let theta = E::from_f64(cfg.theta);
    let region = cfg.region_indices();
    let mut in_region = vec![false; ws.t * ws.h * ws.w];
    for &r in &region {
        in_region[r] = true;
    }
    let (kt, kh, kw) = cfg.geometry.extents;
    let (dt, dh, dw) = cfg.geometry.dilation;
    let (ct, ch, cw) = ((kt - 1) / 2, (kh - 1) / 2, (kw - 1) / 2);
    let robust = cfg.variant == CdcVariant::Tr;
    let inv_kt = E::from_f64(1.0 / kt as f64);

    let mut gx = Tensor::zeros(xs);
    let mut gw = Tensor::zeros(ws);
    let mut gbias = Tensor::zeros(Shape5::vector(os.c));

    let scatter = |gx: &mut Tensor<E>, n: usize, c: usize, t: isize, h: isize, wi: isize, v: E| {
        if t >= 0
            && h >= 0
            && wi >= 0
            && (t as usize) < xs.t
            && (h as usize) < xs.h
            && (wi as usize) < xs.w
        {
            let idx = xs.index(n, c, t as usize, h as usize, wi as usize);
            gx.data_mut()[idx] += v;
        }
    };

    for n in 0..os.n {
        for o in 0..os.c {
            let g = o / cout_g;
            for ot in 0..os.t {
                for oh in 0..os.h {
                    for ow in 0..os.w {
                        let go = gout.at(n, o, ot, oh, ow);
                        if go == E::ZERO {
                            continue;
                        }
                        gbias.data_mut()[o] += go;
                        for cg in 0..cin_g {
                            let c = g * cin_g + cg;
                            let center = literal_center(x, cfg, n, c, ot, oh, ow);
                            let mut region_wsum = E::ZERO;
                            let mut tap = 0usize;
                            for jt in 0..ws.t {
                                let t = (ot * spec.stride.0 + jt * spec.dilation.0) as isize
                                    - spec.padding.0 as isize;
                                for jh in 0..ws.h {
                                    let h = (oh * spec.stride.1 + jh * spec.dilation.1) as isize
                                        - spec.padding.1 as isize;
                                    for jw in 0..ws.w {
                                        let wi = (ow * spec.stride.2 + jw * spec.dilation.2)
                                            as isize
                                            - spec.padding.2 as isize;
                                        let sample = padded(x, n, c, t, h, wi);
                                        let wv = w.at(o, cg, jt, jh, jw);
                                        let widx = ws.index(o, cg, jt, jh, jw);
                                        if in_region[tap] {
                                            gw.data_mut()[widx] +=
                                                go * (sample - theta * center);
                                            scatter(&mut gx, n, c, t, h, wi, go * wv);
                                            region_wsum += wv;
                                        } else {
                                            gw.data_mut()[widx] += go * sample;
                                            scatter(&mut gx, n, c, t, h, wi, go * wv);
                                        }
                                        tap += 1;
                                    }
                                }
                            }
                            // d(out)/d(center) = -theta * sum of in-region weights.
                            if region_wsum != E::ZERO && theta != E::ZERO {
                                let gcenter = -theta * go * region_wsum;
                                let hh = (oh * spec.stride.1 + ch * dh) as isize
                                    - spec.padding.1 as isize;
                                let ww2 = (ow * spec.stride.2 + cw * dw) as isize
                                    - spec.padding.2 as isize;
                                if robust {
                                    for jt in 0..kt {
                                        let tt = (ot * spec.stride.0 + jt * dt) as isize
                                            - spec.padding.0 as isize;
                                        scatter(&mut gx, n, c, tt, hh, ww2, gcenter * inv_kt);
                                    }
                                } else {
                                    let tt = (ot * spec.stride.0 + ct * dt) as isize
                                        - spec.padding.0 as isize;
                                    scatter(&mut gx, n, c, tt, hh, ww2, gcenter);
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(LiteralGrads { gx, gw, gbias })
}

/// Direct loop max pooling; ties resolve to the first index in scan order.
pub fn maxpool3d_naive<E: Elem>(
    x: &Tensor<E>,
    window: (usize, usize, usize),
    stride: (usize, usize, usize),
) -> Result<Tensor<E>> {
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
    let to = (xs.t - window.0) / stride.0 + 1;
    let ho = (xs.h - window.1) / stride.1 + 1;
    let wo = (xs.w - window.2) / stride.2 + 1;
    let mut out = Tensor::zeros(Shape5::new(xs.n, xs.c, to, ho, wo));
    for n in 0..xs.n {
        for c in 0..xs.c {
            for ot in 0..to {
                for oh in 0..ho {
                    for ow in 0..wo {
                        let mut best = E::from_f64(f64::NEG_INFINITY);
                        for jt in 0..window.0 {
                            for jh in 0..window.1 {
                                for jw in 0..window.2 {
                                    let v = x.at(
                                        n,
                                        c,
                                        ot * stride.0 + jt,
                                        oh * stride.1 + jh,
                                        ow * stride.2 + jw,
                                    );
                                    if v > best {
                                        best = v;
                                    }
                                }
                            }
                        }
                        out.set(n, c, ot, oh, ow, best);
                    }
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cdc::cdc_forward;
    use crate::tensor::max_abs_diff;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rel_close<E: Elem>(a: &Tensor<E>, b: &Tensor<E>, tol: f64) {
        let d = max_abs_diff(a, b);
        let scale = b.max_abs().max(1.0);
        assert!(d / scale <= tol, "rel diff {} > {tol}", d / scale);
    }

    #[test]
    fn literal_matches_decomposed_st() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = Tensor::<f32>::randn(Shape5::new(1, 2, 5, 6, 6), 1.0, &mut rng);
        let w = Tensor::<f32>::randn(Shape5::new(3, 2, 3, 3, 3), 0.4, &mut rng);
        let cfg = CdcConfig::new(CdcVariant::St, 0.7, (3, 3, 3), (1, 1, 1)).unwrap();
        let fast = cdc_forward(&x, &w, None, &cfg).unwrap();
        let slow = cdc_literal_forward(&x, &w, None, &cfg).unwrap();
        rel_close(&fast, &slow, 1e-5);
    }

    #[test]
    fn literal_matches_decomposed_t_strided() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let x = Tensor::<f32>::randn(Shape5::new(1, 2, 6, 5, 5), 1.0, &mut rng);
        let w = Tensor::<f32>::randn(Shape5::new(2, 2, 3, 3, 3), 0.4, &mut rng);
        let cfg = CdcConfig::new(CdcVariant::T, 0.6, (3, 3, 3), (2, 2, 2)).unwrap();
        let fast = cdc_forward(&x, &w, None, &cfg).unwrap();
        let slow = cdc_literal_forward(&x, &w, None, &cfg).unwrap();
        rel_close(&fast, &slow, 1e-5);
    }

    #[test]
    fn literal_matches_decomposed_tr() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = Tensor::<f32>::randn(Shape5::new(1, 2, 6, 5, 5), 1.0, &mut rng);
        let w = Tensor::<f32>::randn(Shape5::new(2, 2, 3, 3, 3), 0.4, &mut rng);
        let cfg = CdcConfig::new(CdcVariant::Tr, 0.3, (3, 3, 3), (1, 1, 1)).unwrap();
        let fast = cdc_forward(&x, &w, None, &cfg).unwrap();
        let slow = cdc_literal_forward(&x, &w, None, &cfg).unwrap();
        rel_close(&fast, &slow, 1e-5);
    }

    #[test]
    fn literal_backward_matches_decomposed_backward() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for variant in [CdcVariant::St, CdcVariant::T, CdcVariant::Tr] {
            let x = Tensor::<f64>::randn(Shape5::new(2, 2, 5, 4, 4), 1.0, &mut rng);
            let w = Tensor::<f64>::randn(Shape5::new(3, 2, 3, 3, 3), 0.4, &mut rng);
            let cfg = CdcConfig::new(variant, 0.6, (3, 3, 3), (1, 1, 1)).unwrap();
            let os = conv_out_shape(x.shape(), w.shape(), &cfg.conv_spec()).unwrap();
            let gout = Tensor::<f64>::randn(os, 1.0, &mut rng);
            let lit = cdc_literal_backward(&x, &w, &cfg, &gout).unwrap();
            let fast = crate::cdc::cdc_backward(&x, &w, &cfg, &gout, true).unwrap();
            rel_close(&fast.gx, &lit.gx, 1e-9);
            rel_close(&fast.gw, &lit.gw, 1e-9);
            rel_close(fast.gbias.as_ref().unwrap(), &lit.gbias, 1e-9);
        }
    }
}
