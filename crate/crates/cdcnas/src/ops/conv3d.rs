//! 3-D convolution over (N, C, T, H, W) tensors.
//!
//! The production path lowers each sample to a patch matrix (im2col) and runs
//! one GEMM per (sample, group). Stride, dilation, groups and zero padding all
//! reduce to index arithmetic in the patch extraction, so a single code path
//! covers every kernel geometry used by the search spaces. `crate::oracle`
//! keeps the direct nested-loop form for verification.

use crate::elem::{gemm_a_bt, gemm_at_b, gemm_rowmajor, Elem};
use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor};
use rayon::prelude::*;

/// Stride, dilation, zero padding and group count of a convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub stride: (usize, usize, usize),
    pub dilation: (usize, usize, usize),
    pub padding: (usize, usize, usize),
    pub groups: usize,
}

impl Default for ConvSpec {
    fn default() -> Self {
        ConvSpec {
            stride: (1, 1, 1),
            dilation: (1, 1, 1),
            padding: (0, 0, 0),
            groups: 1,
        }
    }
}

impl ConvSpec {
    pub fn with_stride(stride: (usize, usize, usize)) -> Self {
        ConvSpec {
            stride,
            ..Default::default()
        }
    }

    /// Zero padding that keeps each output extent equal to
    /// ceil(input / stride) for an odd kernel: pad = dilation * (k - 1) / 2.
    pub fn same_padding(kernel: (usize, usize, usize), dilation: (usize, usize, usize)) -> (usize, usize, usize) {
        (
            dilation.0 * (kernel.0 - 1) / 2,
            dilation.1 * (kernel.1 - 1) / 2,
            dilation.2 * (kernel.2 - 1) / 2,
        )
    }
}

/// floor((in + 2p - d*(k-1) - 1) / s) + 1, or None when the kernel does not fit.
pub fn out_extent(input: usize, k: usize, stride: usize, dilation: usize, pad: usize) -> Option<usize> {
    let effective = dilation * (k - 1) + 1;
    let padded = input + 2 * pad;
    if padded < effective {
        return None;
    }
    Some((padded - effective) / stride + 1)
}

/// Validate argument shapes and compute the output shape.
pub fn conv_out_shape(x: Shape5, w: Shape5, spec: &ConvSpec) -> Result<Shape5> {
    if spec.groups == 0 {
        return Err(Error::shape("groups must be >= 1"));
    }
    if spec.stride.0 == 0 || spec.stride.1 == 0 || spec.stride.2 == 0 {
        return Err(Error::shape("stride components must be >= 1"));
    }
    if spec.dilation.0 == 0 || spec.dilation.1 == 0 || spec.dilation.2 == 0 {
        return Err(Error::shape("dilation components must be >= 1"));
    }
    if w.t == 0 || w.h == 0 || w.w == 0 {
        return Err(Error::shape("kernel extents must be >= 1"));
    }
    if x.c % spec.groups != 0 || w.n % spec.groups != 0 {
        return Err(Error::shape(format!(
            "channel counts (in {}, out {}) not divisible by groups {}",
            x.c, w.n, spec.groups
        )));
    }
    if w.c != x.c / spec.groups {
        return Err(Error::shape(format!(
            "kernel expects {} input channels per group, input has {} ({} channels / {} groups)",
            w.c,
            x.c / spec.groups,
            x.c,
            spec.groups
        )));
    }
    let to = out_extent(x.t, w.t, spec.stride.0, spec.dilation.0, spec.padding.0);
    let ho = out_extent(x.h, w.h, spec.stride.1, spec.dilation.1, spec.padding.1);
    let wo = out_extent(x.w, w.w, spec.stride.2, spec.dilation.2, spec.padding.2);
    match (to, ho, wo) {
        (Some(to), Some(ho), Some(wo)) if to > 0 && ho > 0 && wo > 0 => {
            Ok(Shape5::new(x.n, w.n, to, ho, wo))
        }
        _ => Err(Error::shape(format!(
            "kernel {}x{}x{} (dilation {:?}) does not fit input {} with padding {:?}: empty output",
            w.t, w.h, w.w, spec.dilation, x, spec.padding
        ))),
    }
}

/// Valid output range [lo, hi) along one axis for tap offset `base`:
/// positions o with 0 <= o*stride + base < len.
#[inline]
fn valid_range(base: isize, stride: usize, len: usize, out: usize) -> (usize, usize) {
    let s = stride as isize;
    let lo = if base >= 0 {
        0
    } else {
        (((-base) + s - 1) / s) as usize
    };
    let hi = if base >= len as isize {
        0
    } else {
        (((len as isize - 1 - base) / s) + 1).max(0) as usize
    };
    (lo.min(out), hi.min(out))
}

/// Extract the patch matrix for one (sample, group): `cols` has
/// `cin_g * kT*kH*kW` rows of length `To*Ho*Wo`.
#[allow(clippy::too_many_arguments)]
fn im2col<E: Elem>(
    x: &Tensor<E>,
    n: usize,
    group: usize,
    kernel: (usize, usize, usize),
    spec: &ConvSpec,
    out: Shape5,
    cols: &mut [E],
) {
    let xs = x.shape();
    let cin_g = xs.c / spec.groups;
    let (kt, kh, kw) = kernel;
    let (st, sh, sw) = spec.stride;
    let (dt, dh, dw) = spec.dilation;
    let (pt, ph, pw) = spec.padding;
    let (to, ho, wo) = (out.t, out.h, out.w);
    let m = to * ho * wo;
    let xdata = x.data();

    let mut row = 0usize;
    for cg in 0..cin_g {
        let c = group * cin_g + cg;
        for jt in 0..kt {
            let bt = (jt * dt) as isize - pt as isize;
            let (tlo, thi) = valid_range(bt, st, xs.t, to);
            for jh in 0..kh {
                let bh = (jh * dh) as isize - ph as isize;
                let (hlo, hhi) = valid_range(bh, sh, xs.h, ho);
                for jw in 0..kw {
                    let bw = (jw * dw) as isize - pw as isize;
                    let (wlo, whi) = valid_range(bw, sw, xs.w, wo);
                    let dst_row = &mut cols[row * m..(row + 1) * m];
                    row += 1;
                    dst_row.fill(E::ZERO);
                    if tlo >= thi || hlo >= hhi || wlo >= whi {
                        continue;
                    }
                    for ot in tlo..thi {
                        let t = (ot as isize * st as isize + bt) as usize;
                        for oh in hlo..hhi {
                            let h = (oh as isize * sh as isize + bh) as usize;
                            let src_base = xs.index(n, c, t, h, 0);
                            let dst_base = (ot * ho + oh) * wo;
                            let w0 = (wlo as isize * sw as isize + bw) as usize;
                            if sw == 1 {
                                let len = whi - wlo;
                                dst_row[dst_base + wlo..dst_base + whi]
                                    .copy_from_slice(&xdata[src_base + w0..src_base + w0 + len]);
                            } else {
                                let mut wsrc = w0;
                                for owi in wlo..whi {
                                    dst_row[dst_base + owi] = xdata[src_base + wsrc];
                                    wsrc += sw;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Scatter-add the patch-matrix gradient back to input coordinates.
#[allow(clippy::too_many_arguments)]
fn col2im_accumulate<E: Elem>(
    gcols: &[E],
    n_offset_removed: &mut [E], // gradient slice for one sample: cin * T * H * W
    xs: Shape5,
    group: usize,
    kernel: (usize, usize, usize),
    spec: &ConvSpec,
    out: Shape5,
) {
    let cin_g = xs.c / spec.groups;
    let (kt, kh, kw) = kernel;
    let (st, sh, sw) = spec.stride;
    let (dt, dh, dw) = spec.dilation;
    let (pt, ph, pw) = spec.padding;
    let (to, ho, wo) = (out.t, out.h, out.w);
    let m = to * ho * wo;
    let plane = xs.h * xs.w;

    let mut row = 0usize;
    for cg in 0..cin_g {
        let c = group * cin_g + cg;
        let cbase = c * xs.t * plane;
        for jt in 0..kt {
            let bt = (jt * dt) as isize - pt as isize;
            let (tlo, thi) = valid_range(bt, st, xs.t, to);
            for jh in 0..kh {
                let bh = (jh * dh) as isize - ph as isize;
                let (hlo, hhi) = valid_range(bh, sh, xs.h, ho);
                for jw in 0..kw {
                    let bw = (jw * dw) as isize - pw as isize;
                    let (wlo, whi) = valid_range(bw, sw, xs.w, wo);
                    let src_row = &gcols[row * m..(row + 1) * m];
                    row += 1;
                    if tlo >= thi || hlo >= hhi || wlo >= whi {
                        continue;
                    }
                    for ot in tlo..thi {
                        let t = (ot as isize * st as isize + bt) as usize;
                        for oh in hlo..hhi {
                            let h = (oh as isize * sh as isize + bh) as usize;
                            let dst_base = cbase + (t * xs.h + h) * xs.w;
                            let src_base = (ot * ho + oh) * wo;
                            let w0 = (wlo as isize * sw as isize + bw) as usize;
                            if sw == 1 {
                                let dst = &mut n_offset_removed
                                    [dst_base + w0..dst_base + w0 + (whi - wlo)];
                                let src = &src_row[src_base + wlo..src_base + whi];
                                for (d, s) in dst.iter_mut().zip(src) {
                                    *d += *s;
                                }
                            } else {
                                let mut wdst = w0;
                                for owi in wlo..whi {
                                    n_offset_removed[dst_base + wdst] += src_row[src_base + owi];
                                    wdst += sw;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Precomputed per-tap geometry: kernel offset bases and the output ranges
/// they touch.
struct TapPlan {
    /// (base_t, base_h, base_w, t_range, h_range, w_range) per tap, in
    /// t-major kernel order.
    taps: Vec<(isize, isize, isize, (usize, usize), (usize, usize), (usize, usize))>,
}

fn tap_plan(kernel: (usize, usize, usize), spec: &ConvSpec, xs: Shape5, os: Shape5) -> TapPlan {
    let (kt, kh, kw) = kernel;
    let (st, sh, sw) = spec.stride;
    let (dt, dh, dw) = spec.dilation;
    let (pt, ph, pw) = spec.padding;
    let mut taps = Vec::with_capacity(kt * kh * kw);
    for jt in 0..kt {
        let bt = (jt * dt) as isize - pt as isize;
        let tr = valid_range(bt, st, xs.t, os.t);
        for jh in 0..kh {
            let bh = (jh * dh) as isize - ph as isize;
            let hr = valid_range(bh, sh, xs.h, os.h);
            for jw in 0..kw {
                let bw = (jw * dw) as isize - pw as isize;
                let wr = valid_range(bw, sw, xs.w, os.w);
                taps.push((bt, bh, bw, tr, hr, wr));
            }
        }
    }
    TapPlan { taps }
}

/// Direct convolution for one (sample, group): per-tap fused multiply-add
/// sweeps over the output volume. For the small per-channel volumes of this
/// crate's networks everything stays cache-resident, which beats building a
/// patch matrix by an order of magnitude.
#[allow(clippy::too_many_arguments)]
fn direct_forward_sample<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    n: usize,
    g: usize,
    plan: &TapPlan,
    spec: &ConvSpec,
    os: Shape5,
    out_chunk: &mut [E],
) {
    let xs = x.shape();
    let groups = spec.groups;
    let cin_g = xs.c / groups;
    let cout_g = os.c / groups;
    let (st, sh, sw) = spec.stride;
    let kvol = plan.taps.len();
    let m = os.volume();
    let xd = x.data();
    let wd = w.data();
    for oc in 0..cout_g {
        let o = g * cout_g + oc;
        let y = &mut out_chunk[o * m..(o + 1) * m];
        for cg in 0..cin_g {
            let c = g * cin_g + cg;
            let xbase = xs.index(n, c, 0, 0, 0);
            let xchan = &xd[xbase..xbase + xs.volume()];
            let wbase = (o * cin_g + cg) * kvol;
            for (tap, &(bt, bh, bw, (tlo, thi), (hlo, hhi), (wlo, whi))) in
                plan.taps.iter().enumerate()
            {
                let wv = wd[wbase + tap];
                if wv == E::ZERO || tlo >= thi || hlo >= hhi || wlo >= whi {
                    continue;
                }
                for ot in tlo..thi {
                    let t = (ot as isize * st as isize + bt) as usize;
                    for oh in hlo..hhi {
                        let h = (oh as isize * sh as isize + bh) as usize;
                        let src_base = (t * xs.h + h) * xs.w;
                        let dst_base = (ot * os.h + oh) * os.w;
                        let w0 = (wlo as isize * sw as isize + bw) as usize;
                        if sw == 1 {
                            let dst = &mut y[dst_base + wlo..dst_base + whi];
                            let src = &xchan[src_base + w0..src_base + w0 + (whi - wlo)];
                            for (d, s) in dst.iter_mut().zip(src) {
                                *d += wv * *s;
                            }
                        } else {
                            let mut wsrc = w0;
                            for ow in wlo..whi {
                                y[dst_base + ow] += wv * xchan[src_base + wsrc];
                                wsrc += sw;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Gradient sweeps for one (sample, group), mirroring the forward tap plan:
/// gx accumulates weight-scaled output gradients at each tap's source
/// positions, and gw accumulates the per-tap dot product of the output
/// gradient with the input window.
#[allow(clippy::too_many_arguments)]
fn direct_backward_sample<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    gout: &Tensor<E>,
    n: usize,
    g: usize,
    plan: &TapPlan,
    spec: &ConvSpec,
    os: Shape5,
    gx_chunk: &mut [E],
    gw_n: &mut [E],
) {
    let xs = x.shape();
    let groups = spec.groups;
    let cin_g = xs.c / groups;
    let cout_g = os.c / groups;
    let (st, sh, sw) = spec.stride;
    let kvol = plan.taps.len();
    let m = os.volume();
    let xd = x.data();
    let wd = w.data();
    let gd = gout.data();
    for oc in 0..cout_g {
        let o = g * cout_g + oc;
        let gbase = os.index(n, o, 0, 0, 0);
        let gchan = &gd[gbase..gbase + m];
        for cg in 0..cin_g {
            let c = g * cin_g + cg;
            let xbase0 = xs.index(0, c, 0, 0, 0) + n * xs.c * xs.volume();
            let xchan = &xd[xbase0..xbase0 + xs.volume()];
            let gx_chan = &mut gx_chunk[c * xs.volume()..(c + 1) * xs.volume()];
            let wbase = (o * cin_g + cg) * kvol;
            for (tap, &(bt, bh, bw, (tlo, thi), (hlo, hhi), (wlo, whi))) in
                plan.taps.iter().enumerate()
            {
                if tlo >= thi || hlo >= hhi || wlo >= whi {
                    continue;
                }
                let wv = wd[wbase + tap];
                let mut acc = E::ZERO;
                for ot in tlo..thi {
                    let t = (ot as isize * st as isize + bt) as usize;
                    for oh in hlo..hhi {
                        let h = (oh as isize * sh as isize + bh) as usize;
                        let src_base = (ot * os.h + oh) * os.w;
                        let dst_base = (t * xs.h + h) * xs.w;
                        let w0 = (wlo as isize * sw as isize + bw) as usize;
                        if sw == 1 {
                            let gorow = &gchan[src_base + wlo..src_base + whi];
                            let xrow = &xchan[dst_base + w0..dst_base + w0 + (whi - wlo)];
                            let gxrow =
                                &mut gx_chan[dst_base + w0..dst_base + w0 + (whi - wlo)];
                            for (gxv, gv) in gxrow.iter_mut().zip(gorow) {
                                *gxv += wv * *gv;
                            }
                            for (gv, xv) in gorow.iter().zip(xrow) {
                                acc += *gv * *xv;
                            }
                        } else {
                            let mut wsrc = w0;
                            for ow in wlo..whi {
                                let gv = gchan[src_base + ow];
                                acc += gv * xchan[dst_base + wsrc];
                                gx_chan[dst_base + wsrc] += wv * gv;
                                wsrc += sw;
                            }
                        }
                    }
                }
                gw_n[wbase + tap] += acc;
            }
        }
    }
}

/// Switch between the direct tap-sweep kernel and im2col+GEMM: the patch
/// matrix only pays off once the channel dimensions are large enough for
/// GEMM register blocking to dominate its 27x memory amplification.
fn use_direct(cin_g: usize, cout_g: usize, spec: &ConvSpec) -> bool {
    spec.stride.2 == 1 && cin_g * cout_g < 4096
}

pub fn conv3d_forward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    spec: &ConvSpec,
) -> Result<Tensor<E>> {
    let xs = x.shape();
    let ws = w.shape();
    let os = conv_out_shape(xs, ws, spec)?;
    if let Some(b) = bias {
        if b.shape() != Shape5::vector(ws.n) {
            return Err(Error::shape(format!(
                "bias shape {} does not match {} output channels",
                b.shape(),
                ws.n
            )));
        }
    }
    let groups = spec.groups;
    let cout_g = ws.n / groups;
    let cin_g = xs.c / groups;
    let kernel = (ws.t, ws.h, ws.w);
    let kvol = ws.t * ws.h * ws.w;
    let kdim = cin_g * kvol;
    let m = os.volume();

    let mut out = Tensor::zeros(os);
    let per_sample = os.c * m;
    if use_direct(cin_g, cout_g, spec) {
        let plan = tap_plan(kernel, spec, xs, os);
        out.data_mut()
            .par_chunks_mut(per_sample)
            .enumerate()
            .for_each(|(n, out_chunk)| {
                for g in 0..groups {
                    direct_forward_sample(x, w, n, g, &plan, spec, os, out_chunk);
                }
            });
    } else {
        out.data_mut()
            .par_chunks_mut(per_sample)
            .enumerate()
            .for_each(|(n, out_chunk)| {
                E::with_scratch2(kdim * m, 0, |cols, _| {
                    for g in 0..groups {
                        im2col(x, n, g, kernel, spec, os, cols);
                        let wmat = &w.data()[g * cout_g * kdim..(g + 1) * cout_g * kdim];
                        let dst = &mut out_chunk[g * cout_g * m..(g + 1) * cout_g * m];
                        gemm_rowmajor(cout_g, kdim, m, E::ONE, wmat, cols, E::ZERO, dst);
                    }
                })
            });
    }

    if let Some(b) = bias {
        let bd = b.data();
        let od = out.data_mut();
        for n in 0..os.n {
            for c in 0..os.c {
                let base = (n * os.c + c) * m;
                let bv = bd[c];
                for v in &mut od[base..base + m] {
                    *v += bv;
                }
            }
        }
    }
    Ok(out)
}

pub struct Conv3dGrads<E: Elem> {
    pub gx: Tensor<E>,
    pub gw: Tensor<E>,
    pub gbias: Option<Tensor<E>>,
}

pub fn conv3d_backward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    spec: &ConvSpec,
    gout: &Tensor<E>,
    need_bias: bool,
) -> Result<Conv3dGrads<E>> {
    let xs = x.shape();
    let ws = w.shape();
    let os = conv_out_shape(xs, ws, spec)?;
    if gout.shape() != os {
        return Err(Error::shape(format!(
            "gradient shape {} does not match forward output {}",
            gout.shape(),
            os
        )));
    }
    let groups = spec.groups;
    let cout_g = ws.n / groups;
    let cin_g = xs.c / groups;
    let kernel = (ws.t, ws.h, ws.w);
    let kvol = ws.t * ws.h * ws.w;
    let kdim = cin_g * kvol;
    let m = os.volume();
    let wnumel = w.numel();

    let mut gx = Tensor::zeros(xs);
    let per_sample_in = xs.c * xs.volume();

    // Per-sample kernel-gradient partials, reduced serially in batch order so
    // the floating-point summation order is fixed.
    let gw_partials: Vec<Vec<E>> = if use_direct(cin_g, cout_g, spec) {
        let plan = tap_plan(kernel, spec, xs, os);
        gx.data_mut()
            .par_chunks_mut(per_sample_in)
            .enumerate()
            .map(|(n, gx_chunk)| {
                let mut gw_n = vec![E::ZERO; wnumel];
                for g in 0..groups {
                    direct_backward_sample(
                        x, w, gout, n, g, &plan, spec, os, gx_chunk, &mut gw_n,
                    );
                }
                gw_n
            })
            .collect()
    } else {
        gx.data_mut()
            .par_chunks_mut(per_sample_in)
            .enumerate()
            .map(|(n, gx_chunk)| {
                E::with_scratch2(kdim * m, kdim * m, |cols, gcols| {
                    let mut gw_n = vec![E::ZERO; wnumel];
                    for g in 0..groups {
                        im2col(x, n, g, kernel, spec, os, cols);
                        let gout_g = &gout.data()
                            [n * os.c * m + g * cout_g * m..n * os.c * m + (g + 1) * cout_g * m];
                        // gw_g += gout_g (cout_g x m) . cols^T (m x kdim)
                        gemm_a_bt(
                            cout_g,
                            m,
                            kdim,
                            E::ONE,
                            gout_g,
                            cols,
                            E::ZERO,
                            &mut gw_n[g * cout_g * kdim..(g + 1) * cout_g * kdim],
                        );
                        // gcols = wmat^T (kdim x cout_g) . gout_g (cout_g x m)
                        let wmat = &w.data()[g * cout_g * kdim..(g + 1) * cout_g * kdim];
                        gemm_at_b(kdim, cout_g, m, E::ONE, wmat, gout_g, E::ZERO, gcols);
                        col2im_accumulate(gcols, gx_chunk, xs, g, kernel, spec, os);
                    }
                    gw_n
                })
            })
            .collect()
    };

    let mut gw = Tensor::zeros(ws);
    for part in &gw_partials {
        for (dst, &src) in gw.data_mut().iter_mut().zip(part) {
            *dst += src;
        }
    }

    let gbias = if need_bias {
        let mut gb = Tensor::zeros(Shape5::vector(os.c));
        let gbd = gb.data_mut();
        for n in 0..os.n {
            for c in 0..os.c {
                let base = (n * os.c + c) * m;
                let mut acc = E::ZERO;
                for &v in &gout.data()[base..base + m] {
                    acc += v;
                }
                gbd[c] += acc;
            }
        }
        Some(gb)
    } else {
        None
    };

    Ok(Conv3dGrads { gx, gw, gbias })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_tap_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = Tensor::<f32>::randn(Shape5::new(2, 3, 4, 5, 6), 1.0, &mut rng);
        let mut w = Tensor::<f32>::zeros(Shape5::new(3, 3, 1, 1, 1));
        for c in 0..3 {
            w.set(c, c, 0, 0, 0, 1.0);
        }
        let y = conv3d_forward(&x, &w, None, &ConvSpec::default()).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn all_ones_kernel_on_constant_input() {
        let x = Tensor::<f32>::full(Shape5::new(1, 1, 5, 5, 5), 2.0);
        let w = Tensor::<f32>::full(Shape5::new(1, 1, 3, 3, 3), 1.0);
        let y = conv3d_forward(&x, &w, None, &ConvSpec::default()).unwrap();
        assert_eq!(y.shape(), Shape5::new(1, 1, 3, 3, 3));
        for &v in y.data() {
            assert!((v - 54.0).abs() < 1e-5, "interior output should be 27*2");
        }
    }

    #[test]
    fn matches_loop_oracle_strided() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let x = Tensor::<f32>::randn(Shape5::new(1, 2, 4, 5, 5), 1.0, &mut rng);
        let w = Tensor::<f32>::randn(Shape5::new(3, 2, 3, 3, 3), 0.5, &mut rng);
        let spec = ConvSpec {
            stride: (1, 2, 2),
            padding: (1, 1, 1),
            ..Default::default()
        };
        let fast = conv3d_forward(&x, &w, None, &spec).unwrap();
        let slow = oracle::conv3d_naive(&x, &w, None, &spec).unwrap();
        let rel = crate::tensor::max_abs_diff(&fast, &slow) / slow.max_abs().max(1.0);
        assert!(rel <= 1e-5, "relative error {rel}");
    }

    #[test]
    fn rejects_zero_size_output() {
        let x = Tensor::<f32>::zeros(Shape5::new(1, 1, 2, 2, 2));
        let w = Tensor::<f32>::zeros(Shape5::new(1, 1, 3, 3, 3));
        assert!(conv3d_forward(&x, &w, None, &ConvSpec::default()).is_err());
    }

    #[test]
    fn rejects_group_mismatch() {
        let x = Tensor::<f32>::zeros(Shape5::new(1, 3, 4, 4, 4));
        let w = Tensor::<f32>::zeros(Shape5::new(2, 2, 1, 1, 1));
        let spec = ConvSpec {
            groups: 2,
            ..Default::default()
        };
        assert!(conv3d_forward(&x, &w, None, &spec).is_err());
    }
}
