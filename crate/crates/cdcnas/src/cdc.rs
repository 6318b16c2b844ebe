//! Central-difference convolution family over 3-D receptive fields.
//!
//! Each variant augments a vanilla 3-D convolution with a center-oriented
//! difference term that reuses the same kernel weights, so parameter counts
//! never change:
//!
//! * `St` — the difference term spans the whole receptive cube.
//! * `T` — the difference term is restricted to taps on adjacent time steps.
//! * `Tr` — like `T`, but the center is replaced by the average of the
//!   spatial-center taps across all temporal planes, which damps frame jitter.
//!
//! All three scale the difference term by `theta` in [0, 1] and reduce to the
//! vanilla convolution at `theta = 0`.
//!
//! The production path computes the difference term in decomposed form: the
//! kernel is pre-summed over the active region into per-(out, in) channel
//! scalars, which then contract against the sampled center values like a
//! 1x1x1 convolution. The sampled-difference form lives in `crate::oracle`
//! and is used for verification only.

use crate::elem::{gemm_at_b, gemm_rowmajor, Elem};
use crate::error::{Error, Result};
use crate::ops::conv3d::{conv3d_backward, conv3d_forward, conv_out_shape, ConvSpec};
use crate::tensor::{Shape5, Tensor};
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum CdcVariant {
    Vanilla,
    St,
    T,
    Tr,
}

impl CdcVariant {
    pub fn name(&self) -> &'static str {
        match self {
            CdcVariant::Vanilla => "vanilla",
            CdcVariant::St => "st",
            CdcVariant::T => "t",
            CdcVariant::Tr => "tr",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(CdcVariant::Vanilla),
            "st" => Ok(CdcVariant::St),
            "t" => Ok(CdcVariant::T),
            "tr" => Ok(CdcVariant::Tr),
            other => Err(Error::config(format!("unknown cdc variant '{other}'"))),
        }
    }
}

/// Enumerated receptive-field taps of one kernel, as dilated offsets relative
/// to the center tap, ordered t-major then h then w.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KernelGeometry {
    pub extents: (usize, usize, usize),
    pub dilation: (usize, usize, usize),
    pub offsets: Vec<(isize, isize, isize)>,
    /// Index of the (0,0,0) offset; present only when all extents are odd.
    pub center_index: Option<usize>,
}

/// Split of the receptive-field taps by temporal component.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegionPartition {
    /// Tap indices in the current time step (zero temporal offset).
    pub r_prime: Vec<usize>,
    /// Tap indices on adjacent time steps (non-zero temporal offset).
    pub r_double_prime: Vec<usize>,
    /// Tap indices with zero spatial offset, one per temporal plane.
    pub temporal_center_taps: Vec<usize>,
}

/// Enumerate taps and partition them by temporal component.
pub fn make_geometry(
    extents: (usize, usize, usize),
    dilation: (usize, usize, usize),
) -> Result<(KernelGeometry, RegionPartition)> {
    let (kt, kh, kw) = extents;
    if kt == 0 || kh == 0 || kw == 0 {
        return Err(Error::shape("kernel extents must be positive"));
    }
    if dilation.0 == 0 || dilation.1 == 0 || dilation.2 == 0 {
        return Err(Error::shape("dilation components must be positive"));
    }
    let (ct, ch, cw) = ((kt - 1) / 2, (kh - 1) / 2, (kw - 1) / 2);
    let mut offsets = Vec::with_capacity(kt * kh * kw);
    let mut center_index = None;
    let mut r_prime = Vec::new();
    let mut r_double_prime = Vec::new();
    let mut temporal_center_taps = Vec::new();
    for jt in 0..kt {
        let dt = (jt as isize - ct as isize) * dilation.0 as isize;
        for jh in 0..kh {
            let dh = (jh as isize - ch as isize) * dilation.1 as isize;
            for jw in 0..kw {
                let dw = (jw as isize - cw as isize) * dilation.2 as isize;
                let idx = offsets.len();
                if dt == 0 {
                    r_prime.push(idx);
                } else {
                    r_double_prime.push(idx);
                }
                if dh == 0 && dw == 0 {
                    temporal_center_taps.push(idx);
                    if dt == 0 && kt % 2 == 1 && kh % 2 == 1 && kw % 2 == 1 {
                        center_index = Some(idx);
                    }
                }
                offsets.push((dt, dh, dw));
            }
        }
    }
    Ok((
        KernelGeometry {
            extents,
            dilation,
            offsets,
            center_index,
        },
        RegionPartition {
            r_prime,
            r_double_prime,
            temporal_center_taps,
        },
    ))
}

/// Full descriptor of one convolution layer in the CDC family.
#[derive(Clone, Debug, PartialEq)]
pub struct CdcConfig {
    pub variant: CdcVariant,
    pub theta: f64,
    pub geometry: KernelGeometry,
    pub partition: RegionPartition,
    pub stride: (usize, usize, usize),
    pub padding: (usize, usize, usize),
    pub groups: usize,
}

impl CdcConfig {
    /// Same-padded, dilation-1, ungrouped layer; the form every search-space
    /// operation uses.
    pub fn new(
        variant: CdcVariant,
        theta: f64,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
    ) -> Result<Self> {
        Self::with_options(variant, theta, kernel, stride, (1, 1, 1), 1)
    }

    pub fn vanilla(kernel: (usize, usize, usize), stride: (usize, usize, usize)) -> Result<Self> {
        Self::new(CdcVariant::Vanilla, 0.0, kernel, stride)
    }

    pub fn with_options(
        variant: CdcVariant,
        theta: f64,
        kernel: (usize, usize, usize),
        stride: (usize, usize, usize),
        dilation: (usize, usize, usize),
        groups: usize,
    ) -> Result<Self> {
        if !(0.0..=1.0).contains(&theta) {
            return Err(Error::config(format!(
                "theta must lie in [0,1], got {theta}"
            )));
        }
        if variant != CdcVariant::Vanilla
            && (kernel.0 % 2 == 0 || kernel.1 % 2 == 0 || kernel.2 % 2 == 0)
        {
            return Err(Error::shape(format!(
                "cdc variants need odd kernel extents (no center tap in {}x{}x{})",
                kernel.0, kernel.1, kernel.2
            )));
        }
        let (geometry, partition) = make_geometry(kernel, dilation)?;
        let padding = ConvSpec::same_padding(kernel, dilation);
        Ok(CdcConfig {
            variant,
            theta,
            geometry,
            partition,
            stride,
            padding,
            groups,
        })
    }

    pub fn conv_spec(&self) -> ConvSpec {
        ConvSpec {
            stride: self.stride,
            dilation: self.geometry.dilation,
            padding: self.padding,
            groups: self.groups,
        }
    }

    pub fn kernel(&self) -> (usize, usize, usize) {
        self.geometry.extents
    }

    /// Indices of the kernel taps participating in the difference term.
    pub fn region_indices(&self) -> Vec<usize> {
        match self.variant {
            CdcVariant::Vanilla => Vec::new(),
            CdcVariant::St => (0..self.geometry.offsets.len()).collect(),
            CdcVariant::T | CdcVariant::Tr => self.partition.r_double_prime.clone(),
        }
    }

    /// True when the difference term contributes nothing.
    pub fn correction_is_empty(&self) -> bool {
        self.theta == 0.0
            || match self.variant {
                CdcVariant::Vanilla => true,
                CdcVariant::St => self.geometry.offsets.is_empty(),
                CdcVariant::T | CdcVariant::Tr => self.partition.r_double_prime.is_empty(),
            }
    }
}

/// Per-(out, in/group) channel kernel sums over the difference region:
/// a (c_out x c_in/groups) row-major matrix.
fn region_kernel_sums<E: Elem>(w: &Tensor<E>, region: &[usize]) -> Vec<E> {
    let ws = w.shape();
    let kvol = ws.t * ws.h * ws.w;
    let mut sums = vec![E::ZERO; ws.n * ws.c];
    let wd = w.data();
    for o in 0..ws.n {
        for cg in 0..ws.c {
            let base = (o * ws.c + cg) * kvol;
            let mut acc = E::ZERO;
            for &tap in region {
                acc += wd[base + tap];
            }
            sums[o * ws.c + cg] = acc;
        }
    }
    sums
}

/// Center values per output position: (N, C_in, To*Ho*Wo), zero padded.
/// For `St`/`T` this is the single center tap; for `Tr` the mean over the
/// spatial-center taps of every temporal plane.
fn center_map<E: Elem>(x: &Tensor<E>, cfg: &CdcConfig, out: Shape5) -> Vec<E> {
    let xs = x.shape();
    let (st, sh, sw) = cfg.stride;
    let (pt, ph, pw) = cfg.padding;
    let (kt, _, _) = cfg.geometry.extents;
    let dt = cfg.geometry.dilation.0;
    let (ct, ch, cw) = (
        (cfg.geometry.extents.0 - 1) / 2,
        (cfg.geometry.extents.1 - 1) / 2,
        (cfg.geometry.extents.2 - 1) / 2,
    );
    // Padded-to-unpadded base offsets of the spatial/temporal center tap.
    let bt = (ct * cfg.geometry.dilation.0) as isize - pt as isize;
    let bh = (ch * cfg.geometry.dilation.1) as isize - ph as isize;
    let bw = (cw * cfg.geometry.dilation.2) as isize - pw as isize;
    let m = out.volume();
    let mut centers = vec![E::ZERO; xs.n * xs.c * m];
    let xd = x.data();
    let robust = cfg.variant == CdcVariant::Tr;
    let inv_kt = E::from_f64(1.0 / kt as f64);

    centers
        .par_chunks_mut(xs.c * m)
        .enumerate()
        .for_each(|(n, chunk)| {
            for c in 0..xs.c {
                let dst = &mut chunk[c * m..(c + 1) * m];
                let mut mi = 0usize;
                for ot in 0..out.t {
                    for oh in 0..out.h {
                        let hh = oh as isize * sh as isize + bh;
                        let h_ok = hh >= 0 && (hh as usize) < xs.h;
                        for ow in 0..out.w {
                            let wwp = ow as isize * sw as isize + bw;
                            let w_ok = wwp >= 0 && (wwp as usize) < xs.w;
                            let v = if !(h_ok && w_ok) {
                                E::ZERO
                            } else if robust {
                                let mut acc = E::ZERO;
                                for jt in 0..kt {
                                    let tt = ot as isize * st as isize
                                        + (jt * dt) as isize
                                        - pt as isize;
                                    if tt >= 0 && (tt as usize) < xs.t {
                                        acc += xd[xs.index(
                                            n,
                                            c,
                                            tt as usize,
                                            hh as usize,
                                            wwp as usize,
                                        )];
                                    }
                                }
                                acc * inv_kt
                            } else {
                                let tt = ot as isize * st as isize + bt;
                                if tt >= 0 && (tt as usize) < xs.t {
                                    xd[xs.index(n, c, tt as usize, hh as usize, wwp as usize)]
                                } else {
                                    E::ZERO
                                }
                            };
                            dst[mi] = v;
                            mi += 1;
                        }
                    }
                }
            }
        });
    centers
}

/// Forward pass in decomposed form: vanilla convolution plus the
/// theta-weighted center contraction. `Vanilla` configs skip the correction
/// entirely, making theta = 0 outputs bit-identical to `conv3d_forward`.
pub fn cdc_forward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    bias: Option<&Tensor<E>>,
    cfg: &CdcConfig,
) -> Result<Tensor<E>> {
    let spec = cfg.conv_spec();
    if w.shape().t != cfg.geometry.extents.0
        || w.shape().h != cfg.geometry.extents.1
        || w.shape().w != cfg.geometry.extents.2
    {
        return Err(Error::shape(format!(
            "kernel tensor {} does not match configured geometry {:?}",
            w.shape(),
            cfg.geometry.extents
        )));
    }
    let mut y = conv3d_forward(x, w, bias, &spec)?;
    if cfg.correction_is_empty() {
        return Ok(y);
    }
    let os = y.shape();
    let xs = x.shape();
    let region = cfg.region_indices();
    let sums = region_kernel_sums(w, &region);
    let centers = center_map(x, cfg, os);
    let groups = cfg.groups;
    let cout_g = os.c / groups;
    let cin_g = xs.c / groups;
    let m = os.volume();
    let neg_theta = E::from_f64(-cfg.theta);

    let per_sample = os.c * m;
    y.data_mut()
        .par_chunks_mut(per_sample)
        .enumerate()
        .for_each(|(n, out_chunk)| {
            for g in 0..groups {
                let s_g = &sums[g * cout_g * cin_g..(g + 1) * cout_g * cin_g];
                let c_g = &centers[(n * xs.c + g * cin_g) * m..(n * xs.c + (g + 1) * cin_g) * m];
                let dst = &mut out_chunk[g * cout_g * m..(g + 1) * cout_g * m];
                gemm_rowmajor(cout_g, cin_g, m, neg_theta, s_g, c_g, E::ONE, dst);
            }
        });
    Ok(y)
}

pub struct CdcGrads<E: Elem> {
    pub gx: Tensor<E>,
    pub gw: Tensor<E>,
    pub gbias: Option<Tensor<E>>,
}

/// Reverse-mode gradients of `cdc_forward`. The kernel is shared between the
/// vanilla term and the difference term, so `gw` accumulates both.
pub fn cdc_backward<E: Elem>(
    x: &Tensor<E>,
    w: &Tensor<E>,
    cfg: &CdcConfig,
    gout: &Tensor<E>,
    need_bias: bool,
) -> Result<CdcGrads<E>> {
    let spec = cfg.conv_spec();
    let base = conv3d_backward(x, w, &spec, gout, need_bias)?;
    let mut gx = base.gx;
    let mut gw = base.gw;
    if cfg.correction_is_empty() {
        return Ok(CdcGrads {
            gx,
            gw,
            gbias: base.gbias,
        });
    }

    let xs = x.shape();
    let ws = w.shape();
    let os = conv_out_shape(xs, ws, &spec)?;
    let region = cfg.region_indices();
    let sums = region_kernel_sums(w, &region);
    let centers = center_map(x, cfg, os);
    let groups = cfg.groups;
    let cout_g = os.c / groups;
    let cin_g = xs.c / groups;
    let m = os.volume();
    let neg_theta = E::from_f64(-cfg.theta);

    let (st, sh, sw) = cfg.stride;
    let (pt, _ph, _pw) = cfg.padding;
    let dt = cfg.geometry.dilation.0;
    let kt = cfg.geometry.extents.0;
    let ct = (kt - 1) / 2;
    let bt = (ct * dt) as isize - pt as isize;
    let bh = ((cfg.geometry.extents.1 - 1) / 2 * cfg.geometry.dilation.1) as isize
        - cfg.padding.1 as isize;
    let bw = ((cfg.geometry.extents.2 - 1) / 2 * cfg.geometry.dilation.2) as isize
        - cfg.padding.2 as isize;
    let robust = cfg.variant == CdcVariant::Tr;
    let inv_kt = E::from_f64(1.0 / kt as f64);

    let per_sample_in = xs.c * xs.volume();
    // d(correction)/d(center) scattered into gx per sample; per-sample partial
    // sums for d(correction)/d(kernel sums) reduced serially afterwards.
    let gsum_partials: Vec<Vec<E>> = gx
        .data_mut()
        .par_chunks_mut(per_sample_in)
        .enumerate()
        .map_init(
            || vec![E::ZERO; cin_g * m],
            |gcent, (n, gx_chunk)| {
                let mut gsums_n = vec![E::ZERO; ws.n * cin_g];
                for g in 0..groups {
                    let gout_g =
                        &gout.data()[n * os.c * m + g * cout_g * m..n * os.c * m + (g + 1) * cout_g * m];
                    // gsums_g += -theta * gout_g (cout_g x m) . centers_g^T (m x cin_g)
                    let c_g =
                        &centers[(n * xs.c + g * cin_g) * m..(n * xs.c + (g + 1) * cin_g) * m];
                    crate::elem::gemm_a_bt(
                        cout_g,
                        m,
                        cin_g,
                        neg_theta,
                        gout_g,
                        c_g,
                        E::ZERO,
                        &mut gsums_n[g * cout_g * cin_g..(g + 1) * cout_g * cin_g],
                    );
                    // gcenters = -theta * sums_g^T (cin_g x cout_g) . gout_g
                    let s_g = &sums[g * cout_g * cin_g..(g + 1) * cout_g * cin_g];
                    gemm_at_b(cin_g, cout_g, m, neg_theta, s_g, gout_g, E::ZERO, gcent);
                    // Scatter center gradients into the input.
                    for cg in 0..cin_g {
                        let c = g * cin_g + cg;
                        let src = &gcent[cg * m..(cg + 1) * m];
                        let mut mi = 0usize;
                        for ot in 0..os.t {
                            for oh in 0..os.h {
                                let hh = oh as isize * sh as isize + bh;
                                let h_ok = hh >= 0 && (hh as usize) < xs.h;
                                for ow in 0..os.w {
                                    let gval = src[mi];
                                    mi += 1;
                                    if gval == E::ZERO {
                                        continue;
                                    }
                                    let wwp = ow as isize * sw as isize + bw;
                                    if !(h_ok && wwp >= 0 && (wwp as usize) < xs.w) {
                                        continue;
                                    }
                                    if robust {
                                        let gshare = gval * inv_kt;
                                        for jt in 0..kt {
                                            let tt = ot as isize * st as isize
                                                + (jt * dt) as isize
                                                - pt as isize;
                                            if tt >= 0 && (tt as usize) < xs.t {
                                                let idx = ((c * xs.t + tt as usize) * xs.h
                                                    + hh as usize)
                                                    * xs.w
                                                    + wwp as usize;
                                                gx_chunk[idx] += gshare;
                                            }
                                        }
                                    } else {
                                        let tt = ot as isize * st as isize + bt;
                                        if tt >= 0 && (tt as usize) < xs.t {
                                            let idx = ((c * xs.t + tt as usize) * xs.h
                                                + hh as usize)
                                                * xs.w
                                                + wwp as usize;
                                            gx_chunk[idx] += gval;
                                        }
                                    }
                                }
                            }
                        }
                    }
                }
                gsums_n
            },
        )
        .collect();

    let mut gsums = vec![E::ZERO; ws.n * cin_g];
    for part in &gsum_partials {
        for (dst, &src) in gsums.iter_mut().zip(part) {
            *dst += src;
        }
    }

    // Broadcast the region-sum gradient back onto the kernel taps it covers.
    let kvol = ws.t * ws.h * ws.w;
    let gwd = gw.data_mut();
    for o in 0..ws.n {
        for cg in 0..cin_g {
            let gs = gsums[o * cin_g + cg];
            if gs == E::ZERO {
                continue;
            }
            let base = (o * cin_g + cg) * kvol;
            for &tap in &region {
                gwd[base + tap] += gs;
            }
        }
    }

    Ok(CdcGrads {
        gx,
        gw,
        gbias: base.gbias,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn geometry_3x3x3() {
        let (geo, part) = make_geometry((3, 3, 3), (1, 1, 1)).unwrap();
        assert_eq!(geo.offsets.len(), 27);
        assert_eq!(geo.offsets[0], (-1, -1, -1));
        assert_eq!(geo.offsets[1], (-1, -1, 0));
        assert_eq!(geo.offsets[26], (1, 1, 1));
        assert_eq!(geo.center_index, Some(13));
        assert_eq!(part.r_prime.len(), 9);
        assert_eq!(part.r_double_prime.len(), 18);
        assert_eq!(part.temporal_center_taps.len(), 3);
    }

    #[test]
    fn geometry_1x3x3_degenerates() {
        let (_, part) = make_geometry((1, 3, 3), (1, 1, 1)).unwrap();
        assert!(part.r_double_prime.is_empty());
        assert_eq!(part.r_prime.len(), 9);
        assert_eq!(part.temporal_center_taps.len(), 1);
    }

    #[test]
    fn geometry_5x1x1() {
        let (geo, part) = make_geometry((5, 1, 1), (1, 1, 1)).unwrap();
        let rdp: Vec<_> = part
            .r_double_prime
            .iter()
            .map(|&i| geo.offsets[i])
            .collect();
        assert_eq!(rdp, vec![(-2, 0, 0), (-1, 0, 0), (1, 0, 0), (2, 0, 0)]);
        assert_eq!(part.temporal_center_taps.len(), 5);
    }

    #[test]
    fn even_kernel_rejected_for_cdc() {
        assert!(CdcConfig::new(CdcVariant::St, 0.5, (3, 2, 3), (1, 1, 1)).is_err());
        assert!(CdcConfig::new(CdcVariant::Vanilla, 0.0, (3, 2, 3), (1, 1, 1)).is_ok());
    }

    #[test]
    fn theta_out_of_range_rejected() {
        assert!(CdcConfig::new(CdcVariant::T, 1.2, (3, 3, 3), (1, 1, 1)).is_err());
        assert!(CdcConfig::new(CdcVariant::T, -0.1, (3, 3, 3), (1, 1, 1)).is_err());
    }

    #[test]
    fn theta_zero_is_bit_identical_to_vanilla() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f32>::randn(Shape5::new(2, 3, 5, 6, 6), 1.0, &mut rng);
        let w = Tensor::<f32>::randn(Shape5::new(4, 3, 3, 3, 3), 0.3, &mut rng);
        for variant in [CdcVariant::St, CdcVariant::T, CdcVariant::Tr] {
            let cfg = CdcConfig::new(variant, 0.0, (3, 3, 3), (1, 1, 1)).unwrap();
            let y = cdc_forward(&x, &w, None, &cfg).unwrap();
            let v = conv3d_forward(&x, &w, None, &cfg.conv_spec()).unwrap();
            assert_eq!(y.data(), v.data());
        }
    }

    #[test]
    fn st_constant_input_theta_one_zero_interior() {
        let x = Tensor::<f32>::full(Shape5::new(1, 2, 5, 5, 5), 1.7);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let w = Tensor::<f32>::randn(Shape5::new(3, 2, 3, 3, 3), 0.5, &mut rng);
        let cfg = CdcConfig::new(CdcVariant::St, 1.0, (3, 3, 3), (1, 1, 1)).unwrap();
        let y = cdc_forward(&x, &w, None, &cfg).unwrap();
        let os = y.shape();
        // Interior positions (unaffected by zero padding) must cancel exactly.
        for o in 0..os.c {
            for t in 1..os.t - 1 {
                for h in 1..os.h - 1 {
                    for ww in 1..os.w - 1 {
                        let v = y.at(0, o, t, h, ww);
                        assert!(v.abs() < 1e-4, "interior response {v} at {t},{h},{ww}");
                    }
                }
            }
        }
    }

    #[test]
    fn t_variant_temporal_kernel_on_temporally_constant_input() {
        // Kernel 3x1x1, theta = 1: at interior frames the difference term
        // cancels the off-center temporal taps, leaving w_center * x.
        let shape = Shape5::new(1, 1, 6, 4, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let frame = Tensor::<f32>::randn(Shape5::new(1, 1, 1, 4, 4), 1.0, &mut rng);
        let x = Tensor::from_fn(shape, |i| {
            let per_frame = 16;
            frame.data()[i % per_frame]
        });
        let w = Tensor::<f32>::new(
            Shape5::new(1, 1, 3, 1, 1),
            vec![0.4, -0.9, 0.7],
        )
        .unwrap();
        let cfg = CdcConfig::new(CdcVariant::T, 1.0, (3, 1, 1), (1, 1, 1)).unwrap();
        let y = cdc_forward(&x, &w, None, &cfg).unwrap();
        for t in 1..5 {
            for h in 0..4 {
                for ww in 0..4 {
                    let expect = -0.9 * x.at(0, 0, t, h, ww);
                    let got = y.at(0, 0, t, h, ww);
                    assert!((got - expect).abs() < 1e-5, "{got} vs {expect}");
                }
            }
        }
    }

    #[test]
    fn tr_equals_t_on_constant_input() {
        let x = Tensor::<f32>::full(Shape5::new(1, 2, 6, 5, 5), 0.8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = Tensor::<f32>::randn(Shape5::new(2, 2, 3, 3, 3), 0.5, &mut rng);
        let t_cfg = CdcConfig::new(CdcVariant::T, 0.45, (3, 3, 3), (1, 1, 1)).unwrap();
        let tr_cfg = CdcConfig::new(CdcVariant::Tr, 0.45, (3, 3, 3), (1, 1, 1)).unwrap();
        let yt = cdc_forward(&x, &w, None, &t_cfg).unwrap();
        let ytr = cdc_forward(&x, &w, None, &tr_cfg).unwrap();
        // Averaging constants is the identity, so interior values agree.
        let os = yt.shape();
        for o in 0..os.c {
            for t in 1..os.t - 1 {
                for h in 1..os.h - 1 {
                    for ww in 1..os.w - 1 {
                        let a = yt.at(0, o, t, h, ww);
                        let b = ytr.at(0, o, t, h, ww);
                        assert!((a - b).abs() < 1e-5);
                    }
                }
            }
        }
    }
}
