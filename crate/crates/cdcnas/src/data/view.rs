//! Multi-rate temporal sampling and spatial augmentation.

use crate::error::{Error, Result};
use crate::tensor::{Shape5, Tensor};

/// Uniformly sample `rate` frames: indices floor(i * T0 / rate), no
/// interpolation, start-aligned.
pub fn sample_frames(clip: &Tensor<f32>, rate: usize) -> Result<Tensor<f32>> {
    let s = clip.shape();
    if s.t < rate {
        return Err(Error::shape(format!(
            "cannot sample {rate} frames from a {}-frame clip",
            s.t
        )));
    }
    let os = Shape5::new(s.n, s.c, rate, s.h, s.w);
    let mut out = Tensor::zeros(os);
    let plane = s.h * s.w;
    for n in 0..s.n {
        for c in 0..s.c {
            for i in 0..rate {
                let src_t = i * s.t / rate;
                let src = s.index(n, c, src_t, 0, 0);
                let dst = os.index(n, c, i, 0, 0);
                out.data_mut()[dst..dst + plane]
                    .copy_from_slice(&clip.data()[src..src + plane]);
            }
        }
    }
    Ok(out)
}

/// One augmentation decision, drawn once per clip and applied identically to
/// every modality and rate so cross-modal alignment is preserved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct AugmentPlan {
    pub flip: bool,
    pub crop_y: usize,
    pub crop_x: usize,
    pub crop_h: usize,
    pub crop_w: usize,
}

impl AugmentPlan {
    /// Random flip/crop for training.
    pub fn draw(
        rng: &mut impl rand::Rng,
        flip_prob: f64,
        crop: (usize, usize),
        input: (usize, usize),
    ) -> Result<AugmentPlan> {
        let (ch, cw) = crop;
        let (h, w) = input;
        if ch > h || cw > w {
            return Err(Error::shape(format!(
                "crop {ch}x{cw} exceeds input {h}x{w}"
            )));
        }
        let flip = rng.gen_range(0.0..1.0) < flip_prob;
        let crop_y = if h > ch { rng.gen_range(0..=h - ch) } else { 0 };
        let crop_x = if w > cw { rng.gen_range(0..=w - cw) } else { 0 };
        Ok(AugmentPlan {
            flip,
            crop_y,
            crop_x,
            crop_h: ch,
            crop_w: cw,
        })
    }

    /// Deterministic center crop, no flip, for evaluation.
    pub fn center(crop: (usize, usize), input: (usize, usize)) -> Result<AugmentPlan> {
        let (ch, cw) = crop;
        let (h, w) = input;
        if ch > h || cw > w {
            return Err(Error::shape(format!(
                "crop {ch}x{cw} exceeds input {h}x{w}"
            )));
        }
        Ok(AugmentPlan {
            flip: false,
            crop_y: (h - ch) / 2,
            crop_x: (w - cw) / 2,
            crop_h: ch,
            crop_w: cw,
        })
    }

    pub fn apply(&self, x: &Tensor<f32>) -> Tensor<f32> {
        let s = x.shape();
        let os = Shape5::new(s.n, s.c, s.t, self.crop_h, self.crop_w);
        let mut out = Tensor::zeros(os);
        for n in 0..s.n {
            for c in 0..s.c {
                for t in 0..s.t {
                    for y in 0..self.crop_h {
                        for xx in 0..self.crop_w {
                            let src_x = if self.flip {
                                s.w - 1 - (self.crop_x + self.crop_w - 1 - xx)
                            } else {
                                self.crop_x + xx
                            };
                            out.set(n, c, t, y, xx, x.at(n, c, t, self.crop_y + y, src_x));
                        }
                    }
                }
            }
        }
        out
    }
}
