//! Batch assembly: clip loading, multi-rate sampling, augmentation, and
//! provenance tagging for the bilevel alternation.

use crate::data::view::{sample_frames, AugmentPlan};
use crate::data::{ClipSource, Split};
use crate::error::{Error, Result};
use crate::search::lateral::BranchKey;
use crate::tensor::{Shape5, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Which half of the alternation (or which evaluation split) a batch is for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BatchTag {
    /// Batches feeding weight updates (first half of the training set).
    WeightHalf,
    /// Batches feeding architecture updates (latter half).
    AlphaHalf,
    Eval(Split),
}

#[derive(Clone, Debug)]
pub struct Batch {
    /// One tensor per requested branch, aligned with `Loader::keys`.
    pub inputs: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub tag: BatchTag,
}

/// Deterministic partition of the training set into a weight-update half and
/// an architecture-update half: first half / latter half in manifest order.
#[derive(Clone, Debug)]
pub struct SplitPlan {
    pub weight_half: Vec<usize>,
    pub alpha_half: Vec<usize>,
}

impl SplitPlan {
    pub fn new(train_indices: &[usize]) -> Result<Self> {
        if train_indices.len() < 2 {
            return Err(Error::config(
                "training set too small to split for bilevel search",
            ));
        }
        let mid = train_indices.len().div_ceil(2);
        Ok(SplitPlan {
            weight_half: train_indices[..mid].to_vec(),
            alpha_half: train_indices[mid..].to_vec(),
        })
    }
}

/// Assembles batches of multi-rate views for a fixed set of branches.
pub struct Loader<'s, S: ClipSource> {
    pub source: &'s S,
    pub keys: Vec<BranchKey>,
    pub crop: (usize, usize),
    pub flip_prob: f64,
    pub batch_size: usize,
    pub seed: u64,
}

fn mix(seed: u64, a: u64, b: u64) -> u64 {
    let mut z = seed ^ a.wrapping_mul(0xD1B54A32D192ED03) ^ b.wrapping_mul(0x8CB92BA72F3D8DD7);
    z = (z ^ (z >> 32)).wrapping_mul(0xD6E8FEB86659FD93);
    z ^ (z >> 32)
}

impl<'s, S: ClipSource> Loader<'s, S> {
    pub fn new(
        source: &'s S,
        keys: Vec<BranchKey>,
        crop: (usize, usize),
        flip_prob: f64,
        batch_size: usize,
        seed: u64,
    ) -> Self {
        Loader {
            source,
            keys,
            crop,
            flip_prob,
            batch_size,
            seed,
        }
    }

    /// Chunk `indices` into batches, shuffled deterministically per epoch.
    pub fn plan_batches(&self, indices: &[usize], epoch: usize, shuffle: bool) -> Vec<Vec<usize>> {
        let mut idx = indices.to_vec();
        if shuffle {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(self.seed, 0xBA7C4, epoch as u64));
            for i in (1..idx.len()).rev() {
                let j = rng.gen_range(0..=i);
                idx.swap(i, j);
            }
        }
        idx.chunks(self.batch_size).map(|c| c.to_vec()).collect()
    }

    /// Load, sample, augment and stack one batch.
    pub fn assemble(
        &self,
        indices: &[usize],
        tag: BatchTag,
        epoch: usize,
        augment: bool,
    ) -> Result<Batch> {
        if indices.is_empty() {
            return Err(Error::config("empty batch"));
        }
        let n = indices.len();
        let mut per_branch: Vec<Vec<Tensor<f32>>> = vec![Vec::with_capacity(n); self.keys.len()];
        let mut labels = Vec::with_capacity(n);
        for &clip_idx in indices {
            let clip = self.source.load(clip_idx)?;
            labels.push(clip.label as usize);
            let (_, h, w) = clip.extents()?;
            // One augmentation decision per clip, shared by every modality
            // and rate so spatial alignment is preserved.
            let plan = if augment {
                let mut rng = ChaCha8Rng::seed_from_u64(mix(
                    self.seed,
                    0xA06,
                    (epoch as u64) << 32 | clip_idx as u64,
                ));
                AugmentPlan::draw(&mut rng, self.flip_prob, self.crop, (h, w))?
            } else {
                AugmentPlan::center(self.crop, (h, w))?
            };
            for (ki, key) in self.keys.iter().enumerate() {
                let modal = clip.modality(key.modality.name())?;
                let sampled = sample_frames(modal, key.rate)?;
                per_branch[ki].push(plan.apply(&sampled));
            }
        }
        let mut inputs = Vec::with_capacity(self.keys.len());
        for stack in per_branch {
            inputs.push(stack_batch(&stack)?);
        }
        Ok(Batch {
            inputs,
            labels,
            tag,
        })
    }
}

/// Stack single-clip tensors (1, C, T, H, W) into one batch tensor.
fn stack_batch(items: &[Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = items
        .first()
        .ok_or_else(|| Error::shape("stacking zero tensors"))?;
    let s = first.shape();
    let os = Shape5::new(items.len(), s.c, s.t, s.h, s.w);
    let mut out = Tensor::zeros(os);
    let stride = s.numel();
    for (i, item) in items.iter().enumerate() {
        if item.shape() != s {
            return Err(Error::shape("ragged batch"));
        }
        out.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(item.data());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_in_memory, MotionClass, SynthSpec};
    use crate::search::registry::Modality;

    fn tiny_source() -> crate::data::MemorySource {
        let spec = SynthSpec {
            classes: MotionClass::default_six()[..2].to_vec(),
            clips_per_class: 4,
            frames: 32,
            height: 20,
            width: 20,
            blob_radius: 2.5,
            ..Default::default()
        };
        synthesize_in_memory(&spec).unwrap()
    }

    fn keys() -> Vec<BranchKey> {
        [8usize, 16, 32]
            .iter()
            .map(|&r| BranchKey {
                modality: Modality::Depth,
                rate: r,
            })
            .collect()
    }

    #[test]
    fn batches_have_expected_shapes() {
        let src = tiny_source();
        let loader = Loader::new(&src, keys(), (16, 16), 0.5, 3, 7);
        let all: Vec<usize> = (0..src.len()).collect();
        let plan = loader.plan_batches(&all, 0, true);
        assert_eq!(plan.iter().map(|b| b.len()).sum::<usize>(), 8);
        let batch = loader.assemble(&plan[0], BatchTag::WeightHalf, 0, true).unwrap();
        assert_eq!(batch.inputs.len(), 3);
        assert_eq!(batch.inputs[0].shape(), Shape5::new(3, 1, 8, 16, 16));
        assert_eq!(batch.inputs[2].shape(), Shape5::new(3, 1, 32, 16, 16));
        assert_eq!(batch.labels.len(), 3);
    }

    #[test]
    fn augmentation_aligns_across_rates() {
        // With a noise-free source, flipped crops of different rates must
        // come from the same spatial transform: frame 0 of every rate is
        // source frame 0, so they must be identical.
        let spec = SynthSpec {
            classes: MotionClass::default_six()[..2].to_vec(),
            clips_per_class: 2,
            frames: 32,
            height: 20,
            width: 20,
            blob_radius: 2.5,
            rgb_noise: 0.0,
            depth_noise: 0.0,
            ..Default::default()
        };
        let src = synthesize_in_memory(&spec).unwrap();
        let loader = Loader::new(&src, keys(), (16, 16), 1.0, 1, 3);
        for epoch in 0..20 {
            let batch = loader
                .assemble(&[0], BatchTag::WeightHalf, epoch, true)
                .unwrap();
            let plane = 16 * 16;
            let f8 = &batch.inputs[0].data()[..plane];
            let f16 = &batch.inputs[1].data()[..plane];
            let f32_ = &batch.inputs[2].data()[..plane];
            assert_eq!(f8, f16);
            assert_eq!(f8, f32_);
        }
    }

    #[test]
    fn split_plan_halves_are_disjoint_and_cover() {
        let idx: Vec<usize> = (0..9).collect();
        let plan = SplitPlan::new(&idx).unwrap();
        assert_eq!(plan.weight_half.len(), 5);
        assert_eq!(plan.alpha_half.len(), 4);
        let mut all = plan.weight_half.clone();
        all.extend(&plan.alpha_half);
        all.sort();
        assert_eq!(all, idx);
    }

    #[test]
    fn plan_batches_is_deterministic_per_epoch() {
        let src = tiny_source();
        let loader = Loader::new(&src, keys(), (16, 16), 0.5, 3, 7);
        let all: Vec<usize> = (0..src.len()).collect();
        assert_eq!(
            loader.plan_batches(&all, 2, true),
            loader.plan_batches(&all, 2, true)
        );
        assert_ne!(
            loader.plan_batches(&all, 2, true),
            loader.plan_batches(&all, 3, true)
        );
    }
}
