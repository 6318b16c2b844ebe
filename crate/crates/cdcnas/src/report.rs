//! Study harnesses: the theta sweep on a fixed small backbone, and the
//! search-space/fusion ablation matrix. Both run on small in-memory
//! synthetic datasets and return tables for CSV emission.

use crate::cdc::{CdcConfig, CdcVariant};
use crate::data::view::{sample_frames, AugmentPlan};
use crate::data::{synthesize_in_memory, ClipSource, MemorySource, MotionClass, Split, SynthSpec};
use crate::engine::eval::{evaluate_models, ConfusionAccumulator, Fusion};
use crate::engine::loader::{Loader, SplitPlan};
use crate::engine::optim::Sgd;
use crate::engine::search::{count_correct, run_search, SearchSettings};
use crate::engine::train::{train_model, TrainSettings};
use crate::error::{Error, Result};
use crate::nn::{ConvBnRelu, LinearLayer};
use crate::params::{ParamStore, Partition};
use crate::pipeline::baseline_genotype;
use crate::search::genotype::Genotype;
use crate::search::net::{
    build_discrete_stage1, build_discrete_stage2, build_stage1_supernet, build_stage2_supernet,
    BranchSpec, NetConfig, RegistrySpec,
};
use crate::search::registry::{Modality, RegistryFlavor};
use crate::tape::Session;
use crate::tensor::Tensor;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// A small fixed backbone: stem, two convolution blocks of one CDC variant,
/// spatial pooling, global average pooling, linear classifier. No search
/// machinery involved; the variant and theta are the only knobs.
pub struct FixedBackbone {
    pub store: ParamStore<f32>,
    stem: ConvBnRelu,
    block1: ConvBnRelu,
    block2: ConvBnRelu,
    head: LinearLayer,
}

impl FixedBackbone {
    pub fn build(
        variant: CdcVariant,
        theta: f64,
        in_channels: usize,
        width: usize,
        num_classes: usize,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let stem_cfg = CdcConfig::vanilla((3, 3, 3), (1, 2, 2))?;
        let conv_cfg = CdcConfig::new(variant, theta, (3, 3, 3), (1, 1, 1))?;
        let stem = ConvBnRelu::new(&mut store, "stem", in_channels, width, stem_cfg, &mut rng)?;
        let block1 = ConvBnRelu::new(&mut store, "b1", width, width, conv_cfg.clone(), &mut rng)?;
        let block2 = ConvBnRelu::new(&mut store, "b2", width, 2 * width, conv_cfg, &mut rng)?;
        let head = LinearLayer::new(&mut store, "head", 2 * width, num_classes, &mut rng)?;
        Ok(FixedBackbone {
            store,
            stem,
            block1,
            block2,
            head,
        })
    }

    fn forward(&mut self, x: &Tensor<f32>, train: bool) -> Result<(Session<'_, f32>, crate::tape::Val)> {
        let mut sess = Session::new(&mut self.store, train);
        let xv = sess.input(x.clone());
        let y = self.stem.forward(&mut sess, xv)?;
        let y = self.block1.forward(&mut sess, y)?;
        let y = sess.tape.maxpool(y, (1, 2, 2), (1, 2, 2))?;
        let y = self.block2.forward(&mut sess, y)?;
        let y = sess.tape.global_avg_pool(y);
        let logits = self.head.forward(&mut sess, y)?;
        Ok((sess, logits))
    }
}

/// Settings for the motion-only theta-sweep task.
#[derive(Clone, Debug)]
pub struct SweepSettings {
    pub modality: &'static str,
    pub motion_amplitude: f64,
    pub clips_per_class: usize,
    pub frames: usize,
    pub resolution: usize,
    pub crop: usize,
    pub rate: usize,
    pub width: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub data_seed: u64,
}

impl Default for SweepSettings {
    fn default() -> Self {
        SweepSettings {
            modality: "depth",
            motion_amplitude: 0.4,
            clips_per_class: 48,
            frames: 32,
            resolution: 24,
            crop: 20,
            rate: 16,
            width: 8,
            epochs: 24,
            batch_size: 8,
            lr: 2e-2,
            data_seed: 17,
        }
    }
}

/// The motion-only dataset: four sweep directions, identical appearance.
/// Single frames carry no class information beyond blob position, which is
/// randomized, so separating classes requires temporal modeling.
pub fn sweep_dataset(s: &SweepSettings) -> Result<MemorySource> {
    synthesize_in_memory(&SynthSpec {
        classes: vec![
            MotionClass::LeftSweep,
            MotionClass::RightSweep,
            MotionClass::UpSweep,
            MotionClass::DownSweep,
        ],
        clips_per_class: s.clips_per_class,
        frames: s.frames,
        height: s.resolution,
        width: s.resolution,
        blob_radius: 2.8,
        rgb_noise: 0.06,
        depth_noise: 0.01,
        texture_amp: 0.18,
        blob_contrast: 0.42,
        motion_amplitude: s.motion_amplitude,
        seed: s.data_seed,
        train_frac: 0.6,
        val_frac: 0.1,
    })
}

/// Train the fixed backbone on single-rate rgb views and return test
/// accuracy. Plain SGD, center-crop evaluation.
pub fn train_fixed_backbone(
    variant: CdcVariant,
    theta: f64,
    data: &MemorySource,
    s: &SweepSettings,
    seed: u64,
) -> Result<f64> {
    let num_classes = data.num_classes();
    let in_channels = if s.modality == "rgb" { 3 } else { 1 };
    let mut net = FixedBackbone::build(variant, theta, in_channels, s.width, num_classes, seed)?;
    let mut sgd = Sgd::new(s.lr, 0.9, 5e-5, Partition::Weight);
    let train_idx = data.indices_of(Split::Train);
    let test_idx = data.indices_of(Split::Test);

    // Deterministic order shuffling via a per-epoch rng.
    let assemble = |indices: &[usize], epoch: usize, train: bool| -> Result<(Tensor<f32>, Vec<usize>)> {
        let mut frames: Vec<Tensor<f32>> = Vec::with_capacity(indices.len());
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            let clip = data.load(i)?;
            labels.push(clip.label as usize);
            let modal = clip.modality(s.modality)?;
            let sampled = sample_frames(modal, s.rate)?;
            let plan = if train {
                let mut rng = ChaCha8Rng::seed_from_u64(
                    seed ^ (epoch as u64) << 40 ^ (i as u64) << 8 ^ 0xA9,
                );
                AugmentPlan::draw(
                    &mut rng,
                    0.0,
                    (s.crop, s.crop),
                    (s.resolution, s.resolution),
                )?
            } else {
                AugmentPlan::center((s.crop, s.crop), (s.resolution, s.resolution))?
            };
            frames.push(plan.apply(&sampled));
        }
        let in_channels = if s.modality == "rgb" { 3 } else { 1 };
        let mut stacked = Tensor::zeros(crate::tensor::Shape5::new(
            frames.len(),
            in_channels,
            s.rate,
            s.crop,
            s.crop,
        ));
        let stride = frames[0].numel();
        for (i, f) in frames.iter().enumerate() {
            stacked.data_mut()[i * stride..(i + 1) * stride].copy_from_slice(f.data());
        }
        Ok((stacked, labels))
    };

    for epoch in 0..s.epochs {
        let mut order = train_idx.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0E0C ^ (epoch as u64) << 16);
        for i in (1..order.len()).rev() {
            let j = rand::Rng::gen_range(&mut rng, 0..=i);
            order.swap(i, j);
        }
        for chunk in order.chunks(s.batch_size) {
            let (x, labels) = assemble(chunk, epoch, true)?;
            let (mut sess, logits) = net.forward(&x, true)?;
            let loss = sess.tape.cross_entropy(logits, labels)?;
            let lv = sess.tape.value(loss).data()[0];
            if !lv.is_finite() {
                return Err(Error::Numeric(format!(
                    "sweep training diverged at epoch {epoch}"
                )));
            }
            let grads = sess.backward(loss)?;
            drop(sess);
            sgd.step(&mut net.store, &grads)?;
        }
    }

    let mut acc = ConfusionAccumulator::new(num_classes);
    for chunk in test_idx.chunks(s.batch_size) {
        let (x, labels) = assemble(chunk, 0, false)?;
        let (mut sess, logits) = net.forward(&x, false)?;
        let probs = sess.tape.softmax(logits);
        let probs = sess.tape.value(probs).clone();
        drop(sess);
        let _ = count_correct(&probs, &labels);
        acc.add(&labels, &probs)?;
    }
    Ok(acc.accuracy())
}

#[derive(Clone, Debug)]
pub struct SweepRow {
    pub variant: CdcVariant,
    pub theta: f64,
    pub seed: u64,
    pub test_accuracy: f64,
}

/// Full sweep: every variant at every theta, one row per (variant, theta,
/// seed).
pub fn theta_sweep(
    thetas: &[f64],
    seeds: &[u64],
    settings: &SweepSettings,
) -> Result<Vec<SweepRow>> {
    let data = sweep_dataset(settings)?;
    let mut rows = Vec::new();
    for variant in [CdcVariant::St, CdcVariant::T, CdcVariant::Tr] {
        for &theta in thetas {
            for &seed in seeds {
                let acc = train_fixed_backbone(variant, theta, &data, settings, seed)?;
                rows.push(SweepRow {
                    variant,
                    theta,
                    seed,
                    test_accuracy: acc,
                });
            }
        }
    }
    Ok(rows)
}

pub fn median(values: &mut Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

// ---------------------------------------------------------------------------
// Ablation matrix
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct AblationSettings {
    pub classes: usize,
    pub clips_per_class: usize,
    pub frames: usize,
    pub resolution: usize,
    pub crop: usize,
    pub rates: Vec<usize>,
    pub channels: Vec<usize>,
    pub cells: usize,
    pub k_partial: usize,
    pub search: SearchSettings,
    pub train: TrainSettings,
    pub seed: u64,
}

impl Default for AblationSettings {
    fn default() -> Self {
        AblationSettings {
            classes: 3,
            clips_per_class: 12,
            frames: 32,
            resolution: 24,
            crop: 20,
            rates: vec![8, 16, 32],
            channels: vec![6, 4, 2],
            cells: 3,
            k_partial: 2,
            search: SearchSettings {
                epochs: 2,
                freeze_epochs: 1,
                batch_size: 6,
                lr_decay_epoch: 99,
                ..Default::default()
            },
            train: TrainSettings {
                epochs: 3,
                batch_size: 6,
                ..Default::default()
            },
            seed: 23,
        }
    }
}

#[derive(Clone, Debug)]
pub struct AblationRow {
    pub config: String,
    pub rgb: Option<f64>,
    pub depth: Option<f64>,
    pub rgbd: Option<f64>,
}

impl AblationSettings {
    fn net_config(&self, modalities: &[Modality], flavor: RegistryFlavor, classes: usize) -> NetConfig {
        let mut branches = Vec::new();
        for &m in modalities {
            for (&rate, &ch) in self.rates.iter().zip(&self.channels) {
                branches.push(BranchSpec {
                    modality: m,
                    rate,
                    channels: ch,
                });
            }
        }
        NetConfig {
            branches,
            cells: self.cells,
            num_classes: classes,
            k_partial: self.k_partial,
            stem_stride: 2,
            registry: RegistrySpec {
                flavor,
                theta_t: 0.6,
                theta_tr: 0.3,
            },
        }
    }

    fn dataset(&self) -> Result<MemorySource> {
        let mut all = MotionClass::default_six();
        all.push(MotionClass::HoldFlick);
        synthesize_in_memory(&SynthSpec {
            classes: all[..self.classes].to_vec(),
            clips_per_class: self.clips_per_class,
            frames: self.frames,
            height: self.resolution,
            width: self.resolution,
            blob_radius: 2.8,
            seed: self.seed,
            train_frac: 0.67,
            val_frac: 0.16,
            ..Default::default()
        })
    }
}

/// Run one search over a single modality and return the derived genotype.
fn searched_stage1(
    s: &AblationSettings,
    data: &MemorySource,
    modality: Modality,
    flavor: RegistryFlavor,
) -> Result<Genotype> {
    let cfg = s.net_config(&[modality], flavor, data.num_classes());
    let mut net = build_stage1_supernet::<f32>(&cfg, false, s.seed)?;
    let loader = Loader::new(
        data,
        cfg.branch_keys(),
        (s.crop, s.crop),
        0.0,
        s.search.batch_size,
        s.seed,
    );
    let plan = SplitPlan::new(&data.indices_of(Split::Train))?;
    run_search(&mut net, &loader, &plan, &s.search)?;
    net.derive_stage1()
}

/// Train a derived network and return test accuracy.
fn train_and_test(
    s: &AblationSettings,
    data: &MemorySource,
    genotype: &Genotype,
    flavor: RegistryFlavor,
) -> Result<f64> {
    let modalities: Vec<Modality> = genotype
        .stage1
        .keys()
        .map(|k| Modality::parse(k))
        .collect::<Result<_>>()?;
    let cfg = s
        .net_config(&modalities, flavor, data.num_classes())
        .derived(s.cells, 1);
    let mut net = if modalities.len() == 1 {
        build_discrete_stage1::<f32>(&cfg, genotype, s.seed + 1)?
    } else {
        build_discrete_stage2::<f32>(&cfg, genotype, s.seed + 1)?
    };
    let loader = Loader::new(
        data,
        cfg.branch_keys(),
        (s.crop, s.crop),
        0.0,
        s.train.batch_size,
        s.seed,
    );
    train_model(&mut net, &loader, &s.train)?;
    let mut refs = vec![&mut net];
    let report = evaluate_models(
        &mut refs,
        data,
        Split::Test,
        (s.crop, s.crop),
        s.train.batch_size,
        s.seed,
        Fusion::None,
    )?;
    Ok(report.accuracy)
}

/// The full ablation matrix: {vanilla, cdc} x {fixed cells, searched cells}
/// for each single modality, plus the three multi-modal fusion modes over
/// the searched CDC backbones.
pub fn ablation_matrix(s: &AblationSettings) -> Result<Vec<AblationRow>> {
    let data = s.dataset()?;
    let mut rows = Vec::new();
    let mut cdc_genotypes: Vec<Genotype> = Vec::new();

    for flavor in [RegistryFlavor::Vanilla, RegistryFlavor::Cdc] {
        let tag = match flavor {
            RegistryFlavor::Vanilla => "w/o CDC",
            RegistryFlavor::Cdc => "w/ CDC",
        };
        // Hand-fixed cells.
        let mut fixed = AblationRow {
            config: format!("{tag}, w/o NAS1"),
            rgb: None,
            depth: None,
            rgbd: None,
        };
        for m in [Modality::Rgb, Modality::Depth] {
            let geno = baseline_genotype(&[m], &s.rates, flavor);
            let acc = train_and_test(s, &data, &geno, flavor)?;
            match m {
                Modality::Rgb => fixed.rgb = Some(acc),
                Modality::Depth => fixed.depth = Some(acc),
            }
        }
        rows.push(fixed);
        // Searched cells.
        let mut searched = AblationRow {
            config: format!("{tag}, w/ NAS1"),
            rgb: None,
            depth: None,
            rgbd: None,
        };
        let mut genos = Vec::new();
        for m in [Modality::Rgb, Modality::Depth] {
            let geno = searched_stage1(s, &data, m, flavor)?;
            let acc = train_and_test(s, &data, &geno, flavor)?;
            match m {
                Modality::Rgb => searched.rgb = Some(acc),
                Modality::Depth => searched.depth = Some(acc),
            }
            genos.push(geno);
        }
        rows.push(searched);
        if flavor == RegistryFlavor::Cdc {
            cdc_genotypes = genos;
        }
    }

    // Multi-modal rows over the searched CDC backbones.
    let combined = Genotype::combine(
        &[&cdc_genotypes[0], &cdc_genotypes[1]],
        Vec::new(),
    )?;
    let flavor = RegistryFlavor::Cdc;

    // Late fusion: no lateral connections at all.
    let acc = train_and_test(s, &data, &combined, flavor)?;
    rows.push(AblationRow {
        config: "w/ CDC, NAS2_Fixed".into(),
        rgb: None,
        depth: None,
        rgbd: Some(acc),
    });

    for (shared, tag) in [(true, "NAS2_Shared"), (false, "NAS2_Unshared")] {
        let cfg = s.net_config(
            &[Modality::Rgb, Modality::Depth],
            flavor,
            data.num_classes(),
        );
        let mut net = build_stage2_supernet::<f32>(&cfg, &combined, shared, s.seed + 2)?;
        let loader = Loader::new(
            &data,
            cfg.branch_keys(),
            (s.crop, s.crop),
            0.0,
            s.search.batch_size,
            s.seed,
        );
        let plan = SplitPlan::new(&data.indices_of(Split::Train))?;
        run_search(&mut net, &loader, &plan, &s.search)?;
        let edges = net.derive_stage2()?;
        let geno = Genotype::combine(
            &[&cdc_genotypes[0], &cdc_genotypes[1]],
            edges,
        )?;
        let acc = train_and_test(s, &data, &geno, flavor)?;
        rows.push(AblationRow {
            config: format!("w/ CDC, {tag}"),
            rgb: None,
            depth: None,
            rgbd: Some(acc),
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    #[ignore]
    fn sweep_probe() {
        let settings = SweepSettings::default();
        let data = sweep_dataset(&settings).unwrap();
        let t0 = std::time::Instant::now();
        for theta in [0.0, 0.6] {
            for seed in [1u64, 2, 3] {
                let t1 = std::time::Instant::now();
                let acc =
                    train_fixed_backbone(CdcVariant::T, theta, &data, &settings, seed).unwrap();
                println!(
                    "T theta={theta} seed={seed}: acc {acc:.3} ({:.1}s)",
                    t1.elapsed().as_secs_f64()
                );
            }
        }
        println!("total {:.1}s", t0.elapsed().as_secs_f64());
    }
}
