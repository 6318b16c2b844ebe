//! Command implementations: each function is one CLI command body, reading a
//! `RunConfig`, producing artifacts in a run directory, and writing the
//! fully-resolved config beside them.

use crate::cdc::{CdcConfig, CdcVariant};
use crate::config::*;
use crate::data::{DatasetIndex, MotionClass, Split, SynthSpec};
use crate::engine::eval::{evaluate_models, Fusion};
use crate::engine::loader::{Loader, SplitPlan};
use crate::engine::metrics::{
    write_alpha_trace, write_confusion, write_epoch_log, write_table, EpochLog,
};
use crate::engine::search::{run_search, SearchSettings};
use crate::engine::train::{train_model, TrainSettings};
use crate::engine::{checkpoint, gradcheck};
use crate::error::{Error, Result};
use crate::oracle;
use crate::search::genotype::Genotype;
use crate::search::net::{
    build_discrete_stage1, build_discrete_stage2, build_stage1_supernet, build_stage2_supernet,
    BranchSpec, MultiRateNet, NetConfig, RegistrySpec,
};
use crate::search::registry::{Modality, RegistryFlavor};
use crate::tensor::{Shape5, Tensor};
use std::path::{Path, PathBuf};
use std::time::Instant;

pub fn synth_spec(cfg: &mut RunConfig) -> Result<SynthSpec> {
    let n_classes = cfg.get_usize("classes", 6)?;
    let all = {
        let mut v = MotionClass::default_six();
        v.push(MotionClass::HoldFlick);
        v
    };
    if n_classes < 2 || n_classes > all.len() {
        return Err(Error::config(format!(
            "classes must be in 2..={}, got {n_classes}",
            all.len()
        )));
    }
    Ok(SynthSpec {
        classes: all[..n_classes].to_vec(),
        clips_per_class: cfg.get_usize("clips_per_class", 64)?,
        frames: cfg.get_usize("frames", 64)?,
        height: cfg.get_usize("height", 48)?,
        width: cfg.get_usize("width", 48)?,
        blob_radius: cfg.get_f64("blob_radius", 4.5)?,
        rgb_noise: cfg.get_f64("rgb_noise", 0.03)?,
        depth_noise: cfg.get_f64("depth_noise", 0.01)?,
        texture_amp: cfg.get_f64("texture_amp", 0.12)?,
        blob_contrast: cfg.get_f64("blob_contrast", 1.0)?,
        motion_amplitude: cfg.get_f64("motion_amplitude", 1.0)?,
        seed: cfg.get_u64("seed", 0)?,
        train_frac: cfg.get_f64("train_frac", 0.75)?,
        val_frac: cfg.get_f64("val_frac", 0.125)?,
    })
}

pub fn registry_spec(cfg: &mut RunConfig) -> Result<RegistrySpec> {
    Ok(RegistrySpec {
        flavor: RegistryFlavor::parse(&cfg.get_str("registry", "cdc"))?,
        theta_t: cfg.get_f64("theta_t", 0.6)?,
        theta_tr: cfg.get_f64("theta_tr", 0.3)?,
    })
}

pub fn net_config(
    cfg: &mut RunConfig,
    modalities: &[Modality],
    num_classes: usize,
) -> Result<NetConfig> {
    let rates = cfg.get_usize_list("rates", "8,16,32")?;
    let channels = cfg.get_usize_list("channels", "24,16,8")?;
    if rates.len() != channels.len() {
        return Err(Error::config("rates and channels must have equal length"));
    }
    let mut branches = Vec::new();
    for &m in modalities {
        for (&rate, &ch) in rates.iter().zip(&channels) {
            branches.push(BranchSpec {
                modality: m,
                rate,
                channels: ch,
            });
        }
    }
    Ok(NetConfig {
        branches,
        cells: cfg.get_usize("cells", 8)?,
        num_classes,
        k_partial: cfg.get_usize("k_partial", 2)?,
        stem_stride: cfg.get_usize("stem_stride", 2)?,
        registry: registry_spec(cfg)?,
    })
}

pub fn search_settings(cfg: &mut RunConfig) -> Result<SearchSettings> {
    let epochs = cfg.get_usize("epochs", 10)?;
    Ok(SearchSettings {
        epochs,
        freeze_epochs: cfg.get_usize("freeze_epochs", 3)?,
        batch_size: cfg.get_usize("batch_size", 8)?,
        weight_lr: cfg.get_f64("weight_lr", 1e-2)?,
        weight_momentum: cfg.get_f64("weight_momentum", 0.9)?,
        weight_decay: cfg.get_f64("weight_decay", 5e-5)?,
        arch_lr: cfg.get_f64("arch_lr", 6e-4)?,
        arch_weight_decay: cfg.get_f64("arch_weight_decay", 1e-3)?,
        lr_decay_epoch: cfg.get_usize("lr_decay_epoch", epochs.saturating_mul(7) / 10)?,
        lr_decay_factor: cfg.get_f64("lr_decay_factor", 0.5)?,
    })
}

pub fn train_settings(cfg: &mut RunConfig) -> Result<TrainSettings> {
    Ok(TrainSettings {
        epochs: cfg.get_usize("train_epochs", 40)?,
        batch_size: cfg.get_usize("batch_size", 8)?,
        lr: cfg.get_f64("train_lr", 1e-2)?,
        momentum: cfg.get_f64("weight_momentum", 0.9)?,
        weight_decay: cfg.get_f64("weight_decay", 5e-5)?,
        plateau_factor: cfg.get_f64("plateau_factor", 0.1)?,
        plateau_patience: cfg.get_usize("plateau_patience", 3)?,
    })
}

fn load_dataset(cfg: &mut RunConfig) -> Result<DatasetIndex> {
    let dir = PathBuf::from(cfg.require("data")?);
    DatasetIndex::load(&dir)
}

fn crop_and_flip(cfg: &mut RunConfig) -> Result<((usize, usize), f64)> {
    let crop = cfg.get_usize("crop", 32)?;
    let flip = cfg.get_f64("flip_prob", 0.0)?;
    Ok(((crop, crop), flip))
}

/// `synth`: generate the dataset into `out`.
pub fn cmd_synth(cfg: &mut RunConfig) -> Result<PathBuf> {
    cfg.set("command", "synth")?;
    let spec = synth_spec(cfg)?;
    let out = cfg.out_dir("dataset");
    crate::data::write_dataset(&out, &spec)?;
    cfg.write_resolved(&out)?;
    Ok(out)
}

/// `search-backbone`: stage-1 bilevel search over one modality.
pub fn cmd_search_backbone(cfg: &mut RunConfig) -> Result<PathBuf> {
    cfg.set("command", "search-backbone")?;
    let data = load_dataset(cfg)?;
    let modality = Modality::parse(&cfg.get_str("modality", "rgb"))?;
    let seed = cfg.get_u64("seed", 0)?;
    let shared_cells = cfg.get_bool("shared_cells", false)?;
    let net_cfg = net_config(cfg, &[modality], crate::data::ClipSource::num_classes(&data))?;
    let settings = search_settings(cfg)?;
    let ((crop_h, crop_w), flip) = crop_and_flip(cfg)?;
    let out = cfg.out_dir("runs/search-backbone");
    std::fs::create_dir_all(&out)?;

    let mut net = build_stage1_supernet::<f32>(&net_cfg, shared_cells, seed)?;
    let loader = Loader::new(
        &data,
        net_cfg.branch_keys(),
        (crop_h, crop_w),
        flip,
        settings.batch_size,
        seed,
    );
    let plan = SplitPlan::new(&crate::data::ClipSource::indices_of(&data, Split::Train))?;
    let run = run_search(&mut net, &loader, &plan, &settings)?;
    let genotype = net.derive_stage1()?;

    genotype.save(&out.join(GENOTYPE_FILE))?;
    write_alpha_trace(&out.join(TRACE_FILE), &run.trace)?;
    write_epoch_log(&out.join(LOG_FILE), &run.log)?;
    checkpoint::save(&net.store, &out.join(CHECKPOINT_FILE))?;
    cfg.write_resolved(&out)?;
    Ok(out)
}

fn genotype_from_key(cfg: &mut RunConfig, key: &str) -> Result<Genotype> {
    let path = PathBuf::from(cfg.require(key)?);
    let path = if path.is_dir() {
        path.join(GENOTYPE_FILE)
    } else {
        path
    };
    Genotype::load(&path)
}

/// `search-lateral`: stage-2 bilevel search over both modalities.
pub fn cmd_search_lateral(cfg: &mut RunConfig) -> Result<PathBuf> {
    cfg.set("command", "search-lateral")?;
    let data = load_dataset(cfg)?;
    let rgb = genotype_from_key(cfg, "rgb_genotype")?;
    let depth = genotype_from_key(cfg, "depth_genotype")?;
    let combined = Genotype::combine(&[&rgb, &depth], Vec::new())?;
    let seed = cfg.get_u64("seed", 0)?;
    let shared_levels = cfg.get_bool("shared_levels", false)?;
    let net_cfg = net_config(
        cfg,
        &[Modality::Rgb, Modality::Depth],
        crate::data::ClipSource::num_classes(&data),
    )?;
    let settings = search_settings(cfg)?;
    let ((crop_h, crop_w), flip) = crop_and_flip(cfg)?;
    let out = cfg.out_dir("runs/search-lateral");
    std::fs::create_dir_all(&out)?;

    let mut net = build_stage2_supernet::<f32>(&net_cfg, &combined, shared_levels, seed)?;
    let loader = Loader::new(
        &data,
        net_cfg.branch_keys(),
        (crop_h, crop_w),
        flip,
        settings.batch_size,
        seed,
    );
    let plan = SplitPlan::new(&crate::data::ClipSource::indices_of(&data, Split::Train))?;
    let run = run_search(&mut net, &loader, &plan, &settings)?;
    let edges = net.derive_stage2()?;
    let genotype = Genotype::combine(&[&rgb, &depth], edges)?;

    genotype.save(&out.join(GENOTYPE_FILE))?;
    write_alpha_trace(&out.join(TRACE_FILE), &run.trace)?;
    write_epoch_log(&out.join(LOG_FILE), &run.log)?;
    checkpoint::save(&net.store, &out.join(CHECKPOINT_FILE))?;
    cfg.write_resolved(&out)?;
    Ok(out)
}

/// `derive`: re-derive the genotype of a finished search run from its
/// checkpointed architecture parameters.
pub fn cmd_derive(cfg: &mut RunConfig) -> Result<PathBuf> {
    cfg.set("command", "derive")?;
    let run_dir = PathBuf::from(cfg.require("run")?);
    let mut stored = RunConfig::from_file(&run_dir.join(CONFIG_RESOLVED))?;
    let command = stored.require("command")?;
    let out = cfg.out_dir("runs/derive");
    std::fs::create_dir_all(&out)?;

    let genotype = match command.as_str() {
        "search-backbone" => {
            let modality = Modality::parse(&stored.get_str("modality", "rgb"))?;
            let data = load_dataset(&mut stored)?;
            let seed = stored.get_u64("seed", 0)?;
            let shared_cells = stored.get_bool("shared_cells", false)?;
            let net_cfg = net_config(
                &mut stored,
                &[modality],
                crate::data::ClipSource::num_classes(&data),
            )?;
            let mut net = build_stage1_supernet::<f32>(&net_cfg, shared_cells, seed)?;
            checkpoint::load_into(&mut net.store, &run_dir.join(CHECKPOINT_FILE))?;
            net.derive_stage1()?
        }
        "search-lateral" => {
            let data = load_dataset(&mut stored)?;
            let rgb = genotype_from_key(&mut stored, "rgb_genotype")?;
            let depth = genotype_from_key(&mut stored, "depth_genotype")?;
            let combined = Genotype::combine(&[&rgb, &depth], Vec::new())?;
            let seed = stored.get_u64("seed", 0)?;
            let shared_levels = stored.get_bool("shared_levels", false)?;
            let net_cfg = net_config(
                &mut stored,
                &[Modality::Rgb, Modality::Depth],
                crate::data::ClipSource::num_classes(&data),
            )?;
            let mut net = build_stage2_supernet::<f32>(&net_cfg, &combined, shared_levels, seed)?;
            checkpoint::load_into(&mut net.store, &run_dir.join(CHECKPOINT_FILE))?;
            let edges = net.derive_stage2()?;
            Genotype::combine(&[&rgb, &depth], edges)?
        }
        other => {
            return Err(Error::config(format!(
                "run directory was produced by '{other}', not a search command"
            )))
        }
    };
    genotype.save(&out.join(GENOTYPE_FILE))?;
    cfg.write_resolved(&out)?;
    Ok(out)
}

/// Build the discrete network a genotype describes, scaled for training.
pub fn build_derived(
    cfg: &mut RunConfig,
    genotype: &Genotype,
    num_classes: usize,
    seed: u64,
) -> Result<(NetConfig, MultiRateNet<f32>)> {
    let modalities: Vec<Modality> = genotype
        .stage1
        .keys()
        .map(|k| Modality::parse(k))
        .collect::<Result<_>>()?;
    if modalities.is_empty() {
        return Err(Error::config("genotype has no stage-1 sections"));
    }
    let search_cfg = net_config(cfg, &modalities, num_classes)?;
    let derived_cells = cfg.get_usize("derived_cells", 12)?;
    let mult = cfg.get_usize("channel_multiplier", 2)?;
    let derived_cfg = search_cfg.derived(derived_cells, mult);
    let net = if modalities.len() == 1 {
        build_discrete_stage1::<f32>(&derived_cfg, genotype, seed)?
    } else {
        build_discrete_stage2::<f32>(&derived_cfg, genotype, seed)?
    };
    Ok((derived_cfg, net))
}

/// `train`: train the discrete network described by a genotype.
pub fn cmd_train(cfg: &mut RunConfig) -> Result<PathBuf> {
    cfg.set("command", "train")?;
    let data = load_dataset(cfg)?;
    let genotype = genotype_from_key(cfg, "genotype")?;
    let seed = cfg.get_u64("seed", 0)?;
    let settings = train_settings(cfg)?;
    let ((crop_h, crop_w), flip) = crop_and_flip(cfg)?;
    let (derived_cfg, mut net) = build_derived(
        cfg,
        &genotype,
        crate::data::ClipSource::num_classes(&data),
        seed,
    )?;
    let out = cfg.out_dir("runs/train");
    std::fs::create_dir_all(&out)?;

    let loader = Loader::new(
        &data,
        derived_cfg.branch_keys(),
        (crop_h, crop_w),
        flip,
        settings.batch_size,
        seed,
    );
    let result = train_model(&mut net, &loader, &settings)?;
    std::fs::write(out.join(CHECKPOINT_FILE), &result.best_checkpoint)?;
    write_epoch_log(&out.join(LOG_FILE), &result.log)?;
    genotype.save(&out.join(GENOTYPE_FILE))?;
    cfg.write_resolved(&out)?;
    Ok(out)
}

/// Rebuild a trained model from a train run directory.
pub fn load_trained_model(run_dir: &Path) -> Result<MultiRateNet<f32>> {
    let mut stored = RunConfig::from_file(&run_dir.join(CONFIG_RESOLVED))?;
    let genotype = Genotype::load(&run_dir.join(GENOTYPE_FILE))?;
    let data = load_dataset(&mut stored)?;
    let seed = stored.get_u64("seed", 0)?;
    let (_, mut net) = build_derived(
        &mut stored,
        &genotype,
        crate::data::ClipSource::num_classes(&data),
        seed,
    )?;
    checkpoint::load_into(&mut net.store, &run_dir.join(CHECKPOINT_FILE))?;
    Ok(net)
}

/// `eval`: evaluate one or more trained models, optionally fused.
pub fn cmd_eval(cfg: &mut RunConfig) -> Result<PathBuf> {
    cfg.set("command", "eval")?;
    let data = load_dataset(cfg)?;
    let fusion = Fusion::parse(&cfg.get_str("fusion", "none"))?;
    let split = Split::parse(&cfg.get_str("split", "test"))?;
    let model_dirs = cfg.get_str_list("models", "");
    if model_dirs.is_empty() {
        return Err(Error::config("eval needs at least one entry in 'models'"));
    }
    let seed = cfg.get_u64("seed", 0)?;
    let crop = cfg.get_usize("crop", 32)?;
    let batch = cfg.get_usize("batch_size", 8)?;
    let out = cfg.out_dir("runs/eval");
    std::fs::create_dir_all(&out)?;

    let mut models: Vec<MultiRateNet<f32>> = model_dirs
        .iter()
        .map(|d| load_trained_model(Path::new(d)))
        .collect::<Result<_>>()?;
    let mut refs: Vec<&mut MultiRateNet<f32>> = models.iter_mut().collect();
    let report = evaluate_models(
        &mut refs,
        &data,
        split,
        (crop, crop),
        batch,
        seed,
        fusion,
    )?;

    let mut rows = vec![vec![
        "accuracy".to_string(),
        format!("{:.6}", report.accuracy),
    ]];
    for (i, acc) in report.per_class.iter().enumerate() {
        rows.push(vec![format!("class_{i}_accuracy"), format!("{acc:.6}")]);
    }
    rows.push(vec!["samples".into(), report.n.to_string()]);
    write_table(&out.join(METRICS_FILE), &["metric", "value"], &rows)?;
    write_confusion(&out.join(CONFUSION_FILE), &report.confusion)?;
    cfg.write_resolved(&out)?;
    Ok(out)
}

/// `gradcheck`: finite-difference suite over every primitive.
pub fn cmd_gradcheck(cfg: &mut RunConfig) -> Result<PathBuf> {
    cfg.set("command", "gradcheck")?;
    let out = cfg.out_dir("runs/gradcheck");
    std::fs::create_dir_all(&out)?;
    let results = gradcheck::run_suite()?;
    let mut rows = Vec::new();
    let mut worst: f64 = 0.0;
    for r in &results {
        println!("{:40} max_rel_err {:.3e}", r.name, r.max_rel_err);
        rows.push(vec![r.name.clone(), format!("{:.9e}", r.max_rel_err)]);
        worst = worst.max(r.max_rel_err);
    }
    write_table(&out.join(GRADCHECK_FILE), &["op", "max_rel_err"], &rows)?;
    cfg.write_resolved(&out)?;
    if worst > gradcheck::GRAD_TOL {
        return Err(Error::Numeric(format!(
            "gradient check failed: worst relative error {worst:.3e} exceeds {}",
            gradcheck::GRAD_TOL
        )));
    }
    println!("all {} checks passed (tolerance {})", results.len(), gradcheck::GRAD_TOL);
    Ok(out)
}

pub struct BenchRow {
    pub path: String,
    pub median_ms: f64,
    pub ratio_vs_vanilla: f64,
}

/// Time one closure: warmup once, then median of `reps`.
fn time_median(reps: usize, mut f: impl FnMut()) -> f64 {
    f();
    let mut times: Vec<f64> = (0..reps)
        .map(|_| {
            let t0 = Instant::now();
            f();
            t0.elapsed().as_secs_f64() * 1e3
        })
        .collect();
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times[times.len() / 2]
}

/// Benchmark grid: decomposed CDC forward vs vanilla conv vs the literal
/// sampled-difference oracle, on (C=16, T=16, H=W=32), kernel 3x3x3.
pub fn bench_grid(reps: usize) -> Result<Vec<BenchRow>> {
    use rand::SeedableRng;
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0xBE);
    let x = Tensor::<f32>::uniform(Shape5::new(1, 16, 16, 32, 32), -1.0, 1.0, &mut rng);
    let w = Tensor::<f32>::uniform(Shape5::new(16, 16, 3, 3, 3), -0.3, 0.3, &mut rng);

    let vanilla_cfg = CdcConfig::vanilla((3, 3, 3), (1, 1, 1))?;
    let pad = vanilla_cfg.conv_spec();
    let vanilla_ms = time_median(reps, || {
        let _ = crate::ops::conv3d::conv3d_forward(&x, &w, None, &pad).unwrap();
    });
    let mut rows = vec![BenchRow {
        path: "vanilla_conv3d".into(),
        median_ms: vanilla_ms,
        ratio_vs_vanilla: 1.0,
    }];

    for (variant, theta) in [
        (CdcVariant::St, 0.7),
        (CdcVariant::T, 0.6),
        (CdcVariant::Tr, 0.3),
    ] {
        let cfg = CdcConfig::new(variant, theta, (3, 3, 3), (1, 1, 1))?;
        let ms = time_median(reps, || {
            let _ = crate::cdc::cdc_forward(&x, &w, None, &cfg).unwrap();
        });
        rows.push(BenchRow {
            path: format!("cdc_{}_decomposed", variant.name()),
            median_ms: ms,
            ratio_vs_vanilla: ms / vanilla_ms,
        });
    }

    // The literal form is slow; time it with fewer repetitions.
    let lit_cfg = CdcConfig::new(CdcVariant::T, 0.6, (3, 3, 3), (1, 1, 1))?;
    let lit_ms = time_median(reps.min(3), || {
        let _ = oracle::cdc_literal_forward(&x, &w, None, &lit_cfg).unwrap();
    });
    rows.push(BenchRow {
        path: "cdc_t_literal_oracle".into(),
        median_ms: lit_ms,
        ratio_vs_vanilla: lit_ms / vanilla_ms,
    });
    Ok(rows)
}

/// `bench`: emit the benchmark table.
pub fn cmd_bench(cfg: &mut RunConfig) -> Result<PathBuf> {
    cfg.set("command", "bench")?;
    let reps = cfg.get_usize("bench_repeats", 9)?;
    let out = cfg.out_dir("runs/bench");
    std::fs::create_dir_all(&out)?;
    let rows = bench_grid(reps)?;
    let mut table = Vec::new();
    for r in &rows {
        println!(
            "{:24} {:>10.3} ms   {:>6.3}x vanilla",
            r.path, r.median_ms, r.ratio_vs_vanilla
        );
        table.push(vec![
            r.path.clone(),
            format!("{:.4}", r.median_ms),
            format!("{:.4}", r.ratio_vs_vanilla),
        ]);
    }
    write_table(
        &out.join(BENCH_FILE),
        &["path", "median_ms", "ratio_vs_vanilla"],
        &table,
    )?;
    cfg.write_resolved(&out)?;
    Ok(out)
}

/// Baseline hand-fixed cell for ablations without backbone search: every
/// intermediate node reads its two immediate predecessors through a 3x3x3
/// convolution from the active operation space.
pub fn baseline_genotype(
    modalities: &[Modality],
    rates: &[usize],
    flavor: RegistryFlavor,
) -> Genotype {
    use crate::search::genotype::{BranchCellGene, EdgeGene, NodeGene};
    let op = match flavor {
        RegistryFlavor::Cdc => "CDC-T-06_3x3x3",
        RegistryFlavor::Vanilla => "Conv_3x3x3",
    };
    let nodes: Vec<NodeGene> = (2..6)
        .map(|node| NodeGene {
            node,
            edges: vec![
                EdgeGene {
                    from: node - 2,
                    op: op.into(),
                },
                EdgeGene {
                    from: node - 1,
                    op: op.into(),
                },
            ],
        })
        .collect();
    let mut g = Genotype::empty();
    for m in modalities {
        g.stage1.insert(
            m.name().to_string(),
            rates
                .iter()
                .map(|&rate| BranchCellGene {
                    rate,
                    nodes: nodes.clone(),
                })
                .collect(),
        );
    }
    g
}

/// Mean per-epoch validation accuracy extracted from a log.
pub fn final_val_accuracy(log: &[EpochLog]) -> f64 {
    log.iter()
        .rev()
        .find(|r| r.split == "val")
        .map(|r| r.accuracy)
        .unwrap_or(0.0)
}
