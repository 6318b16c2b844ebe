//! Bilevel alternating optimization: architecture parameters descend the
//! validation-half loss, network weights descend the training-half loss,
//! one step each per iteration (first-order approximation).

use crate::data::ClipSource;
use crate::elem::Elem;
use crate::engine::loader::{Batch, BatchTag, Loader, SplitPlan};
use crate::engine::metrics::{EpochLog, TraceRow};
use crate::engine::optim::{Adam, Sgd};
use crate::error::{Error, Result};
use crate::params::{ParamGrads, ParamId, Partition};
use crate::search::net::MultiRateNet;
use crate::tape::Session;

#[derive(Clone, Debug)]
pub struct SearchSettings {
    pub epochs: usize,
    /// Architecture parameters stay frozen for this many initial epochs.
    pub freeze_epochs: usize,
    pub batch_size: usize,
    pub weight_lr: f64,
    pub weight_momentum: f64,
    pub weight_decay: f64,
    pub arch_lr: f64,
    pub arch_weight_decay: f64,
    /// Weight lr is multiplied by `lr_decay_factor` at this epoch.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
}

impl Default for SearchSettings {
    fn default() -> Self {
        SearchSettings {
            epochs: 10,
            freeze_epochs: 3,
            batch_size: 8,
            weight_lr: 1e-2,
            weight_momentum: 0.9,
            weight_decay: 5e-5,
            arch_lr: 6e-4,
            arch_weight_decay: 1e-3,
            lr_decay_epoch: 7,
            lr_decay_factor: 0.5,
        }
    }
}

pub struct SearchRun {
    pub trace: Vec<TraceRow>,
    pub log: Vec<EpochLog>,
}

/// One forward/backward pass; returns gradients, loss and correct count.
pub fn grad_step(
    net: &mut MultiRateNet<f32>,
    batch: &Batch,
    train: bool,
) -> Result<(ParamGrads<f32>, f64, usize)> {
    let mut sess = Session::new(&mut net.store, train);
    let logits = net.arch.forward(&mut sess, &batch.inputs)?;
    let correct = count_correct(sess.tape.value(logits), &batch.labels);
    let loss = sess.tape.cross_entropy(logits, batch.labels.clone())?;
    let loss_val = sess.tape.value(loss).data()[0] as f64;
    let grads = sess.backward(loss)?;
    Ok((grads, loss_val, correct))
}

/// Forward only (evaluation mode), returning loss and correct count.
pub fn eval_step(net: &mut MultiRateNet<f32>, batch: &Batch) -> Result<(f64, usize)> {
    let mut sess = Session::new(&mut net.store, false);
    let logits = net.arch.forward(&mut sess, &batch.inputs)?;
    let correct = count_correct(sess.tape.value(logits), &batch.labels);
    let loss = sess.tape.cross_entropy(logits, batch.labels.clone())?;
    Ok((sess.tape.value(loss).data()[0] as f64, correct))
}

pub fn count_correct<E: Elem>(logits: &crate::tensor::Tensor<E>, labels: &[usize]) -> usize {
    let s = logits.shape();
    let mut correct = 0;
    for (n, &label) in labels.iter().enumerate() {
        let row = &logits.data()[n * s.c..(n + 1) * s.c];
        let mut best = 0usize;
        for (k, &v) in row.iter().enumerate() {
            if v > row[best] {
                best = k;
            }
        }
        if best == label {
            correct += 1;
        }
    }
    correct
}

/// Snapshot the softmax weights of every distinct alpha vector.
pub fn alpha_trace(net: &MultiRateNet<f32>, step: usize) -> Vec<TraceRow> {
    let mut rows = Vec::new();
    let mut seen: Vec<ParamId> = Vec::new();
    let mut emit = |id: ParamId, ops: Vec<String>, rows: &mut Vec<TraceRow>| {
        if seen.contains(&id) {
            return;
        }
        seen.push(id);
        let entry = net.store.entry(id);
        let edge = entry.name.trim_end_matches("/alpha").to_string();
        let vals: Vec<f64> = entry.value.data().iter().map(|&v| v as f64).collect();
        let maxv = vals.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = vals.iter().map(|&v| (v - maxv).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (op, e) in ops.iter().zip(&exps) {
            rows.push(TraceRow {
                step,
                edge: edge.clone(),
                op: op.clone(),
                eta: e / z,
            });
        }
    };
    if !net.arch.alpha.cell_alphas.is_empty() {
        if let Ok(reg) = net.arch.cfg.registry.stage1() {
            let ops: Vec<String> = reg.entries.iter().map(|e| e.name.clone()).collect();
            for ids in &net.arch.alpha.cell_alphas {
                for &id in ids {
                    emit(id, ops.clone(), &mut rows);
                }
            }
        }
    }
    for level_ids in &net.arch.alpha.lateral_alphas {
        for (ei, &id) in level_ids.iter().enumerate() {
            let ops: Vec<String> = net.arch.lateral_registries[ei]
                .entries
                .iter()
                .map(|e| e.name.clone())
                .collect();
            emit(id, ops, &mut rows);
        }
    }
    rows
}

/// The alternating search loop shared by both stages. The caller derives the
/// genotype from the net afterwards.
pub fn run_search<S: ClipSource>(
    net: &mut MultiRateNet<f32>,
    loader: &Loader<'_, S>,
    plan: &SplitPlan,
    settings: &SearchSettings,
) -> Result<SearchRun> {
    let mut sgd = Sgd::new(
        settings.weight_lr,
        settings.weight_momentum,
        settings.weight_decay,
        Partition::Weight,
    );
    let mut adam = Adam::new(settings.arch_lr, settings.arch_weight_decay, Partition::Arch);
    let mut trace = alpha_trace(net, 0);
    let mut log = Vec::new();
    let mut gstep = 0usize;
    let mut last_stable = f64::NAN;

    for epoch in 0..settings.epochs {
        if epoch == settings.lr_decay_epoch {
            sgd.lr *= settings.lr_decay_factor;
        }
        let weight_batches = loader.plan_batches(&plan.weight_half, epoch, true);
        let alpha_batches = loader.plan_batches(&plan.alpha_half, epoch, true);
        if weight_batches.is_empty() || alpha_batches.is_empty() {
            return Err(Error::config("bilevel halves produced no batches"));
        }
        let mut loss_sum = 0.0;
        let mut correct = 0usize;
        let mut seen = 0usize;
        let frozen = epoch < settings.freeze_epochs;

        for (i, wb) in weight_batches.iter().enumerate() {
            gstep += 1;
            // Architecture step on a validation-half batch (Algorithm order:
            // alpha first, then weights).
            if !frozen && settings.arch_lr > 0.0 {
                let ab = &alpha_batches[i % alpha_batches.len()];
                let batch = loader.assemble(ab, BatchTag::AlphaHalf, epoch, true)?;
                assert_eq!(batch.tag, BatchTag::AlphaHalf, "alpha step provenance");
                let (grads, loss, _) = grad_step(net, &batch, true)?;
                if !loss.is_finite() {
                    return Err(diverged("alpha", epoch, gstep, last_stable));
                }
                adam.step(&mut net.store, &grads)?;
            }
            // Weight step on a training-half batch.
            let batch = loader.assemble(wb, BatchTag::WeightHalf, epoch, true)?;
            assert_eq!(batch.tag, BatchTag::WeightHalf, "weight step provenance");
            let (grads, loss, c) = grad_step(net, &batch, true)?;
            if !loss.is_finite() {
                return Err(diverged("weight", epoch, gstep, last_stable));
            }
            sgd.step(&mut net.store, &grads)?;
            last_stable = loss;
            loss_sum += loss * batch.labels.len() as f64;
            correct += c;
            seen += batch.labels.len();
            trace.extend(alpha_trace(net, gstep));
        }

        log.push(EpochLog {
            epoch,
            split: "train".into(),
            loss: loss_sum / seen.max(1) as f64,
            accuracy: correct as f64 / seen.max(1) as f64,
        });

        // Epoch-end validation over the alpha half in eval mode.
        let (vloss, vacc) = eval_over(net, loader, &plan.alpha_half, epoch)?;
        log.push(EpochLog {
            epoch,
            split: "val".into(),
            loss: vloss,
            accuracy: vacc,
        });
    }
    Ok(SearchRun { trace, log })
}

fn diverged(which: &str, epoch: usize, step: usize, last_stable: f64) -> Error {
    Error::Numeric(format!(
        "{which} loss became non-finite at epoch {epoch} step {step}; last stable loss {last_stable:.6}"
    ))
}

/// Mean loss / accuracy over a set of clip indices in eval mode.
pub fn eval_over<S: ClipSource>(
    net: &mut MultiRateNet<f32>,
    loader: &Loader<'_, S>,
    indices: &[usize],
    epoch: usize,
) -> Result<(f64, f64)> {
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    let mut seen = 0usize;
    for b in loader.plan_batches(indices, epoch, false) {
        let batch = loader.assemble(&b, BatchTag::Eval(crate::data::Split::Val), epoch, false)?;
        let (loss, c) = eval_step(net, &batch)?;
        loss_sum += loss * batch.labels.len() as f64;
        correct += c;
        seen += batch.labels.len();
    }
    if seen == 0 {
        return Err(Error::config("evaluation over an empty index set"));
    }
    Ok((loss_sum / seen as f64, correct as f64 / seen as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthesize_in_memory, MotionClass, Split, SynthSpec};
    use crate::search::net::{build_stage1_supernet, BranchSpec, NetConfig, RegistrySpec};
    use crate::search::registry::{Modality, RegistryFlavor};

    fn tiny_data() -> crate::data::MemorySource {
        synthesize_in_memory(&SynthSpec {
            classes: MotionClass::default_six()[..2].to_vec(),
            clips_per_class: 8,
            frames: 32,
            height: 20,
            width: 20,
            blob_radius: 2.5,
            ..Default::default()
        })
        .unwrap()
    }

    fn tiny_cfg() -> NetConfig {
        NetConfig {
            branches: [(8usize, 6usize), (16, 4), (32, 2)]
                .iter()
                .map(|&(rate, channels)| BranchSpec {
                    modality: Modality::Depth,
                    rate,
                    channels,
                })
                .collect(),
            cells: 3,
            num_classes: 2,
            k_partial: 2,
            stem_stride: 2,
            registry: RegistrySpec {
                flavor: RegistryFlavor::Cdc,
                theta_t: 0.6,
                theta_tr: 0.3,
            },
        }
    }

    fn alpha_values(net: &MultiRateNet<f32>) -> Vec<f32> {
        let mut out = Vec::new();
        for ids in &net.arch.alpha.cell_alphas {
            for &id in ids {
                out.extend_from_slice(net.store.get(id).data());
            }
        }
        out
    }

    fn weight_values(net: &MultiRateNet<f32>) -> Vec<f32> {
        let mut out = Vec::new();
        for id in net.store.ids_in(Partition::Weight) {
            out.extend_from_slice(net.store.get(id).data());
        }
        out
    }

    #[test]
    fn zero_arch_lr_leaves_alpha_untouched() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let mut net = build_stage1_supernet::<f32>(&cfg, true, 0).unwrap();
        let loader = Loader::new(&data, cfg.branch_keys(), (16, 16), 0.0, 4, 0);
        let plan = SplitPlan::new(&data.indices_of(Split::Train)).unwrap();
        let alpha_before = alpha_values(&net);
        let weights_before = weight_values(&net);
        let settings = SearchSettings {
            epochs: 1,
            freeze_epochs: 0,
            batch_size: 4,
            arch_lr: 0.0,
            lr_decay_epoch: 99,
            ..Default::default()
        };
        run_search(&mut net, &loader, &plan, &settings).unwrap();
        assert_eq!(alpha_values(&net), alpha_before, "alpha must not move");
        assert_ne!(weight_values(&net), weights_before, "weights must move");
    }

    #[test]
    fn full_freeze_makes_genotype_depend_only_on_init() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let settings = SearchSettings {
            epochs: 1,
            freeze_epochs: 1,
            batch_size: 4,
            lr_decay_epoch: 99,
            ..Default::default()
        };
        let mut genos = Vec::new();
        for _ in 0..2 {
            let mut net = build_stage1_supernet::<f32>(&cfg, false, 42).unwrap();
            let loader = Loader::new(&data, cfg.branch_keys(), (16, 16), 0.0, 4, 0);
            let plan = SplitPlan::new(&data.indices_of(Split::Train)).unwrap();
            run_search(&mut net, &loader, &plan, &settings).unwrap();
            genos.push(net.derive_stage1().unwrap().to_json());
        }
        assert_eq!(genos[0], genos[1]);
        // And identical to the untrained derivation: alpha never moved.
        let fresh = build_stage1_supernet::<f32>(&cfg, false, 42).unwrap();
        assert_eq!(genos[0], fresh.derive_stage1().unwrap().to_json());
    }

    #[test]
    fn alpha_moves_after_unfreeze_and_loss_improves() {
        let data = tiny_data();
        let cfg = tiny_cfg();
        let mut net = build_stage1_supernet::<f32>(&cfg, false, 1).unwrap();
        let loader = Loader::new(&data, cfg.branch_keys(), (16, 16), 0.0, 4, 0);
        let plan = SplitPlan::new(&data.indices_of(Split::Train)).unwrap();
        let alpha_before = alpha_values(&net);
        let settings = SearchSettings {
            epochs: 2,
            freeze_epochs: 1,
            batch_size: 4,
            lr_decay_epoch: 99,
            ..Default::default()
        };
        let run = run_search(&mut net, &loader, &plan, &settings).unwrap();
        assert_ne!(alpha_values(&net), alpha_before);
        assert!(run.log.iter().all(|r| r.loss.is_finite()));
        assert!(!run.trace.is_empty());
        // Eta rows stay a probability distribution per edge/step.
        use std::collections::HashMap;
        let mut sums: HashMap<(usize, String), f64> = HashMap::new();
        for row in &run.trace {
            *sums.entry((row.step, row.edge.clone())).or_default() += row.eta;
        }
        for ((step, edge), sum) in sums {
            assert!(
                (sum - 1.0).abs() <= 1e-6,
                "eta sum {sum} at step {step} edge {edge}"
            );
        }
        let geno = net.derive_stage1().unwrap();
        let reg = cfg.registry.stage1().unwrap();
        geno.validate(&reg, |_, _, _| true).unwrap();
    }
}

#[cfg(test)]
mod profile_tests {
    use super::*;
    use crate::data::DatasetIndex;
    use crate::search::net::{build_stage1_supernet, BranchSpec, NetConfig, RegistrySpec};
    use crate::search::registry::{Modality, RegistryFlavor};

    #[test]
    #[ignore]
    fn profile_search_step() {
        let data = DatasetIndex::load(std::path::Path::new("/tmp/e2e/data")).unwrap();
        let cfg = NetConfig {
            branches: [(8usize, 8usize), (16, 6), (32, 4)]
                .iter()
                .map(|&(rate, channels)| BranchSpec {
                    modality: Modality::Rgb,
                    rate,
                    channels,
                })
                .collect(),
            cells: 3,
            num_classes: 6,
            k_partial: 2,
            stem_stride: 2,
            registry: RegistrySpec {
                flavor: RegistryFlavor::Cdc,
                theta_t: 0.6,
                theta_tr: 0.3,
            },
        };
        let mut net = build_stage1_supernet::<f32>(&cfg, false, 0).unwrap();
        let loader = Loader::new(&data, cfg.branch_keys(), (32, 32), 0.0, 8, 0);
        let idx: Vec<usize> = (0..8).collect();

        let t0 = std::time::Instant::now();
        let batch = loader.assemble(&idx, BatchTag::WeightHalf, 0, true).unwrap();
        println!("assemble: {:.0} ms", t0.elapsed().as_secs_f64() * 1e3);

        for round in 0..3 {
            let t1 = std::time::Instant::now();
            let mut sess = crate::tape::Session::new(&mut net.store, true);
            let logits = net.arch.forward(&mut sess, &batch.inputs).unwrap();
            let fw = t1.elapsed().as_secs_f64() * 1e3;
            let t2 = std::time::Instant::now();
            let loss = sess.tape.cross_entropy(logits, batch.labels.clone()).unwrap();
            let grads = sess.backward(loss).unwrap();
            let bw = t2.elapsed().as_secs_f64() * 1e3;
            drop(sess);
            let t3 = std::time::Instant::now();
            let mut sgd = Sgd::new(1e-2, 0.9, 5e-5, Partition::Weight);
            sgd.step(&mut net.store, &grads).unwrap();
            let opt = t3.elapsed().as_secs_f64() * 1e3;
            println!("round {round}: forward {fw:.0} ms, backward {bw:.0} ms, sgd {opt:.0} ms, tape nodes {}", sess_len());
        }
        fn sess_len() -> usize { 0 }
    }
}

#[cfg(test)]
mod micro_profile {
    use crate::cdc::{cdc_backward, cdc_forward, CdcConfig, CdcVariant};
    use crate::ops::norm::batch_norm_train;
    use crate::tensor::{Shape5, Tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ms(f: impl FnMut()) -> f64 {
        let mut f = f;
        f();
        let reps = 20;
        let t0 = std::time::Instant::now();
        for _ in 0..reps {
            f();
        }
        t0.elapsed().as_secs_f64() * 1e3 / reps as f64
    }

    #[test]
    #[ignore]
    fn profile_micro_ops() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        // Typical supernet candidate conv: active slice 2 channels, low branch.
        let x = Tensor::<f32>::randn(Shape5::new(8, 2, 8, 16, 16), 1.0, &mut rng);
        let w = Tensor::<f32>::randn(Shape5::new(2, 2, 3, 3, 3), 0.3, &mut rng);
        let cfg = CdcConfig::new(CdcVariant::T, 0.6, (3, 3, 3), (1, 1, 1)).unwrap();
        let y = cdc_forward(&x, &w, None, &cfg).unwrap();
        println!("cdc_fwd 2ch:  {:.3} ms", ms(|| { let _ = cdc_forward(&x, &w, None, &cfg).unwrap(); }));
        println!(
            "cdc_bwd 2ch:  {:.3} ms",
            ms(|| { let _ = cdc_backward(&x, &w, &cfg, &y, false).unwrap(); })
        );
        // Stem-sized conv: 3 -> 8 channels at 32x32.
        let xs = Tensor::<f32>::randn(Shape5::new(8, 3, 8, 32, 32), 1.0, &mut rng);
        let ws = Tensor::<f32>::randn(Shape5::new(8, 3, 3, 3, 3), 0.3, &mut rng);
        let scfg = CdcConfig::vanilla((3, 3, 3), (1, 2, 2)).unwrap();
        println!("stem conv:   {:.3} ms", ms(|| { let _ = cdc_forward(&xs, &ws, None, &scfg).unwrap(); }));
        // BN at node size.
        let xb = Tensor::<f32>::randn(Shape5::new(8, 4, 8, 16, 16), 1.0, &mut rng);
        let gamma = Tensor::<f32>::full(Shape5::vector(4), 1.0);
        let beta = Tensor::<f32>::zeros(Shape5::vector(4));
        println!(
            "bn train:    {:.3} ms",
            ms(|| { let _ = batch_norm_train(&xb, &gamma, &beta, 1e-5).unwrap(); })
        );
        // Elementwise at node size.
        let xe = Tensor::<f32>::randn(Shape5::new(8, 4, 8, 16, 16), 1.0, &mut rng);
        println!("relu:        {:.3} ms", ms(|| { let _ = crate::ops::elementwise::relu_forward(&xe); }));
        println!(
            "add:         {:.3} ms",
            ms(|| { let _ = crate::ops::elementwise::add_forward(&xe, &xe).unwrap(); })
        );
        let coef = Tensor::<f32>::full(Shape5::vector(7), 0.3);
        println!(
            "scale_entry: {:.3} ms",
            ms(|| { let _ = crate::ops::elementwise::scale_by_entry_forward(&xe, &coef, 2).unwrap(); })
        );
    }
}
