//! Evaluation: accuracy, per-class accuracy, confusion matrices, and
//! mean-softmax fusion across models.

use crate::data::{ClipSource, Split};
use crate::engine::loader::{Batch, BatchTag, Loader};
use crate::error::{Error, Result};
use crate::search::net::MultiRateNet;
use crate::tape::Session;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fusion {
    /// Evaluate a single model as-is.
    None,
    /// Average the per-model softmax outputs before the argmax.
    MeanSoftmax,
}

impl Fusion {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Fusion::None),
            "mean-softmax" => Ok(Fusion::MeanSoftmax),
            other => Err(Error::config(format!(
                "fusion must be 'none' or 'mean-softmax', got '{other}'"
            ))),
        }
    }
}

/// Confusion counts; every metric is recomputed from these counts.
#[derive(Clone, Debug)]
pub struct ConfusionAccumulator {
    pub counts: Vec<Vec<usize>>,
}

impl ConfusionAccumulator {
    pub fn new(num_classes: usize) -> Self {
        ConfusionAccumulator {
            counts: vec![vec![0; num_classes]; num_classes],
        }
    }

    /// Argmax of each probability row (ties to the lowest class index).
    pub fn add(&mut self, labels: &[usize], probs: &Tensor<f32>) -> Result<()> {
        let s = probs.shape();
        if s.n != labels.len() || s.c != self.counts.len() {
            return Err(Error::shape("probability tensor does not match labels/classes"));
        }
        for (n, &label) in labels.iter().enumerate() {
            let row = &probs.data()[n * s.c..(n + 1) * s.c];
            let mut best = 0usize;
            for (k, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = k;
                }
            }
            self.counts[label][best] += 1;
        }
        Ok(())
    }

    pub fn total(&self) -> usize {
        self.counts.iter().map(|r| r.iter().sum::<usize>()).sum()
    }

    /// Accuracy recounted from the stored confusion matrix.
    pub fn accuracy(&self) -> f64 {
        let diag: usize = (0..self.counts.len()).map(|i| self.counts[i][i]).sum();
        diag as f64 / self.total().max(1) as f64
    }

    pub fn per_class(&self) -> Vec<f64> {
        self.counts
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    0.0
                } else {
                    self.counts[i][i] as f64 / n as f64
                }
            })
            .collect()
    }
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub accuracy: f64,
    pub per_class: Vec<f64>,
    pub confusion: Vec<Vec<usize>>,
    pub n: usize,
}

/// Softmax probabilities of one model over one batch (eval mode).
pub fn predict_probs(net: &mut MultiRateNet<f32>, batch: &Batch) -> Result<Tensor<f32>> {
    let mut sess = Session::new(&mut net.store, false);
    let logits = net.arch.forward(&mut sess, &batch.inputs)?;
    let probs = sess.tape.softmax(logits);
    Ok(sess.tape.value(probs).clone())
}

/// Evaluate one or more models over a split. With `Fusion::None` exactly one
/// model is allowed; with mean-softmax the per-model probabilities are
/// averaged clip by clip (models may consume different branch subsets).
pub fn evaluate_models<S: ClipSource>(
    models: &mut [&mut MultiRateNet<f32>],
    source: &S,
    split: Split,
    crop: (usize, usize),
    batch_size: usize,
    seed: u64,
    fusion: Fusion,
) -> Result<EvalReport> {
    if models.is_empty() {
        return Err(Error::config("no models to evaluate"));
    }
    if fusion == Fusion::None && models.len() != 1 {
        return Err(Error::config(
            "fusion 'none' evaluates exactly one model; pass mean-softmax for ensembles",
        ));
    }
    let indices = source.indices_of(split);
    if indices.is_empty() {
        return Err(Error::config(format!("split '{}' is empty", split.name())));
    }
    let num_classes = source.num_classes();
    let mut acc = ConfusionAccumulator::new(num_classes);

    // One loader per model: each model sees its own branch subset.
    let loaders: Vec<Loader<'_, S>> = models
        .iter()
        .map(|m| {
            Loader::new(
                source,
                m.arch.cfg.branch_keys(),
                crop,
                0.0,
                batch_size,
                seed,
            )
        })
        .collect();

    let batch_plan = loaders[0].plan_batches(&indices, 0, false);
    for bidx in &batch_plan {
        let mut fused: Option<Tensor<f32>> = None;
        let mut labels: Vec<usize> = Vec::new();
        for (m, model) in models.iter_mut().enumerate() {
            let batch = loaders[m].assemble(bidx, BatchTag::Eval(split), 0, false)?;
            labels = batch.labels.clone();
            let probs = predict_probs(model, &batch)?;
            fused = Some(match fused {
                None => probs,
                Some(f) => f.zip_map(&probs, |a, b| a + b)?,
            });
        }
        let mut probs = fused.expect("at least one model");
        if models.len() > 1 {
            probs.scale_assign(1.0 / models.len() as f32);
        }
        acc.add(&labels, &probs)?;
    }

    Ok(EvalReport {
        accuracy: acc.accuracy(),
        per_class: acc.per_class(),
        n: acc.total(),
        confusion: acc.counts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape5;

    #[test]
    fn oracle_predictor_scores_perfectly() {
        let mut acc = ConfusionAccumulator::new(3);
        for labels in [[0usize, 1].as_slice(), &[2, 2], &[1, 0]] {
            let mut probs = Tensor::<f32>::zeros(Shape5::new(labels.len(), 3, 1, 1, 1));
            for (n, &l) in labels.iter().enumerate() {
                probs.data_mut()[n * 3 + l] = 1.0;
            }
            acc.add(labels, &probs).unwrap();
        }
        assert_eq!(acc.accuracy(), 1.0);
        for (i, row) in acc.counts.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                assert_eq!(v > 0, i == j);
            }
        }
        assert_eq!(acc.per_class(), vec![1.0, 1.0, 1.0]);
    }

    #[test]
    fn accuracy_is_recount_of_confusion() {
        let mut acc = ConfusionAccumulator::new(2);
        let mut probs = Tensor::<f32>::zeros(Shape5::new(4, 2, 1, 1, 1));
        // Predict class 0 always.
        for n in 0..4 {
            probs.data_mut()[n * 2] = 0.9;
            probs.data_mut()[n * 2 + 1] = 0.1;
        }
        acc.add(&[0, 0, 1, 1], &probs).unwrap();
        assert_eq!(acc.counts, vec![vec![2, 0], vec![2, 0]]);
        assert_eq!(acc.accuracy(), 0.5);
    }

    #[test]
    fn ties_resolve_to_lowest_class() {
        let mut acc = ConfusionAccumulator::new(3);
        let probs = Tensor::<f32>::full(Shape5::new(1, 3, 1, 1, 1), 1.0 / 3.0);
        acc.add(&[2], &probs).unwrap();
        assert_eq!(acc.counts[2][0], 1);
    }
}
