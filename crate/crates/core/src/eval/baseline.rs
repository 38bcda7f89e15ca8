use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::metrics::{classification_metrics, MetricsReport};
use crate::corpus::SparseBow;
use crate::error::{Error, Result};
use crate::layers::{AdamConfig, AdamState};
use crate::model::{InstanceInput, THRESHOLD};
use crate::rng::{stream_rng, Stream};
use crate::snp::class_weight;
use crate::tensor::{Group, ParamGrads, ParamStore, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        BaselineConfig {
            epochs: 30,
            batch_size: 64,
            lr: 0.01,
            seed: 1,
        }
    }
}

/// `log(1 + count)` features: query-turn words in `[0, V)`, context words
/// in `[V, 2V)`.
pub fn bow_features(inst: &InstanceInput, vocab: usize) -> Vec<(usize, f64)> {
    let n = inst.turn_bows.len();
    let mut context: SparseBow = Vec::new();
    for b in &inst.turn_bows[..n - 1] {
        context.extend(b.iter().copied());
    }
    context.sort_unstable();
    let mut merged: Vec<(usize, u32)> = Vec::new();
    for (i, c) in context {
        match merged.last_mut() {
            Some((j, m)) if *j == i => *m += c,
            _ => merged.push((i, c)),
        }
    }
    inst.query_bow()
        .iter()
        .map(|&(i, c)| (i, c))
        .chain(merged.into_iter().map(|(i, c)| (vocab + i, c)))
        .map(|(i, c)| (i, (1.0 + c as f64).ln()))
        .collect()
}

pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl LogisticModel {
    pub fn score(&self, x: &[(usize, f64)]) -> f64 {
        let z = self.bias + x.iter().map(|&(i, v)| self.weights[i] * v).sum::<f64>();
        1.0 / (1.0 + (-z).exp())
    }
}

/// Class-weighted logistic regression on sparse features, trained with Adam.
pub fn train_logistic(
    xs: &[Vec<(usize, f64)>],
    ys: &[bool],
    dim: usize,
    config: &BaselineConfig,
) -> Result<LogisticModel> {
    if xs.is_empty() || xs.len() != ys.len() {
        return Err(Error::invalid("logistic regression needs matching nonempty inputs"));
    }
    let mu = class_weight(ys.iter().copied())?;
    let mut store = ParamStore::new(Group::Free);
    let w = store.add("baseline.weight", Tensor::<f64>::zeros(&[dim]));
    let b = store.add("baseline.bias", Tensor::<f64>::zeros(&[1]));
    let mut adam = AdamState::new(
        &store,
        AdamConfig {
            lr: config.lr,
            clip_norm: None,
            ..AdamConfig::default()
        },
    );
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..config.epochs {
        order.shuffle(&mut stream_rng(config.seed, Stream::Shuffle, &[epoch as u64, 99]));
        for batch in order.chunks(config.batch_size.max(1)) {
            let model = LogisticModel {
                weights: store.get(w).data().to_vec(),
                bias: store.get(b).item(),
            };
            let mut gw = vec![0.0; dim];
            let mut gb = 0.0;
            for &i in batch {
                let p = model.score(&xs[i]);
                // d/dz of -(mu y log p + (1 - y) log(1 - p)).
                let g = if ys[i] { -mu * (1.0 - p) } else { p };
                for &(j, v) in &xs[i] {
                    gw[j] += g * v;
                }
                gb += g;
            }
            let inv = 1.0 / batch.len() as f64;
            let mut grads = ParamGrads::new();
            grads.insert(w, Tensor::new(vec![dim], gw.iter().map(|g| g * inv).collect())?);
            grads.insert(b, Tensor::new(vec![1], vec![gb * inv])?);
            adam.step(&mut store, &grads)?;
        }
    }
    Ok(LogisticModel {
        weights: store.get(w).data().to_vec(),
        bias: store.get(b).item(),
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BaselineOutcome {
    pub report: MetricsReport,
    pub scores: Vec<f64>,
}

/// Logistic regression on query-turn and context bags of words.
pub fn bow_logistic_baseline(
    train: &[InstanceInput],
    test: &[InstanceInput],
    vocab: usize,
    config: &BaselineConfig,
) -> Result<BaselineOutcome> {
    let xs: Vec<_> = train.iter().map(|i| bow_features(i, vocab)).collect();
    let ys: Vec<bool> = train.iter().map(|i| i.label).collect();
    let model = train_logistic(&xs, &ys, 2 * vocab, config)?;
    let scores: Vec<f64> = test.iter().map(|i| model.score(&bow_features(i, vocab))).collect();
    let labels: Vec<bool> = test.iter().map(|i| i.label).collect();
    Ok(BaselineOutcome {
        report: classification_metrics(&scores, &labels, THRESHOLD)?,
        scores,
    })
}
