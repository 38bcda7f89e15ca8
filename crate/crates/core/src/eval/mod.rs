//! Metrics and analyses of trained models.

mod analysis;
mod baseline;
mod coherence;
mod metrics;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use analysis::{
    discourse_distribution, similarity_report, topic_similarity, DiscourseDistribution,
    SimilarityReport,
};
pub use baseline::{
    bow_features, bow_logistic_baseline, train_logistic, BaselineConfig, BaselineOutcome,
    LogisticModel,
};
pub use coherence::{npmi_coherence, CoherenceReport, CooccurrenceIndex, TopicCoherence, NPMI_EPSILON};
pub use metrics::{auc, classification_metrics, Confusion, MetricsReport};

use crate::error::Result;
use crate::exec::Execution;
use crate::model::{FrozenSide, InstanceInput, ModelData, NewEntryModel, Prediction, THRESHOLD};
use crate::tdm::top_words;
use crate::tensor::Real;

/// How many discourse predictions per query turn enter the distribution.
pub const DISCOURSE_TOP: usize = 2;

pub fn report_predictions(predictions: &[Prediction]) -> Result<MetricsReport> {
    let scores: Vec<f64> = predictions.iter().map(|p| p.probability).collect();
    let labels: Vec<bool> = predictions.iter().map(|p| p.gold).collect();
    classification_metrics(&scores, &labels, THRESHOLD)
}

pub fn evaluate<T: Real>(
    model: &NewEntryModel<T>,
    data: &ModelData,
    set: &[InstanceInput],
    mode: Execution,
) -> Result<(MetricsReport, Vec<Prediction>)> {
    let predictions = model.predict(data, set, mode)?;
    Ok((report_predictions(&predictions)?, predictions))
}

/// Topic-word and discourse-word rankings of the decoder.
pub fn top_terms<T: Real>(model: &NewEntryModel<T>, n: usize) -> Result<(Vec<Vec<usize>>, Vec<Vec<usize>>)> {
    let rank = |m: crate::tensor::Tensor<T>| -> Result<Vec<Vec<usize>>> {
        let (rows, _) = m.dims2();
        (0..rows)
            .map(|r| top_words(&m.row_slice(r).iter().map(|v| v.as_f64()).collect::<Vec<_>>(), n))
            .collect()
    };
    Ok((
        rank(model.tdm.phi_topic(&model.tdm_store))?,
        rank(model.tdm.phi_discourse(&model.tdm_store))?,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub similarity: SimilarityReport,
    pub discourse: DiscourseDistribution,
    pub coherence: CoherenceReport,
}

impl AnalysisReport {
    /// Machine-parsable `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        let sim = &self.similarity;
        let _ = writeln!(s, "# similarity=cosine_x100 (cosine mapped linearly onto 0..100)");
        let _ = writeln!(
            s,
            "similarity_successful={:.4} similarity_failed={:.4} successful_count={} failed_count={} skipped_no_history={}",
            sim.successful_mean, sim.failed_mean, sim.successful_count, sim.failed_count, sim.skipped
        );
        for (b, (s_, f_)) in self
            .discourse
            .successful
            .iter()
            .zip(&self.discourse.failed)
            .enumerate()
        {
            let _ = writeln!(s, "discourse={b} successful={s_:.6} failed={f_:.6}");
        }
        let c = &self.coherence;
        let _ = writeln!(
            s,
            "coherence=npmi window={} documents={} mean_top5={:.6} mean_top10={:.6} skipped_pairs={}",
            c.window, c.documents, c.mean_top5, c.mean_top10, c.skipped_pairs
        );
        for (k, t) in c.topics.iter().enumerate() {
            let _ = writeln!(s, "topic={k} npmi_top5={:.6} npmi_top10={:.6}", t.top5, t.top10);
        }
        s
    }
}

pub fn analyze_with_sides<T: Real>(
    model: &NewEntryModel<T>,
    data: &ModelData,
    set: &[InstanceInput],
    sides: &[FrozenSide<T>],
) -> Result<AnalysisReport> {
    let e: Vec<(Option<Vec<f64>>, Vec<f64>)> = sides
        .iter()
        .map(|s| (s.e_u.as_ref().map(|t| t.to_f64_vec()), s.e_c.to_f64_vec()))
        .collect();
    let similarity = similarity_report(
        e.iter()
            .zip(set)
            .map(|((u, c), inst)| (u.as_deref(), c.as_slice(), inst.label)),
    )?;
    let tops: Vec<Vec<usize>> = sides.iter().map(|s| s.query_top_behaviors(DISCOURSE_TOP)).collect();
    let discourse = discourse_distribution(
        model.config.tdm.discourse,
        tops.iter().zip(set).map(|(t, inst)| (t.as_slice(), inst.label)),
    )?;
    let (topics, _) = top_terms(model, 10.min(data.topic_vocab_size))?;
    let coherence = npmi_coherence(&topics, data.train_conversation_bows());
    Ok(AnalysisReport {
        similarity,
        discourse,
        coherence,
    })
}

pub fn analyze<T: Real>(
    model: &NewEntryModel<T>,
    data: &ModelData,
    set: &[InstanceInput],
    mode: Execution,
) -> Result<AnalysisReport> {
    let sides = model.frozen_sides(data, set, mode)?;
    analyze_with_sides(model, data, set, &sides)
}
