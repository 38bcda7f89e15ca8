//! Alternating training of the topic-discourse module and the predictor.
//!
//! Phases run `PRETRAIN_TDM -> PRETRAIN_SNP -> (JOINT_TDM <-> JOINT_SNP)* ->
//! DONE`. A phase trains one parameter store and leaves the other
//! untouched. Validation F1 selects the retained parameters.

mod checkpoint;

use std::fmt;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use crate::error::{Error, Result};
use crate::eval::{report_predictions, MetricsReport};
use crate::exec::{map_indexed, Execution};
use crate::layers::{AdamConfig, AdamState};
use crate::model::{FrozenSide, ModelConfig, ModelData, NewEntryModel};
use crate::rng::{stream_rng, Stream};
use crate::tdm::{TdmLosses, TdmNoise};
use crate::tensor::{ParamGrads, ParamStore, Real};

/// Learning rates searched for the predictor.
pub const LR_GRID: [f64; 3] = [1e-3, 1e-4, 1e-5];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Phase {
    PretrainTdm,
    PretrainSnp,
    JointTdm,
    JointSnp,
    Done,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::PretrainTdm => "PRETRAIN_TDM",
            Phase::PretrainSnp => "PRETRAIN_SNP",
            Phase::JointTdm => "JOINT_TDM",
            Phase::JointSnp => "JOINT_SNP",
            Phase::Done => "DONE",
        }
    }

    pub fn trains_tdm(self) -> bool {
        matches!(self, Phase::PretrainTdm | Phase::JointTdm)
    }

    pub fn is_joint(self) -> bool {
        matches!(self, Phase::JointTdm | Phase::JointSnp)
    }

    /// Whether `next` may directly follow `self`.
    pub fn may_precede(self, next: Phase) -> bool {
        use Phase::*;
        matches!(
            (self, next),
            (PretrainTdm, PretrainTdm | PretrainSnp | JointTdm | JointSnp | Done)
                | (PretrainSnp, PretrainSnp | JointTdm | JointSnp | Done)
                | (JointTdm, JointTdm | JointSnp | Done)
                | (JointSnp, JointSnp | JointTdm | Done)
        )
    }
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub pretrain_tdm_epochs: usize,
    pub pretrain_snp_epochs: usize,
    /// Epochs per module within one alternation cycle.
    pub joint_tdm_epochs: usize,
    pub joint_snp_epochs: usize,
    pub max_cycles: usize,
    pub batch_size: usize,
    /// Predictor learning rate.
    pub lr: f64,
    /// Topic-discourse learning rate.
    pub tdm_lr: f64,
    pub clip_norm: Option<f64>,
    /// Validation checks without F1 improvement before stopping.
    pub patience: usize,
    pub seed: u64,
    pub execution: Execution,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            model: ModelConfig::default(),
            pretrain_tdm_epochs: 100,
            pretrain_snp_epochs: 5,
            joint_tdm_epochs: 1,
            joint_snp_epochs: 1,
            max_cycles: 20,
            batch_size: 64,
            lr: 1e-3,
            tdm_lr: 1e-3,
            clip_norm: Some(5.0),
            patience: 5,
            seed: 1,
            execution: Execution::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size must be positive"));
        }
        if !(self.lr > 0.0 && self.tdm_lr > 0.0) {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.max_cycles > 0 && self.joint_tdm_epochs + self.joint_snp_epochs == 0 {
            return Err(Error::invalid("an alternation cycle needs at least one epoch"));
        }
        if self.patience == 0 {
            return Err(Error::invalid("patience must be positive"));
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            clip_norm: self.clip_norm,
            ..AdamConfig::default()
        }
    }

    /// Everything that influences topic-discourse pretraining.
    fn pretraining_key(&self) -> String {
        serde_json::to_string(&(
            &self.model.tdm,
            self.pretrain_tdm_epochs,
            self.batch_size,
            self.tdm_lr,
            self.clip_norm,
            self.seed,
        ))
        .expect("serializable")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseState {
    pub phase: Phase,
    /// Epochs completed within the current phase.
    pub phase_epoch: usize,
    /// Epochs completed overall.
    pub epoch: usize,
    /// Completed alternation cycles.
    pub cycle: usize,
    pub best_f1: Option<f64>,
    pub best_epoch: Option<usize>,
    /// Joint-phase validation checks since the last improvement.
    pub stale_checks: usize,
    pub stop: Option<StopReason>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxCycles,
}

impl PhaseState {
    fn start() -> Self {
        PhaseState {
            phase: Phase::PretrainTdm,
            phase_epoch: 0,
            epoch: 0,
            cycle: 0,
            best_f1: None,
            best_epoch: None,
            stale_checks: 0,
            stop: None,
        }
    }

    fn enter(&mut self, phase: Phase) {
        self.phase = phase;
        self.phase_epoch = 0;
    }

    /// Skips phases whose epoch budget is used up.
    fn settle(&mut self, c: &TrainConfig) {
        loop {
            match self.phase {
                Phase::PretrainTdm if self.phase_epoch >= c.pretrain_tdm_epochs => {
                    self.enter(Phase::PretrainSnp)
                }
                Phase::PretrainSnp if self.phase_epoch >= c.pretrain_snp_epochs => {
                    if c.max_cycles == 0 {
                        self.finish(StopReason::MaxCycles);
                    } else {
                        self.enter(Phase::JointTdm);
                    }
                }
                Phase::JointTdm if self.phase_epoch >= c.joint_tdm_epochs => {
                    self.enter(Phase::JointSnp)
                }
                Phase::JointSnp if self.phase_epoch >= c.joint_snp_epochs => {
                    self.cycle += 1;
                    if self.cycle >= c.max_cycles {
                        self.finish(StopReason::MaxCycles);
                    } else {
                        self.enter(Phase::JointTdm);
                    }
                }
                _ => return,
            }
        }
    }

    fn finish(&mut self, reason: StopReason) {
        self.enter(Phase::Done);
        self.stop = Some(reason);
    }
}

/// One line of the training log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub phase: Phase,
    pub cycle: usize,
    pub phase_epoch: usize,
    pub tau: Option<f64>,
    pub tdm: Option<TdmLosses>,
    pub l_snp: Option<f64>,
    pub clamped: usize,
    pub valid: Option<MetricsReport>,
    pub improved: bool,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} phase={} cycle={} phase_epoch={} tau={}",
            self.epoch,
            self.phase,
            self.cycle,
            self.phase_epoch,
            opt(self.tau)
        )?;
        let t = self.tdm;
        write!(
            f,
            " l_z={} l_d={} l_t={} l_mi={} l_tdm={} l_snp={} clamped={}",
            opt(t.map(|t| t.l_z)),
            opt(t.map(|t| t.l_d)),
            opt(t.map(|t| t.l_t)),
            opt(t.map(|t| t.l_mi)),
            opt(t.map(|t| t.total)),
            opt(self.l_snp),
            self.clamped
        )?;
        let v = self.valid.as_ref();
        write!(
            f,
            " valid_auc={} valid_f1={} valid_precision={} valid_recall={} valid_accuracy={} improved={}",
            opt(v.and_then(|v| v.auc)),
            opt(v.map(|v| v.f1)),
            opt(v.map(|v| v.precision)),
            opt(v.map(|v| v.recall)),
            opt(v.map(|v| v.accuracy)),
            self.improved
        )
    }
}

/// Parameters of both modules.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    pub tdm: ParamStore<T>,
    pub snp: ParamStore<T>,
}

/// Everything besides the model that a resumed run needs.
#[derive(Clone, Debug)]
pub struct TrainState<T> {
    pub phase: PhaseState,
    pub tdm_adam: AdamState<T>,
    pub snp_adam: AdamState<T>,
    pub class_weight: f64,
    pub best: Option<Snapshot<T>>,
    pub log: Vec<EpochLog>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub best_f1: Option<f64>,
    pub best_epoch: Option<usize>,
    pub epochs: usize,
    pub stop: Option<StopReason>,
}

pub struct Trainer<'d, T: Real> {
    pub config: TrainConfig,
    pub data: &'d ModelData,
    pub model: NewEntryModel<T>,
    pub state: TrainState<T>,
    train_sides: Option<Vec<FrozenSide<T>>>,
    valid_sides: Option<Vec<FrozenSide<T>>>,
}

impl<'d, T: Real> Trainer<'d, T> {
    pub fn new(config: TrainConfig, data: &'d ModelData) -> Result<Self> {
        config.validate()?;
        let model = NewEntryModel::for_data(&config.model, data, config.seed)?;
        Self::with_model(config, data, model)
    }

    fn with_model(config: TrainConfig, data: &'d ModelData, model: NewEntryModel<T>) -> Result<Self> {
        if data.train.is_empty() || data.valid.is_empty() || data.tdm_train.is_empty() {
            return Err(Error::Empty("training or validation instances"));
        }
        let state = TrainState {
            phase: PhaseState::start(),
            tdm_adam: AdamState::new(&model.tdm_store, config.adam(config.tdm_lr)),
            snp_adam: AdamState::new(&model.snp_store, config.adam(config.lr)),
            class_weight: data.class_weight()?,
            best: None,
            log: Vec::new(),
        };
        let mut t = Trainer {
            config,
            data,
            model,
            state,
            train_sides: None,
            valid_sides: None,
        };
        t.state.phase.settle(&t.config);
        Ok(t)
    }

    /// Resumes from a checkpoint taken on the same data.
    pub fn resume(checkpoint: Checkpoint<T>, data: &'d ModelData) -> Result<Self> {
        if checkpoint.model.tdm.vocab != data.vocab_size
            || checkpoint.model.tdm.topic_vocab != data.topic_vocab_size
        {
            return Err(Error::Checkpoint(
                "checkpoint vocabulary does not match the data".to_string(),
            ));
        }
        Ok(Trainer {
            config: checkpoint.config,
            data,
            model: checkpoint.model,
            state: checkpoint.state,
            train_sides: None,
            valid_sides: None,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint<T> {
        Checkpoint {
            config: self.config.clone(),
            model: self.model.clone(),
            state: self.state.clone(),
        }
    }

    /// A trainer for `config` that continues from this one's finished
    /// topic-discourse pretraining. The result is identical to training
    /// `config` from scratch, because pretraining never reads predictor
    /// settings and the two modules are initialized from separate streams.
    pub fn fork(&self, config: TrainConfig) -> Result<Trainer<'d, T>> {
        config.validate()?;
        let s = &self.state.phase;
        let pretrained = s.epoch == self.config.pretrain_tdm_epochs
            && !matches!(s.phase, Phase::PretrainTdm);
        if !pretrained {
            return Err(Error::invalid("fork needs a trainer that has just finished pretraining"));
        }
        if config.pretraining_key() != self.config.pretraining_key() {
            return Err(Error::invalid("fork target differs in pretraining settings"));
        }
        let mut fresh = NewEntryModel::for_data(&config.model, self.data, config.seed)?;
        fresh.tdm_store = self.model.tdm_store.clone();
        let mut t = Self::with_model(config, self.data, fresh)?;
        t.state.tdm_adam = self.state.tdm_adam.clone();
        t.state.log = self.state.log.clone();
        t.state.phase.epoch = s.epoch;
        t.state.phase.phase_epoch = s.epoch;
        t.state.phase.settle(&t.config);
        Ok(t)
    }

    pub fn phase(&self) -> Phase {
        self.state.phase.phase
    }

    pub fn log_lines(&self) -> Vec<String> {
        self.state.log.iter().map(ToString::to_string).collect()
    }

    fn train_sides(&mut self) -> Result<&[FrozenSide<T>]> {
        if self.train_sides.is_none() {
            let sides = self.model.frozen_sides(self.data, &self.data.train, self.config.execution)?;
            self.train_sides = Some(sides);
        }
        Ok(self.train_sides.as_deref().expect("just set"))
    }

    fn valid_metrics(&mut self) -> Result<MetricsReport> {
        if self.valid_sides.is_none() {
            let sides = self.model.frozen_sides(self.data, &self.data.valid, self.config.execution)?;
            self.valid_sides = Some(sides);
        }
        let sides = self.valid_sides.as_deref().expect("just set");
        let preds = self
            .model
            .predict_with_sides(&self.data.valid, sides, self.config.execution)?;
        report_predictions(&preds)
    }

    fn tdm_epoch(&mut self, tau: f64) -> Result<TdmLosses> {
        let c = &self.config;
        let epoch = self.state.phase.epoch as u64;
        let items = &self.data.tdm_train;
        let (k, d) = (c.model.tdm.topics, c.model.tdm.discourse);
        let mut order: Vec<usize> = (0..items.len()).collect();
        order.shuffle(&mut stream_rng(c.seed, Stream::Shuffle, &[epoch, 0]));
        let mut total = TdmLosses::default();
        for batch in order.chunks(c.batch_size) {
            let model = &self.model;
            let data = self.data;
            let results = map_indexed(c.execution, batch, |_, &i| {
                let mut rng = stream_rng(c.seed, Stream::Sampling, &[epoch, i as u64, 0]);
                let noise = TdmNoise::sample(k, d, &mut rng);
                model.tdm_item_grads(data, &items[i], &noise, tau)
            });
            let mut grads = ParamGrads::new();
            let mut losses = TdmLosses::default();
            for r in results {
                let (l, g) = r?;
                losses.merge(&l);
                grads.merge(&g);
            }
            if !losses.total.is_finite() {
                return Err(self.divergence());
            }
            total.merge(&losses);
            grads.scale(T::lit(1.0 / batch.len() as f64));
            self.state.tdm_adam.step(&mut self.model.tdm_store, &grads)?;
        }
        self.train_sides = None;
        self.valid_sides = None;
        Ok(total.mean())
    }

    fn snp_epoch(&mut self) -> Result<(f64, usize)> {
        let epoch = self.state.phase.epoch as u64;
        let tau = self.config.model.tdm.tau_end;
        let cw = self.state.class_weight;
        self.train_sides()?;
        let c = &self.config;
        let sides = self.train_sides.as_deref().expect("computed above");
        let train = &self.data.train;
        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut stream_rng(c.seed, Stream::Shuffle, &[epoch, 1]));
        let (mut total, mut clamped) = (0.0, 0);
        for batch in order.chunks(c.batch_size) {
            let model = &self.model;
            let results = map_indexed(c.execution, batch, |_, &i| {
                let mut g = stream_rng(c.seed, Stream::Sampling, &[epoch, i as u64, 1]);
                let mut d = stream_rng(c.seed, Stream::Dropout, &[epoch, i as u64]);
                model.snp_instance_grads(&train[i], &sides[i], tau, cw, &mut g, &mut d)
            });
            let mut grads = ParamGrads::new();
            let mut loss = 0.0;
            for r in results {
                let (l, was_clamped, g) = r?;
                loss += l;
                clamped += usize::from(was_clamped);
                grads.merge(&g);
            }
            if !loss.is_finite() {
                return Err(self.divergence());
            }
            total += loss;
            grads.scale(T::lit(1.0 / batch.len() as f64));
            self.state.snp_adam.step(&mut self.model.snp_store, &grads)?;
        }
        Ok((total / train.len() as f64, clamped))
    }

    fn divergence(&self) -> Error {
        Error::Divergence {
            phase: self.state.phase.phase.to_string(),
            epoch: self.state.phase.epoch,
        }
    }

    /// Runs one epoch of the current phase. Returns `None` once done. On
    /// divergence the model and optimizers roll back to the start of the
    /// epoch and the error is returned.
    pub fn step_epoch(&mut self) -> Result<Option<&EpochLog>> {
        let phase = self.state.phase.phase;
        if phase == Phase::Done {
            return Ok(None);
        }
        let saved = (
            self.model.clone(),
            self.state.tdm_adam.clone(),
            self.state.snp_adam.clone(),
        );
        let result = self.run_phase_epoch(phase);
        let entry = match result {
            Ok(entry) => entry,
            Err(e) => {
                self.model = saved.0;
                self.state.tdm_adam = saved.1;
                self.state.snp_adam = saved.2;
                self.train_sides = None;
                self.valid_sides = None;
                return Err(match e {
                    Error::NonFiniteGradient(_) => self.divergence(),
                    other => other,
                });
            }
        };
        let s = &mut self.state.phase;
        s.epoch += 1;
        s.phase_epoch += 1;
        if s.stale_checks >= self.config.patience {
            s.finish(StopReason::Patience);
        } else {
            s.settle(&self.config);
        }
        self.state.log.push(entry);
        Ok(self.state.log.last())
    }

    fn run_phase_epoch(&mut self, phase: Phase) -> Result<EpochLog> {
        let s = self.state.phase.clone();
        let mut entry = EpochLog {
            epoch: s.epoch,
            phase,
            cycle: s.cycle,
            phase_epoch: s.phase_epoch,
            tau: None,
            tdm: None,
            l_snp: None,
            clamped: 0,
            valid: None,
            improved: false,
        };
        if phase.trains_tdm() {
            let tdm = &self.config.model.tdm;
            let tau = if phase == Phase::PretrainTdm {
                tdm.tau_at(s.phase_epoch, self.config.pretrain_tdm_epochs)
            } else {
                tdm.tau_end
            };
            entry.tau = Some(tau);
            entry.tdm = Some(self.tdm_epoch(tau)?);
        } else {
            let (l, clamped) = self.snp_epoch()?;
            entry.l_snp = Some(l);
            entry.clamped = clamped;
        }
        // The predictor is untrained during topic-discourse pretraining.
        if phase != Phase::PretrainTdm {
            let valid = self.valid_metrics()?;
            let st = &mut self.state.phase;
            if st.best_f1.is_none_or(|b| valid.f1 > b) {
                st.best_f1 = Some(valid.f1);
                st.best_epoch = Some(s.epoch);
                st.stale_checks = 0;
                entry.improved = true;
                self.state.best = Some(Snapshot {
                    tdm: self.model.tdm_store.clone(),
                    snp: self.model.snp_store.clone(),
                });
            } else if phase.is_joint() {
                st.stale_checks += 1;
            }
            entry.valid = Some(valid);
        }
        Ok(entry)
    }

    /// Runs epochs while `keep_going` holds for the state before each.
    pub fn run_while(&mut self, mut keep_going: impl FnMut(&PhaseState) -> bool) -> Result<()> {
        while self.phase() != Phase::Done && keep_going(&self.state.phase) {
            self.step_epoch()?;
        }
        Ok(())
    }

    /// Runs to completion and restores the best validated parameters.
    pub fn run(&mut self) -> Result<TrainOutcome> {
        self.run_while(|_| true)?;
        self.restore_best()?;
        Ok(self.outcome())
    }

    pub fn restore_best(&mut self) -> Result<()> {
        if let Some(best) = &self.state.best {
            self.model.tdm_store.assign_from(&best.tdm)?;
            self.model.snp_store.assign_from(&best.snp)?;
            self.train_sides = None;
            self.valid_sides = None;
        }
        Ok(())
    }

    pub fn outcome(&self) -> TrainOutcome {
        let s = &self.state.phase;
        TrainOutcome {
            best_f1: s.best_f1,
            best_epoch: s.best_epoch,
            epochs: s.epoch,
            stop: s.stop,
        }
    }
}

/// Result of a learning-rate search.
pub struct GridResult<'d, T: Real> {
    /// `(lr, best validation F1)` per grid point.
    pub scores: Vec<(f64, Option<f64>)>,
    pub best_lr: f64,
    pub trainer: Trainer<'d, T>,
}

/// Trains once per predictor learning rate, sharing topic-discourse
/// pretraining, and keeps the run with the best validation F1.
pub fn grid_search<'d, T: Real>(
    config: &TrainConfig,
    data: &'d ModelData,
    lrs: &[f64],
) -> Result<GridResult<'d, T>> {
    if lrs.is_empty() {
        return Err(Error::Empty("learning-rate grid"));
    }
    let mut base = Trainer::<T>::new(config.clone(), data)?;
    base.run_while(|s| s.phase == Phase::PretrainTdm)?;
    let mut best: Option<(f64, Trainer<'d, T>)> = None;
    let mut scores = Vec::new();
    for &lr in lrs {
        let mut t = base.fork(TrainConfig {
            lr,
            ..config.clone()
        })?;
        let outcome = t.run()?;
        scores.push((lr, outcome.best_f1));
        let f1 = outcome.best_f1.unwrap_or(f64::NEG_INFINITY);
        if best.as_ref().is_none_or(|(b, _)| f1 > *b) {
            best = Some((f1, t));
        }
    }
    let (_, trainer) = best.expect("nonempty grid");
    Ok(GridResult {
        scores,
        best_lr: trainer.config.lr,
        trainer,
    })
}

#[cfg(test)]
mod tests;
