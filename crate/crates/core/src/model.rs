//! The topic-discourse module and the predictor wired together: parameter
//! stores, per-instance inputs, and the inference path.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{bow_sum, Dataset, Example, SparseBow, URL};
use crate::error::{Error, Result};
use crate::exec::{map_indexed, Execution};
use crate::layers::Binder;
use crate::rng::{stream_rng, Stream};
use crate::snp::{instance_loss, BoundSnp, SideInputs, Snp, SnpConfig};
use crate::tdm::{
    gumbel_noise, one_hot, relaxed_discourse, sample_discourse, BoundTdm, Tdm, TdmConfig,
    TdmLosses, TdmNoise,
};
use crate::tensor::{Group, ParamGrads, ParamStore, Real, Tape, Tensor, Var};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub tdm: TdmConfig,
    pub snp: SnpConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.tdm.validate()?;
        self.snp.validate()
    }
}

/// One new-entry instance in model-ready form.
#[derive(Clone, Debug, PartialEq)]
pub struct InstanceInput {
    pub id: String,
    /// Token ids per turn, context first, query last.
    pub turns: Vec<Vec<usize>>,
    /// Full-view counts per turn, aligned with `turns`.
    pub turn_bows: Vec<SparseBow>,
    /// Topic-view counts of the context turns.
    pub context_bow: SparseBow,
    /// Indices into [`ModelData::conversation_bows`].
    pub history: Vec<usize>,
    pub label: bool,
}

impl InstanceInput {
    pub fn from_example(ds: &Dataset, ex: &Example) -> Self {
        let conv = &ds.conversations[ex.conversation];
        let inst = &ex.instance;
        let turns = &conv.turns[inst.context_start..=inst.query];
        InstanceInput {
            id: inst.id(),
            turns: turns.iter().map(|t| t.ids.clone()).collect(),
            turn_bows: turns.iter().map(|t| t.full_bow.clone()).collect(),
            context_bow: bow_sum(turns[..turns.len() - 1].iter().map(|t| &t.topic_bow)),
            history: ex.history.clone(),
            label: inst.label,
        }
    }

    pub fn query_bow(&self) -> &SparseBow {
        self.turn_bows.last().expect("instances have a query turn")
    }
}

/// One `(conversation, target turn)` pair for the topic-discourse module.
#[derive(Clone, Debug, PartialEq)]
pub struct TdmItem {
    pub conversation: usize,
    pub turn: SparseBow,
}

/// Everything training and evaluation read, detached from raw text.
#[derive(Clone, Debug)]
pub struct ModelData {
    pub vocab_size: usize,
    pub topic_vocab_size: usize,
    /// Topic-view counts of every conversation, train first.
    pub conversation_bows: Vec<SparseBow>,
    pub train_conversations: usize,
    pub tdm_train: Vec<TdmItem>,
    pub train: Vec<InstanceInput>,
    pub valid: Vec<InstanceInput>,
    pub test: Vec<InstanceInput>,
}

impl ModelData {
    pub fn from_dataset(ds: &Dataset) -> Self {
        let convert = |xs: &[Example]| -> Vec<InstanceInput> {
            xs.iter().map(|e| InstanceInput::from_example(ds, e)).collect()
        };
        let tdm_train = ds
            .train_conversations()
            .iter()
            .enumerate()
            .flat_map(|(ci, c)| {
                c.turns.iter().map(move |t| TdmItem {
                    conversation: ci,
                    turn: t.full_bow.clone(),
                })
            })
            .collect();
        ModelData {
            vocab_size: ds.vocab.len(),
            topic_vocab_size: ds.vocab.topic_size(),
            conversation_bows: ds.conversations.iter().map(|c| c.topic_bow.clone()).collect(),
            train_conversations: ds.split.train.len(),
            tdm_train,
            train: convert(&ds.train),
            valid: convert(&ds.valid),
            test: convert(&ds.test),
        }
    }

    pub fn train_conversation_bows(&self) -> &[SparseBow] {
        &self.conversation_bows[..self.train_conversations]
    }

    /// `N_neg / N_pos` over the training instances.
    pub fn class_weight(&self) -> Result<f64> {
        crate::snp::class_weight(self.train.iter().map(|i| i.label))
    }
}

/// Side inputs computed with the topic-discourse module held fixed.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenSide<T> {
    /// `None` when the newcomer has no history.
    pub e_u: Option<Tensor<T>>,
    pub e_c: Tensor<T>,
    /// Discourse logits per turn, query last.
    pub pi_logits: Vec<Tensor<T>>,
}

impl<T: Real> FrozenSide<T> {
    /// Indices of the `n` most probable behaviors of the query turn.
    pub fn query_top_behaviors(&self, n: usize) -> Vec<usize> {
        let logits = self.pi_logits.last().expect("nonempty").to_f64_vec();
        let mut idx: Vec<usize> = (0..logits.len()).collect();
        idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
        idx.truncate(n);
        idx
    }
}

/// Output record of one prediction.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub id: String,
    pub probability: f64,
    pub predicted: bool,
    pub gold: bool,
}

pub const THRESHOLD: f64 = 0.5;

/// Both modules and their parameter stores.
#[derive(Clone, Debug)]
pub struct NewEntryModel<T: Real> {
    pub config: ModelConfig,
    pub tdm: Tdm,
    pub snp: Snp,
    pub tdm_store: ParamStore<T>,
    pub snp_store: ParamStore<T>,
}

impl<T: Real> NewEntryModel<T> {
    /// The two modules draw from separate initialization streams, so the
    /// topic-discourse tables do not depend on predictor settings.
    pub fn new(config: &ModelConfig, vocab: usize, topic_vocab: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if topic_vocab == 0 || topic_vocab > vocab {
            return Err(Error::invalid(format!(
                "topic vocabulary of {topic_vocab} does not fit a vocabulary of {vocab}"
            )));
        }
        let mut tdm_store = ParamStore::new(Group::Tdm);
        let tdm = Tdm::init(
            &mut tdm_store,
            &config.tdm,
            vocab,
            topic_vocab,
            &mut stream_rng(seed, Stream::Init, &[0]),
        )?;
        let mut snp_store = ParamStore::new(Group::Snp);
        let snp = Snp::init(
            &mut snp_store,
            &config.snp,
            vocab,
            config.tdm.topics,
            config.tdm.discourse,
            &mut stream_rng(seed, Stream::Init, &[1]),
        )?;
        Ok(NewEntryModel {
            config: config.clone(),
            tdm,
            snp,
            tdm_store,
            snp_store,
        })
    }

    pub fn for_data(config: &ModelConfig, data: &ModelData, seed: u64) -> Result<Self> {
        Self::new(config, data.vocab_size, data.topic_vocab_size, seed)
    }

    /// Topic mean of every conversation.
    pub fn conversation_means(&self, bows: &[SparseBow], mode: Execution) -> Result<Vec<Tensor<T>>> {
        map_indexed(mode, bows, |_, b| self.tdm.topic_mean(&self.tdm_store, b))
            .into_iter()
            .collect()
    }

    /// `e_u` as the mean of history means, summed in history order.
    pub fn user_embedding(&self, history: &[usize], means: &[Tensor<T>]) -> Option<Tensor<T>> {
        match history {
            [] => None,
            [one] => Some(means[*one].clone()),
            _ => {
                let mut out = vec![T::zero(); self.config.tdm.topics];
                for &h in history {
                    for (o, &v) in out.iter_mut().zip(means[h].data()) {
                        *o += v;
                    }
                }
                let inv = T::one() / T::lit(history.len() as f64);
                for o in &mut out {
                    *o *= inv;
                }
                Some(Tensor::row(out))
            }
        }
    }

    pub fn frozen_side(&self, inst: &InstanceInput, means: &[Tensor<T>]) -> Result<FrozenSide<T>> {
        Ok(FrozenSide {
            e_u: self.user_embedding(&inst.history, means),
            e_c: self.tdm.topic_mean(&self.tdm_store, &inst.context_bow)?,
            pi_logits: inst
                .turn_bows
                .iter()
                .map(|b| self.tdm.discourse_logits(&self.tdm_store, b))
                .collect::<Result<_>>()?,
        })
    }

    pub fn frozen_sides(
        &self,
        data: &ModelData,
        set: &[InstanceInput],
        mode: Execution,
    ) -> Result<Vec<FrozenSide<T>>> {
        let means = self.conversation_means(&data.conversation_bows, mode)?;
        map_indexed(mode, set, |_, inst| self.frozen_side(inst, &means))
            .into_iter()
            .collect()
    }

    fn side_inputs<'t>(
        &self,
        m: &BoundSnp<'t, T>,
        side: &FrozenSide<T>,
        discourse: Vec<Tensor<T>>,
    ) -> SideInputs<'t, T> {
        let tape = m.tape();
        SideInputs {
            e_u: match &side.e_u {
                Some(e) => tape.constant(e.clone()),
                None => m.default_user(),
            },
            e_c: tape.constant(side.e_c.clone()),
            discourse: discourse.into_iter().map(|d| tape.constant(d)).collect(),
        }
    }

    /// Inference: hard discourse assignments, no dropout. Returns the
    /// probability and the attention weights.
    pub fn predict_one(&self, inst: &InstanceInput, side: &FrozenSide<T>) -> Result<(f64, Vec<f64>)> {
        let tape = Tape::new();
        let m = self.snp.bind(&Binder::new(&tape, &self.snp_store, false));
        let d = side
            .pi_logits
            .iter()
            .map(|l| one_hot(l.argmax(), self.config.tdm.discourse))
            .collect();
        let side = self.side_inputs(&m, side, d);
        let refs: Vec<&[usize]> = inst.turns.iter().map(Vec::as_slice).collect();
        let out = m.forward::<rand_chacha::ChaCha8Rng>(&refs, &side, None)?;
        Ok((out.prob.item().as_f64(), out.attention))
    }

    pub fn predict(
        &self,
        data: &ModelData,
        set: &[InstanceInput],
        mode: Execution,
    ) -> Result<Vec<Prediction>> {
        let sides = self.frozen_sides(data, set, mode)?;
        self.predict_with_sides(set, &sides, mode)
    }

    pub fn predict_with_sides(
        &self,
        set: &[InstanceInput],
        sides: &[FrozenSide<T>],
        mode: Execution,
    ) -> Result<Vec<Prediction>> {
        map_indexed(mode, set, |i, inst| {
            let (p, _) = self.predict_one(inst, &sides[i])?;
            Ok(Prediction {
                id: inst.id.clone(),
                probability: p,
                predicted: p >= THRESHOLD,
                gold: inst.label,
            })
        })
        .into_iter()
        .collect()
    }

    /// Predictor loss and gradients for one instance with the
    /// topic-discourse module frozen. Discourse vectors are relaxed draws
    /// at temperature `tau`.
    pub fn snp_instance_grads<R: Rng>(
        &self,
        inst: &InstanceInput,
        side: &FrozenSide<T>,
        tau: f64,
        class_weight: f64,
        gumbel_rng: &mut R,
        dropout_rng: &mut R,
    ) -> Result<(f64, bool, ParamGrads<T>)> {
        let tape = Tape::new();
        let m = self.snp.bind(&Binder::new(&tape, &self.snp_store, true));
        let dim = self.config.tdm.discourse;
        let d = side
            .pi_logits
            .iter()
            .map(|l| {
                let g = gumbel_noise(dim, gumbel_rng);
                Tensor::row(relaxed_discourse(l.data(), &g, tau))
            })
            .collect();
        let side = self.side_inputs(&m, side, d);
        let refs: Vec<&[usize]> = inst.turns.iter().map(Vec::as_slice).collect();
        let out = m.forward(&refs, &side, Some(dropout_rng))?;
        let (loss, clamped) = instance_loss(&out.prob, inst.label, class_weight);
        let value = loss.item().as_f64();
        Ok((value, clamped, loss.backward()?.into_params()))
    }

    /// Topic-discourse loss and gradients for one item.
    pub fn tdm_item_grads(
        &self,
        data: &ModelData,
        item: &TdmItem,
        noise: &TdmNoise,
        tau: f64,
    ) -> Result<(TdmLosses, ParamGrads<T>)> {
        let tape = Tape::new();
        let m = self.tdm.bind(&Binder::new(&tape, &self.tdm_store, true));
        let terms = m.item_loss(
            &data.conversation_bows[item.conversation],
            &item.turn,
            noise,
            tau,
            self.config.tdm.lambda_mi,
        )?;
        let mut losses = TdmLosses::default();
        losses.add(&terms);
        Ok((losses, terms.total.backward()?.into_params()))
    }
}

/// Side inputs computed on the tape so gradients reach the topic-discourse
/// tables. `gumbel` holds one noise vector per turn.
pub fn side_on_tape<'t, T: Real>(
    tdm: &BoundTdm<'t, T>,
    snp: &BoundSnp<'t, T>,
    inst: &InstanceInput,
    conversation_bows: &[SparseBow],
    gumbel: &[Vec<f64>],
    tau: f64,
) -> Result<SideInputs<'t, T>> {
    let history: Vec<&SparseBow> = inst.history.iter().map(|&h| &conversation_bows[h]).collect();
    let e_u = match tdm.user_topic_embedding(&history)? {
        Some(e) => e,
        None => snp.default_user(),
    };
    let e_c = tdm.topic_mean(&inst.context_bow)?;
    let discourse = inst
        .turn_bows
        .iter()
        .zip(gumbel)
        .map(|(b, g)| sample_discourse(&tdm.discourse_logits(b)?, g, tau, false))
        .collect::<Result<Vec<Var<'t, T>>>>()?;
    Ok(SideInputs {
        e_u,
        e_c,
        discourse,
    })
}

/// Fixed noise for one evaluation of [`joint_objective`].
#[derive(Clone, Debug)]
pub struct JointNoise {
    /// One draw per turn of the instance's conversation.
    pub tdm: Vec<TdmNoise>,
    pub gumbel: Vec<Vec<f64>>,
}

impl JointNoise {
    pub fn sample<R: Rng>(inst: &InstanceInput, topics: usize, discourse: usize, rng: &mut R) -> Self {
        JointNoise {
            tdm: inst
                .turn_bows
                .iter()
                .map(|_| TdmNoise::sample(topics, discourse, rng))
                .collect(),
            gumbel: inst.turn_bows.iter().map(|_| gumbel_noise(discourse, rng)).collect(),
        }
    }
}

/// The two summands of [`joint_objective`]. `tdm` reads only the
/// topic-discourse store; `snp` reads both.
pub struct JointTerms<'t, T> {
    pub tdm: Var<'t, T>,
    pub snp: Var<'t, T>,
}

/// Topic-discourse loss summed over the instance's turns, and the predictor
/// loss, with both stores on the tape and no dropout.
pub fn joint_terms<'t, T: Real>(
    model: &NewEntryModel<T>,
    tape: &'t Tape<T>,
    inst: &InstanceInput,
    conversation_bows: &[SparseBow],
    noise: &JointNoise,
    tau: f64,
    class_weight: f64,
) -> Result<JointTerms<'t, T>> {
    let tdm = model.tdm.bind(&Binder::new(tape, &model.tdm_store, true));
    let snp = model.snp.bind(&Binder::new(tape, &model.snp_store, true));
    let conv = bow_sum(&[inst.context_bow.clone(), topic_only(inst.query_bow(), tdm.topic_vocab)]);
    let mut total = tape.constant(Tensor::scalar(T::zero()));
    for (turn, n) in inst.turn_bows.iter().zip(&noise.tdm) {
        let terms = tdm.item_loss(&conv, turn, n, tau, model.config.tdm.lambda_mi)?;
        total = total.add(&terms.total)?;
    }
    let side = side_on_tape(&tdm, &snp, inst, conversation_bows, &noise.gumbel, tau)?;
    let refs: Vec<&[usize]> = inst.turns.iter().map(Vec::as_slice).collect();
    let out = snp.forward::<rand_chacha::ChaCha8Rng>(&refs, &side, None)?;
    let (l_snp, _) = instance_loss(&out.prob, inst.label, class_weight);
    Ok(JointTerms { tdm: total, snp: l_snp })
}

/// Sum of the two [`joint_terms`].
pub fn joint_objective<'t, T: Real>(
    model: &NewEntryModel<T>,
    tape: &'t Tape<T>,
    inst: &InstanceInput,
    conversation_bows: &[SparseBow],
    noise: &JointNoise,
    tau: f64,
    class_weight: f64,
) -> Result<Var<'t, T>> {
    let terms = joint_terms(model, tape, inst, conversation_bows, noise, tau, class_weight)?;
    terms.tdm.add(&terms.snp)
}

/// Keeps entries whose id is a topic token.
fn topic_only(bow: &SparseBow, topic_vocab: usize) -> SparseBow {
    bow.iter()
        .copied()
        .filter(|&(i, _)| (URL..topic_vocab).contains(&i))
        .collect()
}
