//! Successful new-entry predictor.
//!
//! Each turn is encoded by a Bi-GRU over word embeddings whose initial
//! states come from a topic vector: the newcomer's history embedding for
//! the query turn, the context embedding for earlier turns. A second
//! Bi-GRU runs over turn encodings concatenated with discourse vectors;
//! discourse-indexed attention pools its outputs, and a logistic layer on
//! `[last position ; pooled]` gives the success probability.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layers::{
    bigru_encode, dropout, Binder, BoundGru, BoundLinear, EmbeddingTable, GruParams, Linear,
};
use crate::tensor::{ParamKey, ParamStore, Real, Tape, Tensor, Var};

/// Probabilities are clamped to `[CLAMP, 1 - CLAMP]` inside the loss.
pub const CLAMP: f64 = 1e-7;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AblationKind {
    TopicInit,
    DiscConcat,
    DiscAtt,
}

impl AblationKind {
    pub const ALL: [AblationKind; 3] = [
        AblationKind::TopicInit,
        AblationKind::DiscConcat,
        AblationKind::DiscAtt,
    ];

    pub fn flag(self) -> &'static str {
        match self {
            AblationKind::TopicInit => "topic-init",
            AblationKind::DiscConcat => "disc-concat",
            AblationKind::DiscAtt => "disc-att",
        }
    }
}

impl FromStr for AblationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        AblationKind::ALL
            .into_iter()
            .find(|k| k.flag() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown ablation `{s}`; expected topic-init, disc-concat or disc-att"
                ))
            })
    }
}

impl fmt::Display for AblationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.flag())
    }
}

/// Which components are switched off.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Ablation {
    /// Turn encoders start from zeros instead of the projected topic vector.
    pub no_topic_init: bool,
    /// The conversation encoder reads turn encodings without discourse vectors.
    pub no_disc_concat: bool,
    /// All attention logits are equal.
    pub no_disc_att: bool,
}

impl Ablation {
    pub fn full() -> Self {
        Ablation::default()
    }

    pub fn only(kind: AblationKind) -> Self {
        let mut a = Ablation::default();
        a.set(kind);
        a
    }

    pub fn set(&mut self, kind: AblationKind) {
        match kind {
            AblationKind::TopicInit => self.no_topic_init = true,
            AblationKind::DiscConcat => self.no_disc_concat = true,
            AblationKind::DiscAtt => self.no_disc_att = true,
        }
    }

    /// Report label of the variant.
    pub fn label(&self) -> String {
        let parts: Vec<&str> = [
            (self.no_topic_init, "Topic Init"),
            (self.no_disc_concat, "Disc Concat"),
            (self.no_disc_att, "Disc Att"),
        ]
        .iter()
        .filter(|(off, _)| *off)
        .map(|(_, name)| *name)
        .collect();
        if parts.is_empty() {
            "Full Model".to_string()
        } else {
            format!("w/o {}", parts.join(", "))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SnpConfig {
    pub embedding_dim: usize,
    /// Hidden size per direction.
    pub hidden: usize,
    pub dropout: f64,
    pub ablation: Ablation,
}

impl Default for SnpConfig {
    fn default() -> Self {
        SnpConfig {
            embedding_dim: 200,
            hidden: 100,
            dropout: 0.2,
            ablation: Ablation::default(),
        }
    }
}

impl SnpConfig {
    pub fn validate(&self) -> Result<()> {
        if self.embedding_dim == 0 || self.hidden == 0 {
            return Err(Error::invalid("embedding_dim and hidden must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid(format!("dropout {} must be in [0, 1)", self.dropout)));
        }
        Ok(())
    }
}

/// Keys of every SNP table.
#[derive(Clone, Debug)]
pub struct Snp {
    pub config: SnpConfig,
    pub topics: usize,
    pub discourse: usize,
    pub embedding: EmbeddingTable,
    pub turn_fwd: GruParams,
    pub turn_bwd: GruParams,
    pub conv_fwd: GruParams,
    pub conv_bwd: GruParams,
    /// `W^P, b^P`: topic vector to initial hidden state.
    pub proj: Linear,
    /// One attention logit per discourse behavior, `[D x 1]`.
    pub f_d: ParamKey,
    pub out: Linear,
    /// User topic vector for newcomers without history, `[1 x K]`.
    pub default_user: ParamKey,
}

/// Topic and discourse inputs the predictor receives from the TDM.
pub struct SideInputs<'t, T> {
    pub e_u: Var<'t, T>,
    pub e_c: Var<'t, T>,
    /// One `[1 x D]` discourse vector per turn, query last.
    pub discourse: Vec<Var<'t, T>>,
}

pub struct SnpOutput<'t, T> {
    pub prob: Var<'t, T>,
    pub logit: Var<'t, T>,
    /// Conversation vector `[1 x 4H]`.
    pub h_c: Var<'t, T>,
    pub attention: Vec<f64>,
}

impl Snp {
    pub fn init<T: Real, R: Rng>(
        store: &mut ParamStore<T>,
        config: &SnpConfig,
        vocab: usize,
        topics: usize,
        discourse: usize,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let (e, h) = (config.embedding_dim, config.hidden);
        let conv_in = if config.ablation.no_disc_concat {
            2 * h
        } else {
            2 * h + discourse
        };
        let embedding = EmbeddingTable::init(store, "snp.embedding", vocab, e, rng);
        let turn_fwd = GruParams::init(store, "snp.turn_fwd", e, h, rng);
        let turn_bwd = GruParams::init(store, "snp.turn_bwd", e, h, rng);
        let conv_fwd = GruParams::init(store, "snp.conv_fwd", conv_in, h, rng);
        let conv_bwd = GruParams::init(store, "snp.conv_bwd", conv_in, h, rng);
        let proj = Linear::init(store, "snp.proj", topics, h, rng);
        let f_d = store.add("snp.f_d", Tensor::zeros(&[discourse, 1]));
        let out = Linear::init(store, "snp.out", 4 * h, 1, rng);
        let default_user = store.add("snp.default_user", Tensor::zeros(&[1, topics]));
        Ok(Snp {
            config: config.clone(),
            topics,
            discourse,
            embedding,
            turn_fwd,
            turn_bwd,
            conv_fwd,
            conv_bwd,
            proj,
            f_d,
            out,
            default_user,
        })
    }

    pub fn bind<'t, T: Real>(&self, b: &Binder<'t, '_, T>) -> BoundSnp<'t, T> {
        BoundSnp {
            tape: b.tape(),
            config: self.config.clone(),
            discourse: self.discourse,
            embedding: b.get(self.embedding.table),
            turn_fwd: self.turn_fwd.bind(b),
            turn_bwd: self.turn_bwd.bind(b),
            conv_fwd: self.conv_fwd.bind(b),
            conv_bwd: self.conv_bwd.bind(b),
            proj: self.proj.bind(b),
            f_d: b.get(self.f_d),
            out: self.out.bind(b),
            default_user: b.get(self.default_user),
        }
    }
}

pub struct BoundSnp<'t, T: Real> {
    tape: &'t Tape<T>,
    config: SnpConfig,
    discourse: usize,
    embedding: Var<'t, T>,
    turn_fwd: BoundGru<'t, T>,
    turn_bwd: BoundGru<'t, T>,
    conv_fwd: BoundGru<'t, T>,
    conv_bwd: BoundGru<'t, T>,
    proj: BoundLinear<'t, T>,
    f_d: Var<'t, T>,
    out: BoundLinear<'t, T>,
    default_user: Var<'t, T>,
}

impl<'t, T: Real> BoundSnp<'t, T> {
    pub fn tape(&self) -> &'t Tape<T> {
        self.tape
    }

    pub fn default_user(&self) -> Var<'t, T> {
        self.default_user
    }

    fn zeros_hidden(&self) -> Var<'t, T> {
        self.tape.constant(Tensor::zeros(&[1, self.config.hidden]))
    }

    /// Initial hidden state `W^P e + b^P`, or zeros when topic init is off.
    pub fn topic_init(&self, e: &Var<'t, T>) -> Result<Var<'t, T>> {
        if self.config.ablation.no_topic_init {
            return Ok(self.zeros_hidden());
        }
        self.proj.forward(e)
    }

    /// `[forward last ; backward first]` of the turn Bi-GRU, `[1 x 2H]`.
    pub fn encode_turn(&self, ids: &[usize], e: &Var<'t, T>) -> Result<Var<'t, T>> {
        if ids.is_empty() {
            return Err(Error::Empty("turn tokens"));
        }
        let x = self.embedding.gather_rows(ids)?;
        self.encode_embedded(&x, e)
    }

    fn encode_embedded(&self, x: &Var<'t, T>, e: &Var<'t, T>) -> Result<Var<'t, T>> {
        let init = self.topic_init(e)?;
        bigru_encode(x, &init, &init, &self.turn_fwd, &self.turn_bwd)?.final_state()
    }

    /// Conversation vector from per-turn encodings `[n x 2H]` and
    /// discourse vectors. Returns `(h_c, attention weights)`.
    pub fn encode_conversation<R: Rng>(
        &self,
        turns: &Var<'t, T>,
        discourse: &[Var<'t, T>],
        dropout_rng: Option<&mut R>,
    ) -> Result<(Var<'t, T>, Vec<f64>)> {
        let n = turns.shape()[0];
        if discourse.len() != n {
            return Err(Error::Shape {
                op: "encode_conversation",
                lhs: vec![n],
                rhs: vec![discourse.len()],
            });
        }
        let ablation = self.config.ablation;
        let d = self.tape.concat_rows(discourse)?;
        let s = if ablation.no_disc_concat {
            *turns
        } else {
            self.tape.concat_cols(&[*turns, d])?
        };
        let zero = self.zeros_hidden();
        let mut positions =
            bigru_encode(&s, &zero, &zero, &self.conv_fwd, &self.conv_bwd)?.positions()?;
        if let Some(rng) = dropout_rng {
            positions = dropout(&positions, self.config.dropout, true, rng)?;
        }
        let last = positions.row(n - 1)?;
        let (pooled, weights) = if ablation.no_disc_att {
            (positions.mean_rows(), vec![1.0 / n as f64; n])
        } else {
            // The index is discrete; gradients reach only the looked-up logits.
            let idx: Vec<usize> = discourse.iter().map(|d| d.value().argmax()).collect();
            let a = self.f_d.gather_rows(&idx)?.reshape(&[1, n])?.softmax();
            let w = a.value().to_f64_vec();
            (a.matmul(&positions)?, w)
        };
        Ok((self.tape.concat_cols(&[last, pooled])?, weights))
    }

    /// `sigmoid(w . h_c + b)` and the logit.
    pub fn predict(&self, h_c: &Var<'t, T>) -> Result<(Var<'t, T>, Var<'t, T>)> {
        let logit = self.out.forward(h_c)?;
        Ok((logit.sigmoid(), logit))
    }

    /// Full forward pass. `turns` holds token ids, query last. Dropout is
    /// applied when `dropout_rng` is given.
    pub fn forward<R: Rng>(
        &self,
        turns: &[&[usize]],
        side: &SideInputs<'t, T>,
        mut dropout_rng: Option<&mut R>,
    ) -> Result<SnpOutput<'t, T>> {
        let n = turns.len();
        if n == 0 {
            return Err(Error::Empty("conversation turns"));
        }
        if side.discourse.len() != n {
            return Err(Error::Shape {
                op: "snp forward",
                lhs: vec![n],
                rhs: vec![side.discourse.len()],
            });
        }
        if side.discourse.iter().any(|d| d.shape() != [1, self.discourse]) {
            return Err(Error::invalid("discourse vectors must be [1 x D]"));
        }
        let all: Vec<usize> = turns.iter().flat_map(|t| t.iter().copied()).collect();
        if turns.iter().any(|t| t.is_empty()) {
            return Err(Error::Empty("turn tokens"));
        }
        let emb = self.embedding.gather_rows(&all)?;
        let mut encodings = Vec::with_capacity(n);
        let mut start = 0;
        for (j, t) in turns.iter().enumerate() {
            let x = if n == 1 {
                emb
            } else {
                emb.gather_rows(&(start..start + t.len()).collect::<Vec<_>>())?
            };
            start += t.len();
            let e = if j + 1 == n { &side.e_u } else { &side.e_c };
            let mut h = self.encode_embedded(&x, e)?;
            if let Some(rng) = dropout_rng.as_deref_mut() {
                h = dropout(&h, self.config.dropout, true, rng)?;
            }
            encodings.push(h);
        }
        let stacked = self.tape.concat_rows(&encodings)?;
        let (h_c, attention) = self.encode_conversation(&stacked, &side.discourse, dropout_rng)?;
        let (prob, logit) = self.predict(&h_c)?;
        Ok(SnpOutput {
            prob,
            logit,
            h_c,
            attention,
        })
    }
}

/// Class-weighted binary cross-entropy of one prediction. Returns the loss
/// and whether the probability had to be clamped.
pub fn instance_loss<'t, T: Real>(
    prob: &Var<'t, T>,
    label: bool,
    class_weight: f64,
) -> (Var<'t, T>, bool) {
    let p = prob.item().as_f64();
    let clamped = !(CLAMP..=1.0 - CLAMP).contains(&p);
    let pc = prob.clamp(T::lit(CLAMP), T::lit(1.0 - CLAMP));
    let loss = if label {
        pc.ln().sum().scale(T::lit(-class_weight))
    } else {
        pc.neg().add_scalar(T::one()).ln().sum().neg()
    };
    (loss, clamped)
}

/// `-sum(mu_w y log p + (1 - y) log(1 - p))` with clamping; also returns
/// how many probabilities were clamped.
pub fn snp_loss(probs: &[f64], labels: &[bool], class_weight: f64) -> Result<(f64, usize)> {
    if probs.len() != labels.len() {
        return Err(Error::invalid(format!(
            "{} probabilities for {} labels",
            probs.len(),
            labels.len()
        )));
    }
    let mut total = 0.0;
    let mut clamped = 0;
    for (&p, &y) in probs.iter().zip(labels) {
        let pc = p.clamp(CLAMP, 1.0 - CLAMP);
        if pc != p {
            clamped += 1;
        }
        total -= if y {
            class_weight * pc.ln()
        } else {
            (1.0 - pc).ln()
        };
    }
    Ok((total, clamped))
}

/// `N_neg / N_pos`.
pub fn class_weight(labels: impl IntoIterator<Item = bool>) -> Result<f64> {
    let (mut pos, mut neg) = (0u64, 0u64);
    for y in labels {
        if y {
            pos += 1;
        } else {
            neg += 1;
        }
    }
    if pos == 0 {
        return Err(Error::invalid("class weight needs at least one positive instance"));
    }
    Ok(neg as f64 / pos as f64)
}
