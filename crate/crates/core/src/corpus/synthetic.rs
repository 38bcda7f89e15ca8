//! Conversation generator with planted topics, discourse behaviors and a
//! known success rule, used as ground truth for recovery checks.

use std::collections::{HashSet, VecDeque};

use rand::distributions::{Distribution, WeightedIndex};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Gamma;
use serde::{Deserialize, Serialize};

use super::stopwords::is_stopword;
use super::types::{RawConversation, RawTurn};
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

/// Word blocks for discourse behaviors. Block 0 is the question behavior.
pub const DISCOURSE_BLOCKS: [[&str; 6]; 6] = [
    ["what", "where", "why", "how", "who", "?"],
    ["very", "so", "too", "just", "!", "own"],
    ["but", "not", "no", "nor", "against", "only"],
    ["because", "if", "then", "when", "as", "than"],
    ["i", "me", "my", "myself", "we", "our"],
    ["you", "your", "yours", "yourself", "he", "him"],
];
pub const QUESTION_BEHAVIOR: usize = 0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub conversations: usize,
    pub topics: usize,
    pub discourse: usize,
    pub users: usize,
    pub words_per_topic: usize,
    /// Exponent of the rank-frequency law inside each block.
    pub zipf_exponent: f64,
    /// Symmetric Dirichlet concentration of conversation topic mixtures.
    pub topic_concentration: f64,
    pub min_turns: usize,
    pub max_turns: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    /// Probability that a token is drawn from the turn's discourse block.
    pub discourse_word_rate: f64,
    /// Probability that a turn after the opening pair comes from a newcomer.
    pub newcomer_rate: f64,
    /// Probability that a newcomer's home topic is the conversation's dominant topic.
    pub newcomer_topic_match: f64,
    pub core_topic_match: f64,
    pub success_bias: f64,
    pub question_boost: f64,
    pub novelty_boost: f64,
    pub novelty_threshold: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            conversations: 2000,
            topics: 3,
            discourse: 4,
            users: 300,
            words_per_topic: 20,
            zipf_exponent: 1.0,
            topic_concentration: 0.1,
            min_turns: 5,
            max_turns: 8,
            min_tokens: 6,
            max_tokens: 10,
            discourse_word_rate: 0.35,
            newcomer_rate: 0.45,
            newcomer_topic_match: 0.5,
            core_topic_match: 0.8,
            success_bias: -3.0,
            question_boost: 6.0,
            novelty_boost: 6.0,
            novelty_threshold: 0.5,
            seed: 7,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::invalid(format!("{name} = {p} is not a probability")))
            }
        };
        prob("discourse_word_rate", self.discourse_word_rate)?;
        prob("newcomer_rate", self.newcomer_rate)?;
        prob("newcomer_topic_match", self.newcomer_topic_match)?;
        prob("core_topic_match", self.core_topic_match)?;
        prob("novelty_threshold", self.novelty_threshold)?;
        if self.topics == 0 || self.words_per_topic == 0 {
            return Err(Error::invalid("topics and words_per_topic must be positive"));
        }
        if self.discourse == 0 || self.discourse > DISCOURSE_BLOCKS.len() {
            return Err(Error::invalid(format!(
                "discourse must be in 1..={}",
                DISCOURSE_BLOCKS.len()
            )));
        }
        if self.min_turns < 4 || self.max_turns < self.min_turns {
            return Err(Error::invalid("turn range must satisfy 4 <= min_turns <= max_turns"));
        }
        if self.min_tokens == 0 || self.max_tokens < self.min_tokens {
            return Err(Error::invalid("token range must satisfy 1 <= min_tokens <= max_tokens"));
        }
        if !(self.topic_concentration > 0.0 && self.topic_concentration.is_finite()) {
            return Err(Error::invalid("topic_concentration must be positive"));
        }
        if self.users < self.max_turns + 2 {
            return Err(Error::invalid("too few users for the turn range"));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(Error::invalid("zipf_exponent must be finite and nonnegative"));
        }
        Ok(())
    }
}

/// A block of words with its planted emission distribution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordBlock {
    pub words: Vec<String>,
    pub probs: Vec<f64>,
}

impl WordBlock {
    fn new(words: Vec<String>, exponent: f64) -> Self {
        let raw: Vec<f64> = (0..words.len())
            .map(|r| (r as f64 + 1.0).powf(-exponent))
            .collect();
        let z: f64 = raw.iter().sum();
        WordBlock {
            words,
            probs: raw.iter().map(|p| p / z).collect(),
        }
    }

    pub fn sampler(&self) -> WeightedIndex<f64> {
        WeightedIndex::new(&self.probs).expect("positive weights")
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UserProfile {
    pub user_id: String,
    pub home_topic: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TurnAnnotation {
    pub turn_id: String,
    pub discourse: usize,
    pub newcomer: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub success_prob: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub novelty: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConversationAnnotation {
    pub conversation_id: String,
    pub topic_mixture: Vec<f64>,
    pub dominant_topic: usize,
    pub turns: Vec<TurnAnnotation>,
}

/// Hidden ground truth accompanying a generated corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlantedStructure {
    pub topic_blocks: Vec<WordBlock>,
    pub discourse_blocks: Vec<WordBlock>,
    pub users: Vec<UserProfile>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCorpus {
    pub conversations: Vec<RawConversation>,
    pub annotations: Vec<ConversationAnnotation>,
    pub planted: PlantedStructure,
}

fn pseudo_words(n_blocks: usize, per_block: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<String>> {
    const ONSETS: &[&str] = &[
        "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "gl", "tr",
    ];
    const VOWELS: &[&str] = &["a", "e", "i", "o", "u"];
    let mut used: HashSet<String> = HashSet::new();
    (0..n_blocks)
        .map(|_| {
            let mut block = Vec::with_capacity(per_block);
            while block.len() < per_block {
                let syllables = rng.gen_range(2..=3);
                let mut w = String::new();
                for _ in 0..syllables {
                    w.push_str(ONSETS.choose(rng).unwrap());
                    w.push_str(VOWELS.choose(rng).unwrap());
                }
                if !is_stopword(&w) && used.insert(w.clone()) {
                    block.push(w);
                }
            }
            block
        })
        .collect()
}

fn dirichlet(alpha: f64, k: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let gamma = Gamma::new(alpha, 1.0).expect("validated concentration");
    let draws: Vec<f64> = (0..k).map(|_| gamma.sample(rng)).collect();
    let z: f64 = draws.iter().sum();
    if z > 0.0 && z.is_finite() {
        draws.iter().map(|g| g / z).collect()
    } else {
        let mut one_hot = vec![0.0; k];
        one_hot[rng.gen_range(0..k)] = 1.0;
        one_hot
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct Draft<'a> {
    conversation_id: &'a str,
    turns: Vec<RawTurn>,
    notes: Vec<TurnAnnotation>,
    authors: Vec<usize>,
}

impl Draft<'_> {
    fn push(
        &mut self,
        author: usize,
        reply: Option<usize>,
        discourse: usize,
        text: String,
        (newcomer, success_prob, novelty): (bool, Option<f64>, Option<f64>),
    ) {
        let id = self.conversation_id;
        let turn_id = format!("{id}-t{}", self.turns.len());
        self.turns.push(RawTurn {
            turn_id: turn_id.clone(),
            author_id: format!("u{author:04}"),
            text,
            reply_to: reply.map(|r| format!("{id}-t{r}")),
        });
        self.notes.push(TurnAnnotation {
            turn_id,
            discourse,
            newcomer,
            success_prob,
            novelty,
        });
        self.authors.push(author);
    }
}

struct Generator<'a> {
    cfg: &'a SyntheticConfig,
    planted: &'a PlantedStructure,
    topic_samplers: Vec<WeightedIndex<f64>>,
    discourse_samplers: Vec<WeightedIndex<f64>>,
    by_topic: Vec<Vec<usize>>,
}

impl Generator<'_> {
    fn text(&self, mixture: &WeightedIndex<f64>, discourse: usize, rng: &mut ChaCha8Rng) -> String {
        let n = rng.gen_range(self.cfg.min_tokens..=self.cfg.max_tokens);
        let words: Vec<&str> = (0..n)
            .map(|_| {
                if rng.gen_bool(self.cfg.discourse_word_rate) {
                    let block = &self.planted.discourse_blocks[discourse];
                    block.words[self.discourse_samplers[discourse].sample(rng)].as_str()
                } else {
                    let k = mixture.sample(rng);
                    let block = &self.planted.topic_blocks[k];
                    block.words[self.topic_samplers[k].sample(rng)].as_str()
                }
            })
            .collect();
        words.join(" ")
    }

    /// A user not yet in the conversation, preferring the requested topic relation.
    fn pick_user(
        &self,
        topic: usize,
        matching: bool,
        present: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<usize> {
        let pool: Vec<usize> = (0..self.by_topic.len())
            .filter(|&k| (k == topic) == matching)
            .flat_map(|k| self.by_topic[k].iter().copied())
            .filter(|u| !present.contains(u))
            .collect();
        if let Some(&u) = pool.choose(rng) {
            return Ok(u);
        }
        let any: Vec<usize> = (0..self.cfg.users).filter(|u| !present.contains(u)).collect();
        any.choose(rng)
            .copied()
            .ok_or_else(|| Error::invalid("ran out of users for a conversation"))
    }

    fn conversation(
        &self,
        index: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(RawConversation, ConversationAnnotation)> {
        let cfg = self.cfg;
        let conversation_id = format!("c{index:05}");
        let mixture = dirichlet(cfg.topic_concentration, cfg.topics, rng);
        let dominant = crate::tensor::kernels::argmax(&mixture);
        let mixture_sampler = WeightedIndex::new(&mixture)
            .or_else(|_| WeightedIndex::new(vec![1.0; cfg.topics]))
            .expect("positive weights");
        let length = rng.gen_range(cfg.min_turns..=cfg.max_turns);

        let mut present: Vec<usize> = Vec::new();
        let mut draft = Draft {
            conversation_id: &conversation_id,
            turns: Vec::new(),
            notes: Vec::new(),
            authors: Vec::new(),
        };
        // Turns that ordinary replies may target; newcomer turns only get scheduled replies.
        let mut safe: Vec<usize> = Vec::new();
        let mut pending: VecDeque<(usize, usize)> = VecDeque::new();
        let push = |draft: &mut Draft,
                        author: usize,
                        reply: Option<usize>,
                        discourse: usize,
                        note: (bool, Option<f64>, Option<f64>),
                        rng: &mut ChaCha8Rng| {
            let text = self.text(&mixture_sampler, discourse, rng);
            draft.push(author, reply, discourse, text, note);
        };

        for i in 0..2usize {
            let matching = rng.gen_bool(cfg.core_topic_match);
            let u = self.pick_user(dominant, matching, &present, rng)?;
            present.push(u);
            let d = rng.gen_range(0..cfg.discourse);
            push(&mut draft, u, i.checked_sub(1), d, (false, None, None), rng);
            safe.push(i);
        }

        let mut i = 2;
        while i < length || !pending.is_empty() {
            let d = rng.gen_range(0..cfg.discourse);
            if let Some(&(target, due)) = pending.front() {
                if due <= i || i >= length {
                    pending.pop_front();
                    let newcomer = draft.authors[target];
                    let prev = draft.authors[i - 1];
                    let mut cands: Vec<usize> =
                        present.iter().copied().filter(|&u| u != newcomer && u != prev).collect();
                    if cands.is_empty() {
                        cands = present.iter().copied().filter(|&u| u != newcomer).collect();
                    }
                    let u = *cands.choose(rng).expect("at least two earlier participants");
                    push(&mut draft, u, Some(target), d, (false, None, None), rng);
                    safe.push(i);
                    i += 1;
                    continue;
                }
            }
            let forced = present.len() < 3 && i + 1 == length;
            if forced || rng.gen_bool(cfg.newcomer_rate) {
                let matching = rng.gen_bool(cfg.newcomer_topic_match);
                let u = self.pick_user(dominant, matching, &present, rng)?;
                present.push(u);
                let home = self.planted.users[u].home_topic;
                let novelty = 1.0 - mixture[home];
                let question = d == QUESTION_BEHAVIOR;
                let logit = cfg.success_bias
                    + if question { cfg.question_boost } else { 0.0 }
                    + if novelty > cfg.novelty_threshold { cfg.novelty_boost } else { 0.0 };
                let p = sigmoid(logit);
                let reply = if rng.gen_bool(0.5) { safe.choose(rng).copied() } else { None };
                push(&mut draft, u, reply, d, (true, Some(p), Some(novelty)), rng);
                if rng.gen_bool(p) {
                    pending.push_back((i, i + 1 + rng.gen_range(0..=1)));
                }
            } else {
                let prev = draft.authors[i - 1];
                let cands: Vec<usize> = present.iter().copied().filter(|&u| u != prev).collect();
                let u = *cands.choose(rng).expect("at least two participants");
                let reply = if rng.gen_bool(0.7) { safe.choose(rng).copied() } else { None };
                push(&mut draft, u, reply, d, (false, None, None), rng);
                safe.push(i);
            }
            i += 1;
        }

        let Draft { turns, notes, .. } = draft;
        Ok((
            RawConversation {
                conversation_id: conversation_id.clone(),
                turns,
            },
            ConversationAnnotation {
                conversation_id,
                topic_mixture: mixture,
                dominant_topic: dominant,
                turns: notes,
            },
        ))
    }
}

/// Generates `cfg.conversations` conversations. Each conversation draws a
/// topic mixture; each turn draws a discourse behavior and mixes words from
/// the topic blocks and its discourse block. A newcomer's chance of a reply
/// rises when the turn is a question and when the conversation is far from
/// the newcomer's home topic.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<SyntheticCorpus> {
    cfg.validate()?;
    let mut vocab_rng = stream_rng(cfg.seed, Stream::Generate, &[0]);
    let topic_blocks: Vec<WordBlock> = pseudo_words(cfg.topics, cfg.words_per_topic, &mut vocab_rng)
        .into_iter()
        .map(|w| WordBlock::new(w, cfg.zipf_exponent))
        .collect();
    let discourse_blocks: Vec<WordBlock> = DISCOURSE_BLOCKS[..cfg.discourse]
        .iter()
        .map(|b| WordBlock::new(b.iter().map(|s| s.to_string()).collect(), cfg.zipf_exponent))
        .collect();
    let mut user_rng = stream_rng(cfg.seed, Stream::Generate, &[1]);
    let users: Vec<UserProfile> = (0..cfg.users)
        .map(|u| UserProfile {
            user_id: format!("u{u:04}"),
            home_topic: user_rng.gen_range(0..cfg.topics),
        })
        .collect();
    let mut by_topic = vec![Vec::new(); cfg.topics];
    for (u, p) in users.iter().enumerate() {
        by_topic[p.home_topic].push(u);
    }
    let planted = PlantedStructure {
        topic_blocks,
        discourse_blocks,
        users,
    };
    let gen = Generator {
        cfg,
        planted: &planted,
        topic_samplers: planted.topic_blocks.iter().map(WordBlock::sampler).collect(),
        discourse_samplers: planted.discourse_blocks.iter().map(WordBlock::sampler).collect(),
        by_topic,
    };
    let mut conversations = Vec::with_capacity(cfg.conversations);
    let mut annotations = Vec::with_capacity(cfg.conversations);
    for c in 0..cfg.conversations {
        let mut rng = stream_rng(cfg.seed, Stream::Generate, &[2, c as u64]);
        let (conv, note) = gen.conversation(c, &mut rng)?;
        conversations.push(conv);
        annotations.push(note);
    }
    Ok(SyntheticCorpus {
        conversations,
        annotations,
        planted,
    })
}
