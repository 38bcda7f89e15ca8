//! The full preprocessing pipeline: clean, filter, split by conversation,
//! build vocabulary and history from the training portion, extract and
//! encode instances.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::extract::{clean_conversation, extract_instances, filter_conversations};
use super::history::UserHistoryIndex;
use super::split::{split, Split, DEFAULT_RATIOS};
use super::types::{Conversation, NewEntryInstance, RawConversation};
use super::vocab::Vocab;
use crate::error::Result;

/// Sparse token counts `(id, count)` sorted by id.
pub type SparseBow = Vec<(usize, u32)>;

fn bow(ids: impl IntoIterator<Item = usize>) -> SparseBow {
    let mut v: Vec<usize> = ids.into_iter().collect();
    v.sort_unstable();
    let mut out: SparseBow = Vec::new();
    for id in v {
        match out.last_mut() {
            Some((last, n)) if *last == id => *n += 1,
            _ => out.push((id, 1)),
        }
    }
    out
}

/// Adds several sparse vectors.
pub fn bow_sum<'a>(parts: impl IntoIterator<Item = &'a SparseBow>) -> SparseBow {
    bow(parts
        .into_iter()
        .flat_map(|b| b.iter().flat_map(|&(i, n)| std::iter::repeat(i).take(n as usize))))
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTurn {
    pub author: String,
    /// Full-vocabulary token ids in order.
    pub ids: Vec<usize>,
    /// Topic-view counts.
    pub topic_bow: SparseBow,
    /// Full-view counts.
    pub full_bow: SparseBow,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncodedConversation {
    pub id: String,
    pub turns: Vec<EncodedTurn>,
    /// Topic-view counts of the whole conversation.
    pub topic_bow: SparseBow,
}

pub fn encode_conversation(c: &Conversation, vocab: &Vocab) -> EncodedConversation {
    let turns: Vec<EncodedTurn> = c
        .turns
        .iter()
        .map(|t| {
            let ids = vocab.encode(&t.tokens);
            EncodedTurn {
                author: t.author_id.clone(),
                full_bow: bow(ids.iter().copied()),
                topic_bow: bow(vocab.topic_ids(&t.tokens)),
                ids,
            }
        })
        .collect();
    EncodedConversation {
        id: c.id.clone(),
        topic_bow: bow_sum(turns.iter().map(|t| &t.topic_bow)),
        turns,
    }
}

/// An instance resolved against the encoded conversation table.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub instance: NewEntryInstance,
    pub conversation: usize,
    /// Indices of the newcomer's training-split history conversations.
    pub history: Vec<usize>,
}

impl Example {
    pub fn label(&self) -> bool {
        self.instance.label
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineOptions {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub min_count: u64,
}

impl Default for PipelineOptions {
    fn default() -> Self {
        PipelineOptions {
            seed: 7,
            ratios: DEFAULT_RATIOS,
            min_count: 1,
        }
    }
}

/// Summary counts of a prepared dataset.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub conversations: usize,
    pub turns: usize,
    pub successful_entries: usize,
    pub failed_entries: usize,
    pub avg_turns: f64,
    /// Fraction of newcomers with a nonempty training history.
    pub history_ratio: f64,
    pub vocab_size: usize,
    pub topic_vocab_size: usize,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub vocab: Vocab,
    pub history: UserHistoryIndex,
    /// Cleaned conversations, training first, then validation, then test.
    pub cleaned: Vec<Conversation>,
    pub conversations: Vec<EncodedConversation>,
    /// Conversation ids per portion.
    pub split: Split<String>,
    pub train: Vec<Example>,
    pub valid: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    pub fn prepare(raw: &[RawConversation], opts: &PipelineOptions) -> Result<Self> {
        let cleaned: Vec<Conversation> = raw.iter().map(clean_conversation).collect();
        let mut kept = filter_conversations(cleaned);
        kept.sort_by(|a, b| a.id.cmp(&b.id));
        Self::from_filtered(kept, opts)
    }

    /// Builds a dataset from conversations that already passed the filter.
    pub fn from_filtered(mut kept: Vec<Conversation>, opts: &PipelineOptions) -> Result<Self> {
        if kept.is_empty() {
            return Ok(Dataset {
                vocab: Vocab::build([], opts.min_count),
                history: UserHistoryIndex::default(),
                cleaned: Vec::new(),
                conversations: Vec::new(),
                split: Split {
                    train: Vec::new(),
                    valid: Vec::new(),
                    test: Vec::new(),
                },
                train: Vec::new(),
                valid: Vec::new(),
                test: Vec::new(),
            });
        }
        kept.sort_by(|a, b| a.id.cmp(&b.id));
        let parts = split(&kept, opts.ratios, opts.seed)?;
        let vocab = Vocab::build(&parts.train, opts.min_count);
        let history = UserHistoryIndex::build(&parts.train);
        let ids = Split {
            train: parts.train.iter().map(|c| c.id.clone()).collect(),
            valid: parts.valid.iter().map(|c| c.id.clone()).collect(),
            test: parts.test.iter().map(|c| c.id.clone()).collect(),
        };
        let cleaned: Vec<Conversation> = [parts.train, parts.valid, parts.test].concat();
        let conversations: Vec<EncodedConversation> =
            cleaned.iter().map(|c| encode_conversation(c, &vocab)).collect();
        let position: HashMap<&str, usize> =
            cleaned.iter().enumerate().map(|(i, c)| (c.id.as_str(), i)).collect();

        let examples = |range: std::ops::Range<usize>| -> Vec<Example> {
            range
                .flat_map(|ci| {
                    extract_instances(&cleaned[ci]).into_iter().map(move |inst| (ci, inst))
                })
                .map(|(ci, inst)| Example {
                    history: history
                        .lookup(&inst.newcomer_id, &inst.conversation_id)
                        .into_iter()
                        .map(|id| position[id])
                        .collect(),
                    instance: inst,
                    conversation: ci,
                })
                .collect()
        };
        let (n_train, n_valid) = (ids.train.len(), ids.valid.len());
        let train = examples(0..n_train);
        let valid = examples(n_train..n_train + n_valid);
        let test = examples(n_train + n_valid..cleaned.len());
        Ok(Dataset {
            vocab,
            history,
            conversations,
            split: ids,
            train,
            valid,
            test,
            cleaned,
        })
    }

    pub fn examples(&self) -> impl Iterator<Item = &Example> {
        self.train.iter().chain(&self.valid).chain(&self.test)
    }

    pub fn train_conversations(&self) -> &[EncodedConversation] {
        &self.conversations[..self.split.train.len()]
    }

    pub fn stats(&self) -> DatasetStats {
        let turns: usize = self.cleaned.iter().map(|c| c.turns.len()).sum();
        let all: Vec<&Example> = self.examples().collect();
        let successful = all.iter().filter(|e| e.label()).count();
        let with_history = all.iter().filter(|e| !e.history.is_empty()).count();
        DatasetStats {
            conversations: self.cleaned.len(),
            turns,
            successful_entries: successful,
            failed_entries: all.len() - successful,
            avg_turns: if self.cleaned.is_empty() {
                0.0
            } else {
                turns as f64 / self.cleaned.len() as f64
            },
            history_ratio: if all.is_empty() {
                0.0
            } else {
                with_history as f64 / all.len() as f64
            },
            vocab_size: self.vocab.len(),
            topic_vocab_size: self.vocab.topic_size(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_bow_counts() {
        assert_eq!(bow([3, 1, 3, 3]), vec![(1, 1), (3, 3)]);
        assert_eq!(bow_sum([&vec![(1, 2)], &vec![(0, 1), (1, 1)]]), vec![(0, 1), (1, 3)]);
    }
}
