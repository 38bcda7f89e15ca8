use std::collections::HashMap;
use std::fmt::Write as _;

use super::text::{is_topic_token, URL_TAG};
use super::types::Conversation;
use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const URL: usize = 2;
const RESERVED: [&str; 3] = ["<pad>", "<unk>", URL_TAG];

/// Token index built from training conversations.
///
/// Layout: the three reserved entries, then content words, then everything
/// else (stopwords, punctuation, emoticons). Within each group tokens are
/// ordered by descending frequency with ties broken lexicographically. The
/// topic vocabulary is the prefix `0..topic_size`.
#[derive(Clone, Debug, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    freq: Vec<u64>,
    index: HashMap<String, usize>,
    topic_size: usize,
}

impl Vocab {
    pub fn build<'a>(convs: impl IntoIterator<Item = &'a Conversation>, min_count: u64) -> Self {
        let mut counts: HashMap<&str, u64> = HashMap::new();
        for c in convs {
            for t in &c.turns {
                for tok in &t.tokens {
                    *counts.entry(tok.as_str()).or_default() += 1;
                }
            }
        }
        let url_count = counts.remove(URL_TAG).unwrap_or(0);
        let mut topic: Vec<(&str, u64)> = Vec::new();
        let mut other: Vec<(&str, u64)> = Vec::new();
        for (tok, n) in counts {
            if n < min_count || RESERVED.contains(&tok) {
                continue;
            }
            if is_topic_token(tok) {
                topic.push((tok, n));
            } else {
                other.push((tok, n));
            }
        }
        let order = |a: &(&str, u64), b: &(&str, u64)| b.1.cmp(&a.1).then(a.0.cmp(b.0));
        topic.sort_by(order);
        other.sort_by(order);
        let mut entries: Vec<(String, u64)> = vec![
            (RESERVED[0].to_string(), 0),
            (RESERVED[1].to_string(), 0),
            (RESERVED[2].to_string(), url_count),
        ];
        entries.extend(topic.iter().map(|(t, n)| (t.to_string(), *n)));
        let topic_size = entries.len();
        entries.extend(other.iter().map(|(t, n)| (t.to_string(), *n)));
        Self::from_entries(entries, topic_size)
    }

    fn from_entries(entries: Vec<(String, u64)>, topic_size: usize) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, (t, _))| (t.clone(), i))
            .collect();
        let (tokens, freq) = entries.into_iter().unzip();
        Vocab {
            tokens,
            freq,
            index,
            topic_size,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn topic_size(&self) -> usize {
        self.topic_size
    }

    pub fn token(&self, id: usize) -> &str {
        &self.tokens[id]
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn frequency(&self, id: usize) -> u64 {
        self.freq[id]
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn index_map(&self) -> &HashMap<String, usize> {
        &self.index
    }

    /// Full-vocabulary ids; unknown tokens map to [`UNK`].
    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.get(t).unwrap_or(UNK)).collect()
    }

    /// Ids of the tokens that belong to the topic vocabulary.
    pub fn topic_ids(&self, tokens: &[String]) -> Vec<usize> {
        tokens
            .iter()
            .filter_map(|t| self.get(t))
            .filter(|&i| i >= URL && i < self.topic_size)
            .collect()
    }

    /// Tab-separated `token  frequency  kind`, one row per index.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, (tok, n)) in self.tokens.iter().zip(&self.freq).enumerate() {
            let kind = if i < RESERVED.len() {
                "reserved"
            } else if i < self.topic_size {
                "topic"
            } else {
                "other"
            };
            writeln!(out, "{tok}\t{n}\t{kind}").unwrap();
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        let mut topic_size = None;
        for (lineno, line) in text.lines().enumerate() {
            let bad = |message: String| Error::Format {
                what: "vocabulary",
                line: lineno + 1,
                message,
            };
            let fields: Vec<&str> = line.split('\t').collect();
            let [tok, n, kind] = fields[..] else {
                return Err(bad(format!("expected 3 fields, found {}", fields.len())));
            };
            let n: u64 = n.parse().map_err(|e| bad(format!("{e}")))?;
            match kind {
                "reserved" | "topic" => {
                    if topic_size.is_some() {
                        return Err(bad("topic entry after non-topic entries".into()));
                    }
                }
                "other" => {
                    topic_size.get_or_insert(entries.len());
                }
                _ => return Err(bad(format!("unknown kind `{kind}`"))),
            }
            entries.push((tok.to_string(), n));
        }
        if entries.len() < RESERVED.len()
            || entries.iter().zip(RESERVED).any(|((t, _), r)| t != r)
        {
            return Err(Error::Format {
                what: "vocabulary",
                line: 1,
                message: "missing reserved entries".into(),
            });
        }
        let topic_size = topic_size.unwrap_or(entries.len());
        Ok(Self::from_entries(entries, topic_size))
    }
}
