use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::types::Conversation;

/// Maps each user to the training conversations they posted in.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserHistoryIndex {
    map: BTreeMap<String, Vec<String>>,
}

impl UserHistoryIndex {
    /// Built from training conversations only.
    pub fn build<'a>(train: impl IntoIterator<Item = &'a Conversation>) -> Self {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for c in train {
            for author in c.participants() {
                map.entry(author.to_string()).or_default().push(c.id.clone());
            }
        }
        for ids in map.values_mut() {
            ids.sort();
            ids.dedup();
        }
        UserHistoryIndex { map }
    }

    /// History of `user`, excluding the conversation the query comes from.
    pub fn lookup(&self, user: &str, exclude: &str) -> Vec<&str> {
        self.map
            .get(user)
            .map(|ids| {
                ids.iter()
                    .map(String::as_str)
                    .filter(|id| *id != exclude)
                    .collect()
            })
            .unwrap_or_default()
    }

    pub fn users(&self) -> impl Iterator<Item = (&str, &[String])> {
        self.map.iter().map(|(u, c)| (u.as_str(), c.as_slice()))
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}
