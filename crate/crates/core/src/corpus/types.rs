use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

/// One post as it appears in a corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawTurn {
    pub turn_id: String,
    pub author_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reply_to: Option<String>,
}

/// One line of a corpus file.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawConversation {
    pub conversation_id: String,
    pub turns: Vec<RawTurn>,
}

/// A cleaned turn. `reply_to` indexes an earlier turn of the same conversation.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Turn {
    pub turn_id: String,
    pub author_id: String,
    pub tokens: Vec<String>,
    pub reply_to: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conversation {
    pub id: String,
    pub turns: Vec<Turn>,
}

impl Conversation {
    pub fn participants(&self) -> BTreeSet<&str> {
        self.turns.iter().map(|t| t.author_id.as_str()).collect()
    }
}

/// A newcomer's first turn together with the preceding context.
///
/// Turns `context_start..query` of the source conversation form the
/// context; `query` is the newcomer's turn.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewEntryInstance {
    pub conversation_id: String,
    pub query_turn_id: String,
    pub newcomer_id: String,
    pub label: bool,
    #[serde(skip)]
    pub query: usize,
    #[serde(skip)]
    pub context_start: usize,
}

impl NewEntryInstance {
    pub fn id(&self) -> String {
        format!("{}:{}", self.conversation_id, self.query_turn_id)
    }

    pub fn context_len(&self) -> usize {
        self.query - self.context_start
    }
}
