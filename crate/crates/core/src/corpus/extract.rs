//! Conversation cleaning, filtering and newcomer-instance extraction.

use std::collections::{HashMap, HashSet};

use super::text::tokenize;
use super::types::{Conversation, NewEntryInstance, RawConversation, Turn};

pub const MIN_TURNS: usize = 4;
pub const MIN_PARTICIPANTS: usize = 3;
/// Earliest 0-based position of a query turn: at least two context turns.
pub const MIN_QUERY_INDEX: usize = 2;
pub const MAX_TURN_TOKENS: usize = 50;
pub const MAX_CONTEXT_TURNS: usize = 20;

/// Tokenizes every turn, drops turns left empty, caps turn length and
/// rewrites reply links as indices. Links to dropped, unknown or later
/// turns become `None`.
pub fn clean_conversation(raw: &RawConversation) -> Conversation {
    let mut index_of: HashMap<&str, usize> = HashMap::new();
    let mut turns = Vec::with_capacity(raw.turns.len());
    for t in &raw.turns {
        let mut tokens = tokenize(&t.text);
        if tokens.is_empty() {
            continue;
        }
        tokens.truncate(MAX_TURN_TOKENS);
        let reply_to = t
            .reply_to
            .as_deref()
            .and_then(|r| index_of.get(r).copied());
        index_of.entry(t.turn_id.as_str()).or_insert(turns.len());
        turns.push(Turn {
            turn_id: t.turn_id.clone(),
            author_id: t.author_id.clone(),
            tokens,
            reply_to,
        });
    }
    Conversation {
        id: raw.conversation_id.clone(),
        turns,
    }
}

pub fn passes_filter(c: &Conversation) -> bool {
    c.turns.len() >= MIN_TURNS && c.participants().len() >= MIN_PARTICIPANTS
}

/// Keeps conversations with at least four turns and three participants.
pub fn filter_conversations(convs: Vec<Conversation>) -> Vec<Conversation> {
    convs.into_iter().filter(passes_filter).collect()
}

/// One instance per turn whose author has not posted earlier in the
/// conversation, for query positions with at least two context turns.
/// The label is positive when a later turn by someone else replies to it.
pub fn extract_instances(c: &Conversation) -> Vec<NewEntryInstance> {
    let mut seen: HashSet<&str> = HashSet::new();
    let mut out = Vec::new();
    for (i, turn) in c.turns.iter().enumerate() {
        let first_time = seen.insert(turn.author_id.as_str());
        if !first_time || i < MIN_QUERY_INDEX {
            continue;
        }
        let label = c.turns[i + 1..]
            .iter()
            .any(|later| later.reply_to == Some(i) && later.author_id != turn.author_id);
        out.push(NewEntryInstance {
            conversation_id: c.id.clone(),
            query_turn_id: turn.turn_id.clone(),
            newcomer_id: turn.author_id.clone(),
            label,
            query: i,
            context_start: i.saturating_sub(MAX_CONTEXT_TURNS),
        });
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn conv(spec: &[(&str, Option<usize>)]) -> Conversation {
        Conversation {
            id: "c".into(),
            turns: spec
                .iter()
                .enumerate()
                .map(|(i, (a, r))| Turn {
                    turn_id: format!("t{i}"),
                    author_id: a.to_string(),
                    tokens: vec!["w".into()],
                    reply_to: *r,
                })
                .collect(),
        }
    }

    #[test]
    fn filter_boundaries() {
        let three_turns = conv(&[("a", None), ("b", None), ("c", None)]);
        let two_people = conv(&[("a", None), ("b", None), ("a", None), ("b", None)]);
        let ok = conv(&[("a", None), ("b", None), ("c", None), ("a", None)]);
        assert!(!passes_filter(&three_turns));
        assert!(!passes_filter(&two_people));
        assert!(passes_filter(&ok));
    }

    #[test]
    fn reply_makes_positive_label() {
        let c = conv(&[("a", None), ("b", Some(0)), ("a", None), ("n", None), ("b", Some(3))]);
        let inst = extract_instances(&c);
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].query, 3);
        assert!(inst[0].label);
        assert_eq!(inst[0].context_len(), 3);
    }

    #[test]
    fn no_reply_or_self_reply_is_negative() {
        let c = conv(&[("a", None), ("b", None), ("a", None), ("n", None), ("n", Some(3))]);
        assert!(!extract_instances(&c)[0].label);
    }

    #[test]
    fn returning_author_is_not_a_newcomer() {
        let c = conv(&[("a", None), ("n", None), ("b", None), ("n", None)]);
        let inst = extract_instances(&c);
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].newcomer_id, "b");
    }

    #[test]
    fn long_context_is_truncated_oldest_first() {
        let mut spec: Vec<(String, Option<usize>)> = (0..25)
            .map(|i| (if i % 2 == 0 { "a" } else { "b" }.to_string(), None))
            .collect();
        spec.push(("n".into(), None));
        let refs: Vec<(&str, Option<usize>)> =
            spec.iter().map(|(a, r)| (a.as_str(), *r)).collect();
        let inst = extract_instances(&conv(&refs));
        assert_eq!(inst.len(), 1);
        assert_eq!(inst[0].context_start, 5);
        assert_eq!(inst[0].context_len(), MAX_CONTEXT_TURNS);
    }

    #[test]
    fn cleaning_drops_empty_turns_and_dangling_links() {
        use crate::corpus::types::{RawConversation, RawTurn};
        let raw = RawConversation {
            conversation_id: "x".into(),
            turns: vec![
                RawTurn { turn_id: "1".into(), author_id: "a".into(), text: "Hello".into(), reply_to: None },
                RawTurn { turn_id: "2".into(), author_id: "b".into(), text: "42".into(), reply_to: Some("1".into()) },
                RawTurn { turn_id: "3".into(), author_id: "c".into(), text: "ok".into(), reply_to: Some("2".into()) },
                RawTurn { turn_id: "4".into(), author_id: "a".into(), text: "yes".into(), reply_to: Some("1".into()) },
                RawTurn { turn_id: "5".into(), author_id: "a".into(), text: "fwd".into(), reply_to: Some("9".into()) },
            ],
        };
        let c = clean_conversation(&raw);
        assert_eq!(c.turns.len(), 4);
        assert_eq!(c.turns[1].reply_to, None);
        assert_eq!(c.turns[2].reply_to, Some(0));
        assert_eq!(c.turns[3].reply_to, None);
    }
}
