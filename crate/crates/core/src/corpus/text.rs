//! Tokenization and the two bag-of-words views of a turn.

use std::sync::OnceLock;

use regex::Regex;

use super::stopwords::is_stopword;

/// Tag substituted for every link.
pub const URL_TAG: &str = "URL";

fn url_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:https?://|www\.)\S+").unwrap())
}

fn emoticon_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^(?:[:;=][-o*']?[)(\]\[dp/\\|*}{@o3]|<3|\^_?\^)$").unwrap()
    })
}

fn piece_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"[\p{L}\p{N}_']+|[^\p{L}\p{N}_'\s]").unwrap())
}

/// Lowercases, replaces links with [`URL_TAG`], splits punctuation into
/// separate tokens, keeps emoticons whole and drops tokens containing
/// digits or other non-alphabetic characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let lowered = text.to_lowercase();
    let replaced = url_re().replace_all(&lowered, " URL ");
    let mut out = Vec::new();
    for chunk in replaced.split_whitespace() {
        if chunk == URL_TAG || emoticon_re().is_match(chunk) {
            out.push(chunk.to_string());
            continue;
        }
        for piece in piece_re().find_iter(chunk) {
            let p = piece.as_str();
            let first = p.chars().next().unwrap_or(' ');
            if first.is_alphanumeric() || first == '_' || first == '\'' {
                let word = p.trim_matches('\'');
                if !word.is_empty() && word.chars().all(|c| c.is_alphabetic() || c == '\'') {
                    out.push(word.to_string());
                }
            } else {
                out.push(p.to_string());
            }
        }
    }
    out
}

/// Whether a token is a content word eligible for topic modeling.
pub fn is_topic_token(token: &str) -> bool {
    if token == URL_TAG {
        return true;
    }
    !is_stopword(token) && token.chars().all(|c| c.is_alphabetic() || c == '\'')
        && token.chars().any(|c| c.is_alphabetic())
}

/// The stopword-free view used for topic modeling.
pub fn topic_view(tokens: &[String]) -> Vec<String> {
    tokens
        .iter()
        .filter(|t| is_topic_token(t))
        .cloned()
        .collect()
}
