//! Conversation data: ingestion, cleaning, newcomer instances, vocabulary,
//! splits, user histories and the synthetic generator.

mod dataset;
mod extract;
mod history;
pub mod io;
mod split;
mod stopwords;
pub mod synthetic;
mod text;
mod types;
mod vocab;

pub use dataset::{
    bow_sum, encode_conversation, Dataset, DatasetStats, EncodedConversation, EncodedTurn,
    Example, PipelineOptions, SparseBow,
};
pub use extract::{
    clean_conversation, extract_instances, filter_conversations, passes_filter,
    MAX_CONTEXT_TURNS, MAX_TURN_TOKENS, MIN_PARTICIPANTS, MIN_QUERY_INDEX, MIN_TURNS,
};
pub use history::UserHistoryIndex;
pub use split::{split, Split, DEFAULT_RATIOS, MIN_SPLIT_ITEMS};
pub use stopwords::{is_stopword, STOPWORDS};
pub use synthetic::{generate_synthetic, SyntheticConfig, SyntheticCorpus};
pub use text::{is_topic_token, tokenize, topic_view, URL_TAG};
pub use types::{Conversation, NewEntryInstance, RawConversation, RawTurn, Turn};
pub use vocab::{Vocab, PAD, UNK, URL};
