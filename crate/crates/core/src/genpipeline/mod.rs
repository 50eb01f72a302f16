//! Controlled test-sentence generation.
//!
//! Sentences are requested from a chat-completion backend with both a group
//! term and an attribute term, filtered by term containment (rejection
//! sampling), and paired with an alternative in which the group term is
//! swapped for its counterpart. Template filling and bias discovery live
//! here too since they produce the same [`TestSentence`] records and draft
//! specifications.

mod chat;
mod discover;
mod generate;
mod matching;
pub mod mock;
mod prompts;
mod rewrite;
mod sentence;
mod templates;

use thiserror::Error;

pub use chat::{ChatClient, ChatError, ChatMessage, ChatRequest, HttpChatClient, Role, DEFAULT_CHAT_BASE};
pub use discover::{discover_bias_candidates, DiscoveryOptions};
pub use generate::{
    generate_for_spec, generate_for_spec_observed, GenerationConfig, GenerationObserver,
    GenerationOutput, GenerationReport, NoopObserver, QuotaShortfall, RewriteStrategy,
};
pub use matching::{contains_terms, replace_term, TermMatcher};
pub use prompts::{
    build_discovery_prompt, build_generation_prompt, build_pair_prompt, build_structure_prompt,
    FewShotExample, PromptMessages,
};
pub use rewrite::{rewrite_pair, rewrite_pair_detailed, RewriteMode, RewriteRoute};
pub use sentence::{GenMetadata, SentenceIssue, SentenceSource, TestSentence};
pub use templates::{bundled_templates, fill_templates, parse_templates};

#[derive(Debug, Error)]
pub enum GenError {
    #[error(transparent)]
    UnknownTerm(#[from] crate::specs::SpecError),
    #[error("{term:?} does not occur in {sentence:?}")]
    TermNotInSentence { term: String, sentence: String },
    #[error("malformed template {template:?}: {reason}")]
    MalformedTemplate { template: String, reason: String },
    #[error("swapping {term:?} for {counterpart:?} left the sentence unchanged")]
    SwapProducedIdenticalText { term: String, counterpart: String },
    #[error("rewrite does not contain the counterpart {counterpart:?}")]
    CounterpartMissingInRewrite { counterpart: String },
    #[error("rewrite still contains the original term {term:?}")]
    OriginalTermRemains { term: String },
    #[error("chat backend unavailable: {reason}")]
    ChatBackendUnavailable {
        reason: String,
        /// Sentences accepted before the failure.
        partial: Option<Box<GenerationOutput>>,
    },
    #[error("could not parse a bias specification from the reply")]
    UnparseableReply { raw: String },
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
}

impl GenError {
    pub(crate) fn from_chat(e: ChatError) -> Self {
        GenError::ChatBackendUnavailable {
            reason: e.to_string(),
            partial: None,
        }
    }
}
