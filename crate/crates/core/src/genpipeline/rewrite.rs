use super::chat::{ChatClient, ChatRequest};
use super::matching::{contains_terms, replace_term};
use super::prompts::build_pair_prompt;
use super::GenError;

#[derive(Clone, Copy)]
pub enum RewriteMode<'a> {
    /// Case-preserving whole-word substitution.
    Deterministic,
    /// Ask the chat backend; fall back to substitution if the reply fails
    /// validation.
    Chat {
        client: &'a dyn ChatClient,
        model: &'a str,
        temperature: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RewriteRoute {
    Deterministic,
    Chat,
    /// Chat reply was rejected and substitution was used instead.
    Fallback,
}

/// Strips whitespace, wrapping quotes and a leading `Rewrite:` label.
pub(crate) fn clean_reply(reply: &str) -> String {
    let line = reply
        .lines()
        .map(str::trim)
        .find(|l| !l.is_empty())
        .unwrap_or("");
    let line = line
        .strip_prefix("Rewrite:")
        .or_else(|| line.strip_prefix("Sentence:"))
        .unwrap_or(line)
        .trim();
    let quotes: &[char] = &['"', '\u{201c}', '\u{201d}'];
    let inner = line.trim_matches(quotes).trim();
    inner.to_string()
}

fn validate(original: &str, candidate: &str, term: &str, counterpart: &str) -> Result<(), GenError> {
    if candidate == original {
        return Err(GenError::SwapProducedIdenticalText {
            term: term.to_string(),
            counterpart: counterpart.to_string(),
        });
    }
    if !contains_terms(candidate, &[counterpart]) {
        return Err(GenError::CounterpartMissingInRewrite {
            counterpart: counterpart.to_string(),
        });
    }
    if contains_terms(candidate, &[term]) {
        return Err(GenError::OriginalTermRemains { term: term.to_string() });
    }
    Ok(())
}

fn deterministic(sentence: &str, term: &str, counterpart: &str) -> Result<String, GenError> {
    let swapped = replace_term(sentence, term, counterpart).ok_or_else(|| GenError::TermNotInSentence {
        term: term.to_string(),
        sentence: sentence.to_string(),
    })?;
    validate(sentence, &swapped, term, counterpart)?;
    Ok(swapped)
}

/// Produces the paired alternative of `sentence` with `term` swapped for
/// `counterpart`.
pub fn rewrite_pair(
    sentence: &str,
    term: &str,
    counterpart: &str,
    mode: RewriteMode<'_>,
) -> Result<String, GenError> {
    rewrite_pair_detailed(sentence, term, counterpart, mode).map(|(text, _)| text)
}

/// Like [`rewrite_pair`], also reporting which route produced the text.
/// Transport failures of the chat backend are returned, not masked.
pub fn rewrite_pair_detailed(
    sentence: &str,
    term: &str,
    counterpart: &str,
    mode: RewriteMode<'_>,
) -> Result<(String, RewriteRoute), GenError> {
    match mode {
        RewriteMode::Deterministic => {
            deterministic(sentence, term, counterpart).map(|t| (t, RewriteRoute::Deterministic))
        }
        RewriteMode::Chat { client, model, temperature } => {
            let messages = build_pair_prompt(sentence, term, counterpart)?;
            let request = ChatRequest {
                model: model.to_string(),
                temperature,
                messages,
                n: 1,
            };
            let replies = client.complete(&request).map_err(GenError::from_chat)?;
            let candidate = replies.first().map(|r| clean_reply(r)).unwrap_or_default();
            match validate(sentence, &candidate, term, counterpart) {
                Ok(()) => Ok((candidate, RewriteRoute::Chat)),
                Err(_) => deterministic(sentence, term, counterpart).map(|t| (t, RewriteRoute::Fallback)),
            }
        }
    }
}
