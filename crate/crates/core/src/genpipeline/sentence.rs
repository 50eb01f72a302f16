use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::matching::contains_terms;
use crate::specs::{AttributeGroupIndex, GroupIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentenceSource {
    Chat,
    Template,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenMetadata {
    pub model: String,
    pub timestamp: DateTime<Utc>,
    pub temperature: f64,
    /// 1-based try counter of the attribute term that produced the sentence.
    pub attempt: u32,
}

/// A test sentence with its counterpart-swapped alternative.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestSentence {
    pub spec_name: String,
    pub group_term: String,
    pub group_index: GroupIndex,
    pub counterpart_term: String,
    pub attribute_term: String,
    pub attribute_group_index: AttributeGroupIndex,
    pub text: String,
    pub paired_text: String,
    pub source: SentenceSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gen_metadata: Option<GenMetadata>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum SentenceIssue {
    #[error("text does not contain {0:?}")]
    TextMissingTerm(String),
    #[error("paired_text does not contain the counterpart {0:?}")]
    PairedMissingCounterpart(String),
    #[error("paired_text still contains the group term {0:?}")]
    PairedContainsGroupTerm(String),
    #[error("text and paired_text are identical")]
    IdenticalPair,
}

impl TestSentence {
    /// Checks the record-level invariants under the containment rules.
    pub fn check(&self) -> Result<(), SentenceIssue> {
        for term in [&self.group_term, &self.attribute_term] {
            if !contains_terms(&self.text, &[term]) {
                return Err(SentenceIssue::TextMissingTerm(term.clone()));
            }
        }
        if !contains_terms(&self.paired_text, &[&self.counterpart_term]) {
            return Err(SentenceIssue::PairedMissingCounterpart(self.counterpart_term.clone()));
        }
        if contains_terms(&self.paired_text, &[&self.group_term]) {
            return Err(SentenceIssue::PairedContainsGroupTerm(self.group_term.clone()));
        }
        if self.text == self.paired_text {
            return Err(SentenceIssue::IdenticalPair);
        }
        Ok(())
    }

    /// Identity used for deduplication.
    pub fn dedup_key(&self) -> (&str, &str, &str, &str) {
        (&self.text, &self.paired_text, &self.group_term, &self.attribute_term)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sentence(text: &str, paired: &str) -> TestSentence {
        TestSentence {
            spec_name: "s".into(),
            group_term: "he".into(),
            group_index: GroupIndex::G1,
            counterpart_term: "she".into(),
            attribute_term: "math".into(),
            attribute_group_index: AttributeGroupIndex::A1,
            text: text.into(),
            paired_text: paired.into(),
            source: SentenceSource::Manual,
            gen_metadata: None,
        }
    }

    #[test]
    fn invariants() {
        assert_eq!(sentence("He excels in math.", "She excels in math.").check(), Ok(()));
        assert_eq!(
            sentence("He excels.", "She excels.").check(),
            Err(SentenceIssue::TextMissingTerm("math".into()))
        );
        assert_eq!(
            sentence("He excels in math.", "They excel in math.").check(),
            Err(SentenceIssue::PairedMissingCounterpart("she".into()))
        );
        assert_eq!(
            sentence("He excels in math.", "She and he excel in math.").check(),
            Err(SentenceIssue::PairedContainsGroupTerm("he".into()))
        );
    }
}
