//! Prompt construction. The instruction texts live in `resources/prompts/`
//! so they can be audited and swapped without touching code.

use serde::{Deserialize, Serialize};

use super::chat::ChatMessage;
use super::matching::contains_terms;
use super::GenError;
use crate::specs::{BiasSpecification, ValidatedSpec};

pub const GENERATION_TEMPLATE: &str = include_str!("../../resources/prompts/generation.txt");
pub const PAIR_TEMPLATE: &str = include_str!("../../resources/prompts/pair.txt");
pub const DISCOVERY_TEMPLATE: &str = include_str!("../../resources/prompts/discovery_broad.txt");
pub const STRUCTURE_TEMPLATE: &str = include_str!("../../resources/prompts/discovery_structure.txt");

pub type PromptMessages = Vec<ChatMessage>;

/// A stored example mapping terms to a natural sentence, offered to the
/// generator as a few-shot demonstration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FewShotExample {
    pub terms: Vec<String>,
    pub sentence: String,
}

impl FewShotExample {
    fn render(&self) -> String {
        let terms = self
            .terms
            .iter()
            .map(|t| format!("\"{t}\""))
            .collect::<Vec<_>>()
            .join(" and ");
        format!("Example sentence including terms {terms}: {}", self.sentence)
    }
}

fn others<'a>(list: &'a [String], except: usize) -> String {
    list.iter()
        .enumerate()
        .filter(|(i, _)| *i != except)
        .map(|(_, t)| t.as_str())
        .collect::<Vec<&'a str>>()
        .join(", ")
}

/// System instruction asking for one sentence with both terms, followed by
/// one user message per few-shot example.
pub fn build_generation_prompt(
    spec: &ValidatedSpec,
    group_term: &str,
    attribute_term: &str,
    few_shot: &[FewShotExample],
) -> Result<PromptMessages, GenError> {
    let (group, gi) = spec.group_role(group_term)?;
    let (attr, ai) = spec.attribute_role(attribute_term)?;
    let groups = spec.group_terms(group);
    let attrs = spec.attribute_terms(attr);
    let instruction = GENERATION_TEMPLATE
        .replace("{grp_term}", &groups[gi])
        .replace("{att_term}", &attrs[ai])
        .replace("{grp_terms}", &others(groups, gi))
        .replace("{att_terms}", &others(attrs, ai));
    let mut messages = vec![ChatMessage::system(instruction)];
    messages.extend(few_shot.iter().map(|ex| ChatMessage::user(ex.render())));
    Ok(messages)
}

/// Instruction to rewrite `sentence` replacing `term1` by `term2`.
pub fn build_pair_prompt(sentence: &str, term1: &str, term2: &str) -> Result<PromptMessages, GenError> {
    if !contains_terms(sentence, &[term1]) {
        return Err(GenError::TermNotInSentence {
            term: term1.to_string(),
            sentence: sentence.to_string(),
        });
    }
    let text = PAIR_TEMPLATE
        .replace("{term1}", term1)
        .replace("{term2}", term2)
        .replace("{sentence}", sentence);
    Ok(vec![ChatMessage::system(text)])
}

/// First step of bias discovery: an open request for stereotype suggestions.
pub fn build_discovery_prompt(domain_hint: &str) -> PromptMessages {
    vec![ChatMessage::user(DISCOVERY_TEMPLATE.replace("{domain_hint}", domain_hint.trim()))]
}

fn ordinal(n: usize) -> String {
    let suffix = match (n % 10, n % 100) {
        (_, 11..=13) => "th",
        (1, _) => "st",
        (2, _) => "nd",
        (3, _) => "rd",
        _ => "th",
    };
    format!("{n}{suffix}")
}

/// Second step: the conversation so far plus a request to restate the
/// `pick`-th (1-based) suggestion in the structure of `example`.
pub fn build_structure_prompt(
    domain_hint: &str,
    first_reply: &str,
    pick: usize,
    example: &BiasSpecification,
) -> PromptMessages {
    let example_json = serde_json::to_string_pretty(example).expect("spec serializes");
    let mut messages = build_discovery_prompt(domain_hint);
    messages.push(ChatMessage::assistant(first_reply));
    messages.push(ChatMessage::user(
        STRUCTURE_TEMPLATE
            .replace("{ordinal}", &ordinal(pick.max(1)))
            .replace("{example_spec}", &example_json),
    ));
    messages
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genpipeline::chat::Role;
    use crate::specs::{validate_spec, SpecSource};

    fn spec(g1: &[&str], g2: &[&str]) -> ValidatedSpec {
        let v = |xs: &[&str]| xs.iter().map(|s| s.to_string()).collect();
        validate_spec(BiasSpecification {
            name: "g".into(),
            group1_label: "m".into(),
            group1_terms: v(g1),
            group2_label: "f".into(),
            group2_terms: v(g2),
            attr1_label: "s".into(),
            attr1_terms: v(&["science", "technology"]),
            attr2_label: "a".into(),
            attr2_terms: v(&["art"]),
            source: SpecSource::Custom,
        })
        .unwrap()
    }

    #[test]
    fn generation_prompt_substitutes_terms() {
        let s = spec(&["he", "brother", "him"], &["she", "sister", "her"]);
        let m = build_generation_prompt(&s, "he", "science", &[]).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m[0].role, Role::System);
        let c = &m[0].content;
        assert!(c.starts_with("Write a sentence including target term \"he\" and attribute term \"science\"."));
        assert!(c.contains("Other target terms in this context are: \"brother, him\"."));
        assert!(c.contains("Other attribute terms in this context are: \"technology\"."));
        assert!(!c.contains('{'));
    }

    #[test]
    fn single_remaining_term() {
        let s = spec(&["he", "brother"], &["she", "sister"]);
        let m = build_generation_prompt(&s, "sister", "art", &[]).unwrap();
        assert!(m[0].content.contains("Other target terms in this context are: \"she\"."));
        assert!(m[0].content.contains("Other attribute terms in this context are: \"\"."));
    }

    #[test]
    fn few_shot_examples_become_user_messages() {
        let s = spec(&["he", "brother"], &["she", "sister"]);
        let shots = vec![
            FewShotExample { terms: vec!["he".into(), "math".into()], sentence: "He is good at math.".into() },
            FewShotExample { terms: vec!["she".into(), "art".into()], sentence: "She paints.".into() },
        ];
        let m = build_generation_prompt(&s, "he", "science", &shots).unwrap();
        assert_eq!(m.iter().map(|x| x.role).collect::<Vec<_>>(), [Role::System, Role::User, Role::User]);
        assert!(m[1].content.ends_with("He is good at math."));
    }

    #[test]
    fn unknown_terms() {
        let s = spec(&["he"], &["she"]);
        assert!(matches!(build_generation_prompt(&s, "doctor", "science", &[]), Err(GenError::UnknownTerm(_))));
        assert!(matches!(build_generation_prompt(&s, "he", "he", &[]), Err(GenError::UnknownTerm(_))));
    }

    #[test]
    fn pair_prompt() {
        let m = build_pair_prompt("She excels in algebra.", "she", "he").unwrap();
        assert!(m[0].content.contains("replace \"she\" with \"he\""));
        let m = build_pair_prompt("His brother studies physics.", "brother", "sister").unwrap();
        assert!(m[0].content.contains("Sentence: \"His brother studies physics.\", Rewrite: "));
        assert!(matches!(
            build_pair_prompt("No term here.", "she", "he"),
            Err(GenError::TermNotInSentence { .. })
        ));
    }

    #[test]
    fn discovery_prompts() {
        let m = build_discovery_prompt("nurses and doctors in a medical setting");
        assert_eq!(
            m[0].content,
            "Please suggest stereotypical biases related to nurses and doctors in a medical setting."
        );
        let example = crate::specs::predefined()[0].clone().into_inner();
        let m = build_structure_prompt("medical setting", "1. ...", 2, &example);
        assert_eq!(m.len(), 3);
        assert_eq!(m[1].role, Role::Assistant);
        assert!(m[2].content.starts_with("Take the 2nd bias you suggested"));
        assert!(m[2].content.contains("\"group1_terms\""));
        assert_eq!(ordinal(11), "11th");
        assert_eq!(ordinal(23), "23rd");
    }
}
