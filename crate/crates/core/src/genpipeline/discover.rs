//! Two-step bias discovery: ask for stereotype suggestions in a domain, then
//! ask for one of them restated as a structured specification.

use serde::Deserialize;

use super::chat::{ChatClient, ChatRequest};
use super::prompts::{build_discovery_prompt, build_structure_prompt};
use super::GenError;
use crate::specs::{predefined_by_name, BiasSpecification, SpecSource};

#[derive(Debug, Clone)]
pub struct DiscoveryOptions {
    pub model: String,
    pub temperature: f64,
    /// Which suggestion (1-based) to formalize.
    pub pick: usize,
}

impl Default for DiscoveryOptions {
    fn default() -> Self {
        DiscoveryOptions {
            model: "gpt-3.5-turbo".into(),
            temperature: 0.8,
            pick: 1,
        }
    }
}

#[derive(Deserialize)]
struct Draft {
    #[serde(default)]
    name: Option<String>,
    group1_label: String,
    group1_terms: Vec<String>,
    group2_label: String,
    group2_terms: Vec<String>,
    attr1_label: String,
    attr1_terms: Vec<String>,
    attr2_label: String,
    attr2_terms: Vec<String>,
}

fn slug(s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c.is_ascii_alphanumeric() {
            out.push(c.to_ascii_lowercase());
        } else if !out.ends_with('_') && !out.is_empty() {
            out.push('_');
        }
    }
    out.trim_end_matches('_').to_string()
}

impl Draft {
    fn into_spec(self) -> BiasSpecification {
        let name = self
            .name
            .as_deref()
            .map(slug)
            .filter(|n| !n.is_empty())
            .unwrap_or_else(|| slug(&format!("{} {} {}", self.group1_label, self.group2_label, self.attr1_label)));
        BiasSpecification {
            name,
            group1_label: self.group1_label,
            group1_terms: self.group1_terms,
            group2_label: self.group2_label,
            group2_terms: self.group2_terms,
            attr1_label: self.attr1_label,
            attr1_terms: self.attr1_terms,
            attr2_label: self.attr2_label,
            attr2_terms: self.attr2_terms,
            source: SpecSource::Discovered,
        }
    }
}

/// Every JSON object (or array of objects) embedded in `reply` that has the
/// shape of a specification.
fn parse_drafts(reply: &str) -> Vec<BiasSpecification> {
    let mut drafts = Vec::new();
    let mut offset = 0;
    while let Some(pos) = reply[offset..].find(['{', '[']) {
        let start = offset + pos;
        let mut stream = serde_json::Deserializer::from_str(&reply[start..]).into_iter::<serde_json::Value>();
        match stream.next() {
            Some(Ok(value)) => {
                let items = match value {
                    serde_json::Value::Array(items) => items,
                    other => vec![other],
                };
                drafts.extend(
                    items
                        .into_iter()
                        .filter_map(|v| serde_json::from_value::<Draft>(v).ok())
                        .map(Draft::into_spec),
                );
                offset = start + stream.byte_offset().max(1);
            }
            _ => offset = start + 1,
        }
    }
    drafts
}

/// Runs the discovery conversation and returns draft specifications marked
/// as discovered. Drafts still need [`crate::specs::validate_spec`].
pub fn discover_bias_candidates(
    domain_hint: &str,
    client: &dyn ChatClient,
    options: &DiscoveryOptions,
) -> Result<Vec<BiasSpecification>, GenError> {
    let ask = |messages| {
        let request = ChatRequest {
            model: options.model.clone(),
            temperature: options.temperature,
            messages,
            n: 1,
        };
        client
            .complete(&request)
            .map_err(GenError::from_chat)
            .map(|r| r.into_iter().next().unwrap_or_default())
    };
    let suggestions = ask(build_discovery_prompt(domain_hint))?;
    let example = predefined_by_name("gender_care_expertise")
        .expect("bundled example spec")
        .into_inner();
    let structured = ask(build_structure_prompt(domain_hint, &suggestions, options.pick, &example))?;
    let drafts = parse_drafts(&structured);
    if drafts.is_empty() {
        return Err(GenError::UnparseableReply { raw: structured });
    }
    Ok(drafts)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genpipeline::chat::ChatError;
    use std::sync::Mutex;

    struct Script {
        replies: Mutex<Vec<String>>,
        seen: Mutex<Vec<ChatRequest>>,
    }

    impl Script {
        fn new(replies: &[&str]) -> Self {
            Script {
                replies: Mutex::new(replies.iter().rev().map(|s| s.to_string()).collect()),
                seen: Mutex::new(Vec::new()),
            }
        }
    }

    impl ChatClient for Script {
        fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, ChatError> {
            self.seen.lock().unwrap().push(request.clone());
            Ok(vec![self.replies.lock().unwrap().pop().unwrap_or_default()])
        }
    }

    const STRUCTURED: &str = r#"Sure! Here it is:
```json
{"name": "Nurse Subservience", "group1_label": "Female", "group1_terms": ["nurse", "she"],
 "group2_label": "Male", "group2_terms": ["doctor", "he"],
 "attr1_label": "Subservient", "attr1_terms": ["obedient"],
 "attr2_label": "Authoritative", "attr2_terms": ["commanding"]}
```"#;

    #[test]
    fn structured_reply_yields_draft() {
        let c = Script::new(&["1. Nurses are subservient...", STRUCTURED]);
        let drafts = discover_bias_candidates("medical setting", &c, &DiscoveryOptions::default()).unwrap();
        assert_eq!(drafts.len(), 1);
        assert_eq!(drafts[0].name, "nurse_subservience");
        assert_eq!(drafts[0].source, SpecSource::Discovered);
        assert!(crate::specs::validate_spec(drafts[0].clone()).is_ok());

        let seen = c.seen.lock().unwrap();
        assert!(seen[0].messages[0].content.contains("medical setting"));
        assert_eq!(seen[1].messages.len(), 3);
        assert_eq!(seen[1].messages[1].content, "1. Nurses are subservient...");
    }

    #[test]
    fn prose_reply_is_unparseable() {
        let c = Script::new(&["ideas", "I think nurses are often seen as {subservient}."]);
        match discover_bias_candidates("hospitals", &c, &DiscoveryOptions::default()) {
            Err(GenError::UnparseableReply { raw }) => assert!(raw.contains("subservient")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn arrays_and_missing_names() {
        let reply = r#"[{"group1_label": "Young", "group1_terms": ["teen"], "group2_label": "Old", "group2_terms": ["elder"],
          "attr1_label": "Tech", "attr1_terms": ["app"], "attr2_label": "Paper", "attr2_terms": ["letter"]},
          {"group1_label": "x"}]"#;
        let drafts = parse_drafts(reply);
        assert_eq!(drafts.len(), 1);
        assert_eq!(drafts[0].name, "young_old_tech");
    }
}
