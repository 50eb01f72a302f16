//! A seeded, offline chat backend that understands the generation, pairing
//! and discovery prompts.
//!
//! Each reply is a pure function of the mock seed, the request messages and
//! how many times that exact request has been seen before, so a run is
//! reproducible regardless of thread scheduling as long as identical
//! requests are issued from one thread.

use std::collections::HashMap;
use std::sync::Mutex;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::chat::{ChatClient, ChatError, ChatRequest};
use super::matching::{contains_terms, replace_term};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MockChatConfig {
    pub seed: u64,
    /// Probability that a generation leaves out the group term.
    pub omit_rate: f64,
    /// Probability that a generation is a refusal.
    pub refusal_rate: f64,
    /// Probability that a pairing request echoes the input unchanged.
    pub rewrite_failure_rate: f64,
}

impl Default for MockChatConfig {
    fn default() -> Self {
        MockChatConfig {
            seed: 0,
            omit_rate: 0.0,
            refusal_rate: 0.0,
            rewrite_failure_rate: 0.0,
        }
    }
}

/// What the mock has emitted so far.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockStats {
    pub generation_calls: usize,
    pub generations: usize,
    pub compliant: usize,
    pub omitted: usize,
    pub refused: usize,
    pub rewrite_calls: usize,
    pub rewrite_failures: usize,
}

impl MockStats {
    /// Share of generations that contained both requested terms.
    pub fn compliance_rate(&self) -> f64 {
        if self.generations == 0 {
            0.0
        } else {
            self.compliant as f64 / self.generations as f64
        }
    }
}

pub struct MockChatClient {
    config: MockChatConfig,
    seen: Mutex<HashMap<[u8; 32], u64>>,
    stats: Mutex<MockStats>,
    generation_re: Regex,
    pair_re: Regex,
}

const FRAMES: &[&str] = &[
    "{g} has always been passionate about {a}.",
    "Everyone agreed that {g} had a real talent for {a}.",
    "Last summer, {g} spent long evenings reading about {a}.",
    "It surprised nobody when {g} chose to talk about {a} at dinner.",
    "Whenever the topic of {a} came up, {g} had something thoughtful to say.",
    "The teacher noticed that {g} lit up during the lesson on {a}.",
    "After a long week, {g} still found time for {a}.",
    "{g} wrote a short essay about {a} for the local newsletter.",
    "Friends often ask {g} for advice about {a}.",
    "In the interview, {g} spoke openly about {a} and what it means to the family.",
    "The community center invited {g} to lead a workshop on {a}.",
    "Even as a beginner, {g} showed surprising confidence with {a}.",
];

const OMISSION_FRAMES: &[&str] = &[
    "Someone in the group mentioned {a} during the meeting.",
    "The article discussed {a} in great detail.",
    "A neighbor recently became interested in {a}.",
];

const REFUSAL: &str = "It is illegal and morally wrong to suggest that. As an AI language model, I cannot write this sentence.";

const DISCOVERY_REPLY: &str = "1. Nurses are often assumed to be subservient to doctors.\n\
2. Doctors are assumed to be male and nurses female.\n\
3. Patients may trust the opinions of older clinicians more.";

const STRUCTURED_REPLY: &str = r#"Here is a bias specification in the requested structure:
{
  "name": "nurse_doctor_subservience",
  "group1_label": "Nurse terms",
  "group1_terms": ["nurse", "nurses", "nursing staff"],
  "group2_label": "Doctor terms",
  "group2_terms": ["doctor", "doctors", "physician"],
  "attr1_label": "Subservience",
  "attr1_terms": ["obedient", "follows orders", "assists"],
  "attr2_label": "Authority",
  "attr2_terms": ["decisive", "gives orders", "leads"]
}"#;

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

impl MockChatClient {
    pub fn new(config: MockChatConfig) -> Self {
        MockChatClient {
            config,
            seen: Mutex::new(HashMap::new()),
            stats: Mutex::new(MockStats::default()),
            generation_re: Regex::new(r#"target term "(.*?)" and attribute term "(.*?)""#).unwrap(),
            pair_re: Regex::new(r#"(?s)replace "(.*?)" with "(.*?)".*Sentence: "(.*)", Rewrite:"#).unwrap(),
        }
    }

    pub fn stats(&self) -> MockStats {
        *self.stats.lock().unwrap()
    }

    fn rng_for(&self, request: &ChatRequest) -> ChaCha8Rng {
        let mut h = Sha256::new();
        h.update(self.config.seed.to_le_bytes());
        for m in &request.messages {
            h.update(m.content.as_bytes());
            h.update([0u8]);
        }
        let key: [u8; 32] = h.finalize().into();
        let count = {
            let mut seen = self.seen.lock().unwrap();
            let c = seen.entry(key).or_insert(0);
            *c += 1;
            *c
        };
        let mut seed = key;
        for (i, b) in count.to_le_bytes().iter().enumerate() {
            seed[i] ^= b;
        }
        ChaCha8Rng::from_seed(seed)
    }

    fn generate(&self, group: &str, attr: &str, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        let mut stats = self.stats.lock().unwrap();
        stats.generation_calls += 1;
        (0..n)
            .map(|_| {
                stats.generations += 1;
                let u: f64 = rng.gen();
                let text = if u < self.config.refusal_rate {
                    stats.refused += 1;
                    REFUSAL.to_string()
                } else if u < self.config.refusal_rate + self.config.omit_rate {
                    stats.omitted += 1;
                    let f = OMISSION_FRAMES[rng.gen_range(0..OMISSION_FRAMES.len())];
                    f.replace("{a}", attr)
                } else {
                    let f = FRAMES[rng.gen_range(0..FRAMES.len())];
                    let text = f.replace("{a}", attr);
                    let text = if text.starts_with("{g}") {
                        text.replacen("{g}", &capitalize(group), 1)
                    } else {
                        text.replace("{g}", group)
                    };
                    if contains_terms(&text, &[group, attr]) {
                        stats.compliant += 1;
                    }
                    text
                };
                text
            })
            .collect()
    }

    fn rewrite(&self, term: &str, counterpart: &str, sentence: &str, rng: &mut ChaCha8Rng) -> String {
        let mut stats = self.stats.lock().unwrap();
        stats.rewrite_calls += 1;
        if rng.gen::<f64>() < self.config.rewrite_failure_rate {
            stats.rewrite_failures += 1;
            return sentence.to_string();
        }
        replace_term(sentence, term, counterpart).unwrap_or_else(|| sentence.to_string())
    }
}

impl ChatClient for MockChatClient {
    fn complete(&self, request: &ChatRequest) -> Result<Vec<String>, ChatError> {
        let mut rng = self.rng_for(request);
        let last = request
            .messages
            .last()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let first = request
            .messages
            .first()
            .map(|m| m.content.as_str())
            .unwrap_or_default();
        let n = request.n.max(1);

        if let Some(c) = self.generation_re.captures(first) {
            return Ok(self.generate(&c[1], &c[2], n, &mut rng));
        }
        if let Some(c) = self.pair_re.captures(first) {
            return Ok(vec![self.rewrite(&c[1], &c[2], &c[3], &mut rng)]);
        }
        if last.contains("bias specification for it") {
            return Ok(vec![STRUCTURED_REPLY.to_string()]);
        }
        if last.contains("suggest stereotypical biases") {
            return Ok(vec![DISCOVERY_REPLY.to_string()]);
        }
        Err(ChatError::Protocol(
            "mock backend does not recognise this prompt".into(),
        ))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::genpipeline::{build_pair_prompt, discover_bias_candidates, DiscoveryOptions};
    use crate::specs::validate_spec;

    fn gen_request(group: &str, attr: &str, n: usize) -> ChatRequest {
        let spec = crate::specs::predefined_by_name("gender_math_arts").unwrap();
        ChatRequest {
            model: "mock".into(),
            temperature: 0.8,
            messages: crate::genpipeline::build_generation_prompt(&spec, group, attr, &[]).unwrap(),
            n,
        }
    }

    #[test]
    fn compliant_generations_contain_terms() {
        let m = MockChatClient::new(MockChatConfig::default());
        let out = m.complete(&gen_request("he", "algebra", 20)).unwrap();
        assert_eq!(out.len(), 20);
        assert!(out.iter().all(|s| contains_terms(s, &["he", "algebra"])));
        assert_eq!(m.stats().compliance_rate(), 1.0);
    }

    #[test]
    fn repeated_requests_differ_but_replay_identically() {
        let a = MockChatClient::new(MockChatConfig { seed: 5, ..Default::default() });
        let b = MockChatClient::new(MockChatConfig { seed: 5, ..Default::default() });
        let r = gen_request("she", "poetry", 4);
        let a1 = a.complete(&r).unwrap();
        let a2 = a.complete(&r).unwrap();
        assert_ne!(a1, a2);
        assert_eq!(b.complete(&r).unwrap(), a1);
        assert_eq!(b.complete(&r).unwrap(), a2);
    }

    #[test]
    fn omission_rate_is_respected() {
        let m = MockChatClient::new(MockChatConfig { seed: 2, omit_rate: 0.4, ..Default::default() });
        let r = gen_request("he", "math", 1000);
        let out = m.complete(&r).unwrap();
        let kept = out.iter().filter(|s| contains_terms(s, &["he", "math"])).count();
        assert_eq!(kept, m.stats().compliant);
        assert!((kept as f64 / 1000.0 - 0.6).abs() < 0.05);
    }

    #[test]
    fn answers_pair_prompts() {
        let m = MockChatClient::new(MockChatConfig::default());
        let req = ChatRequest {
            model: "mock".into(),
            temperature: 0.8,
            messages: build_pair_prompt("She said \"hi\" to her sister.", "sister", "brother").unwrap(),
            n: 1,
        };
        assert_eq!(m.complete(&req).unwrap(), ["She said \"hi\" to her brother."]);
    }

    #[test]
    fn answers_discovery() {
        let m = MockChatClient::new(MockChatConfig::default());
        let drafts = discover_bias_candidates("medical setting", &m, &DiscoveryOptions::default()).unwrap();
        assert_eq!(drafts.len(), 1);
        assert!(validate_spec(drafts[0].clone()).is_ok());
    }
}
