//! Rejection-sampled sentence generation with a per-attribute quota.
//!
//! For every attribute term the generator keeps asking for batches of
//! sentences, each time with a freshly sampled group term, until the
//! attribute holds `per_attribute_quota` valid sentences or `max_tries`
//! batches have been spent. Replies that lack either requested term are
//! dropped; survivors get a counterpart-swapped alternative.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use chrono::{DateTime, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::chat::{ChatClient, ChatRequest};
use super::matching::TermMatcher;
use super::prompts::{build_generation_prompt, FewShotExample};
use super::rewrite::{clean_reply, rewrite_pair, RewriteMode};
use super::sentence::{GenMetadata, SentenceSource, TestSentence};
use super::GenError;
use crate::specs::{AttributeGroupIndex, GroupIndex, ValidatedSpec};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RewriteStrategy {
    Chat,
    Deterministic,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct GenerationConfig {
    pub temperature: f64,
    /// Choices requested per chat call.
    pub batch_size: usize,
    pub per_attribute_quota: usize,
    /// Batches allowed per attribute term.
    pub max_tries: usize,
    pub concurrency_limit: usize,
    pub few_shot_examples: Vec<FewShotExample>,
    pub chat_model: String,
    /// Seeds group-term sampling.
    pub seed: u64,
    pub rewrite: RewriteStrategy,
    /// A reply lacking the requested terms that contains one of these
    /// (case-insensitively) is counted as a refusal.
    pub refusal_phrases: Vec<String>,
    /// Overrides the wall clock in sentence metadata.
    pub fixed_timestamp: Option<DateTime<Utc>>,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        GenerationConfig {
            temperature: 0.8,
            batch_size: 5,
            per_attribute_quota: 2,
            max_tries: 40,
            concurrency_limit: 4,
            few_shot_examples: Vec::new(),
            chat_model: "gpt-3.5-turbo".into(),
            seed: 0,
            rewrite: RewriteStrategy::Chat,
            refusal_phrases: vec!["As an AI language model".into(), "It is illegal".into()],
            fixed_timestamp: None,
        }
    }
}

impl GenerationConfig {
    pub fn validate(&self) -> Result<(), GenError> {
        let fail = |m: &str| Err(GenError::InvalidConfig(m.to_string()));
        if self.per_attribute_quota < 1 {
            return fail("per_attribute_quota must be at least 1");
        }
        if self.max_tries < 1 {
            return fail("max_tries must be at least 1");
        }
        if self.batch_size < 1 {
            return fail("batch_size must be at least 1");
        }
        if self.concurrency_limit < 1 {
            return fail("concurrency_limit must be at least 1");
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return fail("temperature must lie in [0, 2]");
        }
        Ok(())
    }

    fn is_refusal(&self, reply: &str) -> bool {
        let lower = reply.to_lowercase();
        self.refusal_phrases
            .iter()
            .any(|p| !p.is_empty() && lower.contains(&p.to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuotaShortfall {
    pub attribute_term: String,
    pub stored: usize,
    pub wanted: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    /// Individual generations asked for (batch size times chat calls).
    pub requested: usize,
    /// Generations that contained both requested terms.
    pub accepted: usize,
    pub rejected_missing_terms: usize,
    pub rejected_refusals: usize,
    /// Accepted generations dropped because no valid alternative could be
    /// produced.
    pub rejected_pair_failures: usize,
    /// Accepted generations beyond the attribute's quota.
    pub surplus_discarded: usize,
    pub stored: usize,
    pub retries_used: usize,
    pub chat_calls: usize,
    pub acceptance_rate: f64,
    pub per_attribute_counts: BTreeMap<String, usize>,
    pub shortfalls: Vec<QuotaShortfall>,
}

impl GenerationReport {
    fn absorb(&mut self, other: &GenerationReport) {
        self.requested += other.requested;
        self.accepted += other.accepted;
        self.rejected_missing_terms += other.rejected_missing_terms;
        self.rejected_refusals += other.rejected_refusals;
        self.rejected_pair_failures += other.rejected_pair_failures;
        self.surplus_discarded += other.surplus_discarded;
        self.stored += other.stored;
        self.retries_used += other.retries_used;
        self.chat_calls += other.chat_calls;
        for (k, v) in &other.per_attribute_counts {
            *self.per_attribute_counts.entry(k.clone()).or_default() += v;
        }
        self.shortfalls.extend(other.shortfalls.iter().cloned());
    }

    fn finish(&mut self) {
        self.acceptance_rate = if self.requested > 0 {
            self.accepted as f64 / self.requested as f64
        } else {
            0.0
        };
    }

    pub fn quota_met(&self) -> bool {
        self.shortfalls.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutput {
    pub sentences: Vec<TestSentence>,
    pub report: GenerationReport,
}

/// Progress hooks, called from worker threads.
pub trait GenerationObserver: Sync {
    fn on_sentence(&self, _sentence: &TestSentence) {}
    fn on_attribute_done(&self, _done: usize, _total: usize) {}
}

pub struct NoopObserver;

impl GenerationObserver for NoopObserver {}

/// Runs generation with no progress reporting.
pub fn generate_for_spec(
    spec: &ValidatedSpec,
    config: &GenerationConfig,
    client: &dyn ChatClient,
) -> Result<GenerationOutput, GenError> {
    generate_for_spec_observed(spec, config, client, &NoopObserver)
}

struct AttributeJob<'a> {
    index: usize,
    group: AttributeGroupIndex,
    term: &'a str,
}

struct AttributeResult {
    sentences: Vec<TestSentence>,
    report: GenerationReport,
}

/// Runs generation, reporting each stored sentence and each finished
/// attribute term to `observer`.
///
/// Attribute terms are processed by up to `concurrency_limit` workers. Each
/// attribute draws its group terms from its own RNG stream and results are
/// assembled in attribute order, so output is independent of scheduling.
/// On a chat transport failure the run stops and the error carries the
/// sentences stored so far.
pub fn generate_for_spec_observed(
    spec: &ValidatedSpec,
    config: &GenerationConfig,
    client: &dyn ChatClient,
    observer: &dyn GenerationObserver,
) -> Result<GenerationOutput, GenError> {
    config.validate()?;

    // A term listed under both attribute groups is generated once, as A1.
    let jobs: Vec<AttributeJob<'_>> = spec
        .attributes()
        .filter(|(g, t)| matches!(spec.attribute_role(t), Ok((owner, _)) if owner == *g))
        .enumerate()
        .map(|(index, (group, term))| AttributeJob { index, group, term })
        .collect();

    let results: Mutex<Vec<Option<AttributeResult>>> = Mutex::new((0..jobs.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let done = AtomicUsize::new(0);
    let abort = AtomicBool::new(false);
    let failure: Mutex<Option<String>> = Mutex::new(None);
    let workers = config.concurrency_limit.min(jobs.len()).max(1);

    thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                if abort.load(Ordering::SeqCst) {
                    break;
                }
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(i) else { break };
                let (result, error) = run_attribute(spec, config, client, observer, job, &abort);
                results.lock().unwrap()[job.index] = Some(result);
                if let Some(e) = error {
                    abort.store(true, Ordering::SeqCst);
                    failure.lock().unwrap().get_or_insert(e);
                    break;
                }
                observer.on_attribute_done(done.fetch_add(1, Ordering::SeqCst) + 1, jobs.len());
            });
        }
    });

    let mut report = GenerationReport::default();
    let mut sentences = Vec::new();
    for r in results.into_inner().unwrap().into_iter().flatten() {
        report.absorb(&r.report);
        sentences.extend(r.sentences);
    }
    report.finish();
    let output = GenerationOutput { sentences, report };

    match failure.into_inner().unwrap() {
        None => Ok(output),
        Some(reason) => Err(GenError::ChatBackendUnavailable {
            reason,
            partial: Some(Box::new(output)),
        }),
    }
}

fn run_attribute(
    spec: &ValidatedSpec,
    config: &GenerationConfig,
    client: &dyn ChatClient,
    observer: &dyn GenerationObserver,
    job: &AttributeJob<'_>,
    abort: &AtomicBool,
) -> (AttributeResult, Option<String>) {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(job.index as u64);

    let group_terms: Vec<(GroupIndex, &str, &str)> = [GroupIndex::G1, GroupIndex::G2]
        .into_iter()
        .flat_map(|g| {
            spec.group_terms(g)
                .iter()
                .zip(spec.group_terms(g.opposite()))
                .map(move |(t, c)| (g, t.as_str(), c.as_str()))
        })
        .collect();

    let attr_matcher = TermMatcher::new(job.term);
    let mut report = GenerationReport::default();
    let mut sentences = Vec::new();
    let mut previous: Option<usize> = None;
    let mut tries = 0usize;
    let mut error = None;

    while sentences.len() < config.per_attribute_quota && tries < config.max_tries {
        if abort.load(Ordering::SeqCst) {
            break;
        }
        tries += 1;
        // A retry samples a group term different from the last one.
        let pick = match previous {
            Some(p) if group_terms.len() > 1 => {
                let r = rng.gen_range(0..group_terms.len() - 1);
                if r >= p { r + 1 } else { r }
            }
            _ => rng.gen_range(0..group_terms.len()),
        };
        previous = Some(pick);
        let (group_index, group_term, counterpart) = group_terms[pick];

        let messages = build_generation_prompt(spec, group_term, job.term, &config.few_shot_examples)
            .expect("terms come from the specification");
        let request = ChatRequest {
            model: config.chat_model.clone(),
            temperature: config.temperature,
            messages,
            n: config.batch_size,
        };
        report.chat_calls += 1;
        report.requested += config.batch_size;
        let replies = match client.complete(&request) {
            Ok(r) => r,
            Err(e) => {
                error = Some(e.to_string());
                break;
            }
        };
        let group_matcher = TermMatcher::new(group_term);

        for reply in replies.iter().take(config.batch_size) {
            let text = clean_reply(reply);
            if !(group_matcher.is_match(&text) && attr_matcher.is_match(&text)) {
                if config.is_refusal(&text) {
                    report.rejected_refusals += 1;
                } else {
                    report.rejected_missing_terms += 1;
                }
                continue;
            }
            report.accepted += 1;
            if sentences.len() >= config.per_attribute_quota {
                report.surplus_discarded += 1;
                continue;
            }
            let mode = match config.rewrite {
                RewriteStrategy::Deterministic => RewriteMode::Deterministic,
                RewriteStrategy::Chat => RewriteMode::Chat {
                    client,
                    model: &config.chat_model,
                    temperature: config.temperature,
                },
            };
            let paired_text = match rewrite_pair(&text, group_term, counterpart, mode) {
                Ok(p) => p,
                Err(GenError::ChatBackendUnavailable { reason, .. }) => {
                    report.chat_calls += 1;
                    error = Some(reason);
                    break;
                }
                Err(_) => {
                    report.chat_calls += usize::from(config.rewrite == RewriteStrategy::Chat);
                    report.rejected_pair_failures += 1;
                    continue;
                }
            };
            report.chat_calls += usize::from(config.rewrite == RewriteStrategy::Chat);
            let sentence = TestSentence {
                spec_name: spec.name().to_string(),
                group_term: group_term.to_string(),
                group_index,
                counterpart_term: counterpart.to_string(),
                attribute_term: job.term.to_string(),
                attribute_group_index: job.group,
                text,
                paired_text,
                source: SentenceSource::Chat,
                gen_metadata: Some(GenMetadata {
                    model: config.chat_model.clone(),
                    timestamp: config.fixed_timestamp.unwrap_or_else(Utc::now),
                    temperature: config.temperature,
                    attempt: tries as u32,
                }),
            };
            if sentence.check().is_err() {
                report.rejected_pair_failures += 1;
                continue;
            }
            observer.on_sentence(&sentence);
            sentences.push(sentence);
        }
        if error.is_some() {
            break;
        }
    }

    report.retries_used = tries.saturating_sub(1);
    report.stored = sentences.len();
    report
        .per_attribute_counts
        .insert(job.term.to_string(), sentences.len());
    if sentences.len() < config.per_attribute_quota {
        report.shortfalls.push(QuotaShortfall {
            attribute_term: job.term.to_string(),
            stored: sentences.len(),
            wanted: config.per_attribute_quota,
        });
    }
    (AttributeResult { sentences, report }, error)
}
