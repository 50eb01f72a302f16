//! Resolving specifications, scorers and chat clients from user input.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use biastest_core::datastore::Store;
use biastest_core::genpipeline::mock::{MockChatClient, MockChatConfig};
use biastest_core::genpipeline::{ChatClient, HttpChatClient};
use biastest_core::scorers::{
    Normalization, RemoteScorer, Scorer, ScorerBackend, ScorerKind, TableScorer, UnigramScorer,
};
use biastest_core::specs::{validate_spec, BiasSpecification, ValidatedSpec};

use crate::AppError;

/// A path to a JSON specification, or the name of a stored or bundled one.
pub fn resolve_spec(store: &Store, arg: &str) -> Result<ValidatedSpec, AppError> {
    let path = Path::new(arg);
    if path.is_file() {
        let text = std::fs::read_to_string(path).map_err(|e| AppError::validation(format!("{arg}: {e}")))?;
        let raw = BiasSpecification::from_json(&text).map_err(|e| AppError::validation(format!("{arg}: {e}")))?;
        return Ok(validate_spec(raw)?);
    }
    Ok(store.load_spec(arg)?)
}

fn read(path: &str) -> Result<String, AppError> {
    std::fs::read_to_string(path).map_err(|e| AppError::validation(format!("{path}: {e}")))
}

/// Parses a command-line scorer selector:
/// `http(s)://…` (remote), `env` (remote at `SCORER_URL`), `table:FILE`
/// (JSON object sentence → log-likelihood), `unigram:FILE` (corpus text) or
/// `constant[:VALUE]`.
pub fn scorer_from_arg(
    arg: &str,
    model_id: Option<&str>,
    normalization: Normalization,
) -> Result<Box<dyn Scorer>, AppError> {
    let id = |default: &str| model_id.unwrap_or(default).to_string();
    if arg.starts_with("http://") || arg.starts_with("https://") {
        return Ok(Box::new(RemoteScorer::new(arg, id("remote"), normalization)));
    }
    if arg == "env" {
        return RemoteScorer::from_env(id("remote"), normalization)
            .map(|s| Box::new(s) as Box<dyn Scorer>)
            .ok_or_else(|| AppError::validation("SCORER_URL is not set"));
    }
    if let Some(file) = arg.strip_prefix("table:") {
        return Ok(Box::new(TableScorer::from_json(id("table"), &read(file)?, normalization)?));
    }
    if let Some(file) = arg.strip_prefix("unigram:") {
        let text = read(file)?;
        let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
        return Ok(Box::new(UnigramScorer::from_corpus(id("unigram"), &lines, normalization)?));
    }
    if let Some(rest) = arg.strip_prefix("constant") {
        let value = match rest.strip_prefix(':') {
            Some(v) => v.parse().map_err(|_| AppError::validation(format!("bad constant score {v:?}")))?,
            None if rest.is_empty() => -1.0,
            None => return Err(AppError::validation(format!("unknown scorer {arg:?}"))),
        };
        return Ok(Box::new(TableScorer::constant(id("constant"), value)));
    }
    Err(AppError::validation(format!(
        "unknown scorer {arg:?}; expected a URL, env, table:FILE, unigram:FILE or constant[:VALUE]"
    )))
}

/// Scorer selection in API requests. In-process backends carry their data
/// inline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScorerRequest {
    #[serde(flatten)]
    pub backend: ScorerBackend,
    /// Table backend: sentence → joint log-likelihood.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<HashMap<String, f64>>,
    /// Table backend: score for sentences missing from `table`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default_score: Option<f64>,
    /// Unigram backend: corpus texts.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<Vec<String>>,
}

impl ScorerRequest {
    pub fn build(&self) -> Result<Box<dyn Scorer>, AppError> {
        let b = &self.backend;
        match b.kind {
            ScorerKind::Remote => {
                let endpoint = b
                    .endpoint
                    .clone()
                    .or_else(|| std::env::var("SCORER_URL").ok().filter(|u| !u.is_empty()))
                    .ok_or_else(|| AppError::validation("remote scorer needs an endpoint or SCORER_URL"))?;
                let backend = ScorerBackend {
                    endpoint: Some(endpoint),
                    ..b.clone()
                };
                Ok(Box::new(RemoteScorer::from_backend(&backend)?))
            }
            ScorerKind::Table => {
                b.validate()?;
                let table = self.table.clone().unwrap_or_default();
                if table.is_empty() && self.default_score.is_none() {
                    return Err(AppError::validation("table scorer needs `table` or `default_score`"));
                }
                let mut t = TableScorer::new(b.model_id.clone(), table, b.normalization);
                if let Some(d) = self.default_score {
                    t = t.with_default(d);
                }
                Ok(Box::new(t))
            }
            ScorerKind::Unigram => {
                b.validate()?;
                let corpus = self
                    .corpus
                    .as_deref()
                    .ok_or_else(|| AppError::validation("unigram scorer needs `corpus`"))?;
                Ok(Box::new(UnigramScorer::from_corpus(b.model_id.clone(), corpus, b.normalization)?))
            }
        }
    }
}

/// The chat backend: the offline mock if requested, otherwise the
/// OpenAI-compatible client keyed by `api_key` or `CHAT_API_KEY`.
pub fn chat_client(api_key: Option<String>, mock: Option<MockChatConfig>) -> Result<Arc<dyn ChatClient>, AppError> {
    if let Some(cfg) = mock {
        return Ok(Arc::new(MockChatClient::new(cfg)));
    }
    let key = api_key
        .filter(|k| !k.trim().is_empty())
        .or_else(|| std::env::var("CHAT_API_KEY").ok().filter(|k| !k.trim().is_empty()))
        .ok_or_else(|| {
            AppError::Backend("no chat API key: set CHAT_API_KEY (or use --mock-chat for an offline run)".into())
        })?;
    let base = std::env::var("CHAT_API_BASE")
        .ok()
        .filter(|b| !b.trim().is_empty())
        .unwrap_or_else(|| biastest_core::genpipeline::DEFAULT_CHAT_BASE.to_string());
    Ok(Arc::new(HttpChatClient::new(base, key)))
}

/// `CHAT_MODEL` when set.
pub fn default_chat_model() -> Option<String> {
    std::env::var("CHAT_MODEL").ok().filter(|m| !m.trim().is_empty())
}
