use serde::{Deserialize, Serialize};

use super::QualityError;
use crate::http::{self, RetryPolicy};

/// Scores at or above this value are labeled toxic.
pub const TOXIC_THRESHOLD: f64 = 0.5;

/// Anything that maps texts to toxicity probabilities.
pub trait ToxicityClassifier: Send + Sync {
    fn classify(&self, texts: &[String]) -> Result<Vec<f64>, QualityError>;
}

/// Client for `POST {base}/toxicity {texts} -> {scores}`.
#[derive(Debug, Clone)]
pub struct HttpToxicityClassifier {
    base_url: String,
    policy: RetryPolicy,
    client: reqwest::blocking::Client,
}

#[derive(Serialize)]
struct Request<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct Reply {
    scores: Vec<f64>,
}

impl HttpToxicityClassifier {
    pub fn new(base_url: impl Into<String>) -> Self {
        Self::with_policy(base_url, RetryPolicy::default())
    }

    pub fn with_policy(base_url: impl Into<String>, policy: RetryPolicy) -> Self {
        HttpToxicityClassifier {
            base_url: base_url.into(),
            client: http::client(&policy),
            policy,
        }
    }

    /// Reads `TOXICITY_URL`; `None` when unset.
    pub fn from_env() -> Option<Self> {
        std::env::var("TOXICITY_URL")
            .ok()
            .filter(|s| !s.trim().is_empty())
            .map(Self::new)
    }
}

impl ToxicityClassifier for HttpToxicityClassifier {
    fn classify(&self, texts: &[String]) -> Result<Vec<f64>, QualityError> {
        let url = http::join_url(&self.base_url, "toxicity");
        let reply: Reply = http::post_json(&self.client, &self.policy, &url, None, &Request { texts })
            .map_err(|e| QualityError::BackendUnavailable(e.to_string()))?;
        Ok(reply.scores)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToxicityScores {
    pub scores: Vec<f64>,
    pub toxic: Vec<bool>,
}

impl ToxicityScores {
    pub fn mean(&self) -> f64 {
        if self.scores.is_empty() {
            return 0.0;
        }
        self.scores.iter().sum::<f64>() / self.scores.len() as f64
    }

    pub fn toxic_fraction(&self) -> f64 {
        if self.toxic.is_empty() {
            return 0.0;
        }
        self.toxic.iter().filter(|t| **t).count() as f64 / self.toxic.len() as f64
    }
}

/// Passes scores through from the classifier and labels them at the
/// inclusive 0.5 threshold.
pub fn toxicity(
    texts: &[String],
    classifier: &dyn ToxicityClassifier,
) -> Result<ToxicityScores, QualityError> {
    let scores = classifier.classify(texts)?;
    if scores.len() != texts.len() {
        return Err(QualityError::BackendUnavailable(format!(
            "classifier returned {} scores for {} texts",
            scores.len(),
            texts.len()
        )));
    }
    if let Some(bad) = scores.iter().find(|s| !(0.0..=1.0).contains(*s)) {
        return Err(QualityError::BackendUnavailable(format!(
            "classifier returned out-of-range score {bad}"
        )));
    }
    let toxic = scores.iter().map(|s| *s >= TOXIC_THRESHOLD).collect();
    Ok(ToxicityScores { scores, toxic })
}
