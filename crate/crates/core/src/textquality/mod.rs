//! Dataset quality analytics: sentence length, lexical diversity,
//! readability, lexicon sentiment and an optional remote toxicity hook.

mod readability;
mod sentiment;
mod toxicity;

use std::collections::HashSet;
use std::fmt::Write as _;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use readability::{ari, gunning_fog, split_sentences, syllable_count};
pub use sentiment::{sentiment, SentimentLabel, SentimentLexicon, SentimentScore};
pub use toxicity::{toxicity, HttpToxicityClassifier, ToxicityClassifier, ToxicityScores, TOXIC_THRESHOLD};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QualityError {
    #[error("dataset has no sentences")]
    EmptyDataset,
    #[error("text has no words")]
    EmptyText,
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("invalid lexicon line {line}: {reason}")]
    InvalidLexicon { line: usize, reason: String },
}

fn is_joiner(c: char) -> bool {
    matches!(c, '\'' | '\u{2019}' | '-')
}

/// Lowercase word tokens. Splits on whitespace and punctuation; apostrophes
/// and hyphens survive only between two alphanumeric characters.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if is_joiner(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push(c);
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Sample mean and sample standard deviation of per-sentence token counts.
/// A single sentence reports an sd of zero.
pub fn word_count_stats<S: AsRef<str>>(sentences: &[S]) -> Result<(f64, f64), QualityError> {
    if sentences.is_empty() {
        return Err(QualityError::EmptyDataset);
    }
    let counts: Vec<f64> = sentences
        .iter()
        .map(|s| tokenize(s.as_ref()).len() as f64)
        .collect();
    Ok(mean_sd(&counts))
}

/// Distinct tokens in `sample_size` sentences drawn without replacement,
/// repeated `trials` times. Returns the mean and sd over trials.
pub fn unique_tokens<S: AsRef<str>>(
    sentences: &[S],
    sample_size: usize,
    trials: usize,
    seed: u64,
) -> Result<(f64, f64), QualityError> {
    if sentences.is_empty() {
        return Err(QualityError::EmptyDataset);
    }
    let tokenized: Vec<Vec<String>> = sentences.iter().map(|s| tokenize(s.as_ref())).collect();
    let take = sample_size.min(tokenized.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let counts: Vec<f64> = (0..trials.max(1))
        .map(|_| {
            let picked = index::sample(&mut rng, tokenized.len(), take);
            let distinct: HashSet<&str> = picked
                .iter()
                .flat_map(|i| tokenized[i].iter().map(String::as_str))
                .collect();
            distinct.len() as f64
        })
        .collect();
    Ok(mean_sd(&counts))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentFractions {
    pub positive: f64,
    pub negative: f64,
    pub neutral: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QualityReport {
    pub sentence_count: usize,
    pub word_count_mean: f64,
    pub word_count_sd: f64,
    pub diversity_sample_size: usize,
    pub unique_tokens_mean: f64,
    pub unique_tokens_sd: f64,
    pub gf_mean: f64,
    pub ari_mean: f64,
    pub sentiment_fractions: SentimentFractions,
    pub toxicity_mean: Option<f64>,
    pub toxic_fraction_at_0_5: Option<f64>,
    /// Why toxicity fields are absent, when they are.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub toxicity_note: Option<String>,
}

#[derive(Debug, Clone)]
pub struct QualityOptions {
    pub sample_size: usize,
    pub trials: usize,
    pub seed: u64,
    pub lexicon: SentimentLexicon,
}

impl Default for QualityOptions {
    fn default() -> Self {
        QualityOptions {
            sample_size: 200,
            trials: 10,
            seed: 0,
            lexicon: SentimentLexicon::bundled(),
        }
    }
}

/// Computes the full report. Toxicity is attempted only when a classifier
/// is given; a failing classifier leaves the toxicity fields empty.
pub fn quality_report<S: AsRef<str>>(
    sentences: &[S],
    options: &QualityOptions,
    toxicity_classifier: Option<&dyn ToxicityClassifier>,
) -> Result<QualityReport, QualityError> {
    let (word_count_mean, word_count_sd) = word_count_stats(sentences)?;
    let (unique_tokens_mean, unique_tokens_sd) =
        unique_tokens(sentences, options.sample_size, options.trials, options.seed)?;

    let mut gf = Vec::new();
    let mut ari_scores = Vec::new();
    let (mut pos, mut neg, mut neu) = (0usize, 0usize, 0usize);
    for s in sentences {
        let s = s.as_ref();
        // Sentences without words are skipped for readability only.
        if let (Ok(g), Ok(a)) = (gunning_fog(s), ari(s)) {
            gf.push(g);
            ari_scores.push(a);
        }
        match sentiment(s, &options.lexicon).label {
            SentimentLabel::Positive => pos += 1,
            SentimentLabel::Negative => neg += 1,
            SentimentLabel::Neutral => neu += 1,
        }
    }
    let n = sentences.len() as f64;
    let avg = |v: &[f64]| if v.is_empty() { 0.0 } else { v.iter().sum::<f64>() / v.len() as f64 };

    let (toxicity_mean, toxic_fraction_at_0_5, toxicity_note) = match toxicity_classifier {
        None => (None, None, Some("toxicity classifier not configured".to_string())),
        Some(c) => {
            let texts: Vec<String> = sentences.iter().map(|s| s.as_ref().to_string()).collect();
            match toxicity(&texts, c) {
                Ok(t) => (Some(t.mean()), Some(t.toxic_fraction()), None),
                Err(e) => (None, None, Some(format!("not computed: {e}"))),
            }
        }
    };

    Ok(QualityReport {
        sentence_count: sentences.len(),
        word_count_mean,
        word_count_sd,
        diversity_sample_size: options.sample_size.min(sentences.len()),
        unique_tokens_mean,
        unique_tokens_sd,
        gf_mean: avg(&gf),
        ari_mean: avg(&ari_scores),
        sentiment_fractions: SentimentFractions {
            positive: pos as f64 / n,
            negative: neg as f64 / n,
            neutral: neu as f64 / n,
        },
        toxicity_mean,
        toxic_fraction_at_0_5,
        toxicity_note,
    })
}

impl QualityReport {
    /// One-page plain text rendering for terminals.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "sentences            {}", self.sentence_count);
        let _ = writeln!(
            out,
            "word count           {:.2} ± {:.2}",
            self.word_count_mean, self.word_count_sd
        );
        let _ = writeln!(
            out,
            "unique tokens ({:>3})  {:.1} ± {:.2}",
            self.diversity_sample_size, self.unique_tokens_mean, self.unique_tokens_sd
        );
        let _ = writeln!(out, "gunning fog (mean)   {:.2}", self.gf_mean);
        let _ = writeln!(out, "ARI (mean)           {:.2}", self.ari_mean);
        let f = &self.sentiment_fractions;
        let _ = writeln!(
            out,
            "sentiment            pos {:.1}%  neg {:.1}%  neu {:.1}%",
            f.positive * 100.0,
            f.negative * 100.0,
            f.neutral * 100.0
        );
        match (self.toxicity_mean, self.toxic_fraction_at_0_5) {
            (Some(m), Some(t)) => {
                let _ = writeln!(out, "toxicity             mean {m:.3}  toxic {:.1}%", t * 100.0);
            }
            _ => {
                let _ = writeln!(
                    out,
                    "toxicity             {}",
                    self.toxicity_note.as_deref().unwrap_or("not computed")
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenize_examples() {
        assert_eq!(tokenize("The cat sat."), ["the", "cat", "sat"]);
        assert_eq!(tokenize("perform-vaccination now"), ["perform-vaccination", "now"]);
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Don't -- stop!"), ["don't", "stop"]);
        assert_eq!(tokenize("'quoted' end-"), ["quoted", "end"]);
    }

    #[test]
    fn word_counts() {
        let (m, sd) = word_count_stats(&["a b", "a b c d"]).unwrap();
        assert_eq!(m, 3.0);
        assert!((sd - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(word_count_stats(&["one two"]).unwrap(), (2.0, 0.0));
        assert_eq!(word_count_stats(&["a b", "c d", "e f"]).unwrap(), (2.0, 0.0));
        assert_eq!(word_count_stats::<&str>(&[]), Err(QualityError::EmptyDataset));
    }

    #[test]
    fn diversity() {
        let (m, sd) = unique_tokens(&["the cat sat", "the dog ran"], 200, 5, 1).unwrap();
        assert_eq!((m, sd), (5.0, 0.0));
        let same = vec!["a rose is a rose"; 200];
        assert_eq!(unique_tokens(&same, 200, 3, 9).unwrap().0, 3.0);
        let corpus: Vec<String> = (0..500).map(|i| format!("word{i} common w{}", i % 7)).collect();
        let a = unique_tokens(&corpus, 200, 10, 42).unwrap();
        let b = unique_tokens(&corpus, 200, 10, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.0 > 200.0);
    }

    #[test]
    fn report_without_toxicity() {
        let r = quality_report(
            &["He loves science.", "She is a terrible cook.", "They met at noon."],
            &QualityOptions::default(),
            None,
        )
        .unwrap();
        assert_eq!(r.sentence_count, 3);
        let f = r.sentiment_fractions;
        assert!((f.positive + f.negative + f.neutral - 1.0).abs() < 1e-9);
        assert_eq!((f.positive * 3.0).round(), 1.0);
        assert_eq!((f.negative * 3.0).round(), 1.0);
        assert!(r.toxicity_mean.is_none());
        assert!(r.toxic_fraction_at_0_5.is_none());
        assert!(r.summary().contains("toxicity classifier not configured"));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn unique_bounded_by_total(words in proptest::collection::vec("[a-e]{1,3}", 1..40)) {
                let sentence = words.join(" ");
                let total = tokenize(&sentence).len();
                let distinct: HashSet<_> = tokenize(&sentence).into_iter().collect();
                let (u, _) = unique_tokens(&[sentence.as_str()], 200, 1, 0).unwrap();
                prop_assert!(u <= total as f64);
                prop_assert_eq!(u == total as f64, distinct.len() == total);
            }
        }
    }
}
