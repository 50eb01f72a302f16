use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{tokenize, QualityError};

const BUNDLED: &str = include_str!("../../resources/lexicon/valence.tsv");
const NEGATORS: [&str; 3] = ["not", "no", "never"];

/// Token valences plus the normalization constant of the compound score.
#[derive(Debug, Clone, PartialEq)]
pub struct SentimentLexicon {
    valences: HashMap<String, f64>,
    pub normalization_alpha: f64,
}

impl SentimentLexicon {
    pub fn new(valences: HashMap<String, f64>, normalization_alpha: f64) -> Result<Self, QualityError> {
        if valences.is_empty() {
            return Err(QualityError::InvalidLexicon {
                line: 0,
                reason: "lexicon is empty".into(),
            });
        }
        if let Some((t, _)) = valences.iter().find(|(_, v)| !v.is_finite()) {
            return Err(QualityError::InvalidLexicon {
                line: 0,
                reason: format!("valence of {t:?} is not finite"),
            });
        }
        let valences = valences
            .into_iter()
            .map(|(k, v)| (k.to_lowercase(), v))
            .collect();
        Ok(SentimentLexicon {
            valences,
            normalization_alpha,
        })
    }

    /// Parses `token<TAB>valence` lines; `#` starts a comment line.
    pub fn from_tsv(text: &str) -> Result<Self, QualityError> {
        let mut valences = HashMap::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let bad = |reason: &str| QualityError::InvalidLexicon {
                line: i + 1,
                reason: reason.to_string(),
            };
            let mut parts = line.split_whitespace();
            let token = parts.next().ok_or_else(|| bad("missing token"))?;
            let value: f64 = parts
                .next()
                .ok_or_else(|| bad("missing valence"))?
                .parse()
                .map_err(|_| bad("valence is not a number"))?;
            valences.insert(token.to_string(), value);
        }
        Self::new(valences, 15.0)
    }

    /// The compact lexicon shipped with the crate.
    pub fn bundled() -> Self {
        Self::from_tsv(BUNDLED).expect("bundled lexicon parses")
    }

    pub fn valence(&self, token: &str) -> Option<f64> {
        self.valences.get(token).copied()
    }

    pub fn len(&self) -> usize {
        self.valences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.valences.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SentimentLabel {
    Positive,
    Negative,
    Neutral,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SentimentScore {
    pub compound: f64,
    pub label: SentimentLabel,
}

/// `compound = s / sqrt(s^2 + alpha)` over the summed token valences `s`. A
/// token right after "not", "no" or "never" contributes its negated valence.
pub fn sentiment(text: &str, lexicon: &SentimentLexicon) -> SentimentScore {
    let tokens = tokenize(text);
    let mut sum = 0.0;
    for (i, tok) in tokens.iter().enumerate() {
        if let Some(v) = lexicon.valence(tok) {
            let negated = i > 0 && NEGATORS.contains(&tokens[i - 1].as_str());
            sum += if negated { -v } else { v };
        }
    }
    let compound = if sum == 0.0 {
        0.0
    } else {
        sum / (sum * sum + lexicon.normalization_alpha).sqrt()
    };
    let label = if compound >= 0.05 {
        SentimentLabel::Positive
    } else if compound <= -0.05 {
        SentimentLabel::Negative
    } else {
        SentimentLabel::Neutral
    };
    SentimentScore { compound, label }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn lex(pairs: &[(&str, f64)]) -> SentimentLexicon {
        SentimentLexicon::new(pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect(), 15.0).unwrap()
    }

    #[test]
    fn no_lexicon_tokens_is_neutral() {
        let s = sentiment("The table stands there", &SentimentLexicon::bundled());
        assert_eq!(s.compound, 0.0);
        assert_eq!(s.label, SentimentLabel::Neutral);
    }

    #[test]
    fn single_token_formula() {
        let v = 1.9;
        let s = sentiment("good", &lex(&[("good", v)]));
        assert!((s.compound - v / (v * v + 15.0f64).sqrt()).abs() < 1e-15);
        assert_eq!(s.label, SentimentLabel::Positive);
    }

    #[test]
    fn negation_flips() {
        let l = SentimentLexicon::bundled();
        let a = sentiment("good", &l).compound;
        let b = sentiment("not good", &l).compound;
        assert!(a > 0.0 && b < 0.0);
        assert!((a + b).abs() < 1e-15);
    }

    #[test]
    fn band_edges() {
        // s / sqrt(s^2 + 15) = 0.05 exactly for s = 0.05 * sqrt(15 / (1 - 0.0025))
        let l = lex(&[("meh", 0.1), ("bleh", -0.1)]);
        assert_eq!(sentiment("meh", &l).label, SentimentLabel::Neutral);
        assert_eq!(sentiment("bleh", &l).label, SentimentLabel::Neutral);
        let l = lex(&[("ok", 0.2), ("nah", -0.2)]);
        assert_eq!(sentiment("ok", &l).label, SentimentLabel::Positive);
        assert_eq!(sentiment("nah", &l).label, SentimentLabel::Negative);
    }

    #[test]
    fn rejects_bad_lexicons() {
        assert!(SentimentLexicon::new(HashMap::new(), 15.0).is_err());
        assert!(SentimentLexicon::new([("x".to_string(), f64::NAN)].into(), 15.0).is_err());
        assert!(matches!(
            SentimentLexicon::from_tsv("good\tx"),
            Err(QualityError::InvalidLexicon { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn compound_bounded(vals in proptest::collection::vec(-4.0f64..4.0, 1..30)) {
            let pairs: Vec<(String, f64)> = vals.iter().enumerate().map(|(i, v)| (format!("w{i}"), *v)).collect();
            let l = SentimentLexicon::new(pairs.iter().cloned().collect(), 15.0).unwrap();
            let text = pairs.iter().map(|(k, _)| k.as_str()).collect::<Vec<_>>().join(" ");
            let s = sentiment(&text, &l);
            prop_assert!(s.compound > -1.0 && s.compound < 1.0);
            let expected = if s.compound >= 0.05 { SentimentLabel::Positive }
                else if s.compound <= -0.05 { SentimentLabel::Negative }
                else { SentimentLabel::Neutral };
            prop_assert_eq!(s.label, expected);
        }
    }
}
