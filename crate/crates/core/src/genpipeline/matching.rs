use std::cell::RefCell;
use std::collections::HashMap;

use regex::{Regex, RegexBuilder};

/// Compiled matchers are reused per thread; the map is cleared when it
/// reaches this size.
const CACHE_LIMIT: usize = 4096;

thread_local! {
    static CACHE: RefCell<HashMap<String, TermMatcher>> = RefCell::new(HashMap::new());
}

fn cached(term: &str) -> TermMatcher {
    CACHE.with(|c| {
        let mut c = c.borrow_mut();
        if let Some(m) = c.get(term) {
            return m.clone();
        }
        if c.len() >= CACHE_LIMIT {
            c.clear();
        }
        let m = TermMatcher::new(term);
        c.insert(term.to_string(), m.clone());
        m
    })
}

fn is_word(c: char) -> bool {
    c.is_alphanumeric() || c == '_'
}

/// Whole-word, case-insensitive matcher for one phrase. The words of a
/// multi-word phrase may be separated by whitespace or hyphens in the text.
#[derive(Debug, Clone)]
pub struct TermMatcher {
    regex: Option<Regex>,
}

impl TermMatcher {
    pub fn new(term: &str) -> Self {
        let pieces: Vec<String> = term
            .split(|c: char| c.is_whitespace() || c == '-')
            .filter(|p| !p.is_empty())
            .map(regex::escape)
            .collect();
        if pieces.is_empty() {
            return TermMatcher { regex: None };
        }
        let trimmed = term.trim_matches(|c: char| c.is_whitespace() || c == '-');
        let lead = if trimmed.starts_with(is_word) { r"\b" } else { "" };
        let tail = if trimmed.ends_with(is_word) { r"\b" } else { "" };
        let pattern = format!("{lead}{}{tail}", pieces.join(r"[\s\-]+"));
        let regex = RegexBuilder::new(&pattern)
            .case_insensitive(true)
            .build()
            .expect("escaped term compiles");
        TermMatcher { regex: Some(regex) }
    }

    pub fn is_match(&self, text: &str) -> bool {
        self.regex.as_ref().is_some_and(|r| r.is_match(text))
    }

    /// Replaces every occurrence, adapting the replacement's case to the
    /// matched text. Returns `None` when nothing matched.
    pub fn replace_all(&self, text: &str, replacement: &str) -> Option<String> {
        let regex = self.regex.as_ref()?;
        if !regex.is_match(text) {
            return None;
        }
        Some(
            regex
                .replace_all(text, |caps: &regex::Captures<'_>| {
                    match_case(&caps[0], replacement)
                })
                .into_owned(),
        )
    }
}

fn match_case(matched: &str, replacement: &str) -> String {
    let letters: Vec<char> = matched.chars().filter(|c| c.is_alphabetic()).collect();
    if letters.len() > 1 && letters.iter().all(|c| c.is_uppercase()) {
        return replacement.to_uppercase();
    }
    if letters.first().is_some_and(|c| c.is_uppercase()) {
        let mut chars = replacement.chars();
        if let Some(first) = chars.next() {
            return first.to_uppercase().chain(chars).collect();
        }
    }
    replacement.to_string()
}

/// True iff every phrase occurs in `sentence` as a whole-word match.
pub fn contains_terms<S: AsRef<str>>(sentence: &str, terms: &[S]) -> bool {
    terms
        .iter()
        .all(|t| cached(t.as_ref()).is_match(sentence))
}

/// Case-preserving whole-word replacement of `term` by `replacement`.
pub fn replace_term(sentence: &str, term: &str, replacement: &str) -> Option<String> {
    cached(term).replace_all(sentence, replacement)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn containment_examples() {
        assert!(contains_terms("His love for science knows no bounds", &["his", "science"]));
        assert!(contains_terms(
            "The doctor was ready to perform-vaccination of a neonate",
            &["neonate", "perform vaccination"]
        ));
        assert!(!contains_terms("Advances in sciences", &["science"]));
    }

    #[test]
    fn hyphen_and_space_are_interchangeable() {
        assert!(contains_terms("a grown up decision", &["grown-up"]));
        assert!(contains_terms("good decision making", &["decision-making"]));
        assert!(contains_terms("slowed  down vaccination", &["slowed down vaccination"]));
    }

    #[test]
    fn word_boundaries() {
        assert!(!contains_terms("Theme park", &["he"]));
        assert!(contains_terms("He said so.", &["he"]));
        assert!(contains_terms("my brother's car", &["brother"]));
        assert!(!contains_terms("anything", &[""]));
        assert!(contains_terms::<&str>("vacuous", &[]));
        assert!(contains_terms("call 911 now", &["911"]));
    }

    #[test]
    fn regex_metacharacters_are_literal() {
        assert!(contains_terms("I like C++ a lot", &["C++"]));
        assert!(!contains_terms("I like Cxx a lot", &["C.."]));
    }

    #[test]
    fn case_preserving_replace() {
        assert_eq!(replace_term("She excels in algebra.", "she", "he").unwrap(), "He excels in algebra.");
        assert_eq!(replace_term("SHE WON", "she", "he").unwrap(), "HE WON");
        assert_eq!(
            replace_term("My brother is fascinated by astronomy", "brother", "sister").unwrap(),
            "My sister is fascinated by astronomy"
        );
        assert_eq!(
            replace_term("The black patient arrived", "Black", "White").unwrap(),
            "The White patient arrived"
        );
        assert_eq!(replace_term("nothing here", "she", "he"), None);
        assert_eq!(
            replace_term("he said he would", "he", "she").unwrap(),
            "she said she would"
        );
    }
}
