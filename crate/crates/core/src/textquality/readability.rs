use super::{tokenize, QualityError};

/// Splits on runs of `.`, `!` or `?` followed by whitespace or end of text.
/// Segments without any word are dropped.
pub fn split_sentences(text: &str) -> Vec<&str> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut iter = text.char_indices().peekable();
    while let Some((i, c)) = iter.next() {
        if !matches!(c, '.' | '!' | '?') {
            continue;
        }
        let mut end = i + c.len_utf8();
        while let Some(&(j, n)) = iter.peek() {
            if matches!(n, '.' | '!' | '?') {
                end = j + n.len_utf8();
                iter.next();
            } else {
                break;
            }
        }
        let boundary = match iter.peek() {
            None => true,
            Some(&(_, n)) => n.is_whitespace(),
        };
        if boundary {
            out.push(&text[start..end]);
            start = end;
        }
    }
    out.push(&text[start..]);
    out.into_iter()
        .map(str::trim)
        .filter(|s| !tokenize(s).is_empty())
        .collect()
}

/// Vowel-group syllable heuristic: maximal runs of a, e, i, o, u, y, minus a
/// trailing silent `e` (a lone final `e` after a consonant) unless that would
/// leave zero. Never less than one.
pub fn syllable_count(word: &str) -> usize {
    let letters: Vec<char> = word
        .chars()
        .filter(|c| c.is_alphabetic())
        .flat_map(char::to_lowercase)
        .collect();
    let is_vowel = |c: char| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y');
    let mut runs = 0;
    let mut prev_vowel = false;
    for &c in &letters {
        let v = is_vowel(c);
        if v && !prev_vowel {
            runs += 1;
        }
        prev_vowel = v;
    }
    let n = letters.len();
    if n >= 2 && letters[n - 1] == 'e' && !is_vowel(letters[n - 2]) && runs > 1 {
        runs -= 1;
    }
    runs.max(1)
}

struct Counts {
    words: usize,
    sentences: usize,
    complex: usize,
    letters: usize,
}

fn counts(text: &str) -> Result<Counts, QualityError> {
    let words = tokenize(text);
    if words.is_empty() {
        return Err(QualityError::EmptyText);
    }
    Ok(Counts {
        sentences: split_sentences(text).len().max(1),
        complex: words.iter().filter(|w| syllable_count(w) >= 3).count(),
        letters: text.chars().filter(|c| c.is_alphanumeric()).count(),
        words: words.len(),
    })
}

/// Gunning Fog index: `0.4 * (words/sentences + 100 * complex/words)`, where
/// complex words have three or more syllables.
pub fn gunning_fog(text: &str) -> Result<f64, QualityError> {
    let c = counts(text)?;
    let words = c.words as f64;
    Ok(0.4 * (words / c.sentences as f64 + 100.0 * c.complex as f64 / words))
}

/// Automated Readability Index:
/// `4.71 * letters/words + 0.5 * words/sentences - 21.43`.
pub fn ari(text: &str) -> Result<f64, QualityError> {
    let c = counts(text)?;
    let words = c.words as f64;
    Ok(4.71 * (c.letters as f64 / words) + 0.5 * (words / c.sentences as f64) - 21.43)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn syllables() {
        assert_eq!(syllable_count("cat"), 1);
        assert_eq!(syllable_count("beautiful"), 3);
        assert_eq!(syllable_count("the"), 1);
        assert_eq!(syllable_count("make"), 1);
        assert_eq!(syllable_count("agree"), 2);
        assert_eq!(syllable_count("rhythm"), 1);
        assert_eq!(syllable_count("2023"), 1);
        assert_eq!(syllable_count("vaccination"), 4);
    }

    #[test]
    fn sentence_splitting() {
        assert_eq!(split_sentences("The cat sat."), ["The cat sat."]);
        assert_eq!(split_sentences("One. Two!  Three?"), ["One.", "Two!", "Three?"]);
        assert_eq!(split_sentences("Wait... what"), ["Wait...", "what"]);
        assert_eq!(split_sentences("v1.2 is out"), ["v1.2 is out"]);
        assert!(split_sentences("...").is_empty());
    }

    #[test]
    fn fog_examples() {
        assert!((gunning_fog("The cat sat.").unwrap() - 1.2).abs() < 1e-12);
        let ten = "a b c d e f g h i j.";
        assert!((gunning_fog(ten).unwrap() - 4.0).abs() < 1e-12);
        assert_eq!(gunning_fog("  ").unwrap_err(), QualityError::EmptyText);
    }

    #[test]
    fn ari_examples() {
        assert!((ari("The cat sat.").unwrap() - (-5.8)).abs() < 0.01);
        assert!((ari("hello").unwrap() - 2.62).abs() < 0.01);
        assert_eq!(ari("").unwrap_err(), QualityError::EmptyText);
    }

    #[test]
    fn doubling_letters_scales_first_term() {
        let a = ari("The cat sat.").unwrap();
        let b = ari("Thth caca ssat.").unwrap();
        // 9 letters -> 12 letters over 3 words
        assert!((b - a - 4.71 * (12.0 - 9.0) / 3.0).abs() < 1e-12);
        let c = ari("TheThe catcat satsat.").unwrap();
        assert!((c - a - 4.71 * 3.0).abs() < 1e-12);
    }
}
