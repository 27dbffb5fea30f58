//! Deterministic text normalization shared by every length and overlap computation.
//!
//! Stored texts are never rewritten. Derived counts use NFC normalization plus
//! lowercasing followed by whitespace splitting; overlap metrics additionally
//! strip leading and trailing punctuation from each token.

use unicode_normalization::UnicodeNormalization;

/// Abbreviations that never end a sentence.
pub const DEFAULT_ABBREVIATIONS: &[&str] = &[
    "e.g.", "i.e.", "al.", "dr.", "fig.", "figs.", "vs.", "approx.", "no.", "mr.", "mrs.", "ms.",
    "st.", "etc.", "eq.", "ref.", "refs.",
];

pub fn nfc(text: &str) -> String {
    text.nfc().collect()
}

/// NFC, lowercase, whitespace split. Used for all length accounting.
pub fn whitespace_tokens(text: &str) -> Vec<String> {
    nfc(text)
        .to_lowercase()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

pub fn token_count(text: &str) -> usize {
    nfc(text).split_whitespace().count()
}

/// Tokens used by ROUGE, BLEU, fragment and alignment computations.
pub fn metric_tokens(text: &str) -> Vec<String> {
    whitespace_tokens(text)
        .into_iter()
        .filter_map(|tok| {
            let trimmed = tok.trim_matches(|c: char| !c.is_alphanumeric());
            if trimmed.is_empty() {
                None
            } else {
                Some(trimmed.to_owned())
            }
        })
        .collect()
}

/// Collapses every whitespace run to a single space and trims the ends.
pub fn normalize_whitespace(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Byte offset of the `idx`-th char, `len` when `idx` equals the char count.
pub fn char_to_byte(text: &str, idx: usize) -> Option<usize> {
    if idx == 0 {
        return Some(0);
    }
    let mut count = 0;
    for (byte, _) in text.char_indices() {
        if count == idx {
            return Some(byte);
        }
        count += 1;
    }
    if count == idx {
        Some(text.len())
    } else {
        None
    }
}

pub fn char_len(text: &str) -> usize {
    text.chars().count()
}

/// Slice by char offsets.
pub fn char_slice(text: &str, start: usize, end: usize) -> Option<&str> {
    if start > end {
        return None;
    }
    let b0 = char_to_byte(text, start)?;
    let b1 = char_to_byte(text, end)?;
    Some(&text[b0..b1])
}

/// Splits on `.`, `?` or `!` followed by whitespace and then an uppercase
/// letter or a digit, unless the token ending at the mark is an abbreviation.
pub fn split_sentences(text: &str, abbreviations: &[&str]) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut sentences = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        if matches!(c, '.' | '?' | '!') && i + 1 < chars.len() && chars[i + 1].is_whitespace() {
            let mut j = i + 1;
            while j < chars.len() && chars[j].is_whitespace() {
                j += 1;
            }
            let opens = j < chars.len() && (chars[j].is_uppercase() || chars[j].is_ascii_digit());
            if opens && !ends_with_abbreviation(&chars[start..=i], abbreviations) {
                push_trimmed(&mut sentences, &chars[start..=i]);
                start = j;
                i = j;
                continue;
            }
        }
        i += 1;
    }
    if start < chars.len() {
        push_trimmed(&mut sentences, &chars[start..]);
    }
    sentences
}

fn ends_with_abbreviation(chars: &[char], abbreviations: &[&str]) -> bool {
    let tail_start = chars
        .iter()
        .rposition(|c| c.is_whitespace())
        .map_or(0, |p| p + 1);
    let last: String = chars[tail_start..].iter().collect::<String>().to_lowercase();
    abbreviations.iter().any(|a| a.eq_ignore_ascii_case(&last))
}

fn push_trimmed(out: &mut Vec<String>, chars: &[char]) {
    let s: String = chars.iter().collect();
    let s = s.trim();
    if !s.is_empty() {
        out.push(s.to_owned());
    }
}
