use std::collections::HashMap;

use super::{MetricError, Result};
use crate::text;

/// Clipped n-gram overlap counts and the derived precision, recall and F1.
///
/// Each ratio is a single integer division, so values are correctly rounded.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RougeScore {
    pub overlap: usize,
    pub hypothesis_ngrams: usize,
    pub reference_ngrams: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn from_counts(overlap: usize, hyp: usize, reference: usize) -> Self {
        let ratio = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
        RougeScore {
            overlap,
            hypothesis_ngrams: hyp,
            reference_ngrams: reference,
            precision: ratio(overlap, hyp),
            recall: ratio(overlap, reference),
            // 2PR / (P + R) reduces to 2 * overlap / (hyp + ref).
            f1: ratio(2 * overlap, hyp + reference),
        }
    }
}

pub(crate) fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub(crate) fn clipped_overlap(a: &HashMap<&[String], usize>, b: &HashMap<&[String], usize>) -> usize {
    a.iter().map(|(g, c)| (*c).min(b.get(g).copied().unwrap_or(0))).sum()
}

/// ROUGE-N over pre-tokenized input.
pub fn rouge_n_tokens(hypothesis: &[String], reference: &[String], n: usize) -> Result<RougeScore> {
    if n == 0 {
        return Err(MetricError::InvalidOrder(n));
    }
    let h = ngram_counts(hypothesis, n);
    let r = ngram_counts(reference, n);
    let hyp_total = hypothesis.len().saturating_sub(n - 1);
    let ref_total = reference.len().saturating_sub(n - 1);
    Ok(RougeScore::from_counts(clipped_overlap(&h, &r), hyp_total, ref_total))
}

/// ROUGE-N with lowercase, NFC, punctuation-trimmed whitespace tokens and no stemming.
pub fn rouge_n(hypothesis: &str, reference: &str, n: usize) -> Result<RougeScore> {
    rouge_n_tokens(&text::metric_tokens(hypothesis), &text::metric_tokens(reference), n)
}

/// Longest-common-subsequence F1 (ROUGE-L, beta = 1). Not part of any aggregate.
pub fn rouge_l(hypothesis: &str, reference: &str) -> RougeScore {
    let h = text::metric_tokens(hypothesis);
    let r = text::metric_tokens(reference);
    let mut row = vec![0usize; r.len() + 1];
    for a in &h {
        let mut diag = 0;
        for (j, b) in r.iter().enumerate() {
            let up = row[j + 1];
            row[j + 1] = if a == b { diag + 1 } else { up.max(row[j]) };
            diag = up;
        }
    }
    RougeScore::from_counts(row[r.len()], h.len(), r.len())
}
