use std::ops::Range;

use crate::text;

/// Extractive fragments shared verbatim between a source and a summary.
#[derive(Clone, Debug, PartialEq)]
pub struct FragmentSet {
    /// Token ranges in the summary, non-overlapping and increasing.
    pub fragments: Vec<Range<usize>>,
    pub summary_len: usize,
    /// Sum of fragment lengths.
    pub covered: usize,
    /// Sum of squared fragment lengths.
    pub squared: usize,
    pub coverage: f64,
    pub density: f64,
}

/// Greedy longest-match fragment extraction over metric tokens.
///
/// At each summary position the longest run that also occurs in the source is
/// taken as a fragment and the scan jumps past it; positions with no match
/// advance by one.
pub fn extractive_fragments(source: &str, summary: &str) -> FragmentSet {
    let src = text::metric_tokens(source);
    let summ = text::metric_tokens(summary);
    fragments_tokens(&src, &summ)
}

pub fn fragments_tokens(source: &[String], summary: &[String]) -> FragmentSet {
    let mut fragments = Vec::new();
    let mut i = 0;
    while i < summary.len() {
        let mut best = 0;
        for j in 0..source.len() {
            if summary[i] == source[j] {
                let mut k = 0;
                while i + k < summary.len() && j + k < source.len() && summary[i + k] == source[j + k] {
                    k += 1;
                }
                best = best.max(k);
            }
        }
        if best > 0 {
            fragments.push(i..i + best);
            i += best;
        } else {
            i += 1;
        }
    }
    let covered: usize = fragments.iter().map(|f| f.len()).sum();
    let squared: usize = fragments.iter().map(|f| f.len() * f.len()).sum();
    let n = summary.len();
    let ratio = |x: usize| if n == 0 { 0.0 } else { x as f64 / n as f64 };
    FragmentSet {
        fragments,
        summary_len: n,
        covered,
        squared,
        coverage: ratio(covered),
        density: ratio(squared),
    }
}
