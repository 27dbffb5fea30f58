use super::rouge::{clipped_overlap, ngram_counts};
use crate::text;

/// Greedily aligns a summary sentence to at most `max_k` source sentences.
///
/// Each step adds the sentence with the largest gain in ROUGE-1 recall of the
/// aligned concatenation against the summary sentence; ties go to the lower
/// index. The first pick is unconditional, later picks need a positive gain.
/// Returns indices in pick order. An empty `source_sentences` yields an empty list.
pub fn greedy_align(summary_sentence: &str, source_sentences: &[String], max_k: usize) -> Vec<usize> {
    let target = text::metric_tokens(summary_sentence);
    let sources: Vec<Vec<String>> = source_sentences.iter().map(|s| text::metric_tokens(s)).collect();
    greedy_align_tokens(&target, &sources, max_k)
}

pub fn greedy_align_tokens(target: &[String], sources: &[Vec<String>], max_k: usize) -> Vec<usize> {
    let target_counts = ngram_counts(target, 1);
    let mut chosen: Vec<usize> = Vec::new();
    let mut pooled: Vec<String> = Vec::new();
    let mut current = 0usize;
    while chosen.len() < max_k.max(1) {
        let mut best: Option<(usize, usize)> = None;
        for (idx, sent) in sources.iter().enumerate() {
            if chosen.contains(&idx) {
                continue;
            }
            let mut grown = pooled.clone();
            grown.extend(sent.iter().cloned());
            let overlap = clipped_overlap(&ngram_counts(&grown, 1), &target_counts);
            if best.map_or(true, |(_, b)| overlap > b) {
                best = Some((idx, overlap));
            }
        }
        let Some((idx, overlap)) = best else { break };
        if !chosen.is_empty() && overlap <= current {
            break;
        }
        chosen.push(idx);
        pooled.extend(sources[idx].iter().cloned());
        current = overlap;
    }
    chosen
}
