//! Native overlap and extractiveness metrics, client-backed neural metrics,
//! and z-normalized aggregation.

mod align;
mod fragments;
mod normalize;
mod rouge;

use thiserror::Error;

pub use align::{greedy_align, greedy_align_tokens};
pub use fragments::{extractive_fragments, fragments_tokens, FragmentSet};
pub use normalize::{aggregate, apply_aggregates, fit_stats, normalize, AggregateWeights};
pub use rouge::{rouge_l, rouge_n, rouge_n_tokens, RougeScore};

use crate::clients::{Client, ClientError, ScoreKind};
use crate::model::{CandidatePool, Metric};
use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricError {
    #[error("n-gram order must be >= 1, got {0}")]
    InvalidOrder(usize),
    #[error("stddev must be > 0, got {0}")]
    NonPositiveStddev(f64),
    #[error("missing member metric {0}")]
    MissingMember(Metric),
    #[error("no normalization stats for {0}")]
    MissingStats(Metric),
    #[error("invalid aggregate weights: {0}")]
    Weights(String),
    #[error("no sentences in summary")]
    NoSentences,
    #[error("token log-probabilities must be non-empty and <= 0")]
    BadLogprobs,
    #[error(transparent)]
    Client(#[from] ClientError),
}

pub type Result<T> = std::result::Result<T, MetricError>;

/// Mean of per-token log-probabilities.
pub fn avg_token_loglik(token_logprobs: &[f64]) -> Result<f64> {
    if token_logprobs.is_empty() || token_logprobs.iter().any(|v| !(*v <= 0.0)) {
        return Err(MetricError::BadLogprobs);
    }
    Ok(token_logprobs.iter().sum::<f64>() / token_logprobs.len() as f64)
}

/// Sentence alignment options for FactScore.
#[derive(Clone, Debug)]
pub struct AlignOptions {
    pub max_aligned: usize,
    pub abbreviations: Vec<String>,
}

impl Default for AlignOptions {
    fn default() -> Self {
        AlignOptions {
            max_aligned: 5,
            abbreviations: text::DEFAULT_ABBREVIATIONS.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl AlignOptions {
    fn split(&self, summary: &str) -> Vec<String> {
        let abbr: Vec<&str> = self.abbreviations.iter().map(String::as_str).collect();
        text::split_sentences(summary, &abbr)
    }
}

/// Mean SUPPORTED probability over summary sentences, each checked against its
/// greedily aligned source sentences.
pub fn fact_score(summary: &str, source_sentences: &[String], client: &Client, opts: &AlignOptions) -> Result<f64> {
    Ok(fact_scores(&[summary], source_sentences, client, opts)?[0])
}

/// [`fact_score`] for many summaries over one source with a single service call.
pub fn fact_scores(
    summaries: &[&str],
    source_sentences: &[String],
    client: &Client,
    opts: &AlignOptions,
) -> Result<Vec<f64>> {
    let source_tokens: Vec<Vec<String>> = source_sentences.iter().map(|s| text::metric_tokens(s)).collect();
    let mut pairs = Vec::new();
    let mut owners = Vec::new();
    for (owner, summary) in summaries.iter().enumerate() {
        let sentences = opts.split(summary);
        if sentences.is_empty() {
            return Err(MetricError::NoSentences);
        }
        for sentence in sentences {
            let mut aligned = greedy_align_tokens(&text::metric_tokens(&sentence), &source_tokens, opts.max_aligned);
            aligned.sort_unstable();
            let premise = aligned
                .iter()
                .map(|&i| source_sentences[i].as_str())
                .collect::<Vec<_>>()
                .join(" ");
            pairs.push((premise, sentence));
            owners.push(owner);
        }
    }
    let probs = client.score_pairs(ScoreKind::EntailmentSupported, &pairs)?;
    let mut sums = vec![(0.0, 0usize); summaries.len()];
    for (owner, p) in owners.into_iter().zip(probs) {
        sums[owner].0 += p;
        sums[owner].1 += 1;
    }
    Ok(sums.into_iter().map(|(s, n)| s / n as f64).collect())
}

/// Which service-backed metrics `score_pool` requests when absent.
#[derive(Clone, Debug)]
pub struct ScoreOptions {
    pub align: AlignOptions,
    pub service_metrics: bool,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions { align: AlignOptions::default(), service_metrics: true }
    }
}

/// Fills every metric of every candidate in the pool.
///
/// ROUGE, extractive fragments and token counts are always recomputed.
/// Embedding similarity, sequence log-likelihood and FactScore are fetched
/// in one batch per metric, only for candidates that lack them.
pub fn score_pool(pool: &mut CandidatePool, client: &Client, opts: &ScoreOptions) -> Result<()> {
    let reference = pool.example.reference_text.clone();
    let source = pool.example.source_text.clone();
    let ref_tokens = text::metric_tokens(&reference);
    let src_tokens = text::metric_tokens(&source);
    for c in &mut pool.candidates {
        let toks = text::metric_tokens(&c.text);
        c.scores.n_tokens = text::token_count(&c.text);
        c.scores.rouge1_f1 = Some(rouge_n_tokens(&toks, &ref_tokens, 1)?.f1);
        c.scores.rouge2_f1 = Some(rouge_n_tokens(&toks, &ref_tokens, 2)?.f1);
        let frags = fragments_tokens(&src_tokens, &toks);
        c.scores.extractive_density = Some(frags.density);
        c.scores.extractive_coverage = Some(frags.coverage);
    }
    if !opts.service_metrics || pool.candidates.is_empty() {
        return Ok(());
    }

    let simple = [
        (Metric::BertscoreRef, ScoreKind::EmbedSimRef),
        (Metric::BertscoreSrc, ScoreKind::EmbedSimSrc),
        (Metric::Bartscore, ScoreKind::SeqLoglik),
    ];
    for (metric, kind) in simple {
        let todo: Vec<usize> = (0..pool.candidates.len())
            .filter(|&i| pool.candidates[i].scores.get(metric).is_none())
            .collect();
        if todo.is_empty() {
            continue;
        }
        let pairs: Vec<(String, String)> = todo
            .iter()
            .map(|&i| {
                let cand = pool.candidates[i].text.clone();
                match kind {
                    ScoreKind::EmbedSimRef => (cand, reference.clone()),
                    ScoreKind::EmbedSimSrc => (cand, source.clone()),
                    _ => (source.clone(), cand),
                }
            })
            .collect();
        let values = client.score_pairs(kind, &pairs)?;
        for (i, v) in todo.into_iter().zip(values) {
            pool.candidates[i].scores.set(metric, v);
        }
    }

    let todo: Vec<usize> = (0..pool.candidates.len())
        .filter(|&i| pool.candidates[i].scores.factscore.is_none())
        .collect();
    if !todo.is_empty() {
        let texts: Vec<&str> = todo.iter().map(|&i| pool.candidates[i].text.as_str()).collect();
        let values = fact_scores(&texts, &pool.example.source_sentences, client, &opts.align)?;
        for (i, v) in todo.into_iter().zip(values) {
            pool.candidates[i].scores.factscore = Some(v);
        }
    }
    Ok(())
}
