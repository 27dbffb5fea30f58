//! Set statistics and correlate analyses: margin gap, self-BLEU diversity,
//! likelihood gap, pre-calibration score and run-level correlations.

mod bleu;
mod correlation;

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{bleu, bleu_matrix, bleu_tokens, inverse_self_bleu, mean_offdiagonal, self_bleu, MAX_ORDER};
pub use correlation::{average_ranks, pearson, precalibration_score, spearman, Spearman};

use crate::metrics::extractive_fragments;
use crate::model::{Candidate, CandidatePool, PoolKind, SelectedSet, SetMembers, ValidationError};
use crate::selection::StrategyId;
use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("{what}: need at least {need}, got {got}")]
    TooFew { what: &'static str, need: usize, got: usize },
    #[error("inputs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("constant input has no pearson correlation")]
    Constant,
    #[error("non-finite input")]
    NonFinite,
    #[error("candidate {id} lacks {field}")]
    Missing { id: String, field: &'static str },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean adjacent difference of the descending-sorted values, `(max - min) / (k - 1)`.
pub fn margin_gap(values: &[f64]) -> Result<f64> {
    if values.len() < 2 {
        return Err(AnalysisError::TooFew { what: "margin_gap values", need: 2, got: values.len() });
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((max - min) / (values.len() - 1) as f64)
}

/// Mean positive log-likelihood minus mean negative log-likelihood.
pub fn likelihood_gap(positives: &[f64], negatives: &[f64]) -> Result<f64> {
    if positives.is_empty() || negatives.is_empty() {
        return Err(AnalysisError::TooFew {
            what: "likelihood_gap groups",
            need: 1,
            got: positives.len().min(negatives.len()),
        });
    }
    Ok(mean(positives) - mean(negatives))
}

/// The five aspects of one calibration set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetStatistics {
    pub example_id: String,
    pub strategy: StrategyId,
    pub mean_quality: f64,
    pub margin_gap: f64,
    pub inverse_self_bleu: f64,
    pub likelihood_gap: Option<f64>,
    pub mean_length_tokens: f64,
    pub mean_extractive_density: f64,
    pub precalibration_score: Option<f64>,
}

impl SetStatistics {
    /// The statistic columns by name, absent ones skipped.
    pub fn columns(&self) -> BTreeMap<&'static str, f64> {
        let mut out = BTreeMap::from([
            ("mean_quality", self.mean_quality),
            ("margin_gap", self.margin_gap),
            ("inverse_self_bleu", self.inverse_self_bleu),
            ("mean_length_tokens", self.mean_length_tokens),
            ("mean_extractive_density", self.mean_extractive_density),
        ]);
        if let Some(v) = self.likelihood_gap {
            out.insert("likelihood_gap", v);
        }
        if let Some(v) = self.precalibration_score {
            out.insert("precalibration_score", v);
        }
        out
    }
}

fn quality(c: &Candidate, kind: PoolKind) -> Result<f64> {
    let (v, field) = match kind {
        PoolKind::Relevance => (c.scores.rel_agg, "rel_agg"),
        PoolKind::Faithfulness => (c.scores.faith_agg, "faith_agg"),
    };
    v.ok_or_else(|| AnalysisError::Missing { id: c.candidate_id.clone(), field })
}

fn diversity(members: &[&Candidate]) -> Option<f64> {
    let texts: Vec<&str> = members.iter().map(|c| c.text.as_str()).collect();
    inverse_self_bleu(&texts).ok()
}

/// Computes every statistic for a set drawn from `pool`.
///
/// Faithfulness sets take diversity within positives and within negatives,
/// then average the two; relevance sets have no likelihood gap, and
/// faithfulness sets no pre-calibration score.
pub fn set_statistics(set: &SelectedSet, pool: &CandidatePool) -> Result<SetStatistics> {
    set.validate_against(pool)?;
    let find = |id: &str| pool.get(id).expect("validated membership");
    let members: Vec<&Candidate> = set.members.ids().into_iter().map(find).collect();
    let kind = pool.pool_kind;
    let q: Vec<f64> = members.iter().map(|c| quality(c, kind)).collect::<Result<_>>()?;
    let lengths: Vec<f64> = members.iter().map(|c| text::token_count(&c.text) as f64).collect();
    let densities: Vec<f64> = members
        .iter()
        .map(|c| {
            c.scores
                .extractive_density
                .unwrap_or_else(|| extractive_fragments(&pool.example.source_text, &c.text).density)
        })
        .collect();

    let (margin, inverse_self_bleu, likelihood, precalibration) = match &set.members {
        SetMembers::Relevance { .. } => {
            let margin = if q.len() >= 2 { margin_gap(&q)? } else { 0.0 };
            let ranks: Option<Vec<f64>> = members.iter().map(|c| c.beam_rank.map(f64::from)).collect();
            let pre = match ranks {
                Some(r) if r.len() >= 2 => Some(precalibration_score(&r, &q)?),
                _ => None,
            };
            (margin, diversity(&members).unwrap_or(0.0), None, pre)
        }
        SetMembers::Faithfulness { positives, negatives } => {
            let pos: Vec<&Candidate> = positives.iter().map(|id| find(id)).collect();
            let neg: Vec<&Candidate> = negatives.iter().map(|id| find(id)).collect();
            let qp: Vec<f64> = pos.iter().map(|c| quality(c, kind)).collect::<Result<_>>()?;
            let qn: Vec<f64> = neg.iter().map(|c| quality(c, kind)).collect::<Result<_>>()?;
            let groups: Vec<f64> = [diversity(&pos), diversity(&neg)].into_iter().flatten().collect();
            let div = if groups.is_empty() { 0.0 } else { mean(&groups) };
            let ll = |cs: &[&Candidate]| cs.iter().map(|c| c.mean_token_loglik()).collect::<Option<Vec<f64>>>();
            let gap = match (ll(&pos), ll(&neg)) {
                (Some(p), Some(n)) => Some(likelihood_gap(&p, &n)?),
                _ => None,
            };
            (mean(&qp) - mean(&qn), div, gap, None)
        }
    };
    Ok(SetStatistics {
        example_id: set.example_id.clone(),
        strategy: set.strategy,
        mean_quality: mean(&q),
        margin_gap: margin,
        inverse_self_bleu,
        likelihood_gap: likelihood,
        mean_length_tokens: mean(&lengths),
        mean_extractive_density: mean(&densities),
        precalibration_score: precalibration,
    })
}

/// Column-wise means over many sets; a column absent from every set is omitted.
pub fn mean_statistics(stats: &[SetStatistics]) -> BTreeMap<String, f64> {
    let mut sums: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for s in stats {
        for (k, v) in s.columns() {
            let e = sums.entry(k).or_insert((0.0, 0));
            e.0 += v;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k.to_owned(), s / n as f64)).collect()
}

/// One calibration run: averaged set statistics and the downstream metric delta.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRow {
    pub label: String,
    pub statistics: BTreeMap<String, f64>,
    pub downstream: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationEntry {
    pub statistic: String,
    pub n: usize,
    pub pearson: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

/// Pearson correlation of each statistic column with the downstream column.
///
/// Columns missing from some runs use the runs that have them. Constant or
/// too-short columns are flagged and get no correlation.
pub fn correlate_runs(rows: &[RunRow]) -> Vec<CorrelationEntry> {
    let mut names: Vec<&String> = rows.iter().flat_map(|r| r.statistics.keys()).collect();
    names.sort();
    names.dedup();
    names
        .into_iter()
        .map(|name| {
            let (xs, ys): (Vec<f64>, Vec<f64>) = rows
                .iter()
                .filter_map(|r| r.statistics.get(name).map(|v| (*v, r.downstream)))
                .unzip();
            let (pearson, flag) = match pearson(&xs, &ys) {
                Ok(r) => (Some(r), None),
                Err(AnalysisError::Constant) => (None, Some("constant column".to_owned())),
                Err(AnalysisError::TooFew { .. }) => (None, Some("fewer than 2 runs".to_owned())),
                Err(e) => (None, Some(e.to_string())),
            };
            CorrelationEntry { statistic: name.clone(), n: xs.len(), pearson, flag }
        })
        .collect()
}

fn table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(String::len).collect();
    for r in rows {
        for (w, cell) in widths.iter_mut().zip(r) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[String]| {
        let parts: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(&mut out, header);
    line(&mut out, &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>());
    for r in rows {
        line(&mut out, r);
    }
    out
}

/// Aligned plain-text tables: per-run statistics, then correlations.
pub fn render_report(rows: &[RunRow], entries: &[CorrelationEntry]) -> String {
    let columns: Vec<String> = entries.iter().map(|e| e.statistic.clone()).collect();
    let mut header = vec!["run".to_owned()];
    header.extend(columns.iter().cloned());
    header.push("downstream".to_owned());
    let run_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.label.clone()];
            cells.extend(
                columns
                    .iter()
                    .map(|c| r.statistics.get(c).map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))),
            );
            cells.push(format!("{:.4}", r.downstream));
            cells
        })
        .collect();
    let corr_rows: Vec<Vec<String>> = entries
        .iter()
        .map(|e| {
            vec![
                e.statistic.clone(),
                e.n.to_string(),
                e.pearson.map_or_else(|| "-".to_owned(), |v| format!("{v:.4}")),
                e.flag.clone().unwrap_or_default(),
            ]
        })
        .collect();
    let corr_header: Vec<String> = ["statistic", "n", "pearson", "flag"].map(str::to_owned).to_vec();
    format!("{}\n{}", table(&header, &run_rows), table(&corr_header, &corr_rows))
}

/// Per-run statistics table without a downstream column.
pub fn render_statistics(rows: &[RunRow]) -> String {
    let mut columns: Vec<&String> = rows.iter().flat_map(|r| r.statistics.keys()).collect();
    columns.sort();
    columns.dedup();
    let mut header = vec!["run".to_owned()];
    header.extend(columns.iter().map(|c| c.to_string()));
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            let mut cells = vec![r.label.clone()];
            cells.extend(
                columns
                    .iter()
                    .map(|c| r.statistics.get(*c).map_or_else(|| "-".to_owned(), |v| format!("{v:.4}"))),
            );
            cells
        })
        .collect();
    table(&header, &body)
}
