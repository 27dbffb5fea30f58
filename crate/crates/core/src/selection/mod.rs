//! Calibration-set selection: rank sets for relevance and positive/negative
//! contrast sets for faithfulness, one routine per catalog strategy.

mod catalog;
pub mod objectives;
mod subsets;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::*;
pub use subsets::{binomial, enumerate_k_subsets, optimize, Enumeration, LexSubsets};

use crate::analysis::bleu_matrix;
use crate::corruptions::derive_seed;
use crate::model::{AggregateKind, Candidate, CandidatePool, Polarity, PoolKind, SelectedSet, SetMembers};
use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SelectionError {
    #[error("example {example}: pool has {have} {what}, strategy {strategy} needs {need}")]
    PoolTooSmall { example: String, strategy: StrategyId, what: &'static str, have: usize, need: usize },
    #[error("strategy {strategy} requires {field} (candidate {candidate} lacks it)")]
    Missing { strategy: StrategyId, field: &'static str, candidate: String },
    #[error("strategy {strategy} is not defined for {kind} pools")]
    Unsupported { strategy: StrategyId, kind: PoolKind },
    #[error("cannot enumerate {k}-subsets of {n} items")]
    SubsetSize { n: usize, k: usize },
    #[error("invalid selection config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, SelectionError>;

fn default_strategy() -> StrategyId {
    StrategyId::new(Family::Random, Mode::Uniform)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub strategy: StrategyId,
    pub k_rank: usize,
    pub k_pos: usize,
    pub k_neg: usize,
    /// Ranking metric; defaults to the pool kind's aggregate.
    pub quality: Option<AggregateKind>,
    pub seed: u64,
    /// Largest subset count searched exhaustively.
    pub cap: usize,
    /// Beam strategies rank the beams of this generator only; `None` uses all.
    pub beam_generator: Option<String>,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            strategy: default_strategy(),
            k_rank: 4,
            k_pos: 2,
            k_neg: 2,
            quality: None,
            seed: 0,
            cap: 200_000,
            beam_generator: Some("primera".into()),
        }
    }
}

impl SelectionConfig {
    pub fn with_strategy(strategy: StrategyId) -> Self {
        SelectionConfig { strategy, ..Default::default() }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(SelectionError::Config(m.to_owned()));
        if self.k_rank < 2 {
            return bad("k_rank must be >= 2");
        }
        if self.k_pos < 1 || self.k_neg < 1 {
            return bad("k_pos and k_neg must be >= 1");
        }
        if self.cap < 1 {
            return bad("cap must be >= 1");
        }
        Ok(())
    }

    fn quality_for(&self, kind: PoolKind) -> AggregateKind {
        self.quality.unwrap_or(match kind {
            PoolKind::Relevance => AggregateKind::Rel,
            PoolKind::Faithfulness => AggregateKind::Faith,
        })
    }
}

/// Per-candidate value lookup that reports the first candidate lacking it.
struct Ctx<'a> {
    pool: &'a CandidatePool,
    /// Pool indices in candidate_id order.
    order: Vec<usize>,
    strategy: StrategyId,
}

impl<'a> Ctx<'a> {
    fn cand(&self, i: usize) -> &'a Candidate {
        &self.pool.candidates[self.order[i]]
    }

    fn values(&self, idx: &[usize], field: &'static str, get: impl Fn(&Candidate) -> Option<f64>) -> Result<Vec<f64>> {
        idx.iter()
            .map(|&i| {
                let c = self.cand(i);
                get(c).ok_or_else(|| SelectionError::Missing {
                    strategy: self.strategy,
                    field,
                    candidate: c.candidate_id.clone(),
                })
            })
            .collect()
    }

    fn aggregate(&self, idx: &[usize], which: AggregateKind) -> Result<Vec<f64>> {
        self.values(idx, which.field(), |c| c.scores.aggregate(which))
    }

    fn too_small(&self, what: &'static str, have: usize, need: usize) -> SelectionError {
        SelectionError::PoolTooSmall {
            example: self.pool.example.example_id.clone(),
            strategy: self.strategy,
            what,
            have,
            need,
        }
    }
}

/// Positions of `idx` sorted by value descending, ties by candidate_id.
fn by_value_desc(idx: &[usize], values: &[f64]) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..idx.len()).collect();
    pos.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(idx[a].cmp(&idx[b])));
    pos.into_iter().map(|p| idx[p]).collect()
}

fn top(idx: &[usize], values: &[f64], k: usize) -> Vec<usize> {
    by_value_desc(idx, values).into_iter().take(k).collect()
}

fn bottom(idx: &[usize], values: &[f64], k: usize) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..idx.len()).collect();
    pos.sort_by(|&a, &b| values[a].total_cmp(&values[b]).then(idx[a].cmp(&idx[b])));
    pos.into_iter().take(k).map(|p| idx[p]).collect()
}

/// The `k` values closest to `center`, ties by candidate_id.
fn closest(idx: &[usize], values: &[f64], center: f64, k: usize) -> Vec<usize> {
    let mut pos: Vec<usize> = (0..idx.len()).collect();
    pos.sort_by(|&a, &b| {
        (values[a] - center).abs().total_cmp(&(values[b] - center).abs()).then(idx[a].cmp(&idx[b]))
    });
    pos.into_iter().take(k).map(|p| idx[p]).collect()
}

fn sample(idx: &[usize], k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    rand::seq::index::sample(rng, idx.len(), k).into_iter().map(|p| idx[p]).collect()
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Selects a calibration set from a pool according to `config.strategy`.
///
/// Candidates are visited in candidate_id order, so the result does not
/// depend on pool order. Rank sets come back sorted by descending quality.
pub fn select(pool: &CandidatePool, config: &SelectionConfig) -> Result<SelectedSet> {
    config.validate()?;
    let strategy = config.strategy;
    let kind = pool.pool_kind;
    let beam_mode = matches!(strategy.mode, Mode::TopBeam | Mode::BottomBeam | Mode::ExtremeBeam);
    if kind == PoolKind::Faithfulness && beam_mode {
        return Err(SelectionError::Missing {
            strategy,
            field: "beam_rank",
            candidate: pool.candidates.first().map(|c| c.candidate_id.clone()).unwrap_or_default(),
        });
    }
    if !strategy.supports(kind) {
        return Err(SelectionError::Unsupported { strategy, kind });
    }
    let mut order: Vec<usize> = (0..pool.candidates.len()).collect();
    order.sort_by(|&a, &b| pool.candidates[a].candidate_id.cmp(&pool.candidates[b].candidate_id));
    let ctx = Ctx { pool, order, strategy };
    let seed = derive_seed(config.seed, &[&pool.example.example_id, &strategy.to_string()]);
    let quality = config.quality_for(kind);

    let (members, approximate) = match kind {
        PoolKind::Relevance => {
            let (chosen, approximate) = select_rank_set(&ctx, config, quality, seed)?;
            let q = ctx.aggregate(&chosen, quality)?;
            let ids = by_value_desc(&chosen, &q)
                .into_iter()
                .map(|i| ctx.cand(i).candidate_id.clone())
                .collect();
            (SetMembers::Relevance { rank_order: ids }, approximate)
        }
        PoolKind::Faithfulness => {
            let (pos, neg, approximate) = select_contrast_set(&ctx, config, quality, seed)?;
            let emit = |idx: Vec<usize>| -> Vec<String> {
                let sorted = match ctx.aggregate(&idx, quality) {
                    Ok(q) => by_value_desc(&idx, &q),
                    Err(_) => {
                        let mut idx = idx;
                        idx.sort_unstable();
                        idx
                    }
                };
                sorted.into_iter().map(|i| ctx.cand(i).candidate_id.clone()).collect()
            };
            (SetMembers::Faithfulness { positives: emit(pos), negatives: emit(neg) }, approximate)
        }
    };
    Ok(SelectedSet { example_id: pool.example.example_id.clone(), strategy, members, approximate })
}

fn select_rank_set(
    ctx: &Ctx<'_>,
    config: &SelectionConfig,
    quality: AggregateKind,
    seed: u64,
) -> Result<(Vec<usize>, bool)> {
    let n = ctx.order.len();
    let k = config.k_rank;
    if n < k {
        return Err(ctx.too_small("candidates", n, k));
    }
    let all: Vec<usize> = (0..n).collect();
    // Every rank set is emitted in quality order, so the metric must be present.
    let q = ctx.aggregate(&all, quality)?;
    let exact = |v: Vec<usize>| Ok((v, false));
    match (ctx.strategy.family, ctx.strategy.mode) {
        (Family::Random, _) => exact(sample(&all, k, &mut ChaCha8Rng::seed_from_u64(seed))),
        (Family::Quality, Mode::High) => exact(top(&all, &q, k)),
        (Family::Quality, Mode::Min) => exact(bottom(&all, &q, k)),
        (Family::Quality, Mode::Extreme) => {
            let mut v = top(&all, &q, k.div_ceil(2));
            v.extend(bottom(&all, &q, k / 2));
            exact(v)
        }
        (Family::Quality, Mode::Average) => exact(closest(&all, &q, mean(&q), k)),
        (Family::Margin, mode) => {
            let f = |s: &[usize]| objectives::rank_margin(&s.iter().map(|&i| q[i]).collect::<Vec<_>>());
            optimize(n, k, config.cap, seed, mode == Mode::Max, &f)
        }
        (Family::Diversity, mode) => {
            let texts: Vec<&str> = all.iter().map(|&i| ctx.cand(i).text.as_str()).collect();
            let m = bleu_matrix(&texts);
            let f = |s: &[usize]| objectives::diversity(&m, s);
            optimize(n, k, config.cap, seed, mode == Mode::Max, &f)
        }
        (Family::HybridCorr, _) => {
            let rel = ctx.aggregate(&all, AggregateKind::Rel)?;
            let faith = ctx.aggregate(&all, AggregateKind::Faith)?;
            let f = |s: &[usize]| {
                let xs: Vec<f64> = s.iter().map(|&i| rel[i]).collect();
                let ys: Vec<f64> = s.iter().map(|&i| faith[i]).collect();
                objectives::rank_correlation(&xs, &ys)
            };
            optimize(n, k, config.cap, seed, true, &f)
        }
        (Family::Likelihood, mode) => {
            let beams: Vec<usize> = all
                .iter()
                .copied()
                .filter(|&i| match &config.beam_generator {
                    Some(g) => ctx.cand(i).generator() == Some(g.as_str()),
                    None => true,
                })
                .collect();
            let ranks = ctx.values(&beams, "beam_rank", |c| c.beam_rank.map(f64::from))?;
            if beams.len() < k {
                return Err(ctx.too_small("beams", beams.len(), k));
            }
            // Best beam first: ascending rank, ties by candidate_id.
            let neg: Vec<f64> = ranks.iter().map(|r| -r).collect();
            let ordered = by_value_desc(&beams, &neg);
            let head = |m: usize| ordered[..m].to_vec();
            let tail = |m: usize| ordered[ordered.len() - m..].to_vec();
            exact(match mode {
                Mode::TopBeam => head(k),
                Mode::BottomBeam => tail(k),
                _ => {
                    let mut v = head(k.div_ceil(2));
                    v.extend(tail(k / 2));
                    v
                }
            })
        }
        (Family::Spurious, mode) => {
            let lengths: Vec<f64> = all.iter().map(|&i| text::token_count(&ctx.cand(i).text) as f64).collect();
            exact(if mode == Mode::MaxLength { top(&all, &lengths, k) } else { bottom(&all, &lengths, k) })
        }
        _ => Err(SelectionError::Unsupported { strategy: ctx.strategy, kind: PoolKind::Relevance }),
    }
}

fn select_contrast_set(
    ctx: &Ctx<'_>,
    config: &SelectionConfig,
    quality: AggregateKind,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>, bool)> {
    let hint = |p: Polarity| -> Vec<usize> {
        (0..ctx.order.len()).filter(|&i| ctx.cand(i).polarity_hint == p).collect()
    };
    let (p, n) = (hint(Polarity::Positive), hint(Polarity::Negative));
    let (kp, kn) = (config.k_pos, config.k_neg);
    if p.len() < kp {
        return Err(ctx.too_small("positives", p.len(), kp));
    }
    if n.len() < kn {
        return Err(ctx.too_small("negatives", n.len(), kn));
    }
    // `hi` picks the largest values among positives and the smallest among
    // negatives; `lo` the reverse.
    let split = |values_p: &[f64], values_n: &[f64], hi: bool| {
        if hi {
            (top(&p, values_p, kp), bottom(&n, values_n, kn), false)
        } else {
            (bottom(&p, values_p, kp), top(&n, values_n, kn), false)
        }
    };
    let s = ctx.strategy;
    match (s.family, s.mode) {
        (Family::Random, _) => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos = sample(&p, kp, &mut rng);
            Ok((pos, sample(&n, kn, &mut rng), false))
        }
        (Family::Quality, Mode::Average) => {
            let qp = ctx.aggregate(&p, quality)?;
            let qn = ctx.aggregate(&n, quality)?;
            let center = mean(&[qp.clone(), qn.clone()].concat());
            Ok((closest(&p, &qp, center, kp), closest(&n, &qn, center, kn), false))
        }
        (Family::Margin, mode) => {
            let qp = ctx.aggregate(&p, quality)?;
            let qn = ctx.aggregate(&n, quality)?;
            Ok(split(&qp, &qn, mode == Mode::Max))
        }
        (Family::Diversity, mode) => {
            let texts: Vec<&str> = (0..ctx.order.len()).map(|i| ctx.cand(i).text.as_str()).collect();
            let m = bleu_matrix(&texts);
            let pick = |group: &[usize], k: usize| -> Result<(Vec<usize>, bool)> {
                let f = |sub: &[usize]| {
                    let members: Vec<usize> = sub.iter().map(|&j| group[j]).collect();
                    objectives::diversity(&m, &members)
                };
                let (sub, approx) = optimize(group.len(), k, config.cap, seed, mode == Mode::Max, &f)?;
                Ok((sub.into_iter().map(|j| group[j]).collect(), approx))
            };
            let (pos, ap) = pick(&p, kp)?;
            let (neg, an) = pick(&n, kn)?;
            Ok((pos, neg, ap || an))
        }
        (Family::Likelihood, mode) => {
            let get = |c: &Candidate| c.mean_token_loglik();
            let lp = ctx.values(&p, "token_logprobs", get)?;
            let ln = ctx.values(&n, "token_logprobs", get)?;
            Ok(split(&lp, &ln, mode == Mode::Easy))
        }
        (Family::Spurious, _) => {
            let get = |c: &Candidate| c.scores.extractive_density;
            let dp = ctx.values(&p, "extractive_density", get)?;
            let dn = ctx.values(&n, "extractive_density", get)?;
            Ok(split(&dp, &dn, true))
        }
        _ => Err(SelectionError::Unsupported { strategy: s, kind: PoolKind::Faithfulness }),
    }
}
