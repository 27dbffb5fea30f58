//! Domain types shared by every stage, with their invariant checks.

use std::collections::{BTreeMap, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::selection::StrategyId;
use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ValidationError(pub String);

macro_rules! invalid {
    ($($arg:tt)*) => { ValidationError(format!($($arg)*)) };
}

fn ensure(cond: bool, err: impl FnOnce() -> ValidationError) -> Result<(), ValidationError> {
    if cond {
        Ok(())
    } else {
        Err(err())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SpanTarget {
    Reference,
    Source,
}

/// A character-offset span over either the reference or the source text.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Span {
    pub start: usize,
    pub end: usize,
    pub surface: String,
    #[serde(rename = "type", default)]
    pub semantic_type: String,
    pub target: SpanTarget,
}

impl Span {
    pub fn overlaps(&self, other: &Span) -> bool {
        self.start < other.end && other.start < self.end
    }

    fn validate(&self, text: &str, list: &str) -> Result<(), ValidationError> {
        ensure(self.start < self.end, || {
            invalid!("{list} span [{}, {}) is empty or inverted", self.start, self.end)
        })?;
        let slice = text::char_slice(text, self.start, self.end).ok_or_else(|| {
            invalid!("{list} span [{}, {}) is out of bounds", self.start, self.end)
        })?;
        ensure(slice == self.surface, || {
            invalid!(
                "{list} span [{}, {}) covers {slice:?}, annotation says {:?}",
                self.start,
                self.end,
                self.surface
            )
        })
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AnnotationSet {
    #[serde(default)]
    pub entities: Vec<Span>,
    #[serde(default)]
    pub numbers: Vec<Span>,
    #[serde(default)]
    pub noun_phrases: Vec<Span>,
}

impl AnnotationSet {
    pub fn all(&self) -> impl Iterator<Item = (&'static str, &Span)> {
        self.entities
            .iter()
            .map(|s| ("entities", s))
            .chain(self.numbers.iter().map(|s| ("numbers", s)))
            .chain(self.noun_phrases.iter().map(|s| ("noun_phrases", s)))
    }
}

/// One training instance: source document, reference summary and annotations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub example_id: String,
    pub source_text: String,
    pub source_sentences: Vec<String>,
    pub reference_text: String,
    #[serde(default)]
    pub annotations: AnnotationSet,
    /// Per-token natural-log probabilities of the reference under the fine-tuned model.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference_token_logprobs: Option<Vec<f64>>,
}

impl Example {
    pub fn validate(&self) -> Result<(), ValidationError> {
        ensure(!self.example_id.is_empty(), || invalid!("example_id is empty"))?;
        let joined = text::normalize_whitespace(&self.source_sentences.join(" "));
        ensure(joined == text::normalize_whitespace(&self.source_text), || {
            invalid!(
                "example {}: source_sentences do not concatenate to source_text",
                self.example_id
            )
        })?;
        for (list, span) in self.annotations.all() {
            let target = match span.target {
                SpanTarget::Reference => &self.reference_text,
                SpanTarget::Source => &self.source_text,
            };
            span.validate(target, list)
                .map_err(|e| invalid!("example {}: {e}", self.example_id))?;
        }
        if let Some(lp) = &self.reference_token_logprobs {
            validate_logprobs(lp).map_err(|e| invalid!("example {}: {e}", self.example_id))?;
        }
        Ok(())
    }

    pub fn spans<'a>(
        list: &'a [Span],
        target: SpanTarget,
    ) -> impl Iterator<Item = &'a Span> + 'a {
        list.iter().filter(move |s| s.target == target)
    }

    /// Checks every span type against a closed vocabulary.
    pub fn validate_vocabulary(&self, vocabulary: &[String]) -> Result<(), ValidationError> {
        for (list, span) in self.annotations.all() {
            if list == "noun_phrases" {
                continue;
            }
            ensure(vocabulary.iter().any(|v| v == &span.semantic_type), || {
                invalid!(
                    "example {}: span type {:?} not in the declared vocabulary",
                    self.example_id,
                    span.semantic_type
                )
            })?;
        }
        Ok(())
    }
}

fn validate_logprobs(lp: &[f64]) -> Result<(), ValidationError> {
    for (i, v) in lp.iter().enumerate() {
        ensure(v.is_finite() && *v <= 0.0, || {
            invalid!("token_logprobs[{i}] = {v} must be finite and <= 0")
        })?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MaskAndFill,
    SwapIntrinsic,
    SwapExtrinsic,
    Paraphrase,
    Reference,
    DiverseBeam,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::MaskAndFill,
        Method::SwapIntrinsic,
        Method::SwapExtrinsic,
        Method::Paraphrase,
        Method::Reference,
        Method::DiverseBeam,
    ];

    pub fn polarity(self) -> Polarity {
        match self {
            Method::MaskAndFill | Method::SwapIntrinsic | Method::SwapExtrinsic => {
                Polarity::Negative
            }
            Method::Paraphrase | Method::Reference => Polarity::Positive,
            Method::DiverseBeam => Polarity::Unassigned,
        }
    }

    pub fn pool_kind(self) -> PoolKind {
        match self {
            Method::DiverseBeam => PoolKind::Relevance,
            _ => PoolKind::Faithfulness,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MaskAndFill => "mask_and_fill",
            Method::SwapIntrinsic => "swap_intrinsic",
            Method::SwapExtrinsic => "swap_extrinsic",
            Method::Paraphrase => "paraphrase",
            Method::Reference => "reference",
            Method::DiverseBeam => "diverse_beam",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Polarity {
    Positive,
    Negative,
    Unassigned,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PoolKind {
    Faithfulness,
    Relevance,
}

impl PoolKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PoolKind::Faithfulness => "faithfulness",
            PoolKind::Relevance => "relevance",
        }
    }
}

impl fmt::Display for PoolKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for PoolKind {
    type Err = ValidationError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "faithfulness" | "faith" => Ok(PoolKind::Faithfulness),
            "relevance" | "rel" => Ok(PoolKind::Relevance),
            other => Err(invalid!("unknown pool kind {other:?}")),
        }
    }
}

/// Raw and derived metric values for one candidate. Absent values are `null`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector {
    #[serde(default)]
    pub rouge1_f1: Option<f64>,
    #[serde(default)]
    pub rouge2_f1: Option<f64>,
    #[serde(default)]
    pub bertscore_ref: Option<f64>,
    #[serde(default)]
    pub bertscore_src: Option<f64>,
    #[serde(default)]
    pub bartscore: Option<f64>,
    #[serde(default)]
    pub factscore: Option<f64>,
    #[serde(default)]
    pub rel_agg: Option<f64>,
    #[serde(default)]
    pub faith_agg: Option<f64>,
    #[serde(default)]
    pub extractive_density: Option<f64>,
    #[serde(default)]
    pub extractive_coverage: Option<f64>,
    #[serde(default)]
    pub n_tokens: usize,
}

impl ScoreVector {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let unit = [
            ("rouge1_f1", self.rouge1_f1),
            ("rouge2_f1", self.rouge2_f1),
            ("factscore", self.factscore),
            ("extractive_coverage", self.extractive_coverage),
        ];
        for (name, v) in unit {
            if let Some(v) = v {
                ensure((0.0..=1.0).contains(&v), || invalid!("{name} = {v} outside [0, 1]"))?;
            }
        }
        if let Some(v) = self.bartscore {
            ensure(v.is_finite() && v <= 0.0, || invalid!("bartscore = {v} must be <= 0"))?;
        }
        if let Some(v) = self.extractive_density {
            ensure(v.is_finite() && v >= 0.0, || invalid!("extractive_density = {v} must be >= 0"))?;
        }
        for (name, v) in [
            ("bertscore_ref", self.bertscore_ref),
            ("bertscore_src", self.bertscore_src),
            ("rel_agg", self.rel_agg),
            ("faith_agg", self.faith_agg),
        ] {
            if let Some(v) = v {
                ensure(v.is_finite(), || invalid!("{name} = {v} is not finite"))?;
            }
        }
        Ok(())
    }

    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::Rouge1 => self.rouge1_f1,
            Metric::Rouge2 => self.rouge2_f1,
            Metric::BertscoreRef => self.bertscore_ref,
            Metric::BertscoreSrc => self.bertscore_src,
            Metric::Bartscore => self.bartscore,
            Metric::Factscore => self.factscore,
        }
    }

    pub fn set(&mut self, metric: Metric, value: f64) {
        let slot = match metric {
            Metric::Rouge1 => &mut self.rouge1_f1,
            Metric::Rouge2 => &mut self.rouge2_f1,
            Metric::BertscoreRef => &mut self.bertscore_ref,
            Metric::BertscoreSrc => &mut self.bertscore_src,
            Metric::Bartscore => &mut self.bartscore,
            Metric::Factscore => &mut self.factscore,
        };
        *slot = Some(value);
    }

    pub fn aggregate(&self, which: AggregateKind) -> Option<f64> {
        match which {
            AggregateKind::Rel => self.rel_agg,
            AggregateKind::Faith => self.faith_agg,
        }
    }

    /// Overlays every value present in `other`.
    pub fn merge(&mut self, other: &ScoreVector) {
        macro_rules! take {
            ($($f:ident),*) => { $( if other.$f.is_some() { self.$f = other.$f; } )* };
        }
        take!(
            rouge1_f1,
            rouge2_f1,
            bertscore_ref,
            bertscore_src,
            bartscore,
            factscore,
            rel_agg,
            faith_agg,
            extractive_density,
            extractive_coverage
        );
        if other.n_tokens > 0 {
            self.n_tokens = other.n_tokens;
        }
    }
}

/// Raw metrics that feed the aggregates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Metric {
    #[serde(rename = "rouge1_f1")]
    Rouge1,
    #[serde(rename = "rouge2_f1")]
    Rouge2,
    #[serde(rename = "bertscore_ref")]
    BertscoreRef,
    #[serde(rename = "bertscore_src")]
    BertscoreSrc,
    #[serde(rename = "bartscore")]
    Bartscore,
    #[serde(rename = "factscore")]
    Factscore,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::Rouge1,
        Metric::Rouge2,
        Metric::BertscoreRef,
        Metric::BertscoreSrc,
        Metric::Bartscore,
        Metric::Factscore,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Rouge1 => "rouge1_f1",
            Metric::Rouge2 => "rouge2_f1",
            Metric::BertscoreRef => "bertscore_ref",
            Metric::BertscoreSrc => "bertscore_src",
            Metric::Bartscore => "bartscore",
            Metric::Factscore => "factscore",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregateKind {
    #[serde(alias = "rel_agg")]
    Rel,
    #[serde(alias = "faith_agg")]
    Faith,
}

impl AggregateKind {
    pub fn members(self) -> [Metric; 3] {
        match self {
            AggregateKind::Rel => [Metric::Rouge1, Metric::Rouge2, Metric::BertscoreRef],
            AggregateKind::Faith => [Metric::Factscore, Metric::Bartscore, Metric::BertscoreSrc],
        }
    }

    pub fn field(self) -> &'static str {
        match self {
            AggregateKind::Rel => "rel_agg",
            AggregateKind::Faith => "faith_agg",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub candidate_id: String,
    pub example_id: String,
    pub method: Method,
    #[serde(default)]
    pub method_params: BTreeMap<String, Value>,
    pub polarity_hint: Polarity,
    #[serde(default)]
    pub beam_rank: Option<u32>,
    pub text: String,
    #[serde(default)]
    pub token_logprobs: Option<Vec<f64>>,
    #[serde(default)]
    pub scores: ScoreVector,
}

impl Candidate {
    pub fn validate(&self) -> Result<(), ValidationError> {
        let id = &self.candidate_id;
        ensure(!id.is_empty(), || invalid!("candidate_id is empty"))?;
        ensure(self.beam_rank.is_some() == (self.method == Method::DiverseBeam), || {
            invalid!("candidate {id}: beam_rank must be present iff method is diverse_beam")
        })?;
        ensure(self.polarity_hint == self.method.polarity(), || {
            invalid!(
                "candidate {id}: polarity_hint {:?} does not match method {}",
                self.polarity_hint,
                self.method
            )
        })?;
        if let Some(lp) = &self.token_logprobs {
            validate_logprobs(lp).map_err(|e| invalid!("candidate {id}: {e}"))?;
        }
        self.scores.validate().map_err(|e| invalid!("candidate {id}: {e}"))
    }

    /// Length-normalized log-likelihood under the fine-tuned model.
    pub fn mean_token_loglik(&self) -> Option<f64> {
        match &self.token_logprobs {
            Some(lp) if !lp.is_empty() => Some(lp.iter().sum::<f64>() / lp.len() as f64),
            _ => None,
        }
    }

    pub fn generator(&self) -> Option<&str> {
        self.method_params.get("generator").and_then(Value::as_str)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CandidatePool {
    pub example: Example,
    pub candidates: Vec<Candidate>,
    pub pool_kind: PoolKind,
}

impl CandidatePool {
    pub fn validate(&self) -> Result<(), ValidationError> {
        self.example.validate()?;
        let mut ids = HashSet::new();
        let mut texts = HashSet::new();
        for c in &self.candidates {
            c.validate()?;
            ensure(c.example_id == self.example.example_id, || {
                invalid!(
                    "candidate {} belongs to {}, not {}",
                    c.candidate_id,
                    c.example_id,
                    self.example.example_id
                )
            })?;
            ensure(c.method.pool_kind() == self.pool_kind, || {
                invalid!(
                    "candidate {}: method {} not allowed in pool_kind {}",
                    c.candidate_id,
                    c.method,
                    self.pool_kind
                )
            })?;
            ensure(ids.insert(c.candidate_id.as_str()), || {
                invalid!("duplicate candidate_id {}", c.candidate_id)
            })?;
            ensure(texts.insert(text::nfc(&c.text)), || {
                invalid!("candidate {}: duplicate text within pool", c.candidate_id)
            })?;
        }
        Ok(())
    }

    pub fn get(&self, candidate_id: &str) -> Option<&Candidate> {
        self.candidates.iter().find(|c| c.candidate_id == candidate_id)
    }

    pub fn count_by_method(&self) -> BTreeMap<Method, usize> {
        let mut counts = BTreeMap::new();
        for c in &self.candidates {
            *counts.entry(c.method).or_insert(0) += 1;
        }
        counts
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricStats {
    pub mean: f64,
    pub stddev: f64,
}

/// Per-metric mean and standard deviation of a fine-tuned baseline.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct NormalizationStats {
    pub metrics: BTreeMap<Metric, MetricStats>,
    pub provenance: String,
}

impl NormalizationStats {
    pub fn validate(&self) -> Result<(), ValidationError> {
        for (m, s) in &self.metrics {
            ensure(s.mean.is_finite(), || invalid!("{m}: mean is not finite"))?;
            ensure(s.stddev.is_finite() && s.stddev > 0.0, || {
                invalid!("{m}: stddev {} must be strictly positive", s.stddev)
            })?;
        }
        Ok(())
    }

    pub fn get(&self, metric: Metric) -> Option<MetricStats> {
        self.metrics.get(&metric).copied()
    }
}

/// The chosen members of one calibration set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SetMembers {
    Relevance { rank_order: Vec<String> },
    Faithfulness { positives: Vec<String>, negatives: Vec<String> },
}

impl SetMembers {
    pub fn kind(&self) -> PoolKind {
        match self {
            SetMembers::Relevance { .. } => PoolKind::Relevance,
            SetMembers::Faithfulness { .. } => PoolKind::Faithfulness,
        }
    }

    pub fn ids(&self) -> Vec<&str> {
        match self {
            SetMembers::Relevance { rank_order } => rank_order.iter().map(String::as_str).collect(),
            SetMembers::Faithfulness { positives, negatives } => positives
                .iter()
                .chain(negatives.iter())
                .map(String::as_str)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectedSet {
    pub example_id: String,
    pub strategy: StrategyId,
    #[serde(flatten)]
    pub members: SetMembers,
    /// Set when the subset search fell back to sampling.
    #[serde(default)]
    pub approximate: bool,
}

impl SelectedSet {
    /// Checks the invariants that hold without the pool.
    pub fn validate(&self) -> Result<(), ValidationError> {
        ensure(!self.example_id.is_empty(), || invalid!("selected set has empty example_id"))?;
        let ex = &self.example_id;
        match &self.members {
            SetMembers::Relevance { rank_order } => {
                ensure(!rank_order.is_empty(), || invalid!("{ex}: empty rank_order"))?;
            }
            SetMembers::Faithfulness { positives, negatives } => {
                ensure(!positives.is_empty() && !negatives.is_empty(), || {
                    invalid!("{ex}: contrast set needs positives and negatives")
                })?;
            }
        }
        let mut seen = HashSet::new();
        for id in self.members.ids() {
            ensure(seen.insert(id), || {
                invalid!("{ex}: candidate {id} appears twice (positives and negatives must be disjoint)")
            })?;
        }
        Ok(())
    }

    /// Full check against the pool the set was drawn from.
    pub fn validate_against(&self, pool: &CandidatePool) -> Result<(), ValidationError> {
        self.validate()?;
        let ex = &self.example_id;
        ensure(pool.example.example_id == *ex, || {
            invalid!("set for {ex} checked against pool {}", pool.example.example_id)
        })?;
        ensure(self.members.kind() == pool.pool_kind, || {
            invalid!("{ex}: {} set drawn from a {} pool", self.members.kind(), pool.pool_kind)
        })?;
        let lookup = |id: &str| {
            pool.get(id)
                .ok_or_else(|| invalid!("{ex}: candidate {id} not in pool"))
        };
        match &self.members {
            SetMembers::Relevance { rank_order } => {
                let mut prev: Option<f64> = None;
                for id in rank_order {
                    let q = lookup(id)?.scores.rel_agg;
                    if let (Some(p), Some(q)) = (prev, q) {
                        ensure(p >= q, || invalid!("{ex}: rank_order not sorted by rel_agg"))?;
                    }
                    prev = q.or(prev);
                }
            }
            SetMembers::Faithfulness { positives, negatives } => {
                for id in positives {
                    ensure(lookup(id)?.polarity_hint == Polarity::Positive, || {
                        invalid!("{ex}: positive {id} lacks a positive polarity hint")
                    })?;
                }
                for id in negatives {
                    ensure(lookup(id)?.polarity_hint == Polarity::Negative, || {
                        invalid!("{ex}: negative {id} lacks a negative polarity hint")
                    })?;
                }
            }
        }
        Ok(())
    }
}
