//! The closed catalog of selection strategies, one entry per results-table row.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::model::PoolKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Family {
    Random,
    Quality,
    Margin,
    Diversity,
    Likelihood,
    Spurious,
    HybridCorr,
}

impl Family {
    pub fn as_str(self) -> &'static str {
        match self {
            Family::Random => "random",
            Family::Quality => "quality",
            Family::Margin => "margin",
            Family::Diversity => "diversity",
            Family::Likelihood => "likelihood",
            Family::Spurious => "spurious",
            Family::HybridCorr => "hybrid_corr",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Uniform,
    Extreme,
    Average,
    Min,
    High,
    Max,
    TopBeam,
    BottomBeam,
    ExtremeBeam,
    Easy,
    Hard,
    MaxLength,
    MinLength,
    MaxExtractGap,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Uniform => "uniform",
            Mode::Extreme => "extreme",
            Mode::Average => "average",
            Mode::Min => "min",
            Mode::High => "high",
            Mode::Max => "max",
            Mode::TopBeam => "top_beam",
            Mode::BottomBeam => "bottom_beam",
            Mode::ExtremeBeam => "extreme_beam",
            Mode::Easy => "easy",
            Mode::Hard => "hard",
            Mode::MaxLength => "max_length",
            Mode::MinLength => "min_length",
            Mode::MaxExtractGap => "max_extract_gap",
        }
    }
}

/// A `(family, mode)` pair such as `margin:max`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StrategyId {
    pub family: Family,
    pub mode: Mode,
}

const fn s(family: Family, mode: Mode) -> StrategyId {
    StrategyId { family, mode }
}

/// Relevance rank-set strategies: the fourteen results rows plus the hybrid.
pub const RELEVANCE_CATALOG: [StrategyId; 15] = [
    s(Family::Random, Mode::Uniform),
    s(Family::Quality, Mode::Extreme),
    s(Family::Quality, Mode::Average),
    s(Family::Quality, Mode::Min),
    s(Family::Quality, Mode::High),
    s(Family::Margin, Mode::Max),
    s(Family::Margin, Mode::Min),
    s(Family::Diversity, Mode::Max),
    s(Family::Diversity, Mode::Min),
    s(Family::Likelihood, Mode::ExtremeBeam),
    s(Family::Likelihood, Mode::TopBeam),
    s(Family::Likelihood, Mode::BottomBeam),
    s(Family::Spurious, Mode::MaxLength),
    s(Family::Spurious, Mode::MinLength),
    s(Family::HybridCorr, Mode::Max),
];

/// Faithfulness contrast-set strategies.
pub const FAITHFULNESS_CATALOG: [StrategyId; 9] = [
    s(Family::Random, Mode::Uniform),
    s(Family::Quality, Mode::Average),
    s(Family::Margin, Mode::Max),
    s(Family::Margin, Mode::Min),
    s(Family::Diversity, Mode::Max),
    s(Family::Diversity, Mode::Min),
    s(Family::Likelihood, Mode::Easy),
    s(Family::Likelihood, Mode::Hard),
    s(Family::Spurious, Mode::MaxExtractGap),
];

pub fn catalog(kind: PoolKind) -> &'static [StrategyId] {
    match kind {
        PoolKind::Relevance => &RELEVANCE_CATALOG,
        PoolKind::Faithfulness => &FAITHFULNESS_CATALOG,
    }
}

impl StrategyId {
    pub fn new(family: Family, mode: Mode) -> Self {
        s(family, mode)
    }

    pub fn supports(self, kind: PoolKind) -> bool {
        catalog(kind).contains(&self)
    }

    /// Whether the strategy searches over subsets for an objective optimum.
    pub fn is_optimizing(self) -> bool {
        matches!(self.family, Family::Margin | Family::Diversity | Family::HybridCorr)
    }
}

impl fmt::Display for StrategyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.family.as_str(), self.mode.as_str())
    }
}

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
#[error("unknown strategy {0:?}; expected family:mode from the catalog")]
pub struct UnknownStrategy(pub String);

impl FromStr for StrategyId {
    type Err = UnknownStrategy;

    fn from_str(input: &str) -> Result<Self, Self::Err> {
        let (family, mode) = match input.split_once(':') {
            Some((f, m)) => (f, Some(m)),
            None => (input, None),
        };
        let family_id = [
            Family::Random,
            Family::Quality,
            Family::Margin,
            Family::Diversity,
            Family::Likelihood,
            Family::Spurious,
            Family::HybridCorr,
        ]
        .into_iter()
        .find(|f| f.as_str() == family)
        .ok_or_else(|| UnknownStrategy(input.to_owned()))?;
        let mode_id = match (family_id, mode) {
            (Family::Random, None | Some("") | Some("-")) => Mode::Uniform,
            (Family::HybridCorr, None | Some("")) => Mode::Max,
            (_, None) => return Err(UnknownStrategy(input.to_owned())),
            (_, Some(m)) => RELEVANCE_CATALOG
                .iter()
                .chain(FAITHFULNESS_CATALOG.iter())
                .filter(|id| id.family == family_id)
                .map(|id| id.mode)
                .find(|md| md.as_str() == m)
                .ok_or_else(|| UnknownStrategy(input.to_owned()))?,
        };
        Ok(s(family_id, mode_id))
    }
}

impl Serialize for StrategyId {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for StrategyId {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let raw = String::deserialize(deserializer)?;
        raw.parse().map_err(serde::de::Error::custom)
    }
}
