use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::{MetricError, Result};
use crate::model::{AggregateKind, Metric, MetricStats, NormalizationStats, ScoreVector};

/// `(raw - mean) / stddev`.
pub fn normalize(raw: f64, stats: MetricStats) -> Result<f64> {
    if !(stats.stddev > 0.0) {
        return Err(MetricError::NonPositiveStddev(stats.stddev));
    }
    Ok((raw - stats.mean) / stats.stddev)
}

/// Mean and population standard deviation of every metric present in `table`.
///
/// Metrics with fewer than two values or zero spread are left out.
pub fn fit_stats<'a>(
    table: impl IntoIterator<Item = &'a ScoreVector>,
    provenance: impl Into<String>,
) -> NormalizationStats {
    let mut columns: BTreeMap<Metric, Vec<f64>> = BTreeMap::new();
    for row in table {
        for m in Metric::ALL {
            if let Some(v) = row.get(m) {
                columns.entry(m).or_default().push(v);
            }
        }
    }
    let mut metrics = BTreeMap::new();
    for (m, values) in columns {
        if values.len() < 2 {
            continue;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let stddev = var.sqrt();
        if stddev > 0.0 {
            metrics.insert(m, MetricStats { mean, stddev });
        } else {
            log::warn!("{m}: constant column, no normalization stats fitted");
        }
    }
    NormalizationStats { metrics, provenance: provenance.into() }
}

/// Member weights of the two aggregates, each group summing to one.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateWeights {
    /// rouge1, rouge2, bertscore_ref
    pub relevance: [f64; 3],
    /// factscore, bartscore, bertscore_src
    pub faithfulness: [f64; 3],
}

impl Default for AggregateWeights {
    fn default() -> Self {
        let third = 1.0 / 3.0;
        AggregateWeights { relevance: [third; 3], faithfulness: [third; 3] }
    }
}

impl AggregateWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, group) in [("relevance", self.relevance), ("faithfulness", self.faithfulness)] {
            if group.iter().any(|w| !w.is_finite() || *w < 0.0) {
                return Err(MetricError::Weights(format!("{name} weights must be >= 0")));
            }
            let sum: f64 = group.iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(MetricError::Weights(format!("{name} weights sum to {sum}, not 1")));
            }
        }
        Ok(())
    }

    pub fn for_kind(&self, which: AggregateKind) -> [f64; 3] {
        match which {
            AggregateKind::Rel => self.relevance,
            AggregateKind::Faith => self.faithfulness,
        }
    }
}

/// Weighted mean of the normalized member metrics of one aggregate.
pub fn aggregate(
    scores: &ScoreVector,
    stats: &NormalizationStats,
    weights: &AggregateWeights,
    which: AggregateKind,
) -> Result<f64> {
    weights.validate()?;
    let mut total = 0.0;
    for (metric, w) in which.members().into_iter().zip(weights.for_kind(which)) {
        let raw = scores.get(metric).ok_or(MetricError::MissingMember(metric))?;
        let st = stats.get(metric).ok_or(MetricError::MissingStats(metric))?;
        total += w * normalize(raw, st)?;
    }
    Ok(total)
}

/// Fills `rel_agg` and `faith_agg` wherever every member metric is present.
pub fn apply_aggregates(
    scores: &mut ScoreVector,
    stats: &NormalizationStats,
    weights: &AggregateWeights,
) -> Result<()> {
    for which in [AggregateKind::Rel, AggregateKind::Faith] {
        if which.members().iter().all(|m| scores.get(*m).is_some()) {
            let v = aggregate(scores, stats, weights, which)?;
            match which {
                AggregateKind::Rel => scores.rel_agg = Some(v),
                AggregateKind::Faith => scores.faith_agg = Some(v),
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn stats_all(mean: f64, stddev: f64) -> NormalizationStats {
        NormalizationStats {
            metrics: Metric::ALL.iter().map(|m| (*m, MetricStats { mean, stddev })).collect(),
            provenance: "test".into(),
        }
    }

    fn rel_scores(r1: f64, r2: f64, bs: f64) -> ScoreVector {
        ScoreVector { rouge1_f1: Some(r1), rouge2_f1: Some(r2), bertscore_ref: Some(bs), ..Default::default() }
    }

    #[test]
    fn normalize_examples() {
        let st = MetricStats { mean: 0.5, stddev: 0.1 };
        assert_eq!(normalize(0.5, st).unwrap(), 0.0);
        assert!((normalize(0.65, st).unwrap() - 1.5).abs() < 1e-12);
        assert_eq!(normalize(3.0, MetricStats { mean: 2.0, stddev: 1.0 }).unwrap(), 1.0);
        assert!(normalize(1.0, MetricStats { mean: 0.0, stddev: 0.0 }).is_err());
    }

    #[test]
    fn aggregate_examples() {
        let st = stats_all(0.0, 1.0);
        let eq = AggregateWeights::default();
        assert_eq!(aggregate(&rel_scores(0.0, 0.0, 0.0), &st, &eq, AggregateKind::Rel).unwrap(), 0.0);
        assert!((aggregate(&rel_scores(1.0, 1.0, 1.0), &st, &eq, AggregateKind::Rel).unwrap() - 1.0).abs() < 1e-15);
        let w = AggregateWeights { relevance: [0.5, 0.25, 0.25], faithfulness: [1.0, 0.0, 0.0] };
        assert_eq!(aggregate(&rel_scores(2.0, 0.0, 0.0), &st, &w, AggregateKind::Rel).unwrap(), 1.0);

        let err = aggregate(&rel_scores(1.0, 1.0, 1.0), &st, &eq, AggregateKind::Faith).unwrap_err();
        assert_eq!(err.to_string(), "missing member metric factscore");
    }

    #[test]
    fn weights_must_sum_to_one() {
        let w = AggregateWeights { relevance: [0.5, 0.5, 0.5], faithfulness: [1.0, 0.0, 0.0] };
        assert!(w.validate().is_err());
        let w = AggregateWeights { relevance: [1.5, -0.5, 0.0], faithfulness: [1.0, 0.0, 0.0] };
        assert!(w.validate().is_err());
    }

    #[test]
    fn fit_stats_skips_constant_columns() {
        let rows = vec![rel_scores(0.1, 0.5, 0.9), rel_scores(0.3, 0.5, 0.8)];
        let st = fit_stats(&rows, "ft");
        assert_eq!(st.get(Metric::Rouge1).unwrap().mean, 0.2);
        assert!((st.get(Metric::Rouge1).unwrap().stddev - 0.1).abs() < 1e-15);
        assert!(st.get(Metric::Rouge2).is_none());
        assert!(st.get(Metric::Factscore).is_none());
    }

    proptest! {
        #[test]
        fn affine_equivariance(x in -10.0f64..10.0, mu in -5.0f64..5.0, sigma in 0.1f64..5.0,
                               a in 0.1f64..10.0, b in -10.0f64..10.0) {
            let lhs = normalize(x, MetricStats { mean: mu, stddev: sigma }).unwrap();
            let rhs = normalize(a * x + b, MetricStats { mean: a * mu + b, stddev: a * sigma }).unwrap();
            prop_assert!((lhs - rhs).abs() <= 1e-9 * (1.0 + lhs.abs()));
        }

        #[test]
        fn aggregate_is_monotone(vals in proptest::array::uniform3(-2.0f64..2.0), bump in 1e-3f64..1.0,
                                 which_member in 0usize..3) {
            let st = stats_all(0.1, 0.7);
            let w = AggregateWeights { relevance: [0.2, 0.3, 0.5], ..Default::default() };
            let base = rel_scores(vals[0], vals[1], vals[2]);
            let mut up = vals;
            up[which_member] += bump;
            let bumped = rel_scores(up[0], up[1], up[2]);
            let a = aggregate(&base, &st, &w, AggregateKind::Rel).unwrap();
            let b = aggregate(&bumped, &st, &w, AggregateKind::Rel).unwrap();
            prop_assert!(b > a);
        }
    }
}
