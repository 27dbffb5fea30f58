//! Subset objectives of the optimizing strategies.
//!
//! Each is a function of the multiset of member values, summed in sorted
//! order, so equal multisets give bit-identical objectives.

use crate::analysis::{mean_offdiagonal, spearman};

fn sorted_mean(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v.iter().sum::<f64>() / v.len() as f64
}

/// Average adjacent margin of the descending-sorted values, `(max - min) / (k - 1)`.
pub fn rank_margin(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    (max - min) / (values.len() - 1) as f64
}

/// Mean positive value minus mean negative value.
pub fn contrast_margin(positives: &[f64], negatives: &[f64]) -> f64 {
    sorted_mean(positives) - sorted_mean(negatives)
}

/// Mean pairwise inverse self-BLEU of `members` under a BLEU matrix.
pub fn diversity(matrix: &[Vec<f64>], members: &[usize]) -> f64 {
    1.0 - mean_offdiagonal(matrix, members)
}

/// Spearman correlation, 0 when either side is constant.
pub fn rank_correlation(xs: &[f64], ys: &[f64]) -> f64 {
    spearman(xs, ys).map(|s| s.rho).unwrap_or(0.0)
}
