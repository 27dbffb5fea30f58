use super::{AnalysisError, Result};

/// Spearman's rho, with a flag for the constant-input convention.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Spearman {
    pub rho: f64,
    /// One side was constant; `rho` is then defined as 0.
    pub degenerate: bool,
}

fn check_pair(xs: &[f64], ys: &[f64]) -> Result<()> {
    if xs.len() != ys.len() {
        return Err(AnalysisError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 2 {
        return Err(AnalysisError::TooFew { what: "correlation inputs", need: 2, got: xs.len() });
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(AnalysisError::NonFinite);
    }
    Ok(())
}

/// 0-based ranks, ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

fn is_constant(v: &[f64]) -> bool {
    v.iter().all(|x| *x == v[0])
}

/// Pearson's r. The pairs are summed in sorted order, so the value does not
/// depend on how the inputs are ordered.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    check_pair(xs, ys)?;
    if is_constant(xs) || is_constant(ys) {
        return Err(AnalysisError::Constant);
    }
    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let n = pairs.len() as f64;
    let mx = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (x, y) in &pairs {
        let (dx, dy) = (x - mx, y - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::Constant);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Twice the 0-based average ranks, which are always integers.
fn doubled_ranks(values: &[f64]) -> Vec<i128> {
    average_ranks(values).into_iter().map(|r| (2.0 * r) as i128).collect()
}

/// `sign(c) * sqrt(c² / (vx·vy))` from the integer centered moments of the
/// doubled ranks. Mathematically equal correlations come out bit-identical,
/// which keeps subset search ties exact. `None` on overflow.
fn exact_rank_correlation(xs: &[f64], ys: &[f64]) -> Option<f64> {
    let (a, b) = (doubled_ranks(xs), doubled_ranks(ys));
    let n = a.len() as i128;
    let (sa, sb): (i128, i128) = (a.iter().sum(), b.iter().sum());
    let dot = a.iter().zip(&b).try_fold(0i128, |acc, (x, y)| acc.checked_add(x.checked_mul(*y)?))?;
    let sq = |v: &[i128]| v.iter().try_fold(0i128, |acc, x| acc.checked_add(x.checked_mul(*x)?));
    let cov = n.checked_mul(dot)?.checked_sub(sa.checked_mul(sb)?)?;
    let vx = n.checked_mul(sq(&a)?)?.checked_sub(sa.checked_mul(sa)?)?;
    let vy = n.checked_mul(sq(&b)?)?.checked_sub(sb.checked_mul(sb)?)?;
    let num = cov.checked_mul(cov)?;
    let den = vx.checked_mul(vy)?;
    let magnitude = (num as f64 / den as f64).sqrt().min(1.0);
    Some(if cov < 0 { -magnitude } else { magnitude })
}

/// Spearman's rho: Pearson's r over average ranks.
pub fn spearman(xs: &[f64], ys: &[f64]) -> Result<Spearman> {
    check_pair(xs, ys)?;
    if is_constant(xs) || is_constant(ys) {
        return Ok(Spearman { rho: 0.0, degenerate: true });
    }
    let rho = match exact_rank_correlation(xs, ys) {
        Some(r) => r,
        None => pearson(&average_ranks(xs), &average_ranks(ys))?,
    };
    Ok(Spearman { rho, degenerate: false })
}

/// Negative Spearman correlation between beam order and metric order.
///
/// -1: the beam already ranks candidates as the metric does. +1: reversed.
pub fn precalibration_score(beam_ranks: &[f64], rel_aggs: &[f64]) -> Result<f64> {
    // Descending metric ranks are the ascending ranks of the negated values.
    let negated: Vec<f64> = rel_aggs.iter().map(|v| -v).collect();
    // 0 - rho keeps a degenerate result at +0.
    Ok(0.0 - spearman(beam_ranks, &negated)?.rho)
}
