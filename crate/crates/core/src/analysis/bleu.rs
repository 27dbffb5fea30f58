use std::collections::HashMap;

use crate::text;

use super::{AnalysisError, Result};

pub const MAX_ORDER: usize = 4;

/// Sentence BLEU over metric tokens: orders 1 to 4, add-one smoothing on every
/// precision, standard brevity penalty. An empty candidate scores 0.
pub fn bleu_tokens(candidate: &[String], reference: &[String]) -> f64 {
    let mut ids = HashMap::new();
    bleu_profiles(&Profile::new(candidate, &mut ids), &Profile::new(reference, &mut ids))
}

/// Sorted n-gram counts of one text for every order up to [`MAX_ORDER`],
/// tokens interned to integers so matching is a merge of sorted lists.
struct Profile {
    len: usize,
    grams: Vec<Vec<([u32; MAX_ORDER], usize)>>,
}

impl Profile {
    fn new<'a>(tokens: &'a [String], ids: &mut HashMap<&'a str, u32>) -> Self {
        let interned: Vec<u32> = tokens
            .iter()
            .map(|t| {
                let next = ids.len() as u32;
                *ids.entry(t.as_str()).or_insert(next)
            })
            .collect();
        let grams = (1..=MAX_ORDER)
            .map(|n| {
                let mut keys: Vec<[u32; MAX_ORDER]> = interned
                    .windows(n)
                    .map(|w| {
                        let mut k = [u32::MAX; MAX_ORDER];
                        k[..n].copy_from_slice(w);
                        k
                    })
                    .collect();
                keys.sort_unstable();
                let mut counted: Vec<([u32; MAX_ORDER], usize)> = Vec::new();
                for k in keys {
                    match counted.last_mut() {
                        Some((last, c)) if *last == k => *c += 1,
                        _ => counted.push((k, 1)),
                    }
                }
                counted
            })
            .collect();
        Profile { len: tokens.len(), grams }
    }
}

/// Sum over shared n-grams of the smaller count.
fn clipped(a: &[([u32; MAX_ORDER], usize)], b: &[([u32; MAX_ORDER], usize)]) -> usize {
    let (mut i, mut j, mut total) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                total += a[i].1.min(b[j].1);
                i += 1;
                j += 1;
            }
        }
    }
    total
}

fn bleu_profiles(candidate: &Profile, reference: &Profile) -> f64 {
    if candidate.len == 0 {
        return 0.0;
    }
    let mut log_sum = 0.0;
    for n in 1..=MAX_ORDER {
        let matches = clipped(&candidate.grams[n - 1], &reference.grams[n - 1]);
        let total = candidate.len.saturating_sub(n - 1);
        log_sum += ((matches + 1) as f64 / (total + 1) as f64).ln();
    }
    let c = candidate.len as f64;
    let r = reference.len as f64;
    let bp = if c > r { 1.0 } else { (1.0 - r / c).exp() };
    bp * (log_sum / MAX_ORDER as f64).exp()
}

pub fn bleu(candidate: &str, reference: &str) -> f64 {
    bleu_tokens(&text::metric_tokens(candidate), &text::metric_tokens(reference))
}

/// `m[i][j]` is the BLEU of text `i` against reference text `j`; the diagonal is 1.
pub fn bleu_matrix(texts: &[&str]) -> Vec<Vec<f64>> {
    let tokens: Vec<Vec<String>> = texts.iter().map(|t| text::metric_tokens(t)).collect();
    let mut ids = HashMap::new();
    let profiles: Vec<Profile> = tokens.iter().map(|t| Profile::new(t, &mut ids)).collect();
    (0..tokens.len())
        .map(|i| {
            (0..tokens.len())
                .map(|j| if i == j { 1.0 } else { bleu_profiles(&profiles[i], &profiles[j]) })
                .collect()
        })
        .collect()
}

/// Mean of the ordered-pair entries `m[i][j]`, `i != j`, over the chosen rows.
///
/// The entries are summed in ascending order so the result depends only on
/// their multiset, not on the order of `members`.
pub fn mean_offdiagonal(matrix: &[Vec<f64>], members: &[usize]) -> f64 {
    let mut values = Vec::with_capacity(members.len() * members.len().saturating_sub(1));
    for &i in members {
        for &j in members {
            if i != j {
                values.push(matrix[i][j]);
            }
        }
    }
    if values.is_empty() {
        return 0.0;
    }
    values.sort_by(f64::total_cmp);
    values.iter().sum::<f64>() / values.len() as f64
}

/// Mean BLEU over all ordered pairs of distinct positions.
pub fn self_bleu(texts: &[&str]) -> Result<f64> {
    if texts.len() < 2 {
        return Err(AnalysisError::TooFew { what: "self_bleu texts", need: 2, got: texts.len() });
    }
    let m = bleu_matrix(texts);
    let all: Vec<usize> = (0..texts.len()).collect();
    Ok(mean_offdiagonal(&m, &all))
}

/// Lexical diversity, `1 - self_bleu`.
pub fn inverse_self_bleu(texts: &[&str]) -> Result<f64> {
    Ok(1.0 - self_bleu(texts)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn hand_counted_pair() {
        // p1 = 4/5, p2 = 3/4, p3 = 2/3, p4 = 1/2, equal lengths so no penalty.
        let expected = 0.2f64.powf(0.25);
        assert!((bleu("a b c d", "a b c e") - expected).abs() < 1e-15);
        assert!((bleu("a b c e", "a b c d") - expected).abs() < 1e-15);
        assert!((self_bleu(&["a b c d", "a b c e"]).unwrap() - expected).abs() < 1e-15);
    }

    #[test]
    fn identical_and_disjoint() {
        assert_eq!(self_bleu(&["x y z", "x y z", "x y z"]).unwrap(), 1.0);
        let disjoint = self_bleu(&["a b c d e", "f g h i j"]).unwrap();
        // p1 = 1/6, p2 = 1/5, p3 = 1/4, p4 = 1/3
        let floor = (1.0f64 / 6.0 * 0.2 * 0.25 / 3.0).powf(0.25);
        assert!(disjoint <= floor + 1e-15);
        assert_eq!(bleu("", "a"), 0.0);
        assert!(self_bleu(&["one"]).is_err());
    }

    #[test]
    fn brevity_penalty_applies_to_short_candidates() {
        let short = bleu("a b", "a b c d");
        let p = (3.0f64 / 3.0 * 2.0 / 2.0 * 1.0 * 1.0).powf(0.25);
        assert!((short - p * (1.0f64 - 2.0).exp()).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn self_bleu_is_permutation_invariant(
            texts in prop::collection::vec("[a-d]{1,2}( [a-d]{1,2}){0,6}", 2..6),
            seed in any::<u64>(),
        ) {
            use rand::seq::SliceRandom;
            use rand::SeedableRng;
            let mut shuffled = texts.clone();
            shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
            let a: Vec<&str> = texts.iter().map(String::as_str).collect();
            let b: Vec<&str> = shuffled.iter().map(String::as_str).collect();
            prop_assert_eq!(self_bleu(&a).unwrap(), self_bleu(&b).unwrap());
            let v = self_bleu(&a).unwrap();
            prop_assert!((0.0..=1.0).contains(&v));
        }
    }
}
