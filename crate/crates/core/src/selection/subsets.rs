use std::cmp::Ordering;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Result, SelectionError};

/// Binomial coefficient, saturating at `u128::MAX`.
pub fn binomial(n: usize, k: usize) -> u128 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = match acc.checked_mul((n - i) as u128) {
            Some(v) => v / (i + 1) as u128,
            None => return u128::MAX,
        };
    }
    acc
}

/// All `k`-subsets of `0..n` in lexicographic order.
#[derive(Clone, Debug)]
pub struct LexSubsets {
    n: usize,
    current: Option<Vec<usize>>,
}

impl LexSubsets {
    pub fn new(n: usize, k: usize) -> Self {
        LexSubsets { n, current: (k <= n).then(|| (0..k).collect()) }
    }
}

impl Iterator for LexSubsets {
    type Item = Vec<usize>;

    fn next(&mut self) -> Option<Vec<usize>> {
        let out = self.current.clone()?;
        let k = out.len();
        let mut next = out.clone();
        let mut i = k;
        loop {
            if i == 0 {
                self.current = None;
                break;
            }
            i -= 1;
            if next[i] < self.n - k + i {
                next[i] += 1;
                for j in i + 1..k {
                    next[j] = next[j - 1] + 1;
                }
                self.current = Some(next);
                break;
            }
        }
        Some(out)
    }
}

/// Subsets to search: every subset when `C(n, k) <= cap`, otherwise `cap`
/// seeded uniform samples (sorted, possibly repeating).
pub struct Enumeration {
    pub subsets: Box<dyn Iterator<Item = Vec<usize>>>,
    pub approximate: bool,
}

pub fn enumerate_k_subsets(n: usize, k: usize, cap: usize, seed: u64) -> Result<Enumeration> {
    if k == 0 || k > n {
        return Err(SelectionError::SubsetSize { n, k });
    }
    if binomial(n, k) <= cap as u128 {
        return Ok(Enumeration { subsets: Box::new(LexSubsets::new(n, k)), approximate: false });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let subsets = (0..cap).map(move |_| {
        let mut s = rand::seq::index::sample(&mut rng, n, k).into_vec();
        s.sort_unstable();
        s
    });
    Ok(Enumeration { subsets: Box::new(subsets), approximate: true })
}

/// Whether `cand` beats `best`: strictly better objective, or equal objective
/// and lexicographically smaller subset.
fn better(maximize: bool, obj: f64, cand: &[usize], best: Option<&(f64, Vec<usize>)>) -> bool {
    let Some((b, bs)) = best else { return true };
    let ord = if maximize { obj.total_cmp(b) } else { b.total_cmp(&obj) };
    match ord {
        Ordering::Greater => true,
        Ordering::Equal => cand < bs.as_slice(),
        Ordering::Less => false,
    }
}

/// Best subset by objective over the first enumeration; when sampling, a
/// greedily grown subset is also considered. Objectives must accept any
/// subset of size 2 or more (size 1 when `k = 1`).
pub fn optimize(
    n: usize,
    k: usize,
    cap: usize,
    seed: u64,
    maximize: bool,
    objective: &dyn Fn(&[usize]) -> f64,
) -> Result<(Vec<usize>, bool)> {
    let Enumeration { subsets, approximate } = enumerate_k_subsets(n, k, cap, seed)?;
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut consider = |s: Vec<usize>| {
        let obj = objective(&s);
        if better(maximize, obj, &s, best.as_ref()) {
            best = Some((obj, s));
        }
    };
    for s in subsets {
        consider(s);
    }
    if approximate {
        consider(greedy(n, k, maximize, objective));
    }
    Ok((best.expect("at least one subset").1, approximate))
}

/// Best pair first, then the element improving the objective most, until `k`.
fn greedy(n: usize, k: usize, maximize: bool, objective: &dyn Fn(&[usize]) -> f64) -> Vec<usize> {
    let start = k.min(2);
    let mut current: Option<(f64, Vec<usize>)> = None;
    for s in LexSubsets::new(n, start) {
        let obj = objective(&s);
        if better(maximize, obj, &s, current.as_ref()) {
            current = Some((obj, s));
        }
    }
    let mut chosen = current.expect("n >= k").1;
    while chosen.len() < k {
        let mut step: Option<(f64, Vec<usize>)> = None;
        for e in (0..n).filter(|e| !chosen.contains(e)) {
            let mut s = chosen.clone();
            s.push(e);
            s.sort_unstable();
            let obj = objective(&s);
            if better(maximize, obj, &s, step.as_ref()) {
                step = Some((obj, s));
            }
        }
        chosen = step.expect("elements remain").1;
    }
    chosen
}
