//! Loss kernels for calibration tuning: MLE, pairwise margin rank over
//! length-normalized scores, latent alignment and ConSeq. Everything here is a
//! pure function of supplied log-probabilities and latent vectors.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CandidatePool, SelectedSet, SetMembers};

/// Upper bound applied to `exp(ll)` of a negative in [`conseq_loss`].
pub const CONSEQ_CLAMP: f64 = 1.0 - 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("empty token sequence")]
    Empty,
    #[error("log-probability {0} is not finite and <= 0")]
    BadLogprob(f64),
    #[error("latent alignment needs at least 2 positives, got {0}")]
    TooFewPositives(usize),
    #[error("at least one negative is required")]
    NoNegatives,
    #[error("zero-norm latent vector")]
    ZeroVector,
    #[error("latent dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("invalid hyper-parameter: {0}")]
    Hyper(String),
    #[error("{example}: candidate {candidate} has no {what}")]
    Missing { example: String, candidate: String, what: &'static str },
}

pub type Result<T> = std::result::Result<T, LossError>;

fn check_logprobs(lp: &[f64]) -> Result<()> {
    match lp.iter().find(|x| !(x.is_finite() && **x <= 0.0)) {
        Some(&x) => Err(LossError::BadLogprob(x)),
        None => Ok(()),
    }
}

/// Negative log-likelihood of the reference: `-Σ log p`.
pub fn mle_loss(token_logprobs: &[f64]) -> Result<f64> {
    check_logprobs(token_logprobs)?;
    Ok(0.0 - token_logprobs.iter().sum::<f64>())
}

/// `τ · Σ log p / L^α`.
pub fn length_normalized_score(token_logprobs: &[f64], tau_scale: f64, alpha: f64) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(LossError::Empty);
    }
    check_logprobs(token_logprobs)?;
    let len = token_logprobs.len() as f64;
    Ok(tau_scale * token_logprobs.iter().sum::<f64>() / len.powf(alpha))
}

/// Hinge sum over every ordered pair `i < j` of
/// `max(0, f_j - f_i + (j - i) λ)`; `scores[0]` is the best-ranked candidate.
pub fn margin_rank_loss(scores: &[f64], lambda_margin: f64) -> f64 {
    let mut loss = 0.0;
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            loss += (scores[j] - scores[i] + (j - i) as f64 * lambda_margin).max(0.0);
        }
    }
    loss
}

/// Gradient of [`margin_rank_loss`] with respect to the scores. Pairs exactly
/// at the hinge contribute nothing.
pub fn margin_rank_grad(scores: &[f64], lambda_margin: f64) -> Vec<f64> {
    let mut grad = vec![0.0; scores.len()];
    for i in 0..scores.len() {
        for j in i + 1..scores.len() {
            if scores[j] - scores[i] + (j - i) as f64 * lambda_margin > 0.0 {
                grad[j] += 1.0;
                grad[i] -= 1.0;
            }
        }
    }
    grad
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContrastiveOptions {
    pub temperature: f64,
    /// Adds the anchor's own positive pair to the denominator (InfoNCE form).
    pub include_positive_in_denominator: bool,
}

impl Default for ContrastiveOptions {
    fn default() -> Self {
        ContrastiveOptions { temperature: 1.0, include_positive_in_denominator: false }
    }
}

/// Latent-alignment loss and its gradient with respect to every vector.
#[derive(Clone, Debug, PartialEq)]
pub struct Contrastive {
    pub loss: f64,
    pub grad_positives: Vec<Vec<f64>>,
    pub grad_negatives: Vec<Vec<f64>>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(a: &[f64], b: &[f64], na: f64, nb: f64) -> f64 {
    dot(a, b) / (na * nb)
}

/// Adds `w · ∂cos(a, b)/∂a` to `out`.
fn add_cosine_grad(out: &mut [f64], w: f64, a: &[f64], b: &[f64], na: f64, nb: f64) {
    let c = cosine(a, b, na, nb);
    for ((o, x), y) in out.iter_mut().zip(a).zip(b) {
        *o += w * (y / (na * nb) - c * x / (na * na));
    }
}

fn check_latents(positives: &[Vec<f64>], negatives: &[Vec<f64>], opts: &ContrastiveOptions) -> Result<()> {
    if positives.len() < 2 {
        return Err(LossError::TooFewPositives(positives.len()));
    }
    if negatives.is_empty() {
        return Err(LossError::NoNegatives);
    }
    if !(opts.temperature.is_finite() && opts.temperature > 0.0) {
        return Err(LossError::Hyper(format!("temperature {} must be > 0", opts.temperature)));
    }
    let dim = positives[0].len();
    for v in positives.iter().chain(negatives) {
        if v.len() != dim {
            return Err(LossError::Dimension { expected: dim, got: v.len() });
        }
        if dot(v, v) == 0.0 {
            return Err(LossError::ZeroVector);
        }
    }
    Ok(())
}

/// `-(1/C(|P|,2)) Σ_{i<j∈P} log[exp(cos(h_i,h_j)/τ) / Σ_{k∈N} exp(cos(h_i,h_k)/τ)]`,
/// anchored on the lower index of each positive pair.
pub fn contrastive_loss(positives: &[Vec<f64>], negatives: &[Vec<f64>], opts: &ContrastiveOptions) -> Result<Contrastive> {
    check_latents(positives, negatives, opts)?;
    let tau = opts.temperature;
    let norm = |v: &Vec<f64>| dot(v, v).sqrt();
    let np: Vec<f64> = positives.iter().map(norm).collect();
    let nn: Vec<f64> = negatives.iter().map(norm).collect();
    let pairs = (positives.len() * (positives.len() - 1) / 2) as f64;
    let dim = positives[0].len();
    let mut gp = vec![vec![0.0; dim]; positives.len()];
    let mut gn = vec![vec![0.0; dim]; negatives.len()];
    let mut total = 0.0;

    for i in 0..positives.len() {
        let neg_logits: Vec<f64> =
            (0..negatives.len()).map(|k| cosine(&positives[i], &negatives[k], np[i], nn[k]) / tau).collect();
        for j in i + 1..positives.len() {
            let pos_logit = cosine(&positives[i], &positives[j], np[i], np[j]) / tau;
            let mut logits = neg_logits.clone();
            if opts.include_positive_in_denominator {
                logits.push(pos_logit);
            }
            let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = logits.iter().map(|l| (l - m).exp()).sum();
            total += m + z.ln() - pos_logit;

            // ∂term/∂logit: -1 for the pair, softmax weight for each denominator entry.
            let soft: Vec<f64> = logits.iter().map(|l| (l - m).exp() / z).collect();
            let w_pair = (-1.0 + if opts.include_positive_in_denominator { soft[negatives.len()] } else { 0.0 })
                / (tau * pairs);
            let (a, b) = (&positives[i], &positives[j]);
            add_cosine_grad(&mut gp[i], w_pair, a, b, np[i], np[j]);
            add_cosine_grad(&mut gp[j], w_pair, b, a, np[j], np[i]);
            for k in 0..negatives.len() {
                let w = soft[k] / (tau * pairs);
                add_cosine_grad(&mut gp[i], w, a, &negatives[k], np[i], nn[k]);
                add_cosine_grad(&mut gn[k], w, &negatives[k], a, nn[k], np[i]);
            }
        }
    }
    Ok(Contrastive { loss: total / pairs, grad_positives: gp, grad_negatives: gn })
}

/// ConSeq value, gradient with respect to each sequence log-likelihood, and
/// whether any negative hit the clamp.
#[derive(Clone, Debug, PartialEq)]
pub struct Conseq {
    pub loss: f64,
    pub grad_positives: Vec<f64>,
    pub grad_negatives: Vec<f64>,
    pub clamped: bool,
}

/// `-mean_P ll - mean_N log(1 - exp(ll))` with `exp(ll) <= 1 - 1e-6`.
/// Negatives may be `-inf` (impossible sequences).
pub fn conseq_loss(positive_ll: &[f64], negative_ll: &[f64]) -> Result<Conseq> {
    if positive_ll.is_empty() || negative_ll.is_empty() {
        return Err(LossError::Empty);
    }
    check_logprobs(positive_ll)?;
    if let Some(&x) = negative_ll.iter().find(|x| x.is_nan() || **x > 0.0) {
        return Err(LossError::BadLogprob(x));
    }
    let (np, nn) = (positive_ll.len() as f64, negative_ll.len() as f64);
    let pos_term = -positive_ll.iter().sum::<f64>() / np;
    let mut clamped = false;
    let mut neg_term = 0.0;
    let mut grad_negatives = Vec::with_capacity(negative_ll.len());
    for &ll in negative_ll {
        let p = ll.exp();
        if p > CONSEQ_CLAMP {
            clamped = true;
            neg_term -= (1.0 - CONSEQ_CLAMP).ln();
            grad_negatives.push(0.0);
        } else {
            neg_term -= (-p).ln_1p();
            grad_negatives.push(p / (1.0 - p) / nn);
        }
    }
    Ok(Conseq {
        loss: pos_term + neg_term / nn,
        grad_positives: vec![-1.0 / np; positive_ll.len()],
        grad_negatives,
        clamped,
    })
}

/// `λ_MLE · mle + λ_CA · ca`.
pub fn combined_objective(mle: f64, ca: f64, lambda_mle: f64, lambda_ca: f64) -> f64 {
    lambda_mle * mle + lambda_ca * ca
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastObjective {
    LatentAlignment,
    Conseq,
    MarginRank,
}

/// Hyper-parameters for one calibration run. Defaults are the relevance
/// ranking values for the clinical corpus and latent alignment for contrast
/// sets.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    pub lambda_mle: f64,
    pub lambda_ca: f64,
    pub lambda_margin: f64,
    pub alpha: f64,
    pub tau_scale: f64,
    pub contrast_objective: ContrastObjective,
    pub contrastive: ContrastiveOptions,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda_mle: 0.1,
            lambda_ca: 1.0,
            lambda_margin: 0.001,
            alpha: 1.0,
            tau_scale: 0.01,
            contrast_objective: ContrastObjective::LatentAlignment,
            contrastive: ContrastiveOptions::default(),
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda_mle", self.lambda_mle), ("lambda_ca", self.lambda_ca), ("lambda_margin", self.lambda_margin)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(LossError::Hyper(format!("{name} = {v} must be >= 0")));
            }
        }
        for (name, v) in [("tau_scale", self.tau_scale), ("contrastive.temperature", self.contrastive.temperature)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(LossError::Hyper(format!("{name} = {v} must be > 0")));
            }
        }
        if !self.alpha.is_finite() {
            return Err(LossError::Hyper(format!("alpha = {} must be finite", self.alpha)));
        }
        Ok(())
    }
}

/// Loss values for one selected set.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub example_id: String,
    pub strategy: String,
    pub objective: String,
    /// Absent when the reference has no token log-probabilities.
    pub mle: Option<f64>,
    pub calibration: f64,
    pub total: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub clamped: bool,
}

/// Evaluates the calibration loss of `set` on `pool`. Rank sets and contrast
/// sets under `margin_rank` use candidate token log-probabilities; latent
/// alignment looks vectors up in `latents` by candidate id.
pub fn evaluate_set(
    set: &SelectedSet,
    pool: &CandidatePool,
    latents: &BTreeMap<String, Vec<f64>>,
    cfg: &LossConfig,
) -> Result<LossReport> {
    cfg.validate()?;
    let ex = &set.example_id;
    let missing = |id: &str, what| LossError::Missing { example: ex.clone(), candidate: id.to_owned(), what };
    let logprobs = |id: &str| {
        pool.get(id)
            .and_then(|c| c.token_logprobs.as_deref())
            .ok_or_else(|| missing(id, "token_logprobs"))
    };
    let scores = |ids: &[&str]| {
        ids.iter()
            .map(|id| length_normalized_score(logprobs(id)?, cfg.tau_scale, cfg.alpha))
            .collect::<Result<Vec<f64>>>()
    };
    let mut clamped = false;
    let (objective, calibration) = match &set.members {
        SetMembers::Relevance { rank_order } => {
            let ids: Vec<&str> = rank_order.iter().map(String::as_str).collect();
            ("margin_rank", margin_rank_loss(&scores(&ids)?, cfg.lambda_margin))
        }
        SetMembers::Faithfulness { positives, negatives } => match cfg.contrast_objective {
            ContrastObjective::MarginRank => {
                // Positives rank above negatives; each group is already in
                // descending quality order.
                let ids: Vec<&str> = positives.iter().chain(negatives).map(String::as_str).collect();
                ("margin_rank", margin_rank_loss(&scores(&ids)?, cfg.lambda_margin))
            }
            ContrastObjective::LatentAlignment => {
                let vecs = |ids: &[String]| {
                    ids.iter()
                        .map(|id| latents.get(id).cloned().ok_or_else(|| missing(id, "latent vector")))
                        .collect::<Result<Vec<_>>>()
                };
                let c = contrastive_loss(&vecs(positives)?, &vecs(negatives)?, &cfg.contrastive)?;
                ("latent_alignment", c.loss)
            }
            ContrastObjective::Conseq => {
                let ll = |ids: &[String]| {
                    ids.iter()
                        .map(|id| logprobs(id).map(|lp| lp.iter().sum::<f64>()))
                        .collect::<Result<Vec<f64>>>()
                };
                let c = conseq_loss(&ll(positives)?, &ll(negatives)?)?;
                clamped = c.clamped;
                ("conseq", c.loss)
            }
        },
    };
    let mle = pool.example.reference_token_logprobs.as_deref().map(mle_loss).transpose()?;
    Ok(LossReport {
        example_id: ex.clone(),
        strategy: set.strategy.to_string(),
        objective: objective.to_owned(),
        mle,
        calibration,
        total: mle.map(|m| combined_objective(m, calibration, cfg.lambda_mle, cfg.lambda_ca)),
        clamped,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn close(a: f64, b: f64) {
        assert!((a - b).abs() <= 1e-9, "{a} vs {b}");
    }

    #[test]
    fn mle_examples() {
        close(mle_loss(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
        close(mle_loss(&[-1.0, -1.0]).unwrap(), 2.0);
        close(mle_loss(&[-0.5, -1.5, -1.0]).unwrap(), 3.0);
        assert_eq!(mle_loss(&[0.5]), Err(LossError::BadLogprob(0.5)));
    }

    #[test]
    fn length_normalized_examples() {
        close(length_normalized_score(&[-1.0, -1.0], 1.0, 1.0).unwrap(), -1.0);
        close(length_normalized_score(&[-1.0, -1.0], 1.0, 0.0).unwrap(), -2.0);
        close(length_normalized_score(&[-2.0, -2.0], 0.01, 2.0).unwrap(), -0.01);
        assert_eq!(length_normalized_score(&[], 1.0, 1.0), Err(LossError::Empty));
    }

    #[test]
    fn margin_examples() {
        close(margin_rank_loss(&[3.0, 2.0, 1.0, 0.5], 0.0), 0.0);
        close(margin_rank_loss(&[1.0; 4], 0.0), 0.0);
        close(margin_rank_loss(&[-1.0, -0.5], 0.001), 0.501);
        // three pairs, margins 1, 2 and 1 times λ
        close(margin_rank_loss(&[0.0, 0.0, 0.0], 0.5), 0.5 + 1.0 + 0.5);
    }

    #[test]
    fn contrastive_examples() {
        let o = ContrastiveOptions::default();
        close(contrastive_loss(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[vec![0.0, 1.0]], &o).unwrap().loss, -1.0);
        close(contrastive_loss(&[vec![1.0, 0.0], vec![0.0, 1.0]], &[vec![-1.0, 0.0]], &o).unwrap().loss, -1.0);
        let base = contrastive_loss(&[vec![1.0, 2.0], vec![0.5, -1.0], vec![2.0, 2.0]], &[vec![-1.0, 0.3]], &o).unwrap();
        let scaled =
            contrastive_loss(&[vec![3.0, 6.0], vec![1.5, -3.0], vec![6.0, 6.0]], &[vec![-3.0, 0.9]], &o).unwrap();
        close(base.loss, scaled.loss);
    }

    #[test]
    fn contrastive_with_positive_in_denominator() {
        let o = ContrastiveOptions { include_positive_in_denominator: true, ..Default::default() };
        // -log(e / (e + 1))
        let v = contrastive_loss(&[vec![1.0, 0.0], vec![1.0, 0.0]], &[vec![0.0, 1.0]], &o).unwrap().loss;
        close(v, -(1f64.exp() / (1f64.exp() + 1.0)).ln());
        assert!(v > 0.0);
    }

    #[test]
    fn contrastive_errors() {
        let o = ContrastiveOptions::default();
        assert_eq!(contrastive_loss(&[vec![1.0]], &[vec![1.0]], &o).unwrap_err(), LossError::TooFewPositives(1));
        assert_eq!(contrastive_loss(&[vec![1.0], vec![1.0]], &[], &o).unwrap_err(), LossError::NoNegatives);
        assert_eq!(
            contrastive_loss(&[vec![1.0, 0.0], vec![0.0, 0.0]], &[vec![1.0, 1.0]], &o).unwrap_err(),
            LossError::ZeroVector
        );
        assert!(matches!(
            contrastive_loss(&[vec![1.0, 0.0], vec![1.0]], &[vec![1.0, 1.0]], &o).unwrap_err(),
            LossError::Dimension { .. }
        ));
    }

    #[test]
    fn conseq_examples() {
        let perfect = conseq_loss(&[0.0, 0.0], &[f64::NEG_INFINITY]).unwrap();
        close(perfect.loss, 0.0);
        assert!(!perfect.clamped);
        let half = conseq_loss(&[0.0], &[0.5f64.ln()]).unwrap();
        close(half.loss, 2f64.ln());
        let certain = conseq_loss(&[0.0], &[0.0]).unwrap();
        assert!(certain.clamped && certain.loss.is_finite());
        close(certain.loss, -(1e-6f64).ln());
    }

    #[test]
    fn combined_examples() {
        close(combined_objective(2.5, 7.0, 1.0, 0.0), 2.5);
        close(combined_objective(2.0, 3.0, 0.1, 1.0), 3.2);
        close(combined_objective(2.0, 3.0, 0.0, 0.0), 0.0);
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn margin_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let f: Vec<f64> = (0..5).map(|_| rng.gen_range(-2.0..0.0)).collect();
            let g = margin_rank_grad(&f, 0.001);
            for i in 0..f.len() {
                // Piecewise linear: a wider step keeps rounding noise down.
                let h = 1e-4;
                let (mut up, mut down) = (f.clone(), f.clone());
                up[i] += h;
                down[i] -= h;
                let fd = (margin_rank_loss(&up, 0.001) - margin_rank_loss(&down, 0.001)) / (2.0 * h);
                assert!(rel_err(fd, g[i]) <= 1e-5, "{fd} vs {}", g[i]);
            }
        }
    }

    #[test]
    fn contrastive_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for include in [false, true] {
            let o = ContrastiveOptions { temperature: 0.5, include_positive_in_denominator: include };
            for _ in 0..20 {
                let mut v = |n: usize| -> Vec<Vec<f64>> {
                    (0..n).map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
                };
                let (p, n) = (v(3), v(2));
                let c = contrastive_loss(&p, &n, &o).unwrap();
                let h = 1e-6;
                for (which, grads) in [(0, &c.grad_positives), (1, &c.grad_negatives)] {
                    for (vi, g) in grads.iter().enumerate() {
                        for d in 0..4 {
                            let bump = |delta: f64| {
                                let (mut p2, mut n2) = (p.clone(), n.clone());
                                if which == 0 { p2[vi][d] += delta } else { n2[vi][d] += delta }
                                contrastive_loss(&p2, &n2, &o).unwrap().loss
                            };
                            let fd = (bump(h) - bump(-h)) / (2.0 * h);
                            assert!((fd - g[d]).abs() <= 1e-5 * fd.abs().max(g[d].abs()).max(1.0), "{fd} vs {}", g[d]);
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn conseq_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let p: Vec<f64> = (0..3).map(|_| rng.gen_range(-20.0..0.0)).collect();
            let n: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..-0.01)).collect();
            let c = conseq_loss(&p, &n).unwrap();
            let h = 1e-6;
            for i in 0..3 {
                let (mut up, mut down) = (n.clone(), n.clone());
                up[i] += h;
                down[i] -= h;
                let fd = (conseq_loss(&p, &up).unwrap().loss - conseq_loss(&p, &down).unwrap().loss) / (2.0 * h);
                assert!(rel_err(fd, c.grad_negatives[i]) <= 1e-5);
                let (mut up, mut down) = (p.clone(), p.clone());
                up[i] += h;
                down[i] -= h;
                let fd = (conseq_loss(&up, &n).unwrap().loss - conseq_loss(&down, &n).unwrap().loss) / (2.0 * h);
                assert!(rel_err(fd, c.grad_positives[i]) <= 1e-5);
            }
        }
    }

    fn vecs(n: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 3), n)
            .prop_filter("non-zero", |vs| vs.iter().all(|v| dot(v, v) > 1e-3))
    }

    proptest! {
        #[test]
        fn margin_translation_invariant(f in prop::collection::vec(-3.0f64..0.0, 2..8), c in -5.0f64..5.0) {
            let shifted: Vec<f64> = f.iter().map(|x| x + c).collect();
            prop_assert!((margin_rank_loss(&f, 0.001) - margin_rank_loss(&shifted, 0.001)).abs() < 1e-9);
        }

        #[test]
        fn margin_monotone_in_ends(f in prop::collection::vec(-3.0f64..0.0, 2..8), d in 0.0f64..2.0) {
            let base = margin_rank_loss(&f, 0.001);
            let mut best_up = f.clone();
            best_up[0] += d;
            prop_assert!(margin_rank_loss(&best_up, 0.001) <= base + 1e-12);
            let mut worst_up = f.clone();
            *worst_up.last_mut().unwrap() += d;
            prop_assert!(margin_rank_loss(&worst_up, 0.001) >= base - 1e-12);
        }

        #[test]
        fn contrastive_single_vector_scaling(p in vecs(3), n in vecs(2), s in 0.1f64..10.0, which in 0usize..5) {
            let o = ContrastiveOptions::default();
            let base = contrastive_loss(&p, &n, &o).unwrap().loss;
            let (mut p2, mut n2) = (p.clone(), n.clone());
            let v = if which < 3 { &mut p2[which] } else { &mut n2[which - 3] };
            v.iter_mut().for_each(|x| *x *= s);
            prop_assert!((base - contrastive_loss(&p2, &n2, &o).unwrap().loss).abs() < 1e-9);
        }

        #[test]
        fn conseq_nonnegative(p in prop::collection::vec(-10.0f64..=0.0, 1..5), n in prop::collection::vec(-10.0f64..=0.0, 1..5)) {
            prop_assert!(conseq_loss(&p, &n).unwrap().loss >= 0.0);
        }
    }

    #[test]
    fn contrastive_decreases_as_positive_pair_aligns() {
        let o = ContrastiveOptions::default();
        let n = vec![vec![0.0, 0.0, 1.0]];
        let mut last = f64::INFINITY;
        for step in 0..=10 {
            let t = std::f64::consts::FRAC_PI_2 * (1.0 - step as f64 / 10.0);
            let p = vec![vec![1.0, 0.0, 0.2], vec![t.cos(), t.sin(), 0.2]];
            let v = contrastive_loss(&p, &n, &o).unwrap().loss;
            assert!(v < last);
            last = v;
        }
    }

    #[test]
    fn conseq_approaches_zero() {
        let v = conseq_loss(&[-1e-12, -1e-12], &[-60.0]).unwrap().loss;
        assert!(v.abs() < 1e-11);
    }
}
