//! Synthetic negatives: entity/number swaps and mask-and-fill, plus pool assembly.

mod index;
mod pool;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};
use thiserror::Error;

pub use index::EntityIndex;
pub use pool::{build_pool, BeamConfig, MethodConfig, ParaphraseConfig, PoolConfig, PoolInputs};

use crate::clients::{sentinel, Client, ClientError, SpanSlot};
use crate::model::{Example, Span, SpanTarget};
use crate::text;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CorruptionError {
    #[error("swap produced identity")]
    Identity,
    #[error("no noun phrases to mask")]
    NoNounPhrases,
    #[error("rate {0} outside (0, 1]")]
    Rate(f64),
    #[error("span [{start}, {end}) out of bounds")]
    OutOfBounds { start: usize, end: usize },
    #[error("spans [{0}, {1}) and [{2}, {3}) overlap")]
    Overlap(usize, usize, usize, usize),
    #[error("example {example}: no beams from generator {generator}")]
    MissingBeams { example: String, generator: String },
    #[error("example {example}: {source}")]
    Client {
        example: String,
        #[source]
        source: ClientError,
    },
    #[error("example {0}: {1}")]
    Invalid(String, String),
}

pub type Result<T> = std::result::Result<T, CorruptionError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SwapMode {
    Intrinsic,
    Extrinsic,
}

/// Number of spans to corrupt: `max(1, round(rate * n))`, half rounding up, 0 when `n = 0`.
pub fn corruption_count(rate: f64, n: usize) -> usize {
    if n == 0 {
        return 0;
    }
    ((rate * n as f64 + 0.5).floor() as usize).clamp(1, n)
}

fn check_rate(rate: f64) -> Result<()> {
    if rate > 0.0 && rate <= 1.0 {
        Ok(())
    } else {
        Err(CorruptionError::Rate(rate))
    }
}

/// Seed from a base seed and labelled parts, stable across platforms.
pub fn derive_seed(base: u64, parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(base.to_le_bytes());
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    u64::from_le_bytes(word)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Replacement {
    pub span: Span,
    pub surface: String,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SwapPlan {
    pub mode: SwapMode,
    pub rate: f64,
    pub entity_replacements: Vec<Replacement>,
    pub number_replacements: Vec<Replacement>,
}

impl SwapPlan {
    pub fn replacements(&self) -> impl Iterator<Item = &Replacement> {
        self.entity_replacements.iter().chain(&self.number_replacements)
    }

    pub fn is_empty(&self) -> bool {
        self.entity_replacements.is_empty() && self.number_replacements.is_empty()
    }
}

fn fold(s: &str) -> String {
    text::nfc(s).to_lowercase()
}

fn sorted_unique(mut v: Vec<String>) -> Vec<String> {
    v.sort();
    v.dedup();
    v
}

/// Plans one list's replacements. The slot order is a seeded shuffle, so a
/// higher rate takes a longer prefix of the same order; each slot's
/// replacement is drawn from its own seeded stream, independent of the rate.
fn plan_list(
    slots: &[&Span],
    rate: f64,
    seed: u64,
    list: &str,
    pool_for: &dyn Fn(&Span) -> Vec<String>,
) -> Vec<Replacement> {
    let want = corruption_count(rate, slots.len());
    let mut order: Vec<usize> = (0..slots.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[list, "order"])));
    let mut out = Vec::new();
    for &i in order.iter().take(want) {
        let span = slots[i];
        let options: Vec<String> = pool_for(span)
            .into_iter()
            .filter(|s| fold(s) != fold(&span.surface))
            .collect();
        if options.is_empty() {
            log::warn!("no {} replacement for {:?} ({})", list, span.surface, span.semantic_type);
            continue;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[list, "slot", &i.to_string()]));
        let surface = options[rng.gen_range(0..options.len())].clone();
        out.push(Replacement { span: span.clone(), surface });
    }
    out.sort_by_key(|r| r.span.start);
    out
}

/// Plans swaps of reference entities and numbers, each list counted separately.
///
/// Numbers overlapping any reference entity are not eligible, so the two lists
/// never produce overlapping replacements.
pub fn plan_swaps(
    example: &Example,
    mode: SwapMode,
    rate: f64,
    index: &EntityIndex,
    seed: u64,
) -> Result<SwapPlan> {
    check_rate(rate)?;
    let ann = &example.annotations;
    let ref_entities: Vec<&Span> = Example::spans(&ann.entities, SpanTarget::Reference).collect();
    let ref_numbers: Vec<&Span> = Example::spans(&ann.numbers, SpanTarget::Reference)
        .filter(|n| !ref_entities.iter().any(|e| e.overlaps(n)))
        .collect();

    let source_surfaces: Vec<&Span> = Example::spans(&ann.entities, SpanTarget::Source)
        .chain(Example::spans(&ann.numbers, SpanTarget::Source))
        .collect();
    let in_source: std::collections::HashSet<String> =
        source_surfaces.iter().map(|s| fold(&s.surface)).collect();

    let pool_for = |span: &Span| -> Vec<String> {
        match mode {
            SwapMode::Intrinsic => sorted_unique(
                source_surfaces
                    .iter()
                    .filter(|s| s.semantic_type == span.semantic_type)
                    .map(|s| s.surface.clone())
                    .collect(),
            ),
            SwapMode::Extrinsic => index
                .surfaces(&span.semantic_type)
                .filter(|s| !in_source.contains(&fold(s)))
                .map(str::to_owned)
                .collect(),
        }
    };

    let plan = SwapPlan {
        mode,
        rate,
        entity_replacements: plan_list(&ref_entities, rate, seed, "entities", &pool_for),
        number_replacements: plan_list(&ref_numbers, rate, seed, "numbers", &pool_for),
    };
    if plan.is_empty() {
        return Err(CorruptionError::Identity);
    }
    Ok(plan)
}

/// Splices `(start, end, replacement)` char ranges into `text`, right to left.
fn splice(text: &str, mut edits: Vec<(usize, usize, String)>) -> Result<String> {
    edits.sort_by_key(|e| e.0);
    for w in edits.windows(2) {
        if w[1].0 < w[0].1 {
            return Err(CorruptionError::Overlap(w[0].0, w[0].1, w[1].0, w[1].1));
        }
    }
    let mut out = text.to_owned();
    for (start, end, replacement) in edits.into_iter().rev() {
        let oob = || CorruptionError::OutOfBounds { start, end };
        if start >= end {
            return Err(oob());
        }
        let b0 = text::char_to_byte(text, start).ok_or_else(oob)?;
        let b1 = text::char_to_byte(text, end).ok_or_else(oob)?;
        out.replace_range(b0..b1, &replacement);
    }
    Ok(out)
}

/// Applies a swap plan; text outside the replaced spans is untouched.
pub fn apply_swaps(reference_text: &str, plan: &SwapPlan) -> Result<String> {
    splice(
        reference_text,
        plan.replacements()
            .map(|r| (r.span.start, r.span.end, r.surface.clone()))
            .collect(),
    )
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskedSpan {
    pub span: Span,
    pub masked_tokens: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MaskPlan {
    pub rate: f64,
    /// Chosen noun phrases in text order.
    pub spans: Vec<MaskedSpan>,
}

/// Picks `max(1, round(m * n))` reference noun phrases. Phrases are drawn in
/// a seeded order; a pick overlapping an earlier one is dropped and the next
/// phrase in the order is tried instead.
pub fn plan_masks(example: &Example, rate: f64, seed: u64) -> Result<MaskPlan> {
    check_rate(rate)?;
    let phrases: Vec<&Span> =
        Example::spans(&example.annotations.noun_phrases, SpanTarget::Reference).collect();
    if phrases.is_empty() {
        return Err(CorruptionError::NoNounPhrases);
    }
    let want = corruption_count(rate, phrases.len());
    let mut order: Vec<usize> = (0..phrases.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &["noun_phrases"])));
    let mut chosen: Vec<&Span> = Vec::new();
    for i in order {
        if chosen.len() == want {
            break;
        }
        if chosen.iter().all(|c| !c.overlaps(phrases[i])) {
            chosen.push(phrases[i]);
        }
    }
    chosen.sort_by_key(|s| s.start);
    Ok(MaskPlan {
        rate,
        spans: chosen
            .into_iter()
            .map(|s| MaskedSpan { span: s.clone(), masked_tokens: text::token_count(&s.surface) })
            .collect(),
    })
}

/// Text with each planned span replaced by its sentinel.
pub fn masked_text(reference_text: &str, plan: &MaskPlan) -> Result<String> {
    splice(
        reference_text,
        plan.spans
            .iter()
            .enumerate()
            .map(|(i, m)| (m.span.start, m.span.end, sentinel(i)))
            .collect(),
    )
}

/// Masks the planned spans and splices in the infill model's fills.
///
/// The original span text travels with each slot as a hint.
pub fn mask_and_fill(example: &Example, plan: &MaskPlan, client: &Client) -> Result<String> {
    if plan.spans.is_empty() {
        return Ok(example.reference_text.clone());
    }
    let masked = masked_text(&example.reference_text, plan)?;
    let slots: Vec<SpanSlot> = plan
        .spans
        .iter()
        .map(|m| SpanSlot { min_tokens: m.masked_tokens, hint: Some(m.span.surface.clone()) })
        .collect();
    let fills = client.infill(&masked, &slots).map_err(|source| CorruptionError::Client {
        example: example.example_id.clone(),
        source,
    })?;
    splice(
        &example.reference_text,
        plan.spans
            .iter()
            .zip(fills)
            .map(|(m, fill)| (m.span.start, m.span.end, fill))
            .collect(),
    )
}
