use std::collections::{BTreeMap, HashSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    apply_swaps, derive_seed, mask_and_fill, plan_masks, plan_swaps, CorruptionError, EntityIndex,
    Result, SwapMode,
};
use crate::clients::{Clients, ParaphraseRequest};
use crate::io::BeamRecord;
use crate::model::{Candidate, CandidatePool, Example, Method, PoolKind, ScoreVector};
use crate::text;

/// One corruption method run at several rates, `per_variant` samples each.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodConfig {
    #[serde(default = "yes")]
    pub enabled: bool,
    pub rates: Vec<f64>,
    #[serde(default = "ten")]
    pub per_variant: usize,
}

fn yes() -> bool {
    true
}

fn ten() -> usize {
    10
}

impl MethodConfig {
    fn with_rates(rates: &[f64]) -> Self {
        MethodConfig { enabled: true, rates: rates.to_vec(), per_variant: 10 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ParaphraseConfig {
    pub enabled: bool,
    pub n_outputs: usize,
    pub per_call: usize,
    pub temperature: f64,
    pub instruction: String,
}

impl Default for ParaphraseConfig {
    fn default() -> Self {
        ParaphraseConfig {
            enabled: true,
            n_outputs: 5,
            per_call: 1,
            temperature: 0.7,
            instruction: "Paraphrase this abstract.".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BeamConfig {
    pub generators: Vec<String>,
    pub per_generator: usize,
    /// Diversity penalty recorded with each beam candidate.
    pub diversity_penalty: f64,
}

impl Default for BeamConfig {
    fn default() -> Self {
        BeamConfig {
            generators: vec!["primera".into(), "longt5".into()],
            per_generator: 10,
            diversity_penalty: 1.0,
        }
    }
}

/// Pool construction parameters. Defaults give 66 faithfulness and 20
/// relevance candidates per example.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoolConfig {
    pub mask_and_fill: MethodConfig,
    pub swap_intrinsic: MethodConfig,
    pub swap_extrinsic: MethodConfig,
    pub paraphrase: ParaphraseConfig,
    pub reference: bool,
    pub diverse_beam: BeamConfig,
    /// Fresh seeds tried when a sample repeats an earlier candidate.
    pub max_attempts: usize,
}

impl Default for PoolConfig {
    fn default() -> Self {
        PoolConfig {
            mask_and_fill: MethodConfig::with_rates(&[0.25, 0.75]),
            swap_intrinsic: MethodConfig::with_rates(&[0.5, 1.0]),
            swap_extrinsic: MethodConfig::with_rates(&[0.5, 1.0]),
            paraphrase: ParaphraseConfig::default(),
            reference: true,
            diverse_beam: BeamConfig::default(),
            max_attempts: 20,
        }
    }
}

/// Shared read-only inputs for pool construction.
#[derive(Clone, Copy, Debug)]
pub struct PoolInputs<'a> {
    pub index: &'a EntityIndex,
    pub beams: &'a [BeamRecord],
    pub demonstrations: &'a [(String, String)],
}

fn variant_label(i: usize, n: usize) -> String {
    match (i, n) {
        (0, 2) => "low".into(),
        (1, 2) => "high".into(),
        _ => format!("v{i}"),
    }
}

struct Builder<'a> {
    example: &'a Example,
    candidates: Vec<Candidate>,
    seen: HashSet<String>,
}

impl Builder<'_> {
    fn push(&mut self, id: String, method: Method, params: BTreeMap<String, Value>, text: String) -> bool {
        if !self.seen.insert(text::nfc(&text)) && method != Method::Reference {
            return false;
        }
        self.candidates.push(Candidate {
            candidate_id: id,
            example_id: self.example.example_id.clone(),
            method,
            method_params: params,
            polarity_hint: method.polarity(),
            beam_rank: None,
            text,
            token_logprobs: None,
            scores: ScoreVector::default(),
        });
        true
    }

    /// Draws `per_variant` distinct samples per rate, re-seeding repeats.
    fn corrupt(
        &mut self,
        method: Method,
        cfg: &MethodConfig,
        max_attempts: usize,
        base_seed: u64,
        sample: &dyn Fn(f64, u64) -> Result<String>,
    ) -> Result<()> {
        if !cfg.enabled {
            return Ok(());
        }
        let rate_key = if method == Method::MaskAndFill { "m" } else { "s" };
        let ex = self.example.example_id.clone();
        for (vi, &rate) in cfg.rates.iter().enumerate() {
            let variant = variant_label(vi, cfg.rates.len());
            for idx in 0..cfg.per_variant {
                let mut placed = false;
                for attempt in 0..max_attempts.max(1) {
                    let parts = [ex.as_str(), method.as_str(), &variant, &idx.to_string(), &attempt.to_string()];
                    let seed = derive_seed(base_seed, &parts);
                    let text = sample(rate, seed)?;
                    let params = BTreeMap::from([
                        (rate_key.to_owned(), json!(rate)),
                        ("variant".to_owned(), json!(variant)),
                        ("seed".to_owned(), json!(seed)),
                    ]);
                    let id = format!("{ex}:{}_{variant}:{idx:02}", method.as_str());
                    if self.push(id, method, params, text) {
                        placed = true;
                        break;
                    }
                }
                if !placed {
                    log::warn!("{ex}: {} {variant} sample {idx} repeated after {max_attempts} attempts; dropped", method);
                }
            }
        }
        Ok(())
    }
}

/// Builds the candidate pool for one example.
///
/// Faithfulness pools hold the swap and mask-and-fill variants, paraphrases
/// and the reference; relevance pools hold the ingested diverse-beam outputs.
/// Candidates come back sorted by id; a sample whose text repeats an earlier
/// candidate is re-drawn with a fresh seed, up to `max_attempts` times.
pub fn build_pool(
    example: &Example,
    pool_kind: PoolKind,
    config: &PoolConfig,
    clients: &Clients,
    inputs: PoolInputs<'_>,
    seed: u64,
) -> Result<CandidatePool> {
    let ex_id = &example.example_id;
    let mut b = Builder {
        example,
        candidates: Vec::new(),
        seen: HashSet::from([text::nfc(&example.reference_text)]),
    };
    match pool_kind {
        PoolKind::Faithfulness => {
            let client_err = |source| CorruptionError::Client { example: ex_id.clone(), source };
            b.corrupt(Method::MaskAndFill, &config.mask_and_fill, config.max_attempts, seed, &|m, s| {
                mask_and_fill(example, &plan_masks(example, m, s)?, &clients.infill)
            })?;
            for (method, cfg, mode) in [
                (Method::SwapIntrinsic, &config.swap_intrinsic, SwapMode::Intrinsic),
                (Method::SwapExtrinsic, &config.swap_extrinsic, SwapMode::Extrinsic),
            ] {
                b.corrupt(method, cfg, config.max_attempts, seed, &|s, sd| {
                    apply_swaps(&example.reference_text, &plan_swaps(example, mode, s, inputs.index, sd)?)
                })?;
            }
            let p = &config.paraphrase;
            if p.enabled && p.n_outputs > 0 {
                let outputs = clients
                    .paraphrase
                    .paraphrase(&ParaphraseRequest {
                        instruction: &p.instruction,
                        demonstrations: inputs.demonstrations,
                        reference: &example.reference_text,
                        temperature: p.temperature,
                        n_outputs: p.n_outputs,
                        per_call: p.per_call,
                    })
                    .map_err(client_err)?;
                for (i, text) in outputs.into_iter().enumerate() {
                    let params = BTreeMap::from([("t".to_owned(), json!(p.temperature))]);
                    if !b.push(format!("{ex_id}:paraphrase:{i:02}"), Method::Paraphrase, params, text) {
                        log::warn!("{ex_id}: paraphrase {i} repeats an earlier candidate; dropped");
                    }
                }
            }
            if config.reference {
                let text = example.reference_text.clone();
                b.push(format!("{ex_id}:reference:00"), Method::Reference, BTreeMap::new(), text);
                if let Some(c) = b.candidates.last_mut() {
                    c.token_logprobs = example.reference_token_logprobs.clone();
                }
            }
        }
        PoolKind::Relevance => {
            let cfg = &config.diverse_beam;
            for generator in &cfg.generators {
                let mut beams: Vec<&BeamRecord> = inputs
                    .beams
                    .iter()
                    .filter(|r| &r.example_id == ex_id && &r.generator == generator)
                    .collect();
                if beams.is_empty() {
                    return Err(CorruptionError::MissingBeams { example: ex_id.clone(), generator: generator.clone() });
                }
                beams.sort_by_key(|r| r.beam_rank);
                for r in beams.into_iter().take(cfg.per_generator) {
                    let params = BTreeMap::from([
                        ("generator".to_owned(), json!(generator)),
                        ("p".to_owned(), json!(cfg.diversity_penalty)),
                    ]);
                    let id = format!("{ex_id}:beam_{generator}:{:02}", r.beam_rank);
                    let text = r.text.clone();
                    if b.push(id, Method::DiverseBeam, params, text) {
                        let c = b.candidates.last_mut().expect("just pushed");
                        c.beam_rank = Some(r.beam_rank);
                        c.token_logprobs = r.token_logprobs.clone();
                    } else {
                        log::warn!("{ex_id}: {generator} beam {} repeats an earlier candidate; dropped", r.beam_rank);
                    }
                }
            }
        }
    }
    let mut candidates = b.candidates;
    candidates.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
    let pool = CandidatePool { example: example.clone(), candidates, pool_kind };
    pool.validate()
        .map_err(|e| CorruptionError::Invalid(ex_id.clone(), e.to_string()))?;
    Ok(pool)
}
