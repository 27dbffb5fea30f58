//! Offline deterministic stand-ins for the neural services.
//!
//! Identical request bytes always produce identical responses.

use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use super::{ClientError, Result, Route, Transport};

/// Placeholder token used to pad fills up to their length floor.
pub const FILL_TOKEN: &str = "<fill>";

/// Word-level synonym table used by the paraphrase stub. The first entry of
/// each list is the canonical substitution.
pub const SYNONYMS: &[(&str, &[&str])] = &[
    ("patients", &["subjects", "participants"]),
    ("showed", &["demonstrated", "revealed"]),
    ("increased", &["elevated", "raised"]),
    ("risk", &["likelihood", "chance"]),
    ("decreased", &["reduced", "lowered"]),
    ("study", &["trial", "investigation"]),
    ("treatment", &["therapy", "intervention"]),
    ("significant", &["notable", "marked"]),
    ("results", &["findings", "outcomes"]),
    ("improved", &["enhanced", "bettered"]),
    ("effect", &["impact", "influence"]),
    ("levels", &["concentrations", "amounts"]),
    ("associated", &["linked", "correlated"]),
    ("compared", &["contrasted", "weighed"]),
    ("method", &["approach", "technique"]),
    ("using", &["employing", "utilizing"]),
    ("observed", &["noted", "seen"]),
    ("group", &["cohort", "arm"]),
    ("reaction", &["process", "conversion"]),
    ("compound", &["substance", "molecule"]),
    ("yield", &["output", "return"]),
    ("synthesis", &["preparation", "production"]),
    ("reported", &["described", "documented"]),
    ("received", &["got", "were given"]),
    ("developed", &["built", "created"]),
    ("high", &["elevated", "large"]),
    ("low", &["small", "modest"]),
    ("new", &["novel", "fresh"]),
    ("rapid", &["fast", "quick"]),
    ("admitted", &["hospitalized", "taken in"]),
    ("pain", &["discomfort", "ache"]),
];

fn synonyms(word: &str) -> Option<&'static [&'static str]> {
    SYNONYMS.iter().find(|(w, _)| *w == word).map(|(_, alts)| *alts)
}

/// Uniform value in `[0, 1)` derived from the SHA-256 of the parts.
pub fn hash_unit(parts: &[&str]) -> f64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    let mut word = [0u8; 8];
    word.copy_from_slice(&digest[..8]);
    (u64::from_le_bytes(word) >> 11) as f64 / (1u64 << 53) as f64
}

fn match_case(template: &str, word: &str) -> String {
    if template.chars().next().is_some_and(char::is_uppercase) {
        let mut chars = word.chars();
        match chars.next() {
            Some(first) => first.to_uppercase().chain(chars).collect(),
            None => String::new(),
        }
    } else {
        word.to_owned()
    }
}

/// The `sample`-th synonym variant of `text`.
///
/// Each substitutable word is a mixed-radix digit whose values are its
/// alternatives followed by the original word, so sample 0 applies the
/// canonical substitution everywhere and consecutive samples differ.
pub fn synonym_transform(text: &str, sample: usize) -> String {
    let mut rest = sample;
    text.split_whitespace()
        .map(|tok| {
            let start = tok.find(|c: char| c.is_alphanumeric());
            let end = tok.rfind(|c: char| c.is_alphanumeric());
            let (Some(s), Some(e)) = (start, end) else {
                return tok.to_owned();
            };
            let e = e + tok[e..].chars().next().map_or(1, char::len_utf8);
            let core = &tok[s..e];
            match synonyms(&core.to_lowercase()) {
                Some(alts) => {
                    let radix = alts.len() + 1;
                    let digit = rest % radix;
                    rest /= radix;
                    let word = alts.get(digit).map_or_else(|| core.to_owned(), |w| match_case(core, w));
                    format!("{}{}{}", &tok[..s], word, &tok[e..])
                }
                None => tok.to_owned(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Infill stub fill: the hint's words reversed, padded with placeholders.
pub fn stub_fill(hint: Option<&str>, min_tokens: usize) -> String {
    let mut words: Vec<String> = hint
        .map(|h| h.split_whitespace().rev().map(str::to_owned).collect())
        .unwrap_or_default();
    while words.len() < min_tokens {
        words.push(FILL_TOKEN.to_owned());
    }
    words.join(" ")
}

/// Pulls the text to paraphrase out of a prompt built by `build_paraphrase_prompt`.
pub fn prompt_reference(prompt: &str) -> Option<&str> {
    let start = prompt.rfind("Original: ")? + "Original: ".len();
    let body = &prompt[start..];
    Some(body.strip_suffix("\nParaphrase:").unwrap_or(body).trim())
}

/// Stand-in for per-token log-probabilities of `text` under a fine-tuned model.
pub fn token_logprobs(context: &str, text: &str) -> Vec<f64> {
    text.split_whitespace()
        .enumerate()
        .map(|(i, tok)| -(0.05 + 3.0 * hash_unit(&["logprob", context, text, tok, &i.to_string()])))
        .collect()
}

/// Stand-in latent vector for `text`, components in `[-1, 1)`, never all zero.
pub fn embed(text: &str, dim: usize) -> Vec<f64> {
    let mut h: Vec<f64> = (0..dim)
        .map(|j| 2.0 * hash_unit(&["latent", text, &j.to_string()]) - 1.0)
        .collect();
    if h.iter().all(|v| *v == 0.0) {
        if let Some(first) = h.first_mut() {
            *first = 1.0;
        }
    }
    h
}

fn items(body: &Value) -> Result<&Vec<Value>> {
    body.get("items")
        .and_then(Value::as_array)
        .ok_or_else(|| ClientError::Protocol("request lacks items".into()))
}

/// Handles `/v1/generate` for both infill and paraphrase requests.
pub struct OfflineGenerate;

impl Transport for OfflineGenerate {
    fn post(&self, route: Route, body: &Value) -> Result<Value> {
        if route != Route::Generate {
            return Err(ClientError::Status { code: 404, body: route.path().into() });
        }
        let attempt = body.get("attempt").and_then(Value::as_u64).unwrap_or(0) as usize;
        let outputs: Vec<Value> = match body.get("kind").and_then(Value::as_str) {
            Some("infill") => items(body)?
                .iter()
                .map(|item| {
                    let fills: Vec<String> = item["spans"]
                        .as_array()
                        .map(|spans| {
                            spans
                                .iter()
                                .map(|s| {
                                    let min = s["min_tokens"].as_u64().unwrap_or(0) as usize;
                                    stub_fill(s.get("hint").and_then(Value::as_str), min)
                                })
                                .collect()
                        })
                        .unwrap_or_default();
                    json!(fills)
                })
                .collect(),
            Some("paraphrase") => items(body)?
                .iter()
                .map(|item| {
                    let prompt = item["prompt"].as_str().unwrap_or_default();
                    let reference = prompt_reference(prompt).unwrap_or_default();
                    let n = item["n"].as_u64().unwrap_or(1) as usize;
                    let offset = item["offset"].as_u64().unwrap_or(0) as usize;
                    let texts: Vec<String> = (0..n)
                        .map(|j| synonym_transform(reference, attempt * 64 + offset + j))
                        .collect();
                    json!(texts)
                })
                .collect(),
            other => {
                return Err(ClientError::Status { code: 400, body: format!("unknown kind {other:?}") })
            }
        };
        Ok(json!({ "outputs": outputs }))
    }
}

/// Handles `/v1/score` by hashing each pair.
pub struct OfflineScore;

impl Transport for OfflineScore {
    fn post(&self, route: Route, body: &Value) -> Result<Value> {
        if route != Route::Score {
            return Err(ClientError::Status { code: 404, body: route.path().into() });
        }
        let kind = body.get("kind").and_then(Value::as_str).unwrap_or_default();
        let outputs: Vec<f64> = items(body)?
            .iter()
            .map(|item| {
                let a = item["a"].as_str().unwrap_or_default();
                let b = item["b"].as_str().unwrap_or_default();
                let h = hash_unit(&[kind, a, b]);
                match kind {
                    "seq_loglik" => -(0.5 + 4.5 * h),
                    "entailment_supported" => h,
                    _ => 0.75 + 0.2 * h,
                }
            })
            .collect();
        Ok(json!({ "outputs": outputs }))
    }
}
