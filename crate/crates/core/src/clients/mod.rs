//! Clients for the three external neural services: span infilling,
//! paraphrase generation and pairwise scoring.
//!
//! All three share one wire contract: a single `POST` per batch with body
//! `{"kind", "items": [..], "attempt"}` answered by `{"outputs": [..]}`.
//! Generation goes to `{base_url}/v1/generate`, scoring to `{base_url}/v1/score`.

mod http;
pub mod stub;

use std::collections::HashSet;
use std::fmt;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

pub use http::HttpTransport;

use crate::text;

/// Environment variable that forces offline stubs when set to `1`.
pub const OFFLINE_ENV: &str = "CALSET_OFFLINE";

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ClientError {
    #[error("transport failure: {0}")]
    Transport(String),
    #[error("service returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("span {span}: fill has {got} tokens, at least {need} required")]
    UnderFill { span: usize, got: usize, need: usize },
    #[error("only {got} distinct outputs after retries, {wanted} requested")]
    NotDistinct { wanted: usize, got: usize },
    #[error("output {index} = {value} outside the allowed range for {kind}")]
    OutOfRange { index: usize, value: f64, kind: ScoreKind },
    #[error("invalid endpoint: {0}")]
    Endpoint(String),
}

impl ClientError {
    fn retryable(&self) -> bool {
        match self {
            ClientError::Transport(_) => true,
            ClientError::Status { code, .. } => *code >= 500,
            _ => false,
        }
    }
}

pub type Result<T> = std::result::Result<T, ClientError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServiceEndpoint {
    pub base_url: String,
    #[serde(with = "millis", rename = "timeout_ms", default = "default_timeout")]
    pub timeout: Duration,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default)]
    pub auth_token: Option<String>,
}

fn default_timeout() -> Duration {
    Duration::from_secs(60)
}

fn default_retries() -> u32 {
    3
}

mod millis {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        Ok(Duration::from_millis(u64::deserialize(d)?))
    }
}

impl ServiceEndpoint {
    pub fn new(base_url: impl Into<String>) -> Self {
        ServiceEndpoint {
            base_url: base_url.into(),
            timeout: default_timeout(),
            max_retries: default_retries(),
            auth_token: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.timeout.is_zero() {
            return Err(ClientError::Endpoint("timeout must be > 0".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(ClientError::Endpoint(format!(
                "base_url {:?} must start with http:// or https://",
                self.base_url
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Route {
    Generate,
    Score,
}

impl Route {
    pub fn path(self) -> &'static str {
        match self {
            Route::Generate => "/v1/generate",
            Route::Score => "/v1/score",
        }
    }
}

/// Sends one JSON body and returns the decoded JSON response.
pub trait Transport: Send + Sync {
    fn post(&self, route: Route, body: &Value) -> Result<Value>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreKind {
    /// Embedding similarity of a candidate against the reference.
    EmbedSimRef,
    /// Embedding similarity of a candidate against the source.
    EmbedSimSrc,
    /// Probability of the SUPPORTED label for (premise, claim).
    EntailmentSupported,
    /// Average token log-likelihood of `b` given `a`.
    SeqLoglik,
}

impl ScoreKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreKind::EmbedSimRef => "embed_sim_ref",
            ScoreKind::EmbedSimSrc => "embed_sim_src",
            ScoreKind::EntailmentSupported => "entailment_supported",
            ScoreKind::SeqLoglik => "seq_loglik",
        }
    }

    fn check(self, value: f64) -> bool {
        value.is_finite()
            && match self {
                ScoreKind::EntailmentSupported => (0.0..=1.0).contains(&value),
                ScoreKind::SeqLoglik => value <= 0.0,
                ScoreKind::EmbedSimRef | ScoreKind::EmbedSimSrc => true,
            }
    }
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One masked span: the minimum fill length and an optional hint.
///
/// The hint carries the original span text. Remote services may ignore it;
/// the offline stub derives its fill from it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpanSlot {
    pub min_tokens: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hint: Option<String>,
}

/// T5-style sentinel for the `i`-th masked span.
pub fn sentinel(i: usize) -> String {
    format!("<extra_id_{i}>")
}

pub fn count_sentinels(text: &str) -> usize {
    let mut n = 0;
    while text.contains(&sentinel(n)) {
        n += 1;
    }
    n
}

/// Few-shot paraphrase request.
#[derive(Clone, Debug, PartialEq)]
pub struct ParaphraseRequest<'a> {
    pub instruction: &'a str,
    pub demonstrations: &'a [(String, String)],
    pub reference: &'a str,
    pub temperature: f64,
    pub n_outputs: usize,
    /// Outputs requested per prompt; `1` issues one prompt item per output.
    pub per_call: usize,
}

/// Fixed instruction line, then each demonstration pair, then the reference.
pub fn build_paraphrase_prompt(
    instruction: &str,
    demonstrations: &[(String, String)],
    reference: &str,
) -> String {
    let mut prompt = String::new();
    prompt.push_str(instruction.trim());
    prompt.push_str("\n\n");
    for (original, paraphrase) in demonstrations {
        prompt.push_str(&format!("Original: {}\nParaphrase: {}\n\n", original.trim(), paraphrase.trim()));
    }
    prompt.push_str(&format!("Original: {}\nParaphrase:", reference.trim()));
    prompt
}

/// A client bound to one service.
pub struct Client {
    transport: Box<dyn Transport>,
    max_retries: u32,
    backoff: Duration,
}

impl fmt::Debug for Client {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Client").field("max_retries", &self.max_retries).finish()
    }
}

const MAX_BACKOFF: Duration = Duration::from_millis(800);

impl Client {
    pub fn new(transport: Box<dyn Transport>, max_retries: u32) -> Self {
        Client { transport, max_retries, backoff: Duration::ZERO }
    }

    pub fn http(endpoint: &ServiceEndpoint) -> Result<Self> {
        let transport = HttpTransport::new(endpoint.clone())?;
        Ok(Client {
            transport: Box::new(transport),
            max_retries: endpoint.max_retries,
            backoff: Duration::from_millis(50),
        })
    }

    pub fn max_retries(&self) -> u32 {
        self.max_retries
    }

    fn wait(&self, attempt: u32) {
        if !self.backoff.is_zero() {
            let delay = self.backoff.saturating_mul(1 << attempt.min(5)).min(MAX_BACKOFF);
            std::thread::sleep(delay);
        }
    }

    /// Sends `body` (with `attempt` filled in) and hands the `outputs` array to
    /// `accept`. Transport failures and `Retry` verdicts consume the shared
    /// budget of `max_retries` re-sends.
    fn exchange<T>(
        &self,
        route: Route,
        mut body: Value,
        mut accept: impl FnMut(u32, Vec<Value>) -> Verdict<T>,
    ) -> Result<T> {
        let mut attempt = 0;
        loop {
            body["attempt"] = json!(attempt);
            let last = attempt >= self.max_retries;
            match self.transport.post(route, &body) {
                Ok(resp) => {
                    let outputs = match resp.get("outputs") {
                        Some(Value::Array(a)) => a.clone(),
                        _ => return Err(ClientError::Protocol("response lacks an outputs array".into())),
                    };
                    match accept(attempt, outputs) {
                        Verdict::Done(v) => return Ok(v),
                        Verdict::Fail(e) => return Err(e),
                        Verdict::Retry(e) => {
                            if last {
                                return Err(e);
                            }
                            log::debug!("retrying {} after: {e}", route.path());
                        }
                    }
                }
                Err(e) if e.retryable() && !last => {
                    log::warn!("retrying {} after: {e}", route.path());
                    self.wait(attempt);
                }
                Err(e) => return Err(e),
            }
            attempt += 1;
        }
    }

    /// One fill per sentinel, each at least as long as its slot's `min_tokens`.
    pub fn infill(&self, masked_text: &str, slots: &[SpanSlot]) -> Result<Vec<String>> {
        let found = count_sentinels(masked_text);
        if found != slots.len() {
            return Err(ClientError::Precondition(format!(
                "{found} sentinels in text but {} span slots",
                slots.len()
            )));
        }
        if slots.is_empty() {
            return Ok(Vec::new());
        }
        let body = json!({
            "kind": "infill",
            "items": [{ "text": masked_text, "spans": slots }],
        });
        self.exchange(Route::Generate, body, |_, outputs| {
            let fills = match outputs.as_slice() {
                [Value::Array(fills)] => fills,
                _ => return Verdict::Fail(ClientError::Protocol("expected one list of fills".into())),
            };
            if fills.len() != slots.len() {
                return Verdict::Fail(ClientError::Protocol(format!(
                    "{} fills returned for {} sentinels",
                    fills.len(),
                    slots.len()
                )));
            }
            let mut out = Vec::with_capacity(fills.len());
            for (i, (fill, slot)) in fills.iter().zip(slots).enumerate() {
                let Some(fill) = fill.as_str() else {
                    return Verdict::Fail(ClientError::Protocol(format!("fill {i} is not a string")));
                };
                let got = text::token_count(fill);
                if got < slot.min_tokens {
                    return Verdict::Retry(ClientError::UnderFill { span: i, got, need: slot.min_tokens });
                }
                out.push(fill.to_owned());
            }
            Verdict::Done(out)
        })
    }

    /// Exactly `n_outputs` pairwise-distinct paraphrases, none equal to the reference.
    pub fn paraphrase(&self, req: &ParaphraseRequest<'_>) -> Result<Vec<String>> {
        if req.n_outputs == 0 {
            return Err(ClientError::Precondition("n_outputs must be >= 1".into()));
        }
        let per_call = req.per_call.max(1);
        let prompt = build_paraphrase_prompt(req.instruction, req.demonstrations, req.reference);
        let mut seen: HashSet<String> = HashSet::from([text::nfc(req.reference.trim())]);
        let mut out: Vec<String> = Vec::new();
        let body = |missing: usize| {
            let mut items = Vec::new();
            let mut offset = 0;
            while offset < missing {
                let n = per_call.min(missing - offset);
                items.push(json!({
                    "prompt": prompt, "temperature": req.temperature, "n": n, "offset": offset
                }));
                offset += n;
            }
            json!({ "kind": "paraphrase", "items": items })
        };
        // Re-requests only ask for the missing count, so rebuild the body each round.
        let mut attempt_body = body(req.n_outputs);
        let mut attempt = 0;
        loop {
            attempt_body["attempt"] = json!(attempt);
            let last = attempt >= self.max_retries;
            match self.transport.post(Route::Generate, &attempt_body) {
                Ok(resp) => {
                    let Some(Value::Array(groups)) = resp.get("outputs") else {
                        return Err(ClientError::Protocol("response lacks an outputs array".into()));
                    };
                    for group in groups {
                        let texts: Vec<&str> = match group {
                            Value::Array(a) => a.iter().filter_map(Value::as_str).collect(),
                            Value::String(s) => vec![s.as_str()],
                            _ => return Err(ClientError::Protocol("paraphrase output is not text".into())),
                        };
                        for t in texts {
                            let t = t.trim();
                            if out.len() < req.n_outputs && !t.is_empty() && seen.insert(text::nfc(t)) {
                                out.push(t.to_owned());
                            }
                        }
                    }
                    if out.len() == req.n_outputs {
                        return Ok(out);
                    }
                    if last {
                        return Err(ClientError::NotDistinct { wanted: req.n_outputs, got: out.len() });
                    }
                    attempt_body = body(req.n_outputs - out.len());
                }
                Err(e) if e.retryable() && !last => {
                    log::warn!("retrying paraphrase after: {e}");
                    self.wait(attempt);
                }
                Err(e) => return Err(e),
            }
            attempt += 1;
        }
    }

    /// One score per `(a, b)` pair, in order.
    pub fn score_pairs(&self, kind: ScoreKind, pairs: &[(String, String)]) -> Result<Vec<f64>> {
        if pairs.is_empty() {
            return Err(ClientError::Precondition("score_pairs needs at least one pair".into()));
        }
        let items: Vec<Value> = pairs.iter().map(|(a, b)| json!({ "a": a, "b": b })).collect();
        let body = json!({ "kind": kind, "items": items });
        self.exchange(Route::Score, body, |_, outputs| {
            if outputs.len() != pairs.len() {
                return Verdict::Fail(ClientError::Protocol(format!(
                    "{} scores returned for {} pairs",
                    outputs.len(),
                    pairs.len()
                )));
            }
            let mut out = Vec::with_capacity(outputs.len());
            for (index, v) in outputs.iter().enumerate() {
                let Some(value) = v.as_f64() else {
                    return Verdict::Fail(ClientError::Protocol(format!("score {index} is not a number")));
                };
                if !kind.check(value) {
                    return Verdict::Fail(ClientError::OutOfRange { index, value, kind });
                }
                out.push(value);
            }
            Verdict::Done(out)
        })
    }
}

enum Verdict<T> {
    Done(T),
    Retry(ClientError),
    Fail(ClientError),
}

/// The three service clients used by pool building and scoring.
#[derive(Debug)]
pub struct Clients {
    pub infill: Client,
    pub paraphrase: Client,
    pub score: Client,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EndpointConfig {
    pub infill: Option<ServiceEndpoint>,
    pub paraphrase: Option<ServiceEndpoint>,
    pub score: Option<ServiceEndpoint>,
}

pub fn offline_forced() -> bool {
    std::env::var(OFFLINE_ENV).map(|v| v == "1").unwrap_or(false)
}

impl Clients {
    /// Deterministic in-process stubs; no network access.
    pub fn offline() -> Self {
        Clients {
            infill: Client::new(Box::new(stub::OfflineGenerate), 3),
            paraphrase: Client::new(Box::new(stub::OfflineGenerate), 3),
            score: Client::new(Box::new(stub::OfflineScore), 3),
        }
    }

    /// HTTP clients for configured endpoints, stubs for the rest or when offline.
    pub fn from_config(cfg: &EndpointConfig, offline: bool) -> Result<Self> {
        let offline = offline || offline_forced();
        let mut clients = Clients::offline();
        if offline {
            return Ok(clients);
        }
        if let Some(ep) = &cfg.infill {
            clients.infill = Client::http(ep)?;
        }
        if let Some(ep) = &cfg.paraphrase {
            clients.paraphrase = Client::http(ep)?;
        }
        if let Some(ep) = &cfg.score {
            clients.score = Client::http(ep)?;
        }
        Ok(clients)
    }
}
