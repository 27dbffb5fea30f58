//! Line-delimited JSON record I/O for corpora, pools, selected sets, scores and stats.
//!
//! Every writer goes through [`write_atomic`]: the bytes land in a sibling
//! temporary file that is renamed over the destination.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::model::{
    Candidate, CandidatePool, Example, Metric, MetricStats, NormalizationStats, PoolKind,
    ScoreVector, SelectedSet, ValidationError,
};
use crate::text;

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}:{line}: {message}", path.display())]
    Record {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error(transparent)]
    Invalid(#[from] ValidationError),
}

pub type Result<T> = std::result::Result<T, IoError>;

pub(crate) fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io { path: path.to_owned(), source }
}

fn record_err(path: &Path, line: usize, message: impl ToString) -> IoError {
    IoError::Record { path: path.to_owned(), line, message: message.to_string() }
}

/// Reads a JSONL file, skipping blank lines. Items carry their 1-based line number.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<(usize, T)>> {
    let file = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(&line).map_err(|e| record_err(path, idx + 1, e))?;
        out.push((idx + 1, item));
    }
    Ok(out)
}

pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = File::create(&tmp).map_err(io_err(path))?;
        f.write_all(bytes).map_err(io_err(&tmp))?;
        f.sync_all().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Serializes one JSON object per line and writes atomically.
pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<usize> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, item).map_err(|e| record_err(path, 0, e))?;
        buf.push(b'\n');
    }
    write_atomic(path, &buf)?;
    Ok(items.len())
}

/// Result of [`load_pool`].
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedPools {
    pub pools: Vec<CandidatePool>,
    /// Candidates dropped because their NFC text repeated an earlier one.
    pub duplicates_dropped: usize,
}

fn placeholder_example(example_id: &str) -> Example {
    Example {
        example_id: example_id.to_owned(),
        source_text: String::new(),
        source_sentences: Vec::new(),
        reference_text: String::new(),
        annotations: Default::default(),
        reference_token_logprobs: None,
    }
}

/// Loads a pool file: example records and candidate records, one per line, in any order.
///
/// Candidates are sorted by `candidate_id` within each pool and pools by
/// `example_id`. Repeated texts keep the first candidate in that order.
pub fn load_pool(path: &Path, pool_kind: PoolKind) -> Result<LoadedPools> {
    let mut examples: BTreeMap<String, Example> = BTreeMap::new();
    let mut candidates: BTreeMap<String, Vec<Candidate>> = BTreeMap::new();
    let mut ids = HashSet::new();
    for (line, value) in read_jsonl::<Value>(path)? {
        let is_candidate = value.get("candidate_id").is_some();
        if is_candidate {
            let c: Candidate =
                serde_json::from_value(value).map_err(|e| record_err(path, line, e))?;
            c.validate().map_err(|e| record_err(path, line, e))?;
            if c.method.pool_kind() != pool_kind {
                return Err(record_err(
                    path,
                    line,
                    format!("method {} not allowed in pool_kind {pool_kind}", c.method),
                ));
            }
            if !ids.insert(c.candidate_id.clone()) {
                return Err(record_err(
                    path,
                    line,
                    format!("duplicate candidate_id {}", c.candidate_id),
                ));
            }
            candidates.entry(c.example_id.clone()).or_default().push(c);
        } else if value.get("source_text").is_some() {
            let ex: Example =
                serde_json::from_value(value).map_err(|e| record_err(path, line, e))?;
            ex.validate().map_err(|e| record_err(path, line, e))?;
            if examples.contains_key(&ex.example_id) {
                return Err(record_err(
                    path,
                    line,
                    format!("duplicate example_id {}", ex.example_id),
                ));
            }
            examples.insert(ex.example_id.clone(), ex);
        } else {
            return Err(record_err(
                path,
                line,
                "record is neither a candidate (candidate_id) nor an example (source_text)",
            ));
        }
    }

    let mut duplicates_dropped = 0;
    let mut all_ids: Vec<String> = examples.keys().chain(candidates.keys()).cloned().collect();
    all_ids.sort();
    all_ids.dedup();
    let mut pools = Vec::with_capacity(all_ids.len());
    for id in all_ids {
        let example = examples.remove(&id).unwrap_or_else(|| placeholder_example(&id));
        let mut cands = candidates.remove(&id).unwrap_or_default();
        cands.sort_by(|a, b| a.candidate_id.cmp(&b.candidate_id));
        let mut seen = HashSet::new();
        cands.retain(|c| {
            let keep = seen.insert(text::nfc(&c.text));
            if !keep {
                log::warn!("{}: dropping {} (duplicate text)", id, c.candidate_id);
                duplicates_dropped += 1;
            }
            keep
        });
        pools.push(CandidatePool { example, candidates: cands, pool_kind });
    }
    Ok(LoadedPools { pools, duplicates_dropped })
}

/// Writes each pool as its example record followed by its candidates.
pub fn write_pools(pools: &[CandidatePool], path: &Path) -> Result<usize> {
    let mut values = Vec::new();
    let mut count = 0;
    for pool in pools {
        pool.validate()?;
        values.push(serde_json::to_value(&pool.example).expect("example serializes"));
        for c in &pool.candidates {
            values.push(serde_json::to_value(c).expect("candidate serializes"));
            count += 1;
        }
    }
    write_jsonl(path, &values)?;
    Ok(count)
}

/// Loads a corpus of example records. Candidate records are rejected.
pub fn load_corpus(path: &Path) -> Result<Vec<Example>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (line, ex) in read_jsonl::<Example>(path)? {
        ex.validate().map_err(|e| record_err(path, line, e))?;
        if !seen.insert(ex.example_id.clone()) {
            return Err(record_err(path, line, format!("duplicate example_id {}", ex.example_id)));
        }
        out.push(ex);
    }
    Ok(out)
}

/// Validates and writes selected sets. Returns the record count.
pub fn write_selected(sets: &[SelectedSet], path: &Path) -> Result<usize> {
    for set in sets {
        set.validate()?;
    }
    write_jsonl(path, sets)
}

pub fn load_selected(path: &Path) -> Result<Vec<SelectedSet>> {
    read_jsonl::<SelectedSet>(path)?
        .into_iter()
        .map(|(line, set)| {
            set.validate().map_err(|e| record_err(path, line, e))?;
            Ok(set)
        })
        .collect()
}

/// Stats file: `{"metric_name": {"mean": .., "stddev": ..}}`.
pub fn load_stats(path: &Path) -> Result<NormalizationStats> {
    let raw = fs::read_to_string(path).map_err(io_err(path))?;
    let metrics: BTreeMap<Metric, MetricStats> =
        serde_json::from_str(&raw).map_err(|e| record_err(path, 1, e))?;
    let stats = NormalizationStats { metrics, provenance: path.display().to_string() };
    stats.validate()?;
    Ok(stats)
}

pub fn write_stats(stats: &NormalizationStats, path: &Path) -> Result<()> {
    stats.validate()?;
    let mut bytes = serde_json::to_vec_pretty(&stats.metrics).expect("stats serialize");
    bytes.push(b'\n');
    write_atomic(path, &bytes)
}

/// One decoded hypothesis from a diverse beam search.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BeamRecord {
    pub example_id: String,
    pub generator: String,
    pub beam_rank: u32,
    pub text: String,
    #[serde(default)]
    pub token_logprobs: Option<Vec<f64>>,
}

pub fn load_beams(path: &Path) -> Result<Vec<BeamRecord>> {
    Ok(read_jsonl(path)?.into_iter().map(|(_, b)| b).collect())
}

/// Scores cache line: `{"candidate_id", "scores": {..}}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub candidate_id: String,
    pub scores: ScoreVector,
}

pub fn load_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    read_jsonl::<ScoreRecord>(path)?
        .into_iter()
        .map(|(line, r)| {
            r.scores.validate().map_err(|e| record_err(path, line, e))?;
            Ok(r)
        })
        .collect()
}

/// Latents line: `{"candidate_id", "h": [..]}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentRecord {
    pub candidate_id: String,
    pub h: Vec<f64>,
}

pub fn load_latents(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    let mut out = BTreeMap::new();
    let mut dim = None;
    for (line, r) in read_jsonl::<LatentRecord>(path)? {
        if *dim.get_or_insert(r.h.len()) != r.h.len() {
            return Err(record_err(path, line, "latent dimension differs from earlier records"));
        }
        out.insert(r.candidate_id, r.h);
    }
    Ok(out)
}

/// Token log-probabilities supplied by an external model: `{"candidate_id", "token_logprobs"}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogprobRecord {
    pub candidate_id: String,
    pub token_logprobs: Vec<f64>,
}

pub fn load_logprobs(path: &Path) -> Result<BTreeMap<String, Vec<f64>>> {
    Ok(read_jsonl::<LogprobRecord>(path)?
        .into_iter()
        .map(|(_, r)| (r.candidate_id, r.token_logprobs))
        .collect())
}
