//! Stage runners behind the CLI. Every stage reads its inputs from a work
//! directory, writes its outputs there atomically and records both, with
//! content hashes, in `manifest.json`.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::analysis::{self, correlate_runs, render_report, render_statistics, RunRow, SetStatistics};
use crate::clients::{stub, Clients};
use crate::config::Config;
use crate::corruptions::{build_pool, EntityIndex, PoolInputs};
use crate::io::{self, BeamRecord, ScoreRecord};
use crate::losses::{evaluate_set, LossReport};
use crate::metrics::{apply_aggregates, fit_stats, score_pool, ScoreOptions};
use crate::model::{CandidatePool, Method, NormalizationStats, PoolKind, SelectedSet};
use crate::selection::{catalog, select, StrategyId};

/// `{"original", "paraphrase"}` demonstration line.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub original: String,
    pub paraphrase: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub config_hash: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub params: BTreeMap<String, String>,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

/// Stage name to record. Holds no timestamps so reruns are byte-identical.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub stages: BTreeMap<String, StageRecord>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(format!("{:x}", Sha256::digest(bytes)))
}

/// File-system friendly form of a strategy id, `margin:max` to `margin_max`.
pub fn strategy_slug(s: StrategyId) -> String {
    s.to_string().replace(':', "_")
}

/// One work directory plus the configuration driving it.
#[derive(Clone, Debug)]
pub struct Run {
    pub dir: PathBuf,
    pub config: Config,
    pub offline: bool,
}

struct Stage<'a> {
    run: &'a Run,
    name: String,
    record: StageRecord,
}

impl Stage<'_> {
    fn key(&self, path: &Path) -> String {
        path.strip_prefix(&self.run.dir).unwrap_or(path).to_string_lossy().replace('\\', "/")
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        let key = self.key(path);
        self.record.inputs.insert(key, sha256_file(path)?);
        Ok(())
    }

    fn output(&mut self, path: &Path) -> Result<()> {
        let key = self.key(path);
        self.record.outputs.insert(key, sha256_file(path)?);
        Ok(())
    }

    fn param(&mut self, k: &str, v: impl ToString) {
        self.record.params.insert(k.to_owned(), v.to_string());
    }

    fn finish(self) -> Result<()> {
        let path = self.run.dir.join("manifest.json");
        let mut manifest: Manifest = if path.exists() {
            let raw = fs::read_to_string(&path)?;
            serde_json::from_str(&raw).with_context(|| format!("parsing {}", path.display()))?
        } else {
            Manifest::default()
        };
        manifest.stages.insert(self.name, self.record);
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        io::write_atomic(&path, &bytes)?;
        Ok(())
    }
}

fn require(path: &Path, stage: &str) -> Result<()> {
    if !path.exists() {
        bail!("{} not found; run `calset {stage}` first", path.display());
    }
    Ok(())
}

impl Run {
    pub fn new(dir: impl Into<PathBuf>, config: Config, offline: bool) -> Self {
        Run { dir: dir.into(), config, offline }
    }

    fn stage(&self, name: String) -> Stage<'_> {
        Stage { run: self, name, record: StageRecord { config_hash: self.config.hash(), ..Default::default() } }
    }

    pub fn entities_path(&self) -> PathBuf {
        self.dir.join("entities.tsv")
    }

    pub fn pool_path(&self, kind: PoolKind) -> PathBuf {
        self.dir.join(format!("pool.{kind}.jsonl"))
    }

    pub fn scored_path(&self, kind: PoolKind) -> PathBuf {
        self.dir.join(format!("scored.{kind}.jsonl"))
    }

    pub fn stats_path(&self, kind: PoolKind) -> PathBuf {
        self.dir.join(format!("stats.{kind}.json"))
    }

    pub fn normalized_path(&self, kind: PoolKind) -> PathBuf {
        self.dir.join(format!("normalized.{kind}.jsonl"))
    }

    pub fn selected_path(&self, kind: PoolKind, s: StrategyId) -> PathBuf {
        self.dir.join("selected").join(kind.as_str()).join(format!("{}.jsonl", strategy_slug(s)))
    }

    pub fn statistics_path(&self, kind: PoolKind, s: StrategyId) -> PathBuf {
        self.dir.join("statistics").join(kind.as_str()).join(format!("{}.jsonl", strategy_slug(s)))
    }

    pub fn losses_path(&self, kind: PoolKind, s: StrategyId) -> PathBuf {
        self.dir.join("losses").join(kind.as_str()).join(format!("{}.jsonl", strategy_slug(s)))
    }

    pub fn report_path(&self, kind: PoolKind) -> PathBuf {
        self.dir.join(format!("report.{kind}.txt"))
    }

    pub fn correlations_path(&self, kind: PoolKind) -> PathBuf {
        self.dir.join(format!("correlations.{kind}.json"))
    }

    fn corpus(&self) -> Result<(PathBuf, Vec<crate::model::Example>)> {
        let path = self.config.data.corpus.clone().ok_or_else(|| anyhow!("config data.corpus is not set"))?;
        let examples = io::load_corpus(&path)?;
        Ok((path, examples))
    }

    fn clients(&self) -> Result<Clients> {
        Ok(Clients::from_config(&self.config.endpoints, self.offline)?)
    }

    /// Builds the extrinsic-swap entity index from the corpus source texts.
    pub fn index_entities(&self) -> Result<usize> {
        let mut st = self.stage("index-entities".into());
        let (corpus, examples) = self.corpus()?;
        st.input(&corpus)?;
        let index = EntityIndex::build(&examples);
        let out = self.entities_path();
        index.write(&out)?;
        st.output(&out)?;
        st.finish()?;
        log::info!("indexed {} entity surfaces into {}", index.len(), out.display());
        Ok(index.len())
    }

    /// Builds one pool per corpus example. Returns the candidate count.
    pub fn pool(&self, kind: PoolKind) -> Result<usize> {
        let mut st = self.stage(format!("pool.{kind}"));
        st.param("seed", self.config.seed);
        let (corpus, examples) = self.corpus()?;
        st.input(&corpus)?;

        let index = match (&self.config.data.entity_index, self.entities_path()) {
            (Some(p), _) => {
                st.input(p)?;
                EntityIndex::load(p)?
            }
            (None, p) if p.exists() => {
                st.input(&p)?;
                EntityIndex::load(&p)?
            }
            _ => EntityIndex::build(&examples),
        };
        let beams: Vec<BeamRecord> = match (&self.config.data.beams, kind) {
            (Some(p), PoolKind::Relevance) => {
                st.input(p)?;
                io::load_beams(p)?
            }
            (None, PoolKind::Relevance) if self.config.pool.diverse_beam.per_generator > 0 => {
                bail!("relevance pools need diverse-beam outputs; set data.beams in the config")
            }
            _ => Vec::new(),
        };
        let demonstrations: Vec<(String, String)> = match (&self.config.data.demonstrations, kind) {
            (Some(p), PoolKind::Faithfulness) => {
                st.input(p)?;
                io::read_jsonl::<Demonstration>(p)?.into_iter().map(|(_, d)| (d.original, d.paraphrase)).collect()
            }
            _ => Vec::new(),
        };

        let clients = self.clients()?;
        let inputs = PoolInputs { index: &index, beams: &beams, demonstrations: &demonstrations };
        let pools = examples
            .par_iter()
            .map(|ex| {
                build_pool(ex, kind, &self.config.pool, &clients, inputs, self.config.seed)
                    .with_context(|| format!("building {kind} pool for {}", ex.example_id))
            })
            .collect::<Result<Vec<_>>>()?;
        let out = self.pool_path(kind);
        let n = io::write_pools(&pools, &out)?;
        st.output(&out)?;
        st.finish()?;
        log::info!("{} {kind} pools, {n} candidates -> {}", pools.len(), out.display());
        Ok(n)
    }

    /// Fills metrics. External token log-probabilities are keyed by
    /// candidate id, or by example id for the reference; `fill_logprobs`
    /// supplies offline stand-ins for whatever is still missing.
    pub fn score(&self, kind: PoolKind, logprobs: Option<&Path>, fill_logprobs: bool) -> Result<usize> {
        let mut st = self.stage(format!("score.{kind}"));
        st.param("fill_logprobs", fill_logprobs);
        let src = self.pool_path(kind);
        require(&src, &format!("pool --kind {kind}"))?;
        st.input(&src)?;
        let mut pools = io::load_pool(&src, kind)?.pools;
        if let Some(p) = logprobs {
            st.input(p)?;
            let lp = io::load_logprobs(p)?;
            for pool in &mut pools {
                if let Some(v) = lp.get(&pool.example.example_id) {
                    pool.example.reference_token_logprobs = Some(v.clone());
                }
                for c in &mut pool.candidates {
                    if let Some(v) = lp.get(&c.candidate_id) {
                        c.token_logprobs = Some(v.clone());
                    }
                }
            }
        }
        if fill_logprobs {
            pools.iter_mut().for_each(fill_stand_in_logprobs);
        }
        let clients = self.clients()?;
        let opts = ScoreOptions { align: self.config.align_options(), service_metrics: true };
        pools.par_iter_mut().try_for_each(|pool| {
            score_pool(pool, &clients.score, &opts).with_context(|| format!("scoring {}", pool.example.example_id))
        })?;
        for pool in &pools {
            pool.validate()?;
        }
        let out = self.scored_path(kind);
        let n = io::write_pools(&pools, &out)?;
        st.output(&out)?;
        st.finish()?;
        log::info!("scored {n} {kind} candidates -> {}", out.display());
        Ok(n)
    }

    /// Fits (or loads) normalization stats and fills the aggregates.
    pub fn normalize(&self, kind: PoolKind, stats: Option<&Path>) -> Result<NormalizationStats> {
        let mut st = self.stage(format!("normalize.{kind}"));
        let src = self.scored_path(kind);
        require(&src, &format!("score --kind {kind}"))?;
        st.input(&src)?;
        let mut pools = io::load_pool(&src, kind)?.pools;
        let fitted = match (stats, &self.config.data.baseline_scores) {
            (Some(p), _) => {
                st.input(p)?;
                io::load_stats(p)?
            }
            (None, Some(p)) => {
                st.input(p)?;
                let table: Vec<ScoreRecord> = io::load_scores(p)?;
                fit_stats(table.iter().map(|r| &r.scores), p.display().to_string())
            }
            (None, None) => {
                log::info!("no baseline score table configured; fitting stats on the {kind} pool itself");
                fit_stats(pools.iter().flat_map(|p| p.candidates.iter().map(|c| &c.scores)), src.display().to_string())
            }
        };
        for pool in &mut pools {
            for c in &mut pool.candidates {
                apply_aggregates(&mut c.scores, &fitted, &self.config.weights)
                    .with_context(|| format!("aggregating {}", c.candidate_id))?;
            }
        }
        let stats_out = self.stats_path(kind);
        io::write_stats(&fitted, &stats_out)?;
        st.output(&stats_out)?;
        let out = self.normalized_path(kind);
        io::write_pools(&pools, &out)?;
        st.output(&out)?;
        st.finish()?;
        Ok(fitted)
    }

    fn normalized_pools(&self, kind: PoolKind) -> Result<(PathBuf, Vec<CandidatePool>)> {
        let src = self.normalized_path(kind);
        require(&src, &format!("normalize --kind {kind}"))?;
        let pools = io::load_pool(&src, kind)?.pools;
        Ok((src, pools))
    }

    fn selected(&self, kind: PoolKind, s: StrategyId) -> Result<(PathBuf, Vec<SelectedSet>)> {
        let path = self.selected_path(kind, s);
        require(&path, &format!("select --kind {kind} --strategy {s}"))?;
        let sets = io::load_selected(&path)?;
        Ok((path, sets))
    }

    /// Runs each strategy over every pool. Returns the number of sets written.
    pub fn select(&self, kind: PoolKind, strategies: &[StrategyId]) -> Result<usize> {
        let (src, pools) = self.normalized_pools(kind)?;
        let mut total = 0;
        for &s in strategies {
            if !s.supports(kind) {
                bail!("strategy {s} is not defined for {kind} pools");
            }
            let mut st = self.stage(format!("select.{kind}.{}", strategy_slug(s)));
            st.param("seed", self.config.selection.seed);
            st.input(&src)?;
            let cfg = crate::selection::SelectionConfig { strategy: s, ..self.config.selection.clone() };
            let sets = pools
                .par_iter()
                .map(|p| select(p, &cfg).with_context(|| format!("{s} on {}", p.example.example_id)))
                .collect::<Result<Vec<_>>>()?;
            let approximate = sets.iter().filter(|s| s.approximate).count();
            if approximate > 0 {
                log::warn!("{s}: {approximate} sets came from sampled subset search");
            }
            let out = self.selected_path(kind, s);
            total += io::write_selected(&sets, &out)?;
            st.output(&out)?;
            st.finish()?;
        }
        Ok(total)
    }

    /// Per-set statistics for each strategy. Returns the per-strategy means.
    pub fn stats(&self, kind: PoolKind, strategies: &[StrategyId]) -> Result<Vec<RunRow>> {
        let (src, pools) = self.normalized_pools(kind)?;
        let by_id: BTreeMap<&str, &CandidatePool> = pools.iter().map(|p| (p.example.example_id.as_str(), p)).collect();
        let mut rows = Vec::new();
        for &s in strategies {
            let mut st = self.stage(format!("stats.{kind}.{}", strategy_slug(s)));
            st.input(&src)?;
            let (sel_path, sets) = self.selected(kind, s)?;
            st.input(&sel_path)?;
            let stats = sets
                .iter()
                .map(|set| {
                    let pool = by_id
                        .get(set.example_id.as_str())
                        .ok_or_else(|| anyhow!("{}: selected set has no pool", set.example_id))?;
                    analysis::set_statistics(set, pool).with_context(|| format!("{s} on {}", set.example_id))
                })
                .collect::<Result<Vec<SetStatistics>>>()?;
            let out = self.statistics_path(kind, s);
            io::write_jsonl(&out, &stats)?;
            st.output(&out)?;
            st.finish()?;
            rows.push(RunRow { label: s.to_string(), statistics: analysis::mean_statistics(&stats), downstream: 0.0 });
        }
        Ok(rows)
    }

    /// Calibration and MLE loss of every selected set. Without a latents
    /// file, offline stand-in vectors are derived from candidate texts.
    pub fn loss_eval(&self, kind: PoolKind, strategies: &[StrategyId], latents: Option<&Path>) -> Result<Vec<LossReport>> {
        let (src, pools) = self.normalized_pools(kind)?;
        let by_id: BTreeMap<&str, &CandidatePool> = pools.iter().map(|p| (p.example.example_id.as_str(), p)).collect();
        let supplied = latents.map(io::load_latents).transpose()?;
        if supplied.is_none() && kind == PoolKind::Faithfulness {
            log::warn!("no latents supplied; using offline stand-in vectors of dimension {}", self.config.metrics.latent_dim);
        }
        let mut all = Vec::new();
        for &s in strategies {
            let mut st = self.stage(format!("loss-eval.{kind}.{}", strategy_slug(s)));
            st.input(&src)?;
            if let Some(p) = latents {
                st.input(p)?;
            }
            let (sel_path, sets) = self.selected(kind, s)?;
            st.input(&sel_path)?;
            let mut reports = Vec::new();
            for set in &sets {
                let pool = by_id
                    .get(set.example_id.as_str())
                    .ok_or_else(|| anyhow!("{}: selected set has no pool", set.example_id))?;
                let vectors = match &supplied {
                    Some(v) => v.clone(),
                    None => set
                        .members
                        .ids()
                        .into_iter()
                        .filter_map(|id| pool.get(id))
                        .map(|c| (c.candidate_id.clone(), stub::embed(&c.text, self.config.metrics.latent_dim)))
                        .collect(),
                };
                let r = evaluate_set(set, pool, &vectors, &self.config.losses)
                    .with_context(|| format!("{s} on {}", set.example_id))?;
                if r.clamped {
                    log::warn!("{}: conseq clamp engaged", set.example_id);
                }
                reports.push(r);
            }
            let out = self.losses_path(kind, s);
            io::write_jsonl(&out, &reports)?;
            st.output(&out)?;
            st.finish()?;
            all.extend(reports);
        }
        Ok(all)
    }

    /// Tabulates mean statistics per strategy run. With a downstream file
    /// (`{"strategy": value, ..}`) the statistics are also correlated with
    /// the downstream metric.
    pub fn report(&self, kind: PoolKind, downstream: Option<&Path>) -> Result<String> {
        let mut st = self.stage(format!("report.{kind}"));
        let mut rows = Vec::new();
        for &s in catalog(kind) {
            let path = self.statistics_path(kind, s);
            if !path.exists() {
                continue;
            }
            st.input(&path)?;
            let stats: Vec<SetStatistics> = io::read_jsonl(&path)?.into_iter().map(|(_, v)| v).collect();
            rows.push(RunRow { label: s.to_string(), statistics: analysis::mean_statistics(&stats), downstream: 0.0 });
        }
        if rows.is_empty() {
            bail!("no statistics for {kind} pools; run `calset stats --kind {kind}` first");
        }
        let text = match downstream {
            None => render_statistics(&rows),
            Some(p) => {
                st.input(p)?;
                let raw = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                let values: BTreeMap<String, f64> =
                    serde_json::from_str(&raw).with_context(|| format!("parsing {}", p.display()))?;
                rows.retain_mut(|r| match values.get(&r.label) {
                    Some(v) => {
                        r.downstream = *v;
                        true
                    }
                    None => false,
                });
                let entries = correlate_runs(&rows);
                let out = self.correlations_path(kind);
                let mut bytes = serde_json::to_vec_pretty(&entries)?;
                bytes.push(b'\n');
                io::write_atomic(&out, &bytes)?;
                st.output(&out)?;
                render_report(&rows, &entries)
            }
        };
        let out = self.report_path(kind);
        io::write_atomic(&out, text.as_bytes())?;
        st.output(&out)?;
        st.finish()?;
        Ok(text)
    }

    /// Every stage for both pool kinds and every catalog strategy.
    pub fn run_all(&self) -> Result<()> {
        self.index_entities()?;
        for kind in [PoolKind::Faithfulness, PoolKind::Relevance] {
            self.pool(kind)?;
            self.score(kind, None, true)?;
            self.normalize(kind, None)?;
            let strategies = catalog(kind);
            self.select(kind, strategies)?;
            self.stats(kind, strategies)?;
            self.loss_eval(kind, strategies, None)?;
            self.report(kind, None)?;
        }
        Ok(())
    }
}

/// Deterministic stand-in token log-probabilities for the reference and any
/// candidate lacking them, conditioned on the source text.
pub fn fill_stand_in_logprobs(pool: &mut CandidatePool) {
    let ex = &mut pool.example;
    if ex.reference_token_logprobs.is_none() {
        ex.reference_token_logprobs = Some(stub::token_logprobs(&ex.source_text, &ex.reference_text));
    }
    for c in &mut pool.candidates {
        if c.token_logprobs.is_none() {
            c.token_logprobs = Some(if c.method == Method::Reference {
                ex.reference_token_logprobs.clone().unwrap_or_default()
            } else {
                stub::token_logprobs(&ex.source_text, &c.text)
            });
        }
    }
}

/// Bundled toy corpus: ten annotated examples, beams, demonstrations and a
/// config wired to them.
pub mod toy {
    use super::*;

    pub const CORPUS: &str = include_str!("../data/toy/corpus.jsonl");
    pub const BEAMS: &str = include_str!("../data/toy/beams.jsonl");
    pub const DEMONSTRATIONS: &str = include_str!("../data/toy/demonstrations.jsonl");
    pub const CONFIG: &str = include_str!("../data/toy/calset.toml");

    /// Writes the toy inputs under `dir/inputs` and returns the config that
    /// points at them.
    pub fn install(dir: &Path) -> Result<Config> {
        let inputs = dir.join("inputs");
        for (name, text) in [
            ("corpus.jsonl", CORPUS),
            ("beams.jsonl", BEAMS),
            ("demonstrations.jsonl", DEMONSTRATIONS),
            ("calset.toml", CONFIG),
        ] {
            io::write_atomic(&inputs.join(name), text.as_bytes())?;
        }
        Ok(Config::load(&inputs.join("calset.toml"))?)
    }

    /// Installs the toy inputs and runs every stage offline.
    pub fn run(dir: &Path) -> Result<Run> {
        let config = install(dir)?;
        let run = Run::new(dir, config, true);
        run.run_all()?;
        Ok(run)
    }
}
