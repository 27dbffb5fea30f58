//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use num_rational::Ratio;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::json;

use calset::analysis::{self, RunRow};
use calset::io::{self, ScoreRecord};
use calset::losses::{self, ContrastiveOptions};
use calset::metrics::{self, AggregateWeights};
use calset::model::{
    AggregateKind, AnnotationSet, Candidate, CandidatePool, Example, Method, Metric, Polarity, PoolKind, ScoreVector,
    SelectedSet, SetMembers,
};
use calset::pipeline::toy;
use calset::selection::{self, catalog, SelectionConfig, StrategyId};
use calset::text;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn tmpdir() -> tempfile::TempDir {
    tempfile::tempdir().expect("temp dir")
}

// ---------------------------------------------------------------- 1

fn method_key(candidate_id: &str) -> String {
    candidate_id.split(':').nth(1).unwrap_or_default().to_owned()
}

fn pool_counts() -> Outcome {
    let dir = tmpdir();
    let config = toy::install(dir.path()).map_err(|e| e.to_string())?;
    check(config.pool == calset::corruptions::PoolConfig::default(), || "toy config overrides pool defaults".into())?;
    let run = calset::pipeline::Run::new(dir.path(), config, true);

    let started = Instant::now();
    for kind in [PoolKind::Faithfulness, PoolKind::Relevance] {
        run.pool(kind).map_err(|e| format!("{e:#}"))?;
    }
    let pool_secs = started.elapsed().as_secs_f64();

    let faith_expected: BTreeMap<&str, usize> = [
        ("mask_and_fill_low", 10),
        ("mask_and_fill_high", 10),
        ("swap_intrinsic_low", 10),
        ("swap_intrinsic_high", 10),
        ("swap_extrinsic_low", 10),
        ("swap_extrinsic_high", 10),
        ("paraphrase", 5),
        ("reference", 1),
    ]
    .into();
    let rel_expected: BTreeMap<&str, usize> = [("beam_primera", 10), ("beam_longt5", 10)].into();
    for (kind, expected, total) in
        [(PoolKind::Faithfulness, &faith_expected, 66), (PoolKind::Relevance, &rel_expected, 20)]
    {
        let pools = io::load_pool(&run.pool_path(kind), kind).map_err(|e| e.to_string())?.pools;
        check(pools.len() == 10, || format!("{kind}: {} pools", pools.len()))?;
        for pool in &pools {
            check(pool.candidates.len() == total, || {
                format!("{kind} {}: {} candidates, want {total}", pool.example.example_id, pool.candidates.len())
            })?;
            let mut counts: BTreeMap<String, usize> = BTreeMap::new();
            for c in &pool.candidates {
                *counts.entry(method_key(&c.candidate_id)).or_default() += 1;
            }
            let want: BTreeMap<String, usize> = expected.iter().map(|(k, v)| (k.to_string(), *v)).collect();
            check(counts == want, || format!("{kind} {}: counts {counts:?}", pool.example.example_id))?;
        }
    }

    let full = tmpdir();
    let started = Instant::now();
    toy::run(full.path()).map_err(|e| format!("{e:#}"))?;
    let full_secs = started.elapsed().as_secs_f64();
    check(full_secs < 5.0, || format!("full toy run took {full_secs:.2}s"))?;
    Ok(format!("66 and 20 per example, per-method counts match; pools {pool_secs:.2}s, full run {full_secs:.2}s"))
}

// ---------------------------------------------------------------- 2

fn example() -> Example {
    Example {
        example_id: "ex".into(),
        source_text: "s".into(),
        source_sentences: vec!["s".into()],
        reference_text: "r".into(),
        annotations: AnnotationSet::default(),
        reference_token_logprobs: None,
    }
}

const VOCAB: [&str; 6] = ["alpha", "beta", "gamma", "delta", "eps", "zeta"];

fn random_text(rng: &mut ChaCha8Rng) -> String {
    let len = rng.gen_range(2..7);
    (0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())]).collect::<Vec<_>>().join(" ")
}

/// Half the draws come from a coarse grid so ties are common.
fn random_value(rng: &mut ChaCha8Rng) -> f64 {
    if rng.gen_bool(0.5) {
        rng.gen_range(0..5) as f64 * 0.25
    } else {
        rng.gen_range(-2.0..2.0)
    }
}

fn random_rank_pool(rng: &mut ChaCha8Rng, n: usize) -> CandidatePool {
    let candidates = (0..n)
        .map(|i| Candidate {
            candidate_id: format!("ex:beam_primera:{i:02}"),
            example_id: "ex".into(),
            method: Method::DiverseBeam,
            method_params: BTreeMap::from([("generator".to_owned(), json!("primera"))]),
            polarity_hint: Polarity::Unassigned,
            beam_rank: Some(i as u32),
            text: random_text(rng),
            token_logprobs: Some(vec![-1.0]),
            scores: ScoreVector {
                rel_agg: Some(random_value(rng)),
                faith_agg: Some(random_value(rng)),
                ..Default::default()
            },
        })
        .collect();
    CandidatePool { example: example(), pool_kind: PoolKind::Relevance, candidates }
}

fn random_contrast_pool(rng: &mut ChaCha8Rng, n_pos: usize, n_neg: usize) -> CandidatePool {
    let mut candidates = Vec::new();
    for (method, n) in [(Method::Paraphrase, n_pos), (Method::MaskAndFill, n_neg)] {
        for i in 0..n {
            candidates.push(Candidate {
                candidate_id: format!("ex:{}:{i:02}", method.as_str()),
                example_id: "ex".into(),
                method,
                method_params: BTreeMap::new(),
                polarity_hint: method.polarity(),
                beam_rank: None,
                text: random_text(rng),
                token_logprobs: Some(vec![-1.0]),
                scores: ScoreVector {
                    faith_agg: Some(random_value(rng)),
                    extractive_density: Some(1.0),
                    ..Default::default()
                },
            });
        }
    }
    CandidatePool { example: example(), pool_kind: PoolKind::Faithfulness, candidates }
}

fn k_subsets(items: &[usize], k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    if items.len() < k {
        return vec![];
    }
    let mut with: Vec<Vec<usize>> = k_subsets(&items[1..], k - 1)
        .into_iter()
        .map(|mut s| {
            s.insert(0, items[0]);
            s
        })
        .collect();
    with.extend(k_subsets(&items[1..], k));
    with
}

fn sorted_sum(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}

fn oracle_margin(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    (max - min) / (values.len() - 1) as f64
}

fn oracle_diversity(texts: &[&str], members: &[usize]) -> f64 {
    let mut pairs = Vec::new();
    for &i in members {
        for &j in members {
            if i != j {
                pairs.push(analysis::bleu(texts[i], texts[j]));
            }
        }
    }
    let n = pairs.len() as f64;
    1.0 - sorted_sum(pairs) / n
}

/// Twice the 1-based average ranks, as integers.
fn oracle_doubled_ranks(v: &[f64]) -> Vec<i128> {
    v.iter()
        .map(|x| {
            let below = v.iter().filter(|y| *y < x).count() as i128;
            let equal = v.iter().filter(|y| *y == x).count() as i128;
            2 * below + equal + 1
        })
        .collect()
}

/// Spearman's rho as the exact key `sign(rho) * rho²`, which orders subsets
/// the same way rho does. Constant input gives 0.
fn oracle_spearman_key(xs: &[f64], ys: &[f64]) -> Ratio<i128> {
    let (rx, ry) = (oracle_doubled_ranks(xs), oracle_doubled_ranks(ys));
    let n = rx.len() as i128;
    let mean = |v: &[i128]| Ratio::new(v.iter().sum::<i128>(), n);
    let (mx, my) = (mean(&rx), mean(&ry));
    let mut cov = Ratio::from_integer(0);
    let (mut vx, mut vy) = (Ratio::from_integer(0), Ratio::from_integer(0));
    for (a, b) in rx.iter().zip(&ry) {
        let (da, db) = (Ratio::from_integer(*a) - mx, Ratio::from_integer(*b) - my);
        cov += da * db;
        vx += da * da;
        vy += db * db;
    }
    if vx == Ratio::from_integer(0) || vy == Ratio::from_integer(0) {
        return Ratio::from_integer(0);
    }
    let sq = cov * cov / (vx * vy);
    if cov < Ratio::from_integer(0) {
        -sq
    } else {
        sq
    }
}

fn key_to_rho(key: Ratio<i128>) -> f64 {
    let mag = (key.numer().abs() as f64 / *key.denom() as f64).sqrt();
    if *key.numer() < 0 {
        -mag
    } else {
        mag
    }
}

fn index_of(pool: &CandidatePool) -> HashMap<&str, usize> {
    pool.candidates.iter().enumerate().map(|(i, c)| (c.candidate_id.as_str(), i)).collect()
}

fn rank_members(pool: &CandidatePool, set: &SelectedSet) -> Vec<usize> {
    let idx = index_of(pool);
    match &set.members {
        SetMembers::Relevance { rank_order } => rank_order.iter().map(|id| idx[id.as_str()]).collect(),
        SetMembers::Faithfulness { .. } => panic!("expected a rank set"),
    }
}

fn contrast_members(pool: &CandidatePool, set: &SelectedSet) -> (Vec<usize>, Vec<usize>) {
    let idx = index_of(pool);
    match &set.members {
        SetMembers::Faithfulness { positives, negatives } => (
            positives.iter().map(|id| idx[id.as_str()]).collect(),
            negatives.iter().map(|id| idx[id.as_str()]).collect(),
        ),
        SetMembers::Relevance { .. } => panic!("expected a contrast set"),
    }
}

fn best(values: impl Iterator<Item = f64>, maximize: bool) -> f64 {
    if maximize {
        values.fold(f64::NEG_INFINITY, f64::max)
    } else {
        values.fold(f64::INFINITY, f64::min)
    }
}

fn selection_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let sid = |s: &str| s.parse::<StrategyId>().unwrap();
    let mut checked = 0usize;
    for trial in 0..200 {
        let n = rng.gen_range(4..=12);
        let pool = random_rank_pool(&mut rng, n);
        let rel: Vec<f64> = pool.candidates.iter().map(|c| c.scores.rel_agg.unwrap()).collect();
        let faith: Vec<f64> = pool.candidates.iter().map(|c| c.scores.faith_agg.unwrap()).collect();
        let texts: Vec<&str> = pool.candidates.iter().map(|c| c.text.as_str()).collect();
        let all: Vec<usize> = (0..n).collect();
        let subsets = k_subsets(&all, 4);

        let objectives: [(&str, bool, &dyn Fn(&[usize]) -> f64); 4] = [
            ("margin:max", true, &|s| oracle_margin(&s.iter().map(|&i| rel[i]).collect::<Vec<_>>())),
            ("margin:min", false, &|s| oracle_margin(&s.iter().map(|&i| rel[i]).collect::<Vec<_>>())),
            ("diversity:max", true, &|s| oracle_diversity(&texts, s)),
            ("diversity:min", false, &|s| oracle_diversity(&texts, s)),
        ];
        for (name, maximize, f) in objectives {
            let set = selection::select(&pool, &SelectionConfig::with_strategy(sid(name))).map_err(|e| e.to_string())?;
            let target = best(subsets.iter().map(|s| f(s)), maximize);
            let got = f(&rank_members(&pool, &set));
            check(got == target && !set.approximate, || {
                format!("trial {trial} n={n} {name}: selected {got}, brute force {target}")
            })?;
            checked += 1;
        }
        let hybrid = |s: &[usize]| {
            let xs: Vec<f64> = s.iter().map(|&i| rel[i]).collect();
            let ys: Vec<f64> = s.iter().map(|&i| faith[i]).collect();
            oracle_spearman_key(&xs, &ys)
        };
        let set = selection::select(&pool, &SelectionConfig::with_strategy(sid("hybrid_corr:max")))
            .map_err(|e| e.to_string())?;
        let target = subsets.iter().map(|s| hybrid(s)).max().unwrap();
        let got = hybrid(&rank_members(&pool, &set));
        check(got == target && !set.approximate, || {
            format!("trial {trial} n={n} hybrid_corr:max: selected rho^2 key {got}, brute force {target}")
        })?;
        checked += 1;

        let n_pos = rng.gen_range(2..=6);
        let n_neg = rng.gen_range(2..=12 - n_pos);
        let pool = random_contrast_pool(&mut rng, n_pos, n_neg);
        let q: Vec<f64> = pool.candidates.iter().map(|c| c.scores.faith_agg.unwrap()).collect();
        let texts: Vec<&str> = pool.candidates.iter().map(|c| c.text.as_str()).collect();
        let p_idx: Vec<usize> = (0..n_pos).collect();
        let n_idx: Vec<usize> = (n_pos..n_pos + n_neg).collect();
        let (p_sets, n_sets) = (k_subsets(&p_idx, 2), k_subsets(&n_idx, 2));
        let mean = |s: &[usize]| sorted_sum(s.iter().map(|&i| q[i]).collect()) / s.len() as f64;
        let contrast_objectives: [(&str, bool, &dyn Fn(&[usize], &[usize]) -> f64); 4] = [
            ("margin:max", true, &|p, n| mean(p) - mean(n)),
            ("margin:min", false, &|p, n| mean(p) - mean(n)),
            ("diversity:max", true, &|p, n| oracle_diversity(&texts, p) + oracle_diversity(&texts, n)),
            ("diversity:min", false, &|p, n| oracle_diversity(&texts, p) + oracle_diversity(&texts, n)),
        ];
        for (name, maximize, f) in contrast_objectives {
            let set = selection::select(&pool, &SelectionConfig::with_strategy(sid(name))).map_err(|e| e.to_string())?;
            let target = best(p_sets.iter().flat_map(|p| n_sets.iter().map(move |n| f(p, n))), maximize);
            let (p, n) = contrast_members(&pool, &set);
            let got = f(&p, &n);
            check(got == target && !set.approximate, || {
                format!("trial {trial} contrast {n_pos}+{n_neg} {name}: selected {got}, brute force {target}")
            })?;
            checked += 1;
        }
    }
    Ok(format!("200 rank pools and 200 contrast pools (n <= 12), {checked} optima equal brute force exactly"))
}

// ---------------------------------------------------------------- 3

fn catalog_cli() -> Outcome {
    check(catalog(PoolKind::Relevance).len() == 15, || "relevance catalog is not 14 rows plus the hybrid".into())?;
    check(catalog(PoolKind::Faithfulness).len() == 9, || "faithfulness catalog is not 9 rows".into())?;
    let dir = tmpdir();
    toy::install(dir.path()).map_err(|e| e.to_string())?;
    let config = dir.path().join("inputs/calset.toml");
    let cli = |args: &[&str]| -> Result<String, String> {
        let out = Command::new(env!("CARGO_BIN_EXE_calset"))
            .arg("--config")
            .arg(&config)
            .arg("--workdir")
            .arg(dir.path())
            .arg("--offline")
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        if out.status.success() {
            Ok(String::from_utf8_lossy(&out.stdout).into_owned())
        } else {
            Err(format!("calset {}: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)))
        }
    };
    cli(&["index-entities"])?;
    let mut invocations = 0;
    for kind in [PoolKind::Relevance, PoolKind::Faithfulness] {
        let k = kind.to_string();
        cli(&["pool", "--kind", &k])?;
        cli(&["score", "--kind", &k, "--fill-logprobs"])?;
        cli(&["normalize", "--kind", &k])?;
        for s in catalog(kind) {
            let s = s.to_string();
            let stdout = cli(&["select", "--kind", &k, "--strategy", &s])?;
            check(stdout.trim() == "10 sets selected", || format!("{k} {s}: {stdout:?}"))?;
            invocations += 1;
        }
    }
    Ok(format!("{invocations} select invocations (15 relevance, 9 faithfulness) each wrote 10 sets"))
}

// ---------------------------------------------------------------- 4

/// (hypothesis, reference, n, overlap, hypothesis n-grams, reference n-grams)
const ROUGE_CASES: [(&str, &str, usize, i64, i64, i64); 20] = [
    ("the cat sat on the mat", "the cat lay on the mat", 1, 5, 6, 6),
    ("the cat sat on the mat", "the cat lay on the mat", 2, 3, 5, 5),
    ("the the the", "the cat", 1, 1, 3, 2),
    ("a b c d", "d c b a", 1, 4, 4, 4),
    ("a b c d", "d c b a", 2, 0, 3, 3),
    ("Aspirin reduced fever.", "aspirin REDUCED the fever", 1, 3, 3, 4),
    ("Aspirin reduced fever.", "aspirin REDUCED the fever", 2, 1, 2, 3),
    ("x y", "z w", 1, 0, 2, 2),
    ("one", "one", 1, 1, 1, 1),
    ("one", "one", 2, 0, 0, 0),
    ("a a b b", "a b a b", 2, 1, 3, 3),
    ("a a b b", "a b a b", 1, 4, 4, 4),
    ("drug lowers blood pressure in adults", "blood pressure in adults fell", 3, 2, 4, 3),
    ("drug lowers blood pressure in adults", "blood pressure in adults fell", 4, 1, 3, 2),
    ("(left) right, centre!", "left -- right centre", 1, 3, 3, 3),
    ("p q r s t u", "p q r", 2, 2, 5, 2),
    ("p q r", "p q r s t u", 2, 2, 2, 5),
    ("x x x x x", "x x", 2, 1, 4, 1),
    ("the trial enrolled 120 patients", "120 patients were enrolled in the trial", 1, 5, 5, 7),
    ("the trial enrolled 120 patients", "120 patients were enrolled in the trial", 2, 2, 4, 6),
];

/// (source, summary, fragment starts, fragment lengths, summary tokens)
const FRAGMENT_CASES: [(&str, &str, &[usize], &[usize], i64); 20] = [
    ("a b c d", "a b d", &[0, 2], &[2, 1], 3),
    ("x y z", "x y z", &[0], &[3], 3),
    ("a b", "c d e", &[], &[], 3),
    ("a b c d e", "a b c x", &[0], &[3], 4),
    ("a b c a b c d", "a b c d", &[0], &[4], 4),
    ("the cat sat on the mat", "on the mat the cat sat", &[0, 3], &[3, 3], 6),
    ("the cat sat on the mat", "the dog sat on the rug", &[0, 2], &[1, 3], 6),
    ("a b a b a b", "a b a b a b a b", &[0, 6], &[6, 2], 8),
    ("one two three", "three two one", &[0, 1, 2], &[1, 1, 1], 3),
    ("p q r s", "q r s p q", &[0, 3], &[3, 2], 5),
    ("Aspirin reduced fever in children.", "aspirin reduced fever, in young children", &[0, 5], &[4, 1], 6),
    ("m n o", "m m m", &[0, 1, 2], &[1, 1, 1], 3),
    ("a b c d e f g", "b c d x e f g", &[0, 4], &[3, 3], 7),
    ("x", "x x x x", &[0, 1, 2, 3], &[1, 1, 1, 1], 4),
    ("alpha beta gamma delta", "beta gamma alpha delta beta", &[0, 2, 3, 4], &[2, 1, 1, 1], 5),
    ("u v w x y z", "w x y", &[0], &[3], 3),
    ("a b c", "d e f g a", &[4], &[1], 5),
    ("a b c b c d", "b c d b c", &[0, 3], &[3, 2], 5),
    ("s t s t u", "s t u s t", &[0, 3], &[3, 2], 5),
    ("the drug lowered blood pressure", "blood pressure was lowered by the drug", &[0, 3, 5], &[2, 1, 2], 7),
];

/// Nearest double to `num / den`; zero denominators give 0.
fn exact(r: Option<Ratio<i64>>) -> f64 {
    r.map_or(0.0, |r| *r.numer() as f64 / *r.denom() as f64)
}

fn ratio(num: i64, den: i64) -> Option<Ratio<i64>> {
    (den != 0).then(|| Ratio::new(num, den))
}

fn unigram_overlap(pooled: &[String], target: &[String]) -> usize {
    let mut left: Vec<&String> = target.iter().collect();
    let mut hits = 0;
    for t in pooled {
        if let Some(pos) = left.iter().position(|x| *x == t) {
            left.swap_remove(pos);
            hits += 1;
        }
    }
    hits
}

fn recall_of(target: &[String], sources: &[Vec<String>], chosen: &[usize]) -> Ratio<i64> {
    let pooled: Vec<String> = chosen.iter().flat_map(|&i| sources[i].iter().cloned()).collect();
    Ratio::new(unigram_overlap(&pooled, target) as i64, target.len().max(1) as i64)
}

fn brute_force_recall(target: &[String], sources: &[Vec<String>], max_k: usize) -> Ratio<i64> {
    let all: Vec<usize> = (0..sources.len()).collect();
    (1..=max_k.min(sources.len()))
        .flat_map(|k| k_subsets(&all, k))
        .map(|s| recall_of(target, sources, &s))
        .max()
        .unwrap_or_default()
}

const ALIGN_CASES: [(&str, &[&str]); 6] = [
    ("The drug lowered blood pressure.", &["alpha beta.", "gamma delta.", "epsilon.", "the drug lowered blood pressure."]),
    ("aspirin reduced fever in young children", &["aspirin reduced fever", "unrelated words here", "in young children"]),
    ("nothing matches here", &["x", "y"]),
    ("a b c d e f", &["a b c d", "a b e", "c d f"]),
    ("fever fell in 12 of 20 patients", &["fever fell", "in 12 patients", "of 20 patients", "no change"]),
    ("a a b", &["a", "a b", "b b", "a a"]),
];

fn metric_oracles() -> Outcome {
    for (h, r, n, overlap, hc, rc) in ROUGE_CASES {
        let s = metrics::rouge_n(h, r, n).map_err(|e| e.to_string())?;
        let want = (exact(ratio(overlap, hc)), exact(ratio(overlap, rc)), exact(ratio(2 * overlap, hc + rc)));
        check(
            (s.overlap as i64, s.hypothesis_ngrams as i64, s.reference_ngrams as i64) == (overlap, hc, rc)
                && (s.precision, s.recall, s.f1) == want,
            || format!("rouge_{n}({h:?}, {r:?}) = {s:?}, want {want:?}"),
        )?;
    }
    for (src, summ, starts, lens, len) in FRAGMENT_CASES {
        let f = metrics::extractive_fragments(src, summ);
        let got_starts: Vec<usize> = f.fragments.iter().map(|r| r.start).collect();
        let got_lens: Vec<usize> = f.fragments.iter().map(|r| r.len()).collect();
        let covered: i64 = lens.iter().map(|&l| l as i64).sum();
        let squared: i64 = lens.iter().map(|&l| (l * l) as i64).sum();
        let want = (exact(ratio(covered, len)), exact(ratio(squared, len)));
        check(
            got_starts == starts
                && got_lens == lens
                && f.summary_len as i64 == len
                && (f.coverage, f.density) == want,
            || format!("fragments({src:?}, {summ:?}) = {f:?}, want {starts:?} {lens:?} {want:?}"),
        )?;
    }

    // Alignment cases: the fixed list above plus every reference sentence of
    // the toy corpus against its source sentences.
    let mut cases: Vec<(Vec<String>, Vec<Vec<String>>)> = ALIGN_CASES
        .iter()
        .map(|(t, s)| (text::metric_tokens(t), s.iter().map(|x| text::metric_tokens(x)).collect()))
        .collect();
    let dir = tmpdir();
    toy::install(dir.path()).map_err(|e| e.to_string())?;
    for ex in io::load_corpus(&dir.path().join("inputs/corpus.jsonl")).map_err(|e| e.to_string())? {
        let sources: Vec<Vec<String>> = ex.source_sentences.iter().map(|s| text::metric_tokens(s)).collect();
        for sent in text::split_sentences(&ex.reference_text, text::DEFAULT_ABBREVIATIONS) {
            cases.push((text::metric_tokens(&sent), sources.clone()));
        }
    }
    let (mut align_checked, mut mismatches) = (0, Vec::new());
    for (target, sources) in &cases {
        if sources.len() > 8 {
            continue;
        }
        for max_k in 1..=3 {
            let picked = metrics::greedy_align_tokens(target, sources, max_k);
            let got = recall_of(target, sources, &picked);
            let want = brute_force_recall(target, sources, max_k);
            check((1..=max_k).contains(&picked.len()), || format!("greedy_align picked {picked:?} at max_k={max_k}"))?;
            if got != want {
                mismatches.push(format!("{} max_k={max_k}: greedy {got}, best {want}", target.join(" ")));
            }
            align_checked += 1;
        }
    }

    // Seeded sweep over small random cases, reported alongside.
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut swept, mut sweep_misses) = (0, 0);
    for _ in 0..2000 {
        let words = |rng: &mut ChaCha8Rng, lo: usize, hi: usize| -> Vec<String> {
            (0..rng.gen_range(lo..=hi)).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_owned()).collect()
        };
        let target = words(&mut rng, 3, 8);
        let sources: Vec<Vec<String>> = (0..rng.gen_range(1..=8)).map(|_| words(&mut rng, 1, 5)).collect();
        for max_k in 1..=3 {
            let picked = metrics::greedy_align_tokens(&target, &sources, max_k);
            if recall_of(&target, &sources, &picked) != brute_force_recall(&target, &sources, max_k) {
                sweep_misses += 1;
            }
            swept += 1;
        }
    }
    check(mismatches.is_empty(), || {
        format!(
            "rouge_n and fragments exact on 20 cases each; greedy_align below brute-force recall on {} of {align_checked} \
             fixed cases (first: {}) and on {sweep_misses} of {swept} random cases",
            mismatches.len(),
            mismatches[0]
        )
    })?;
    Ok(format!(
        "20 rouge_n and 20 fragment cases exact; greedy_align equals brute force on {align_checked} fixed cases \
         and {} of {swept} random cases",
        swept - sweep_misses
    ))
}

// ---------------------------------------------------------------- 5

fn normalization_contract() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let rows: Vec<ScoreRecord> = (0..1000)
        .map(|i| ScoreRecord {
            candidate_id: format!("ft-{i:04}:reference:00"),
            scores: ScoreVector {
                rouge1_f1: Some(rng.gen_range(0.2..0.6)),
                rouge2_f1: Some(rng.gen_range(0.02..0.3)),
                bertscore_ref: Some(rng.gen_range(0.8..0.92)),
                bertscore_src: Some(rng.gen_range(0.78..0.9)),
                bartscore: Some(rng.gen_range(-4.0..-0.5)),
                factscore: Some(rng.gen_range(0.3..1.0)),
                ..Default::default()
            },
        })
        .collect();
    let dir = tmpdir();
    let path = dir.path().join("baseline.jsonl");
    io::write_jsonl(&path, &rows).map_err(|e| e.to_string())?;
    let table = io::load_scores(&path).map_err(|e| e.to_string())?;
    let stats = metrics::fit_stats(table.iter().map(|r| &r.scores), "baseline");
    let n = table.len() as f64;
    let mut worst_mean: f64 = 0.0;
    let mut worst_sd: f64 = 0.0;
    for m in Metric::ALL {
        let st = stats.get(m).ok_or_else(|| format!("no stats for {m}"))?;
        let z: Vec<f64> = table
            .iter()
            .map(|r| metrics::normalize(r.scores.get(m).unwrap(), st))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n).sqrt();
        worst_mean = worst_mean.max(mean.abs());
        worst_sd = worst_sd.max((sd - 1.0).abs());
    }
    check(worst_mean < 1e-12 && worst_sd < 1e-12, || {
        format!("max |mean| {worst_mean:e}, max |sd - 1| {worst_sd:e}")
    })?;
    let weights = AggregateWeights::default();
    let mut worst_agg: f64 = 0.0;
    for which in [AggregateKind::Rel, AggregateKind::Faith] {
        let aggs: Vec<f64> = table
            .iter()
            .map(|r| metrics::aggregate(&r.scores, &stats, &weights, which))
            .collect::<Result<_, _>>()
            .map_err(|e| e.to_string())?;
        worst_agg = worst_agg.max((aggs.iter().sum::<f64>() / n).abs());
    }
    check(worst_agg < 1e-12, || format!("mean aggregate {worst_agg:e}"))?;
    Ok(format!(
        "1000-row baseline: max |mean| {worst_mean:.1e}, max |sd - 1| {worst_sd:.1e}, max |mean aggregate| {worst_agg:.1e}"
    ))
}

// ---------------------------------------------------------------- 6

fn close(got: f64, want: f64, what: &str) -> Result<(), String> {
    check((got - want).abs() <= 1e-9, || format!("{what}: got {got}, want {want}"))
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

fn random_vecs(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Vec<Vec<f64>> {
    (0..n).map(|_| (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect()
}

/// Gram-Schmidt on a random square matrix; rows are orthonormal.
fn random_orthogonal(rng: &mut ChaCha8Rng, d: usize) -> Vec<Vec<f64>> {
    let mut q: Vec<Vec<f64>> = Vec::new();
    while q.len() < d {
        let mut v: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        for u in &q {
            let dot: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
            v.iter_mut().zip(u).for_each(|(a, b)| *a -= dot * b);
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        if norm > 1e-6 {
            q.push(v.into_iter().map(|a| a / norm).collect());
        }
    }
    q
}

fn apply(q: &[Vec<f64>], v: &[f64]) -> Vec<f64> {
    q.iter().map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum()).collect()
}

fn loss_kernels() -> Outcome {
    let opts = ContrastiveOptions::default();
    let e = |r: Result<f64, losses::LossError>| r.map_err(|e| e.to_string());
    close(e(losses::mle_loss(&[0.0, 0.0, 0.0]))?, 0.0, "mle [0,0,0]")?;
    close(e(losses::mle_loss(&[-1.0, -1.0]))?, 2.0, "mle [-1,-1]")?;
    close(e(losses::mle_loss(&[-0.5, -1.5, -1.0]))?, 3.0, "mle [-0.5,-1.5,-1]")?;
    close(e(losses::length_normalized_score(&[-1.0, -1.0], 1.0, 1.0))?, -1.0, "score tau 1 alpha 1")?;
    close(e(losses::length_normalized_score(&[-1.0, -1.0], 1.0, 0.0))?, -2.0, "score tau 1 alpha 0")?;
    close(e(losses::length_normalized_score(&[-2.0, -2.0], 0.01, 2.0))?, -0.01, "score tau .01 alpha 2")?;
    close(losses::margin_rank_loss(&[0.9, 0.5, 0.1, -0.3], 0.0), 0.0, "margin decreasing")?;
    close(losses::margin_rank_loss(&[0.4; 4], 0.0), 0.0, "margin equal")?;
    close(losses::margin_rank_loss(&[-1.0, -0.5], 0.001), 0.501, "margin k=2")?;
    let c = |p: Vec<Vec<f64>>, n: Vec<Vec<f64>>| {
        losses::contrastive_loss(&p, &n, &opts).map(|c| c.loss).map_err(|e| e.to_string())
    };
    close(c(vec![vec![1.0, 0.0], vec![1.0, 0.0]], vec![vec![0.0, 1.0]])?, -1.0, "contrastive aligned")?;
    close(c(vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![-1.0, 0.0]])?, -1.0, "contrastive orthogonal")?;
    close(c(vec![vec![3.0, 0.0], vec![3.0, 0.0]], vec![vec![0.0, 3.0]])?, -1.0, "contrastive scaled")?;
    let q = |p: &[f64], n: &[f64]| losses::conseq_loss(p, n).map_err(|e| e.to_string());
    close(q(&[0.0], &[f64::NEG_INFINITY])?.loss, 0.0, "conseq perfect")?;
    close(q(&[0.0], &[0.5f64.ln()])?.loss, 2f64.ln(), "conseq half")?;
    let certain = q(&[0.0], &[0.0])?;
    check(certain.clamped && certain.loss.is_finite() && certain.loss > 10.0, || {
        format!("conseq clamp: {certain:?}")
    })?;
    close(losses::combined_objective(2.5, 7.0, 1.0, 0.0), 2.5, "combined mle only")?;
    close(losses::combined_objective(2.0, 3.0, 0.1, 1.0), 3.2, "combined table")?;
    close(losses::combined_objective(2.0, 3.0, 0.0, 0.0), 0.0, "combined zero")?;

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let s: Vec<f64> = (0..5).map(|_| rng.gen_range(-3.0..0.0)).collect();
        let grad = losses::margin_rank_grad(&s, 0.1);
        for i in 0..s.len() {
            let (mut up, mut down) = (s.clone(), s.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (losses::margin_rank_loss(&up, 0.1) - losses::margin_rank_loss(&down, 0.1)) / (2.0 * h);
            worst = worst.max(rel_err(fd, grad[i]));
        }
    }
    for include in [false, true] {
        let o = ContrastiveOptions { temperature: 0.5, include_positive_in_denominator: include };
        for _ in 0..20 {
            let p = random_vecs(&mut rng, 3, 4);
            let n = random_vecs(&mut rng, 2, 4);
            let g = losses::contrastive_loss(&p, &n, &o).map_err(|e| e.to_string())?;
            let loss = |p: &[Vec<f64>], n: &[Vec<f64>]| losses::contrastive_loss(p, n, &o).unwrap().loss;
            for (group, grads, is_pos) in [(&p, &g.grad_positives, true), (&n, &g.grad_negatives, false)] {
                for v in 0..group.len() {
                    for d in 0..4 {
                        let (mut up, mut down) = (group.clone(), group.clone());
                        up[v][d] += h;
                        down[v][d] -= h;
                        let fd = if is_pos {
                            (loss(&up, &n) - loss(&down, &n)) / (2.0 * h)
                        } else {
                            (loss(&p, &up) - loss(&p, &down)) / (2.0 * h)
                        };
                        worst = worst.max(rel_err(fd, grads[v][d]));
                    }
                }
            }
        }
    }
    for _ in 0..20 {
        let p: Vec<f64> = (0..2).map(|_| rng.gen_range(-5.0..-0.1)).collect();
        let n: Vec<f64> = (0..3).map(|_| rng.gen_range(-5.0..-0.1)).collect();
        let g = q(&p, &n)?;
        for i in 0..p.len() {
            let (mut up, mut down) = (p.clone(), p.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (q(&up, &n)?.loss - q(&down, &n)?.loss) / (2.0 * h);
            worst = worst.max(rel_err(fd, g.grad_positives[i]));
        }
        for i in 0..n.len() {
            let (mut up, mut down) = (n.clone(), n.clone());
            up[i] += h;
            down[i] -= h;
            let fd = (q(&p, &up)?.loss - q(&p, &down)?.loss) / (2.0 * h);
            worst = worst.max(rel_err(fd, g.grad_negatives[i]));
        }
    }
    check(worst <= 1e-5, || format!("finite-difference relative error {worst:e}"))?;

    let mut worst_rot: f64 = 0.0;
    for _ in 0..20 {
        let d = 6;
        let q = random_orthogonal(&mut rng, d);
        let p = random_vecs(&mut rng, 3, d);
        let n = random_vecs(&mut rng, 3, d);
        let rot = |vs: &[Vec<f64>]| vs.iter().map(|v| apply(&q, v)).collect::<Vec<_>>();
        let before = c(p.clone(), n.clone())?;
        let after = c(rot(&p), rot(&n))?;
        worst_rot = worst_rot.max((before - after).abs());
    }
    check(worst_rot <= 1e-9, || format!("orthogonal transform changed the loss by {worst_rot:e}"))?;
    Ok(format!(
        "18 examples within 1e-9; gradient relative error {worst:.1e} over 20 points per loss; rotation drift {worst_rot:.1e}"
    ))
}

// ---------------------------------------------------------------- 7

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_owned()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).expect("readable dir") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path.strip_prefix(root).unwrap().to_owned());
            }
        }
    }
    out.sort();
    out
}

fn determinism() -> Outcome {
    let (a, b) = (tmpdir(), tmpdir());
    toy::run(a.path()).map_err(|e| format!("{e:#}"))?;
    toy::run(b.path()).map_err(|e| format!("{e:#}"))?;
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    check(fa == fb, || format!("file lists differ: {} vs {} files", fa.len(), fb.len()))?;
    check(fa.iter().any(|p| p.ends_with("manifest.json")), || "no manifest written".into())?;
    let mut bytes = 0;
    for rel in &fa {
        let (x, y) = (std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap());
        check(x == y, || format!("{} differs", rel.display()))?;
        bytes += x.len();
    }
    Ok(format!("{} artifacts ({bytes} bytes) byte-identical across two runs", fa.len()))
}

// ---------------------------------------------------------------- 8

fn statistic_invariants() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for trial in 0..100 {
        let n = rng.gen_range(2..=6);
        let texts: Vec<String> = (0..n).map(|_| random_text(&mut rng)).collect();
        let mut shuffled: Vec<&str> = texts.iter().map(String::as_str).collect();
        let original = analysis::self_bleu(&shuffled).map_err(|e| e.to_string())?;
        shuffled.shuffle(&mut rng);
        let permuted = analysis::self_bleu(&shuffled).map_err(|e| e.to_string())?;
        check(original == permuted, || format!("self_bleu trial {trial}: {original} vs {permuted}"))?;
    }
    for trial in 0..100 {
        let k = rng.gen_range(2..=8);
        let v: Vec<f64> = (0..k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let got = analysis::margin_gap(&v).map_err(|e| e.to_string())?;
        let mut sorted = v.clone();
        sorted.sort_by(|a, b| b.total_cmp(a));
        let adjacent = sorted.windows(2).map(|w| w[0] - w[1]).sum::<f64>() / (k - 1) as f64;
        check(got == oracle_margin(&v) && (got - adjacent).abs() < 1e-12, || {
            format!("margin_gap trial {trial}: {got} vs {} / {adjacent}", oracle_margin(&v))
        })?;
    }
    for trial in 0..100 {
        let n = rng.gen_range(3..=10);
        let xs: Vec<f64> = (0..n).map(|_| random_value(&mut rng)).collect();
        let ys: Vec<f64> = (0..n).map(|_| random_value(&mut rng)).collect();
        let base = analysis::spearman(&xs, &ys).map_err(|e| e.to_string())?.rho;
        let fx: Vec<f64> = xs.iter().map(|x| x.powi(3) + 2.0 * x).collect();
        let fy: Vec<f64> = ys.iter().map(|y| y.exp()).collect();
        let warped = analysis::spearman(&fx, &fy).map_err(|e| e.to_string())?.rho;
        check(base == warped && (base - key_to_rho(oracle_spearman_key(&xs, &ys))).abs() < 1e-12, || {
            format!("spearman trial {trial}: {base} vs {warped}")
        })?;
    }
    for trial in 0..100 {
        let n = rng.gen_range(2..=10);
        let mut beam: Vec<f64> = (0..n).map(|i| i as f64).collect();
        beam.shuffle(&mut rng);
        // Better beams (lower rank) get higher aggregates.
        let matched: Vec<f64> = beam.iter().map(|r| 10.0 - r - rng.gen_range(0.0..0.9)).collect();
        let reversed: Vec<f64> = matched.iter().map(|v| -v).collect();
        let lo = analysis::precalibration_score(&beam, &matched).map_err(|e| e.to_string())?;
        let hi = analysis::precalibration_score(&beam, &reversed).map_err(|e| e.to_string())?;
        check((lo + 1.0).abs() < 1e-12 && (hi - 1.0).abs() < 1e-12, || {
            format!("precalibration trial {trial}: {lo}, {hi}")
        })?;
    }
    Ok("self_bleu, margin_gap, spearman and precalibration_score hold on 100 trials each".into())
}

// ---------------------------------------------------------------- 9

fn correlate_recovery() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut recovered = 0;
    for _ in 0..100 {
        let slope = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.5..2.0);
        let xs: Vec<f64> = (0..10).map(|_| rng.gen_range(0.0..1.0)).collect();
        let signal: Vec<f64> = xs.iter().map(|x| slope * x).collect();
        let mean = signal.iter().sum::<f64>() / 10.0;
        let sd = (signal.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / 10.0).sqrt();
        let noise = Normal::new(0.0, 0.1 * sd).unwrap();
        let rows: Vec<RunRow> = xs
            .iter()
            .zip(&signal)
            .enumerate()
            .map(|(i, (x, s))| RunRow {
                label: format!("run-{i}"),
                statistics: BTreeMap::from([
                    ("margin_gap".to_owned(), *x),
                    ("distractor".to_owned(), rng.gen_range(0.0..1.0)),
                ]),
                downstream: s + noise.sample(&mut rng),
            })
            .collect();
        let entries = analysis::correlate_runs(&rows);
        let r = entries.iter().find(|e| e.statistic == "margin_gap").and_then(|e| e.pearson);
        if r.is_some_and(|r| r.signum() == slope.signum() && r.abs() >= 0.8) {
            recovered += 1;
        }
    }
    check(recovered >= 95, || format!("recovered {recovered}/100"))?;
    Ok(format!("planted sign recovered with |r| >= 0.8 in {recovered}/100 batches"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("pool counts and runtime", pool_counts),
        ("selection oracle equivalence", selection_oracle),
        ("strategy catalog completeness", catalog_cli),
        ("metric oracles", metric_oracles),
        ("normalization contract", normalization_contract),
        ("loss kernels", loss_kernels),
        ("determinism", determinism),
        ("statistic invariants", statistic_invariants),
        ("correlate recovery", correlate_recovery),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        match f() {
            Ok(detail) => println!("PASS {}. {name}: {detail}", i + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {}. {name}: {detail}", i + 1);
            }
        }
    }
    println!("{}/{} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
