//! Splitting, top-K ranking, Precision/Recall@K, baselines and the layer sweep.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::graph::InteractionRecord;
use crate::model::{predict_score, train, ModelState, Representations, Hyperparams};
use crate::numeric::Rng;

/// Train / validation / test partition of interaction records.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<InteractionRecord>,
    pub validation: Vec<InteractionRecord>,
    pub test: Vec<InteractionRecord>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

/// Per-user random split of distinct (user, item) pairs.
///
/// Each user's validation and test counts are `n·ratio` with randomized
/// rounding, so the ratios hold in expectation. Every record of a pair
/// lands in the same part. Users with fewer than three pairs stay in train.
pub fn split_dataset(records: &[InteractionRecord], ratios: [f64; 3], seed: u64) -> Result<Split> {
    if ratios.iter().any(|r| !(*r > 0.0) || !r.is_finite()) {
        return Err(Error::Config(format!("split ratios must be positive, got {ratios:?}")));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!("split ratios sum to {sum}, expected 1")));
    }

    // user -> pairs in first-seen order; pair -> record indices
    let mut users: Vec<&str> = Vec::new();
    let mut user_pairs: HashMap<&str, Vec<usize>> = HashMap::new();
    let mut pair_index: HashMap<(&str, &str), usize> = HashMap::new();
    let mut pair_records: Vec<Vec<usize>> = Vec::new();
    for (n, r) in records.iter().enumerate() {
        let key = (r.user.as_str(), r.item.as_str());
        let p = *pair_index.entry(key).or_insert_with(|| {
            pair_records.push(Vec::new());
            let p = pair_records.len() - 1;
            user_pairs
                .entry(key.0)
                .or_insert_with(|| {
                    users.push(key.0);
                    Vec::new()
                })
                .push(p);
            p
        });
        pair_records[p].push(n);
    }

    let mut rng = Rng::stream(seed, 4);
    let mut part = vec![0u8; pair_records.len()];
    for u in &users {
        let mut pairs = user_pairs[u].clone();
        if pairs.len() < 3 {
            continue;
        }
        rng.shuffle(&mut pairs);
        let n = pairs.len();
        let mut round = |x: f64| {
            let f = x.floor();
            f as usize + usize::from(rng.uniform() < x - f)
        };
        let mut n_val = round(n as f64 * ratios[1]);
        let mut n_test = round(n as f64 * ratios[2]);
        while n_val + n_test >= n {
            if n_test >= n_val && n_test > 0 {
                n_test -= 1;
            } else {
                n_val -= 1;
            }
        }
        for &p in &pairs[..n_val] {
            part[p] = 1;
        }
        for &p in &pairs[n_val..n_val + n_test] {
            part[p] = 2;
        }
    }

    let mut split = Split {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
        ratios,
    };
    for (p, recs) in pair_records.iter().enumerate() {
        let dest = match part[p] {
            0 => &mut split.train,
            1 => &mut split.validation,
            _ => &mut split.test,
        };
        dest.extend(recs.iter().map(|&n| records[n].clone()));
    }
    Ok(split)
}

/// Scores every catalog item for a user; higher is better.
pub trait Ranker: Sync {
    fn item_count(&self) -> usize;
    fn scores(&self, user: usize) -> Vec<f64>;
}

/// Top `k` items by descending score, ties by ascending id, skipping
/// `exclude` (sorted ascending).
pub fn topk(scores: &[f64], k: usize, exclude: &[usize]) -> Vec<usize> {
    let mut cand: Vec<usize> = (0..scores.len())
        .filter(|i| exclude.binary_search(i).is_err())
        .collect();
    let cmp = |a: &usize, b: &usize| scores[*b].total_cmp(&scores[*a]).then(a.cmp(b));
    if k < cand.len() {
        cand.select_nth_unstable_by(k, cmp);
        cand.truncate(k);
    }
    cand.sort_by(cmp);
    cand
}

/// Ranks with a trained model's final representations.
#[derive(Debug, Clone)]
pub struct ModelRanker {
    reps: Representations,
}

impl ModelRanker {
    pub fn new(reps: Representations) -> Self {
        ModelRanker { reps }
    }

    pub fn representations(&self) -> &Representations {
        &self.reps
    }
}

impl Ranker for ModelRanker {
    fn item_count(&self) -> usize {
        self.reps.item.rows()
    }

    fn scores(&self, user: usize) -> Vec<f64> {
        let u = self.reps.user.row(user);
        (0..self.reps.item.rows())
            .map(|i| predict_score(u, self.reps.item.row(i)))
            .collect()
    }
}

/// Ranks by train interaction count.
#[derive(Debug, Clone)]
pub struct PopularityRanker {
    counts: Vec<f64>,
}

pub fn baseline_popularity(train_items_by_user: &[Vec<usize>], item_count: usize) -> PopularityRanker {
    let mut counts = vec![0.0; item_count];
    for items in train_items_by_user {
        for &i in items {
            counts[i] += 1.0;
        }
    }
    PopularityRanker { counts }
}

impl Ranker for PopularityRanker {
    fn item_count(&self) -> usize {
        self.counts.len()
    }

    fn scores(&self, _user: usize) -> Vec<f64> {
        self.counts.clone()
    }
}

/// A seeded shuffle per user.
#[derive(Debug, Clone)]
pub struct RandomRanker {
    seed: u64,
    item_count: usize,
}

pub fn baseline_random(seed: u64, item_count: usize) -> RandomRanker {
    RandomRanker { seed, item_count }
}

impl Ranker for RandomRanker {
    fn item_count(&self) -> usize {
        self.item_count
    }

    fn scores(&self, user: usize) -> Vec<f64> {
        let mut rng = Rng::stream(self.seed, 1 << 32 | user as u64);
        let mut order: Vec<usize> = (0..self.item_count).collect();
        rng.shuffle(&mut order);
        let mut scores = vec![0.0; self.item_count];
        for (pos, &i) in order.iter().enumerate() {
            scores[i] = (self.item_count - pos) as f64;
        }
        scores
    }
}

/// Scores the ground truth 1 and everything else 0.
#[derive(Debug, Clone)]
pub struct OracleRanker {
    truth: Vec<Vec<usize>>,
    item_count: usize,
}

impl OracleRanker {
    pub fn new(truth: Vec<Vec<usize>>, item_count: usize) -> Self {
        OracleRanker { truth, item_count }
    }
}

impl Ranker for OracleRanker {
    fn item_count(&self) -> usize {
        self.item_count
    }

    fn scores(&self, user: usize) -> Vec<f64> {
        let mut s = vec![0.0; self.item_count];
        for &i in self.truth.get(user).map(Vec::as_slice).unwrap_or(&[]) {
            s[i] = 1.0;
        }
        s
    }
}

/// `(|hits| / K, |hits| / |truth|)`. `truth` must be non-empty.
pub fn precision_recall_at_k(recommended: &[usize], truth: &[usize], k: usize) -> Result<(f64, f64)> {
    let hits = count_hits(recommended, truth, k)?;
    if truth.is_empty() {
        return Err(Error::Config("ground truth is empty".into()));
    }
    Ok((hits as f64 / k as f64, hits as f64 / truth.len() as f64))
}

/// Number of entries of `recommended` that appear in `truth`.
pub fn count_hits(recommended: &[usize], truth: &[usize], k: usize) -> Result<usize> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    if recommended.len() > k {
        return Err(Error::Config(format!(
            "{} recommendations for K = {k}",
            recommended.len()
        )));
    }
    Ok(recommended.iter().filter(|i| truth.contains(i)).count())
}

/// Macro-averaged metrics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    /// Users with non-empty ground truth.
    pub users: usize,
}

/// Averages Precision/Recall@K over users with non-empty `truth`, ranking
/// the full catalog minus `exclude[u]`.
pub fn evaluate<R: Ranker + ?Sized>(
    ranker: &R,
    exclude: &[Vec<usize>],
    truth: &[Vec<usize>],
    k: usize,
) -> Result<Metrics> {
    if k == 0 {
        return Err(Error::Config("K must be at least 1".into()));
    }
    let per_user: Vec<Option<(f64, f64)>> = (0..truth.len())
        .into_par_iter()
        .map(|u| {
            if truth[u].is_empty() {
                return Ok(None);
            }
            let ex = exclude.get(u).map(Vec::as_slice).unwrap_or(&[]);
            let top = topk(&ranker.scores(u), k, ex);
            precision_recall_at_k(&top, &truth[u], k).map(Some)
        })
        .collect::<Result<_>>()?;
    let (mut p, mut r, mut n) = (0.0, 0.0, 0usize);
    for (pu, ru) in per_user.into_iter().flatten() {
        p += pu;
        r += ru;
        n += 1;
    }
    if n == 0 {
        return Ok(Metrics { precision: 0.0, recall: 0.0, users: 0 });
    }
    Ok(Metrics {
        precision: p / n as f64,
        recall: r / n as f64,
        users: n,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub label: String,
    pub k: usize,
    pub precision: f64,
    pub recall: f64,
    pub seed: u64,
    pub wall_ms: u128,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: &str = "label,K,precision,recall,seed,wall_ms";

impl EvalReport {
    pub fn push(&mut self, label: impl Into<String>, k: usize, m: Metrics, seed: u64, wall_ms: u128) {
        self.rows.push(ReportRow {
            label: label.into(),
            k,
            precision: m.precision,
            recall: m.recall,
            seed,
            wall_ms,
        });
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{REPORT_HEADER}\n");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{},{},{}",
                r.label, r.k, r.precision, r.recall, r.seed, r.wall_ms
            );
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Trains and tests one model per depth in `layer_values`.
pub fn sweep_layers(dataset: &Dataset, layer_values: &[usize], hyper: &Hyperparams) -> Result<EvalReport> {
    let mut report = EvalReport::default();
    for &l in layer_values {
        if l == 0 {
            return Err(Error::Config("layer count must be at least 1".into()));
        }
        let start = Instant::now();
        let h = hyper.with_layers(l);
        let mut state = ModelState::init(&dataset.graphs, &h)?;
        train(&mut state, &dataset.graphs, Some(&dataset.validation))?;
        let reps = Representations::compute(&state, &dataset.graphs)?;
        let m = evaluate(&ModelRanker::new(reps), &dataset.train_items, &dataset.test, h.top_k)?;
        report.push(format!("L={l}"), h.top_k, m, h.seed, start.elapsed().as_millis());
    }
    Ok(report)
}
