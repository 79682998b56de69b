//! HR@k / NDCG@k, the evaluation driver, and the MostPop and session-kNN
//! baselines.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use rayon::prelude::*;

use crate::data::{examples_from_sessions, Example, Session};
use crate::error::{Error, Result};
use crate::model::DuipModel;
use crate::rng::Rng;

/// Anything that can produce a ranked list of item indices for a prefix.
///
/// Returned lists hold distinct item indices in `[0, n_items)` and at most `k`
/// of them.
pub trait Recommender: Sync {
    fn rank(&self, prefix: &[usize], k: usize) -> Result<Vec<usize>>;

    /// Ranking used by the evaluator. Only test doubles look at the target.
    fn rank_example(&self, example: &Example, k: usize) -> Result<Vec<usize>> {
        self.rank(&example.prefix, k)
    }
}

fn check_cutoff(ranked: &[usize], k: usize) -> Result<()> {
    if k > ranked.len() {
        return Err(Error::domain(format!(
            "cutoff k = {k} exceeds ranked list length {}",
            ranked.len()
        )));
    }
    Ok(())
}

/// 1-based position of `target` within the first `k` entries.
fn rank_within(ranked: &[usize], target: usize, k: usize) -> Option<usize> {
    ranked.iter().take(k).position(|&r| r == target).map(|p| p + 1)
}

/// 1 if `target` is among the first `k` entries, else 0.
pub fn hit_rate_at_k(ranked: &[usize], target: usize, k: usize) -> Result<f64> {
    check_cutoff(ranked, k)?;
    Ok(if rank_within(ranked, target, k).is_some() {
        1.0
    } else {
        0.0
    })
}

/// `1 / log2(rank + 1)` if the target sits at `rank ≤ k`, else 0.
pub fn ndcg_at_k(ranked: &[usize], target: usize, k: usize) -> Result<f64> {
    check_cutoff(ranked, k)?;
    Ok(rank_within(ranked, target, k).map_or(0.0, |r| 1.0 / ((r + 1) as f64).log2()))
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricsReport {
    pub model_name: String,
    pub hr: BTreeMap<usize, f64>,
    pub ndcg: BTreeMap<usize, f64>,
    pub n_examples: usize,
}

impl MetricsReport {
    /// Checks `ndcg@1 == hr@1`, monotonicity in `k`, and `ndcg@k ≤ hr@k`.
    pub fn check_invariants(&self) -> Result<()> {
        if let (Some(h1), Some(n1)) = (self.hr.get(&1), self.ndcg.get(&1)) {
            if h1 != n1 {
                return Err(Error::State(format!("{}: ndcg@1 {n1} != hr@1 {h1}", self.model_name)));
            }
        }
        let mut prev: Option<(f64, f64)> = None;
        for (k, &h) in &self.hr {
            let n = self.ndcg[k];
            if n > h + 1e-12 || !(0.0..=1.0).contains(&h) || !(0.0..=1.0).contains(&n) {
                return Err(Error::State(format!("{}: bad values at k={k}", self.model_name)));
            }
            if let Some((ph, pn)) = prev {
                if h + 1e-12 < ph || n + 1e-12 < pn {
                    return Err(Error::State(format!("{}: metrics decrease at k={k}", self.model_name)));
                }
            }
            prev = Some((h, n));
        }
        Ok(())
    }
}

/// Scores every example; an example whose target is not a catalog item
/// (UNK) counts as a miss.
pub fn evaluate_examples(
    model_name: &str,
    rec: &dyn Recommender,
    examples: &[Example],
    n_items: usize,
    ks: &[usize],
) -> Result<MetricsReport> {
    if examples.is_empty() {
        return Err(Error::domain("no evaluation examples"));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::domain("cutoffs must be positive"));
    }
    let k_max = *ks.iter().max().expect("nonempty");
    let ranks: Vec<Result<Option<usize>>> = examples
        .par_iter()
        .map(|ex| {
            let ranked = rec.rank_example(ex, k_max)?;
            if ex.target >= n_items {
                return Ok(None);
            }
            Ok(rank_within(&ranked, ex.target, k_max))
        })
        .collect();

    let mut hr: BTreeMap<usize, f64> = ks.iter().map(|&k| (k, 0.0)).collect();
    let mut ndcg = hr.clone();
    for r in ranks {
        if let Some(rank) = r? {
            for &k in ks {
                if rank <= k {
                    *hr.get_mut(&k).unwrap() += 1.0;
                    *ndcg.get_mut(&k).unwrap() += 1.0 / ((rank + 1) as f64).log2();
                }
            }
        }
    }
    let n = examples.len() as f64;
    hr.values_mut().for_each(|v| *v /= n);
    ndcg.values_mut().for_each(|v| *v /= n);
    Ok(MetricsReport {
        model_name: model_name.to_string(),
        hr,
        ndcg,
        n_examples: examples.len(),
    })
}

/// Mean HR@k and NDCG@k over every `(prefix, next item)` example of `sessions`.
pub fn evaluate(
    model_name: &str,
    rec: &dyn Recommender,
    sessions: &[Session],
    n_items: usize,
    ks: &[usize],
) -> Result<MetricsReport> {
    evaluate_examples(model_name, rec, &examples_from_sessions(sessions), n_items, ks)
}

/// One report per model over the same examples.
pub fn compare(
    models: &[(&str, &dyn Recommender)],
    sessions: &[Session],
    n_items: usize,
    ks: &[usize],
) -> Result<Vec<MetricsReport>> {
    if models.is_empty() {
        return Err(Error::domain("compare needs at least one model"));
    }
    let examples = examples_from_sessions(sessions);
    models
        .iter()
        .map(|(name, rec)| evaluate_examples(name, *rec, &examples, n_items, ks))
        .collect()
}

/// `model,hr@1,hr@5,ndcg@1,ndcg@5,n` (one `hr@`/`ndcg@` column per cutoff).
pub fn metrics_csv(reports: &[MetricsReport]) -> String {
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.hr.keys().copied().collect())
        .unwrap_or_default();
    let mut out = String::from("model");
    for k in &ks {
        let _ = write!(out, ",hr@{k}");
    }
    for k in &ks {
        let _ = write!(out, ",ndcg@{k}");
    }
    out.push_str(",n\n");
    for r in reports {
        out.push_str(&r.model_name);
        for k in &ks {
            let _ = write!(out, ",{:.6}", r.hr[k]);
        }
        for k in &ks {
            let _ = write!(out, ",{:.6}", r.ndcg[k]);
        }
        let _ = writeln!(out, ",{}", r.n_examples);
    }
    out
}

/// Plain-text comparison table.
pub fn metrics_table(reports: &[MetricsReport]) -> String {
    let ks: Vec<usize> = reports
        .first()
        .map(|r| r.hr.keys().copied().collect())
        .unwrap_or_default();
    let name_w = reports.iter().map(|r| r.model_name.len()).max().unwrap_or(5).max(5);
    let mut header = format!("{:<name_w$}", "Model");
    for k in &ks {
        let _ = write!(header, "  {:>7}", format!("HR@{k}"));
    }
    for k in &ks {
        let _ = write!(header, "  {:>7}", format!("NDCG@{k}"));
    }
    let mut out = format!("{header}\n{}\n", "-".repeat(header.len()));
    for r in reports {
        let _ = write!(out, "{:<name_w$}", r.model_name);
        for k in &ks {
            let _ = write!(out, "  {:>7.4}", r.hr[k]);
        }
        for k in &ks {
            let _ = write!(out, "  {:>7.4}", r.ndcg[k]);
        }
        out.push('\n');
    }
    out
}

impl Recommender for DuipModel {
    fn rank(&self, prefix: &[usize], k: usize) -> Result<Vec<usize>> {
        self.top_k(prefix, k.min(self.n_items()))
    }
}

/// Global training popularity, ties by ascending index. Items already in the
/// prefix are skipped.
#[derive(Clone, Debug)]
pub struct MostPop {
    counts: Vec<usize>,
    order: Vec<usize>,
}

impl MostPop {
    pub fn fit(train: &[Session], n_items: usize) -> Self {
        let mut counts = vec![0usize; n_items];
        for s in train {
            for &it in &s.items {
                if it < n_items {
                    counts[it] += 1;
                }
            }
        }
        MostPop::from_counts(counts)
    }

    pub fn from_counts(counts: Vec<usize>) -> Self {
        let mut order: Vec<usize> = (0..counts.len()).collect();
        order.sort_by(|&a, &b| counts[b].cmp(&counts[a]).then(a.cmp(&b)));
        MostPop { counts, order }
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    fn ranked_excluding(&self, prefix: &[usize], k: usize) -> Vec<usize> {
        self.order
            .iter()
            .copied()
            .filter(|it| !prefix.contains(it))
            .take(k)
            .collect()
    }
}

pub fn mostpop_baseline(train: &[Session], n_items: usize) -> MostPop {
    MostPop::fit(train, n_items)
}

impl Recommender for MostPop {
    fn rank(&self, prefix: &[usize], k: usize) -> Result<Vec<usize>> {
        Ok(self.ranked_excluding(prefix, k))
    }
}

pub const DEFAULT_NEIGHBORS: usize = 50;

/// Session-based k-nearest neighbours over binary item sets with cosine
/// similarity `|A∩B| / √(|A|·|B|)`.
///
/// An item's score is the summed similarity of the `k` most similar training
/// sessions that contain it (neighbour ties by training order). Items are
/// ranked by score, ties by index, prefix items excluded. When no neighbour
/// contributes any score the ranking is MostPop's.
#[derive(Clone, Debug)]
pub struct Sknn {
    sessions: Vec<Vec<usize>>,
    postings: HashMap<usize, Vec<usize>>,
    k_neighbors: usize,
    n_items: usize,
    fallback: MostPop,
}

impl Sknn {
    pub fn fit(train: &[Session], n_items: usize, k_neighbors: usize) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::domain("SKNN needs at least one training session"));
        }
        let sessions: Vec<Vec<usize>> = train
            .iter()
            .map(|s| {
                let mut set: Vec<usize> = s.items.iter().copied().filter(|&i| i < n_items).collect();
                set.sort_unstable();
                set.dedup();
                set
            })
            .collect();
        let mut postings: HashMap<usize, Vec<usize>> = HashMap::new();
        for (sid, set) in sessions.iter().enumerate() {
            for &it in set {
                postings.entry(it).or_default().push(sid);
            }
        }
        Ok(Sknn {
            sessions,
            postings,
            k_neighbors,
            n_items,
            fallback: MostPop::fit(train, n_items),
        })
    }

    fn query_set(&self, prefix: &[usize]) -> Vec<usize> {
        let mut q: Vec<usize> = prefix.iter().copied().filter(|&i| i < self.n_items).collect();
        q.sort_unstable();
        q.dedup();
        q
    }

    /// `(session index, similarity)` of the nearest sessions, most similar first.
    pub fn neighbors(&self, prefix: &[usize]) -> Vec<(usize, f64)> {
        let query = self.query_set(prefix);
        if query.is_empty() {
            return Vec::new();
        }
        let mut overlap: HashMap<usize, usize> = HashMap::new();
        for it in &query {
            for &sid in self.postings.get(it).map(Vec::as_slice).unwrap_or(&[]) {
                *overlap.entry(sid).or_default() += 1;
            }
        }
        let qn = query.len() as f64;
        let mut sims: Vec<(usize, f64)> = overlap
            .into_iter()
            .map(|(sid, n)| (sid, n as f64 / (qn * self.sessions[sid].len() as f64).sqrt()))
            .collect();
        sims.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        sims.truncate(self.k_neighbors);
        sims
    }

    /// Per-item neighbourhood scores (before prefix exclusion).
    pub fn scores(&self, prefix: &[usize]) -> Vec<f64> {
        let mut scores = vec![0.0; self.n_items];
        for (sid, sim) in self.neighbors(prefix) {
            for &it in &self.sessions[sid] {
                scores[it] += sim;
            }
        }
        scores
    }
}

pub fn sknn_baseline(train: &[Session], n_items: usize, k_neighbors: usize) -> Result<Sknn> {
    Sknn::fit(train, n_items, k_neighbors)
}

impl Recommender for Sknn {
    fn rank(&self, prefix: &[usize], k: usize) -> Result<Vec<usize>> {
        let scores = self.scores(prefix);
        let mut scored: Vec<usize> = (0..self.n_items)
            .filter(|&i| scores[i] > 0.0 && !prefix.contains(&i))
            .collect();
        if scored.is_empty() {
            return Ok(self.fallback.ranked_excluding(prefix, k));
        }
        scored.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        scored.truncate(k);
        if scored.len() < k {
            let rest = (0..self.n_items).filter(|&i| scores[i] <= 0.0 && !prefix.contains(&i));
            scored.extend(rest.take(k - scored.len()));
        }
        Ok(scored)
    }
}

/// A fresh uniformly random permutation per query, seeded from the prefix.
#[derive(Clone, Debug)]
pub struct RandomRecommender {
    pub n_items: usize,
    pub seed: u64,
}

impl Recommender for RandomRecommender {
    fn rank(&self, prefix: &[usize], k: usize) -> Result<Vec<usize>> {
        // FNV-1a over the prefix, mixed with the seed
        let mut h: u64 = 0xcbf2_9ce4_8422_2325 ^ self.seed;
        for &it in prefix {
            h ^= it as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        let mut rng = Rng::new(h);
        let mut items: Vec<usize> = (0..self.n_items).collect();
        rng.shuffle(&mut items);
        items.truncate(k);
        Ok(items)
    }
}

/// Test double that puts the true target first.
#[derive(Clone, Debug)]
pub struct OracleRecommender {
    pub n_items: usize,
}

impl Recommender for OracleRecommender {
    fn rank(&self, _prefix: &[usize], k: usize) -> Result<Vec<usize>> {
        Ok((0..self.n_items).take(k).collect())
    }

    fn rank_example(&self, example: &Example, k: usize) -> Result<Vec<usize>> {
        let mut out = vec![example.target];
        out.extend((0..self.n_items).filter(|&i| i != example.target));
        out.truncate(k);
        Ok(out)
    }
}
