//! Evaluation quantities: recall@k, NDCG@k, genre-wise NDCG, edit deltas and
//! aggregation across users and seeds.
//!
//! Ranked lists are slices of catalog indices, best first, with seen items
//! already removed.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::dataio::{GenreId, ItemCatalog};
use crate::{Result, TearsError};

fn discount(pos: usize) -> f64 {
    1.0 / ((pos + 2) as f64).log2()
}

fn ideal_dcg(n: usize) -> f64 {
    (0..n).map(discount).sum()
}

/// `|top-k ∩ relevant| / min(k, |relevant|)`.
pub fn recall_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    let rel: HashSet<usize> = relevant.iter().copied().collect();
    if rel.is_empty() {
        return Err(TearsError::invalid("recall needs at least one relevant item"));
    }
    if k == 0 {
        return Err(TearsError::invalid("k must be positive"));
    }
    let hits = ranked.iter().take(k).filter(|i| rel.contains(i)).count();
    Ok(hits as f64 / k.min(rel.len()) as f64)
}

/// Binary-relevance truncated NDCG.
pub fn ndcg_at_k(ranked: &[usize], relevant: &[usize], k: usize) -> Result<f64> {
    if relevant.is_empty() {
        return Err(TearsError::invalid("NDCG needs at least one relevant item"));
    }
    if k == 0 {
        return Err(TearsError::invalid("k must be positive"));
    }
    Ok(ndcg_indices(ranked, relevant, k))
}

/// NDCG@k without argument checks; zero when `relevant` is empty.
pub fn ndcg_indices(ranked: &[usize], relevant: &[usize], k: usize) -> f64 {
    let rel: HashSet<usize> = relevant.iter().copied().collect();
    if rel.is_empty() || k == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked.iter().take(k).enumerate().filter(|(_, i)| rel.contains(i)).map(|(p, _)| discount(p)).sum();
    dcg / ideal_dcg(k.min(rel.len()))
}

/// Genre-wise NDCG: gain 1 for every top-k item carrying `genre`,
/// normalized by the ideal over the `N` unseen items that carry it
/// (`min(k, N)` slots). Zero when no unseen item carries the genre.
pub fn ndcg_genre_at_k(ranked: &[usize], genre: GenreId, catalog: &ItemCatalog, seen: &[usize], k: usize) -> Result<f64> {
    if genre >= catalog.num_genres() {
        return Err(TearsError::UnknownGenre(genre.to_string()));
    }
    if k == 0 {
        return Err(TearsError::invalid("k must be positive"));
    }
    let seen: HashSet<usize> = seen.iter().copied().collect();
    let available = (0..catalog.len()).filter(|i| !seen.contains(i) && catalog.has_genre(*i, genre)).count();
    Ok(ndcg_genre_with_count(ranked, genre, catalog, available, k))
}

/// Genre-wise NDCG with a precomputed count of unseen genre items.
pub fn ndcg_genre_with_count(ranked: &[usize], genre: GenreId, catalog: &ItemCatalog, available: usize, k: usize) -> f64 {
    if available == 0 {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, &i)| catalog.has_genre(i, genre))
        .map(|(p, _)| discount(p))
        .sum();
    dcg / ideal_dcg(k.min(available))
}

/// `original - augmented`.
pub fn delta_at_k(ndcg_original: f64, ndcg_augmented: f64) -> f64 {
    ndcg_original - ndcg_augmented
}

/// `original - after`; positive means the item moved up.
pub fn delta_rank(original: usize, after: usize) -> i64 {
    original as i64 - after as i64
}

/// Median; the mean of the two middle values for even lengths.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

/// Two-pass mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (0.0, 0.0);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Welford's streaming mean and population variance.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StreamingStats {
    pub n: usize,
    mean: f64,
    m2: f64,
}

impl StreamingStats {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn std(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.m2 / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for StreamingStats {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = StreamingStats::default();
        for x in iter {
            s.push(x);
        }
        s
    }
}

/// A metric's per-user values with summary statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub metric: String,
    pub k: usize,
    pub values: Vec<f64>,
    pub mean: f64,
    pub std: f64,
}

impl MetricReport {
    pub fn new(metric: impl Into<String>, k: usize, values: Vec<f64>) -> Self {
        let (mean, std) = mean_std(&values);
        MetricReport { metric: metric.into(), k, values, mean, std }
    }

    /// Mean of absolute values (used for |Δ| reporting).
    pub fn mean_abs(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.iter().map(|v| v.abs()).sum::<f64>() / self.values.len() as f64
        }
    }

    /// Standard error of the mean.
    pub fn std_error(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.std / (self.values.len() as f64).sqrt()
        }
    }
}

/// Mean and std of per-seed means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedAggregate {
    pub metric: String,
    pub k: usize,
    pub seeds: usize,
    pub mean: f64,
    pub std: f64,
}

pub fn aggregate_seeds(reports: &[MetricReport]) -> Result<SeedAggregate> {
    let first = reports.first().ok_or_else(|| TearsError::invalid("no reports to aggregate"))?;
    if reports.iter().any(|r| r.metric != first.metric || r.k != first.k) {
        return Err(TearsError::invalid("can only aggregate reports of the same metric and k"));
    }
    let means: Vec<f64> = reports.iter().map(|r| r.mean).collect();
    let (mean, std) = mean_std(&means);
    Ok(SeedAggregate { metric: first.metric.clone(), k: first.k, seeds: reports.len(), mean, std })
}

/// Ranks starting at 1; tied values share their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && values[idx[j + 1]] == values[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &p in &idx[i..=j] {
            ranks[p] = avg;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(TearsError::invalid("spearman needs two equal-length series of at least 2 values"));
    }
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let (mx, _) = mean_std(&rx);
    let (my, _) = mean_std(&ry);
    let cov: f64 = rx.iter().zip(&ry).map(|(a, b)| (a - mx) * (b - my)).sum();
    let vx: f64 = rx.iter().map(|a| (a - mx).powi(2)).sum();
    let vy: f64 = ry.iter().map(|b| (b - my).powi(2)).sum();
    if vx == 0.0 || vy == 0.0 {
        return Err(TearsError::Numeric("spearman is undefined for a constant series".into()));
    }
    Ok(cov / (vx * vy).sqrt())
}
