//! Corpus statistics: word lengths, pairwise word-level edit distance and
//! 4-gram BLEU.

use std::collections::{BTreeMap, HashMap};

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::UserSummary;
use crate::par::{self, Parallelism};
use crate::util::rng;
use crate::{Result, TearsError};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub num_summaries: usize,
    pub mean_length: f64,
    pub std_length: f64,
    /// Keys `p5`, `p25`, `p50`, `p75`, `p95`.
    pub length_percentiles: BTreeMap<String, f64>,
    pub mean_pairwise_edit_distance: f64,
    pub std_pairwise_edit_distance: f64,
    pub mean_pairwise_bleu4: f64,
    pub std_pairwise_bleu4: f64,
    pub pairs_evaluated: usize,
    pub seed: u64,
}

/// Levenshtein distance over whitespace-separated words.
pub fn word_edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<&str> = a.split_whitespace().collect();
    let b: Vec<&str> = b.split_whitespace().collect();
    levenshtein(&a, &b)
}

fn levenshtein(a: &[&str], b: &[&str]) -> usize {
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, wa) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, wb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(wa != wb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn ngram_counts<'a>(words: &'a [&'a str], n: usize) -> HashMap<&'a [&'a str], usize> {
    let mut m = HashMap::new();
    if words.len() >= n {
        for w in words.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Sentence BLEU of `candidate` against a single `reference`: uniform
/// weights over n = 1..=4 with clipped counts and the standard brevity
/// penalty, no smoothing. Texts shorter than four words use the orders they
/// have, so identical texts always score 1.
pub fn bleu4(candidate: &str, reference: &str) -> f64 {
    let c: Vec<&str> = candidate.split_whitespace().collect();
    let r: Vec<&str> = reference.split_whitespace().collect();
    if c.is_empty() || r.is_empty() {
        return if c.is_empty() && r.is_empty() { 1.0 } else { 0.0 };
    }
    let max_n = 4.min(c.len()).min(r.len());
    let mut log_sum = 0.0;
    for n in 1..=max_n {
        let cc = ngram_counts(&c, n);
        let rc = ngram_counts(&r, n);
        let matched: usize = cc.iter().map(|(g, &k)| k.min(*rc.get(g).unwrap_or(&0))).sum();
        let total = c.len() + 1 - n;
        if matched == 0 {
            return 0.0;
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let bp = if c.len() > r.len() {
        1.0
    } else {
        (1.0 - r.len() as f64 / c.len() as f64).exp()
    };
    (bp * (log_sum / max_n as f64).exp()).clamp(0.0, 1.0)
}

/// Linear-interpolated percentile of sorted data, `q` in [0, 100].
fn percentile(sorted: &[f64], q: f64) -> f64 {
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q / 100.0 * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, v.sqrt())
}

/// Maps a linear index over the strict upper triangle to `(i, j)`, `i < j`.
fn pair_at(mut k: usize, n: usize) -> (usize, usize) {
    let mut i = 0;
    loop {
        let row = n - 1 - i;
        if k < row {
            return (i, i + 1 + k);
        }
        k -= row;
        i += 1;
    }
}

/// Length statistics plus pairwise edit distance and BLEU-4 over
/// `pair_sample` uniformly sampled unordered pairs (all pairs when there are
/// no more than that). BLEU is averaged over both directions of each pair.
pub fn corpus_stats(summaries: &[UserSummary], pair_sample: usize, seed: u64) -> Result<SummaryStats> {
    corpus_stats_with(summaries, pair_sample, seed, Parallelism::default())
}

pub fn corpus_stats_with(
    summaries: &[UserSummary],
    pair_sample: usize,
    seed: u64,
    mode: Parallelism,
) -> Result<SummaryStats> {
    let n = summaries.len();
    if n < 2 {
        return Err(TearsError::invalid("corpus statistics need at least two summaries"));
    }
    if pair_sample == 0 {
        return Err(TearsError::invalid("pair_sample must be positive"));
    }
    let mut lengths: Vec<f64> = summaries.iter().map(|s| s.word_count() as f64).collect();
    let (mean_length, std_length) = mean_std(&lengths);
    lengths.sort_by(f64::total_cmp);
    let length_percentiles = [5.0, 25.0, 50.0, 75.0, 95.0]
        .iter()
        .map(|&q| (format!("p{q}"), percentile(&lengths, q)))
        .collect();

    let total = n * (n - 1) / 2;
    let pairs: Vec<(usize, usize)> = if total <= pair_sample {
        (0..total).map(|k| pair_at(k, n)).collect()
    } else {
        let mut idx = index::sample(&mut rng(seed), total, pair_sample).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| pair_at(k, n)).collect()
    };
    let words: Vec<Vec<&str>> = summaries.iter().map(|s| s.text.split_whitespace().collect()).collect();
    let scores = par::map(mode, &pairs, |&(i, j)| {
        let ed = levenshtein(&words[i], &words[j]) as f64;
        let (a, b) = (&summaries[i].text, &summaries[j].text);
        let bl = 0.5 * (bleu4(a, b) + bleu4(b, a));
        (ed, bl)
    });
    let eds: Vec<f64> = scores.iter().map(|s| s.0).collect();
    let bls: Vec<f64> = scores.iter().map(|s| s.1).collect();
    let (med, sed) = mean_std(&eds);
    let (mbl, sbl) = mean_std(&bls);
    Ok(SummaryStats {
        num_summaries: n,
        mean_length,
        std_length,
        length_percentiles,
        mean_pairwise_edit_distance: med,
        std_pairwise_edit_distance: sed,
        mean_pairwise_bleu4: mbl,
        std_pairwise_bleu4: sbl,
        pairs_evaluated: pairs.len(),
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::summaries::SummarySource;
    use proptest::prelude::*;

    fn s(user: &str, text: &str) -> UserSummary {
        UserSummary::new(user, text, SummarySource::Synthetic, 0).unwrap()
    }

    #[test]
    fn edit_distance_examples() {
        assert_eq!(word_edit_distance("a b c", "a b d"), 1);
        assert_eq!(word_edit_distance("a b c", "a b c"), 0);
        assert_eq!(word_edit_distance("", "a b"), 2);
        assert_eq!(word_edit_distance("a b c d", "b c d e"), 2);
    }

    #[test]
    fn bleu_identity_and_disjoint() {
        let t = "the user loves drama movies and avoids horror";
        assert!((bleu4(t, t) - 1.0).abs() < 1e-12);
        assert_eq!(bleu4("a b c d", "e f g h"), 0.0);
        assert!((bleu4("a b", "a b") - 1.0).abs() < 1e-12);
    }

    #[test]
    fn bleu_hand_computed() {
        // 5-word candidate, 6-word reference sharing the first 5 words:
        // all precisions are 1, brevity penalty exp(1 - 6/5).
        let b = bleu4("a b c d e", "a b c d e f");
        assert!((b - (1.0f64 - 1.2).exp()).abs() < 1e-12);
    }

    #[test]
    fn pair_index_covers_upper_triangle() {
        let n = 6;
        let all: Vec<_> = (0..n * (n - 1) / 2).map(|k| pair_at(k, n)).collect();
        let mut expect = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                expect.push((i, j));
            }
        }
        assert_eq!(all, expect);
    }

    #[test]
    fn identical_corpus_has_zero_distance_and_unit_bleu() {
        let c = vec![s("a", "x y z w v"), s("b", "x y z w v")];
        let st = corpus_stats(&c, 10, 1).unwrap();
        assert_eq!(st.mean_pairwise_edit_distance, 0.0);
        assert!((st.mean_pairwise_bleu4 - 1.0).abs() < 1e-12);
        assert_eq!(st.pairs_evaluated, 1);
        assert_eq!(st.mean_length, 5.0);
    }

    #[test]
    fn sampled_pairs_are_seeded() {
        let c: Vec<_> = (0..30).map(|i| s(&i.to_string(), &"w ".repeat(i + 1))).collect();
        let a = corpus_stats(&c, 50, 3).unwrap();
        let b = corpus_stats(&c, 50, 3).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.pairs_evaluated, 50);
        let seq = corpus_stats_with(&c, 50, 3, Parallelism::Sequential).unwrap();
        assert_eq!(a, seq);
    }

    #[test]
    fn too_small_corpus_is_an_error() {
        assert!(corpus_stats(&[s("a", "x")], 10, 0).is_err());
    }

    fn text() -> impl Strategy<Value = String> {
        proptest::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..12).prop_map(|w| w.join(" "))
    }

    proptest! {
        #[test]
        fn edit_distance_is_a_metric(a in text(), b in text(), c in text()) {
            prop_assert_eq!(word_edit_distance(&a, &a), 0);
            prop_assert_eq!(word_edit_distance(&a, &b), word_edit_distance(&b, &a));
            prop_assert!(word_edit_distance(&a, &c) <= word_edit_distance(&a, &b) + word_edit_distance(&b, &c));
        }

        #[test]
        fn bleu_in_unit_interval(a in text(), b in text()) {
            let v = bleu4(&a, &b);
            prop_assert!((0.0..=1.0).contains(&v));
            prop_assert!((bleu4(&a, &a) - 1.0).abs() < 1e-12);
        }
    }
}
