use ndarray::Array1;
use serde::{Deserialize, Serialize};

use crate::dataio::{GenreId, ItemCatalog, ItemId};
use crate::{Result, TearsError};

const SIMPLEX_TOL: f64 = 1e-9;

/// A point on the simplex over the genre vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenreProfile {
    weights: Vec<f64>,
    /// Set when the profile is the uniform fallback for an empty input.
    #[serde(default)]
    pub fallback: bool,
}

impl GenreProfile {
    pub fn from_weights(weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(TearsError::invalid("genre profile needs a non-empty vocabulary"));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < -SIMPLEX_TOL || *w > 1.0 + SIMPLEX_TOL) {
            return Err(TearsError::invalid("genre weights must lie in [0, 1]"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(TearsError::invalid(format!("genre weights sum to {sum}, not 1")));
        }
        Ok(GenreProfile { weights, fallback: false })
    }

    pub fn uniform(n: usize) -> Self {
        GenreProfile { weights: vec![1.0 / n as f64; n], fallback: true }
    }

    pub fn one_hot(n: usize, g: GenreId) -> Result<Self> {
        if g >= n {
            return Err(TearsError::UnknownGenre(g.to_string()));
        }
        let mut w = vec![0.0; n];
        w[g] = 1.0;
        Self::from_weights(w)
    }

    /// Softmax of arbitrary scores, tempered so the exponents span at most
    /// six nats; equal scores give the uniform profile.
    pub fn from_scores(scores: &[f64]) -> Result<Self> {
        if scores.is_empty() {
            return Err(TearsError::invalid("genre profile needs a non-empty vocabulary"));
        }
        let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let min = scores.iter().cloned().fold(f64::INFINITY, f64::min);
        let range = max - min;
        let t = if range > 0.0 { range / 6.0 } else { 1.0 };
        let e: Vec<f64> = scores.iter().map(|s| ((s - max) / t).exp()).collect();
        let z: f64 = e.iter().sum();
        Self::from_weights(e.into_iter().map(|v| v / z).collect())
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn to_array(&self) -> Array1<f64> {
        Array1::from(self.weights.clone())
    }

    /// Genre with the largest weight; ties go to the lower index.
    pub fn argmax(&self) -> GenreId {
        let mut best = 0;
        for (g, &w) in self.weights.iter().enumerate() {
            if w > self.weights[best] {
                best = g;
            }
        }
        best
    }

    /// Genre with the smallest weight; ties go to the lower index.
    pub fn argmin(&self) -> GenreId {
        let mut best = 0;
        for (g, &w) in self.weights.iter().enumerate() {
            if w < self.weights[best] {
                best = g;
            }
        }
        best
    }

    /// Exchanges the weights of two genres.
    pub fn swapped(&self, a: GenreId, b: GenreId) -> Result<Self> {
        if a >= self.len() || b >= self.len() {
            return Err(TearsError::UnknownGenre(a.max(b).to_string()));
        }
        let mut w = self.weights.clone();
        w.swap(a, b);
        Ok(GenreProfile { weights: w, fallback: self.fallback })
    }
}

/// Normalized genre counts over positive items; multi-genre items count
/// toward each of their genres. No positives gives the uniform profile with
/// `fallback` set.
pub fn gers_encode(positives: &[ItemId], catalog: &ItemCatalog) -> Result<GenreProfile> {
    let idx: Vec<usize> = positives
        .iter()
        .map(|id| catalog.index_of(id).ok_or_else(|| TearsError::UnknownItem(id.clone())))
        .collect::<Result<_>>()?;
    Ok(gers_encode_indices(&idx, catalog))
}

pub(crate) fn gers_encode_indices(positives: &[usize], catalog: &ItemCatalog) -> GenreProfile {
    let n = catalog.num_genres();
    let mut counts = vec![0.0; n];
    for &i in positives {
        for &g in &catalog.item(i).genres {
            counts[g] += 1.0;
        }
    }
    let total: f64 = counts.iter().sum();
    if total == 0.0 {
        log::warn!("no positive items for genre profile; using the uniform profile");
        return GenreProfile::uniform(n);
    }
    GenreProfile { weights: counts.into_iter().map(|c| c / total).collect(), fallback: false }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn catalog() -> ItemCatalog {
        ItemCatalog::from_rows(vec![
            ("A".to_string(), "a".to_string(), vec!["Action".to_string()]),
            ("B".to_string(), "b".to_string(), vec!["Action".to_string(), "Comedy".to_string()]),
            ("C".to_string(), "c".to_string(), vec!["Drama".to_string()]),
        ])
        .unwrap()
    }

    fn ids(v: &[&str]) -> Vec<ItemId> {
        v.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn counts_every_listed_genre() {
        let c = catalog();
        let p = gers_encode(&ids(&["A", "B", "C"]), &c).unwrap();
        let w = |name: &str| p.weights()[c.genre_index(name).unwrap()];
        assert_eq!((w("Action"), w("Comedy"), w("Drama")), (0.5, 0.25, 0.25));
        assert!(!p.fallback);
    }

    #[test]
    fn single_genre_is_one_hot_and_empty_is_uniform() {
        let c = catalog();
        let p = gers_encode(&ids(&["A"]), &c).unwrap();
        assert_eq!(p.weights()[c.genre_index("Action").unwrap()], 1.0);
        let u = gers_encode(&[], &c).unwrap();
        assert!(u.fallback);
        assert!(u.weights().iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn permutation_equivariant_and_unknown_items_rejected() {
        let c = catalog();
        assert_eq!(gers_encode(&ids(&["A", "B", "C"]), &c).unwrap(), gers_encode(&ids(&["C", "A", "B"]), &c).unwrap());
        assert!(matches!(gers_encode(&ids(&["Z"]), &c), Err(TearsError::UnknownItem(_))));
    }

    #[test]
    fn swap_and_one_hot() {
        let p = GenreProfile::from_weights(vec![0.5, 0.3, 0.2]).unwrap();
        assert_eq!(p.swapped(0, 2).unwrap().weights(), &[0.2, 0.3, 0.5]);
        assert_eq!(GenreProfile::one_hot(3, 1).unwrap().weights(), &[0.0, 1.0, 0.0]);
        let eq = GenreProfile::from_weights(vec![0.4, 0.4, 0.2]).unwrap();
        assert_eq!(eq.swapped(0, 1).unwrap(), eq);
        assert!(GenreProfile::from_weights(vec![0.5, 0.6]).is_err());
    }

    #[test]
    fn scores_map_onto_the_simplex() {
        let p = GenreProfile::from_scores(&[10.0, -5.0, 0.0]).unwrap();
        assert_eq!(p.argmax(), 0);
        assert_eq!(p.argmin(), 1);
        assert!((p.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(GenreProfile::from_scores(&[1.0, 1.0]).unwrap().weights(), &[0.5, 0.5]);
    }
}
