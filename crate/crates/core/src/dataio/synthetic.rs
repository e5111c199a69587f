//! A seeded synthetic catalog and rating log with planted preferences.
//!
//! Every user has a genre-preference vector (peaked, so most users have a
//! clear favorite and least favorite) and a few liked themes. Every item has
//! one or two genres and one theme; its title is the theme's two words plus
//! a serial number, so title-derived themes in generated summaries name the
//! planted theme exactly. Ratings follow the planted affinity: users mostly
//! rate items they like (rated highly) and occasionally explore uniformly
//! (which surfaces low ratings for disliked genres).

use std::collections::BTreeMap;

use rand::seq::index::sample;
use rand::Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma, Normal};
use serde::{Deserialize, Serialize};

use super::{Dataset, Interactions, ItemCatalog, ItemId, RatingRecord, UserId};
use crate::util::rng;
use crate::{Result, TearsError};

pub const GENRES: [&str; 12] = [
    "Action",
    "Adventure",
    "Animation",
    "Comedy",
    "Crime",
    "Documentary",
    "Drama",
    "Fantasy",
    "Horror",
    "Musical",
    "Romance",
    "Thriller",
];

/// Two-word themes; both words appear in every title of the theme.
pub const THEMES: [(&str, &str); 40] = [
    ("dragon", "hoard"),
    ("robot", "uprising"),
    ("pirate", "treasure"),
    ("samurai", "honor"),
    ("wizard", "tower"),
    ("heist", "vault"),
    ("zombie", "outbreak"),
    ("detective", "clue"),
    ("space", "station"),
    ("haunted", "mansion"),
    ("desert", "caravan"),
    ("ocean", "voyage"),
    ("jungle", "temple"),
    ("chess", "prodigy"),
    ("boxing", "champion"),
    ("wedding", "planner"),
    ("bakery", "rivals"),
    ("mountain", "rescue"),
    ("submarine", "crew"),
    ("circus", "acrobat"),
    ("vampire", "castle"),
    ("cowboy", "frontier"),
    ("spy", "cipher"),
    ("alien", "contact"),
    ("knight", "quest"),
    ("time", "machine"),
    ("orchestra", "conductor"),
    ("volcano", "island"),
    ("prison", "escape"),
    ("garden", "secret"),
    ("racing", "circuit"),
    ("witch", "coven"),
    ("hacker", "network"),
    ("lighthouse", "keeper"),
    ("wolf", "pack"),
    ("arctic", "expedition"),
    ("casino", "gambler"),
    ("monastery", "monk"),
    ("carnival", "mask"),
    ("railway", "journey"),
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_users: usize,
    pub n_items: usize,
    pub n_genres: usize,
    pub n_themes: usize,
    pub min_ratings: usize,
    pub max_ratings: usize,
    /// Gamma shape of the per-user genre weights; smaller is peakier.
    pub genre_concentration: f64,
    pub themes_per_user: usize,
    pub genre_strength: f64,
    pub theme_strength: f64,
    /// Fraction of each user's ratings drawn uniformly from the catalog.
    pub explore_fraction: f64,
    pub secondary_genre_prob: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_users: 500,
            n_items: 1000,
            n_genres: 12,
            n_themes: 20,
            min_ratings: 40,
            max_ratings: 90,
            genre_concentration: 0.15,
            themes_per_user: 2,
            genre_strength: 2.0,
            theme_strength: 5.0,
            explore_fraction: 0.25,
            secondary_genre_prob: 0.3,
            seed: 0,
        }
    }
}

/// The planted ground truth behind a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticTruth {
    /// Per-user genre weights, in catalog vocabulary order.
    pub genre_weights: BTreeMap<UserId, Vec<f64>>,
    /// Per-user liked theme indices into [`THEMES`].
    pub user_themes: BTreeMap<UserId, Vec<usize>>,
    pub item_theme: BTreeMap<ItemId, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub truth: SyntheticTruth,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_genres < 2 || self.n_genres > GENRES.len() {
            return Err(TearsError::invalid(format!("n_genres must lie in 2..={}", GENRES.len())));
        }
        if self.n_themes == 0 || self.n_themes > THEMES.len() || self.themes_per_user > self.n_themes {
            return Err(TearsError::invalid("theme counts out of range"));
        }
        if self.min_ratings < 3 || self.min_ratings > self.max_ratings || self.max_ratings > self.n_items {
            return Err(TearsError::invalid("need 3 <= min_ratings <= max_ratings <= n_items"));
        }
        if self.n_users == 0 || !(self.genre_concentration > 0.0) || !(0.0..1.0).contains(&self.explore_fraction) {
            return Err(TearsError::invalid("invalid synthetic configuration"));
        }
        Ok(())
    }
}

/// Generates the catalog, ratings and planted truth. Deterministic in `cfg`.
pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticData> {
    cfg.validate()?;
    let mut r = rng(cfg.seed);
    let g_count = cfg.n_genres;

    // Items: a primary genre with skewed popularity, sometimes a second one.
    let genre_pop = WeightedIndex::new((0..g_count).map(|g| 1.0 / ((g + 1) as f64).sqrt()))
        .map_err(|e| TearsError::invalid(e.to_string()))?;
    let mut item_genres: Vec<Vec<usize>> = Vec::with_capacity(cfg.n_items);
    let mut item_theme = Vec::with_capacity(cfg.n_items);
    let mut rows = Vec::with_capacity(cfg.n_items);
    let pop_noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut item_pop = Vec::with_capacity(cfg.n_items);
    for i in 0..cfg.n_items {
        let g1 = genre_pop.sample(&mut r);
        let mut gs = vec![g1];
        if r.random::<f64>() < cfg.secondary_genre_prob {
            let g2 = r.random_range(0..g_count);
            if g2 != g1 {
                gs.push(g2);
            }
        }
        let t = r.random_range(0..cfg.n_themes);
        let (a, b) = THEMES[t];
        let title = format!("{} {} {:04}", capitalize(a), capitalize(b), i + 1);
        rows.push(((i + 1).to_string(), title, gs.iter().map(|&g| GENRES[g].to_string()).collect::<Vec<_>>()));
        item_genres.push(gs);
        item_theme.push(t);
        item_pop.push(pop_noise.sample(&mut r));
    }
    let catalog = ItemCatalog::from_rows(rows)?;

    let gamma = Gamma::new(cfg.genre_concentration, 1.0).map_err(|e| TearsError::invalid(e.to_string()))?;
    let noise = Normal::new(0.0, 0.5).expect("valid normal");
    let mut records = Vec::new();
    let mut genre_weights = BTreeMap::new();
    let mut user_themes = BTreeMap::new();
    for u in 0..cfg.n_users {
        let user = format!("u{:04}", u + 1);
        let mut w: Vec<f64> = (0..g_count).map(|_| gamma.sample(&mut r) + 1e-6).collect();
        let total: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= total);
        let themes: Vec<usize> = sample(&mut r, cfg.n_themes, cfg.themes_per_user).into_vec();

        let affinity: Vec<f64> = (0..cfg.n_items)
            .map(|i| {
                let gs = &item_genres[i];
                let genre = gs.iter().map(|&g| (g_count as f64 * w[g]).max(0.05).ln()).sum::<f64>() / gs.len() as f64;
                let theme = if themes.contains(&item_theme[i]) { cfg.theme_strength } else { 0.0 };
                cfg.genre_strength * genre + theme + item_pop[i]
            })
            .collect();
        let mean = affinity.iter().sum::<f64>() / affinity.len() as f64;
        let std = (affinity.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / affinity.len() as f64).sqrt().max(1e-9);

        let n = r.random_range(cfg.min_ratings..=cfg.max_ratings);
        let n_explore = ((n as f64) * cfg.explore_fraction).round() as usize;
        // Gumbel top-k: sampling without replacement proportional to exp(affinity).
        let mut keyed: Vec<(f64, usize)> = affinity
            .iter()
            .enumerate()
            .map(|(i, &a)| {
                let u: f64 = r.random::<f64>().max(f64::MIN_POSITIVE);
                (a - (-u.ln()).ln(), i)
            })
            .collect();
        keyed.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
        let mut chosen: Vec<usize> = keyed.iter().take(n - n_explore).map(|&(_, i)| i).collect();
        let rest: Vec<usize> = keyed.iter().skip(n - n_explore).map(|&(_, i)| i).collect();
        chosen.extend(sample(&mut r, rest.len(), n_explore).into_iter().map(|j| rest[j]));
        // Random chronological order.
        let order = sample(&mut r, chosen.len(), chosen.len()).into_vec();
        for (ts, &j) in order.iter().enumerate() {
            let i = chosen[j];
            let z = (affinity[i] - mean) / std;
            let rating = (3.0 + 1.2 * z + noise.sample(&mut r)).round().clamp(1.0, 5.0) as u8;
            records.push(RatingRecord {
                user: user.clone(),
                item: (i + 1).to_string(),
                rating,
                timestamp: ts as i64,
            });
        }
        // Weights in catalog vocabulary order (the vocabulary is sorted).
        let by_vocab: Vec<f64> = catalog
            .genre_vocabulary()
            .iter()
            .map(|name| GENRES.iter().position(|g| g == name).map_or(0.0, |g| w[g]))
            .collect();
        genre_weights.insert(user.clone(), by_vocab);
        user_themes.insert(user, themes);
    }
    let interactions = Interactions::from_records(&records)?;
    let dataset = Dataset::join(&catalog, interactions)?;
    let item_theme = dataset
        .catalog
        .items()
        .iter()
        .map(|it| (it.id.clone(), item_theme[it.id.parse::<usize>().expect("numeric id") - 1]))
        .collect();
    Ok(SyntheticData { dataset, truth: SyntheticTruth { genre_weights, user_themes, item_theme } })
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next().map(|f| f.to_uppercase().chain(c).collect()).unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticConfig {
        SyntheticConfig { n_users: 40, n_items: 120, min_ratings: 10, max_ratings: 20, seed: 3, ..Default::default() }
    }

    #[test]
    fn deterministic_in_seed() {
        let a = generate(&small()).unwrap();
        let b = generate(&small()).unwrap();
        assert_eq!(a, b);
        let c = generate(&SyntheticConfig { seed: 4, ..small() }).unwrap();
        assert_ne!(a.dataset.content_hash(), c.dataset.content_hash());
    }

    #[test]
    fn shapes_and_titles() {
        let d = generate(&small()).unwrap();
        assert_eq!(d.dataset.interactions.num_users(), 40);
        for u in d.dataset.interactions.users() {
            assert!((10..=20).contains(&u.ratings.len()));
        }
        for it in d.dataset.catalog.items() {
            let (a, b) = THEMES[d.truth.item_theme[&it.id]];
            let lower = it.title.to_lowercase();
            assert!(lower.contains(a) && lower.contains(b), "{}", it.title);
        }
        for w in d.truth.genre_weights.values() {
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn ratings_follow_planted_genre_preferences() {
        let d = generate(&SyntheticConfig { n_users: 60, n_items: 300, min_ratings: 40, max_ratings: 60, ..small() }).unwrap();
        let cat = &d.dataset.catalog;
        let inter = &d.dataset.interactions;
        let (mut fav_sum, mut fav_n, mut least_sum, mut least_n) = (0.0, 0usize, 0.0, 0usize);
        for (u, ur) in inter.users().iter().enumerate() {
            let w = &d.truth.genre_weights[&ur.user];
            let fav = (0..w.len()).max_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
            let least = (0..w.len()).min_by(|&a, &b| w[a].total_cmp(&w[b])).unwrap();
            for &(i, rating, _) in &inter.users()[u].ratings {
                let gs = &cat.item(i).genres;
                if gs == &vec![fav] {
                    fav_sum += f64::from(rating);
                    fav_n += 1;
                }
                if gs == &vec![least] {
                    least_sum += f64::from(rating);
                    least_n += 1;
                }
            }
        }
        assert!(fav_n > 0 && least_n > 0);
        assert!(fav_sum / fav_n as f64 > least_sum / least_n as f64 + 1.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(generate(&SyntheticConfig { n_genres: 13, ..small() }).is_err());
        assert!(generate(&SyntheticConfig { min_ratings: 30, max_ratings: 20, ..small() }).is_err());
    }
}
