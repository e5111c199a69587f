use std::cmp::Ordering;
use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::{split_fields, ItemCatalog, ItemId, UserId};
use crate::{Result, TearsError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingsFormat {
    pub delimiter: String,
    pub has_header: bool,
}

impl RatingsFormat {
    pub fn movielens() -> Self {
        RatingsFormat {
            delimiter: "::".into(),
            has_header: false,
        }
    }

    pub fn csv() -> Self {
        RatingsFormat {
            delimiter: ",".into(),
            has_header: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RatingRecord {
    pub user: UserId,
    pub item: ItemId,
    pub rating: u8,
    pub timestamp: i64,
}

/// One user's ratings as `(item index, rating, timestamp)`, sorted by item index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserRatings {
    pub user: UserId,
    pub ratings: Vec<(usize, u8, i64)>,
}

impl UserRatings {
    /// Item indices ordered oldest first; timestamp ties by ascending item id.
    pub fn chronological(&self, items: &[ItemId]) -> Vec<(usize, u8, i64)> {
        let mut v = self.ratings.clone();
        v.sort_by(|a, b| a.2.cmp(&b.2).then_with(|| id_order(&items[a.0], &items[b.0])));
        v
    }
}

/// Sparse ratings over dense user and item index spaces. `threshold` is the
/// implicit-feedback cutoff once [`binarize`] has been applied.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Interactions {
    users: Vec<UserRatings>,
    items: Vec<ItemId>,
    threshold: Option<u8>,
}

/// Numeric ids sort numerically, everything else lexicographically after them.
pub(crate) fn id_order(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

impl Interactions {
    /// Builds from records, rejecting duplicate `(user, item)` pairs and
    /// ratings outside `1..=5`.
    pub fn from_records(records: &[RatingRecord]) -> Result<Self> {
        let mut item_ids: Vec<&str> = records.iter().map(|r| r.item.as_str()).collect::<BTreeSet<_>>().into_iter().collect();
        item_ids.sort_by(|a, b| id_order(a, b));
        let item_index: HashMap<&str, usize> = item_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
        let mut by_user: HashMap<&str, Vec<(usize, u8, i64)>> = HashMap::new();
        for r in records {
            if !(1..=5).contains(&r.rating) {
                return Err(TearsError::invalid(format!(
                    "rating {} for user {} item {} outside 1..=5",
                    r.rating, r.user, r.item
                )));
            }
            by_user
                .entry(r.user.as_str())
                .or_default()
                .push((item_index[r.item.as_str()], r.rating, r.timestamp));
        }
        let mut user_ids: Vec<&str> = by_user.keys().copied().collect();
        user_ids.sort_by(|a, b| id_order(a, b));
        let mut users = Vec::with_capacity(user_ids.len());
        for u in user_ids {
            let mut ratings = by_user.remove(u).expect("present");
            ratings.sort_by_key(|r| r.0);
            if let Some(w) = ratings.windows(2).find(|w| w[0].0 == w[1].0) {
                return Err(TearsError::DuplicateRating {
                    user: u.to_string(),
                    item: item_ids[w[0].0].to_string(),
                });
            }
            users.push(UserRatings {
                user: u.to_string(),
                ratings,
            });
        }
        Ok(Interactions {
            users,
            items: item_ids.into_iter().map(str::to_owned).collect(),
            threshold: None,
        })
    }

    pub fn to_records(&self) -> Vec<RatingRecord> {
        self.users
            .iter()
            .flat_map(|u| {
                u.ratings.iter().map(move |&(i, r, t)| RatingRecord {
                    user: u.user.clone(),
                    item: self.items[i].clone(),
                    rating: r,
                    timestamp: t,
                })
            })
            .collect()
    }

    pub fn users(&self) -> &[UserRatings] {
        &self.users
    }

    pub fn items(&self) -> &[ItemId] {
        &self.items
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn num_ratings(&self) -> usize {
        self.users.iter().map(|u| u.ratings.len()).sum()
    }

    pub fn threshold(&self) -> Option<u8> {
        self.threshold
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.users
            .binary_search_by(|u| id_order(&u.user, id))
            .ok()
    }

    /// Implicit target for a raw rating. Before binarization every rating counts.
    pub fn is_positive(&self, rating: u8) -> bool {
        self.threshold.is_none_or(|r| rating >= r)
    }

    /// Dense raw-rating row restricted to the given item indices.
    pub fn rating_row(&self, user: usize, items: &[usize]) -> Array1<f64> {
        let mut row = Array1::zeros(self.items.len());
        let u = &self.users[user];
        for &i in items {
            if let Ok(pos) = u.ratings.binary_search_by_key(&i, |r| r.0) {
                row[i] = f64::from(u.ratings[pos].1);
            }
        }
        row
    }

    /// Positives among the given item indices.
    pub fn positives(&self, user: usize, items: &[usize]) -> Vec<usize> {
        let u = &self.users[user];
        items
            .iter()
            .copied()
            .filter(|&i| {
                u.ratings
                    .binary_search_by_key(&i, |r| r.0)
                    .map(|p| self.is_positive(u.ratings[p].1))
                    .unwrap_or(false)
            })
            .collect()
    }

    pub fn rating_of(&self, user: usize, item: usize) -> Option<u8> {
        let u = &self.users[user];
        u.ratings.binary_search_by_key(&item, |r| r.0).ok().map(|p| u.ratings[p].1)
    }

    /// Mean raw rating and density, for dataset statistics.
    pub fn summary_stats(&self) -> (f64, f64) {
        let n = self.num_ratings() as f64;
        let sum: f64 = self.users.iter().flat_map(|u| u.ratings.iter().map(|r| f64::from(r.1))).sum();
        let sparsity = 1.0 - n / (self.num_users() as f64 * self.num_items() as f64);
        (sum / n, sparsity)
    }
}

/// Reads `user, item, rating, timestamp` rows.
pub fn load_ratings(path: &Path, format: &RatingsFormat) -> Result<Vec<RatingRecord>> {
    let text = fs::read_to_string(path).map_err(|e| TearsError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate().skip(usize::from(format.has_header)) {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let f = split_fields(line, &format.delimiter);
        if f.len() < 4 {
            return Err(TearsError::Parse {
                line: lineno,
                message: format!("expected user, item, rating, timestamp; got {} fields", f.len()),
            });
        }
        let parse_err = |what: &str| TearsError::Parse {
            line: lineno,
            message: format!("bad {what}"),
        };
        let rating: f64 = f[2].trim().parse().map_err(|_| parse_err("rating"))?;
        if rating.fract() != 0.0 {
            return Err(parse_err("rating (must be an integer 1..5)"));
        }
        out.push(RatingRecord {
            user: f[0].trim().to_string(),
            item: f[1].trim().to_string(),
            rating: rating as u8,
            timestamp: f[3].trim().parse().map_err(|_| parse_err("timestamp"))?,
        });
    }
    Ok(out)
}

/// Alternately drops users with fewer than `min_user` ratings and items with
/// fewer than `min_item` ratings until neither rule removes anything.
pub fn filter_min_counts(records: &[RatingRecord], min_user: usize, min_item: usize) -> Result<Interactions> {
    let mut keep: Vec<&RatingRecord> = records.iter().collect();
    loop {
        let before = keep.len();
        let mut ucount: HashMap<&str, usize> = HashMap::new();
        for r in &keep {
            *ucount.entry(r.user.as_str()).or_default() += 1;
        }
        keep.retain(|r| ucount[r.user.as_str()] >= min_user);
        let mut icount: HashMap<&str, usize> = HashMap::new();
        for r in &keep {
            *icount.entry(r.item.as_str()).or_default() += 1;
        }
        keep.retain(|r| icount[r.item.as_str()] >= min_item);
        if keep.len() == before {
            break;
        }
    }
    if keep.is_empty() {
        return Err(TearsError::EmptyDataset);
    }
    let owned: Vec<RatingRecord> = keep.into_iter().cloned().collect();
    Interactions::from_records(&owned)
}

pub fn load_and_filter(
    path: &Path,
    format: &RatingsFormat,
    min_user: usize,
    min_item: usize,
) -> Result<Interactions> {
    let records = load_ratings(path, format)?;
    filter_min_counts(&records, min_user, min_item)
}

/// Sets the implicit-feedback threshold: `y = 1` iff `rating >= r`. Raw
/// ratings are preserved.
pub fn binarize(interactions: &Interactions, r: u8) -> Result<Interactions> {
    if !(1..=5).contains(&r) {
        return Err(TearsError::invalid(format!("threshold {r} outside 1..=5")));
    }
    let mut out = interactions.clone();
    out.threshold = Some(r);
    Ok(out)
}

/// Interactions joined with a catalog restricted to (and ordered like) the
/// rated items, so item indices agree between the two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub catalog: ItemCatalog,
    pub interactions: Interactions,
}

impl Dataset {
    pub fn join(catalog: &ItemCatalog, interactions: Interactions) -> Result<Self> {
        let catalog = catalog.restrict(interactions.items())?;
        Ok(Dataset {
            catalog,
            interactions,
        })
    }

    pub fn num_items(&self) -> usize {
        self.catalog.len()
    }

    pub fn content_hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("dataset serializes");
        crate::util::sha256_hex(&bytes)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = fs::File::create(path).map_err(|e| TearsError::io(path, e))?;
        serde_json::to_writer(std::io::BufWriter::new(f), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = fs::File::open(path).map_err(|e| TearsError::io(path, e))?;
        Ok(serde_json::from_reader(std::io::BufReader::new(f))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(u: &str, i: &str, r: u8, t: i64) -> RatingRecord {
        RatingRecord {
            user: u.into(),
            item: i.into(),
            rating: r,
            timestamp: t,
        }
    }

    /// u1:{a,b,c} u2:{a,b} u3:{c,d} u4:{a}, min 2/2.
    /// Pass 1 drops u4 and d; u3 falls to {c}. Pass 2 drops u3, then c (only u1).
    /// Pass 3 is stable: users {u1,u2}, items {a,b}.
    #[test]
    fn alternating_filter_reaches_fixpoint() {
        let recs = vec![
            rec("u1", "a", 5, 1),
            rec("u1", "b", 4, 2),
            rec("u1", "c", 3, 3),
            rec("u2", "a", 2, 1),
            rec("u2", "b", 5, 2),
            rec("u3", "c", 4, 1),
            rec("u3", "d", 4, 2),
            rec("u4", "a", 1, 1),
        ];
        let x = filter_min_counts(&recs, 2, 2).unwrap();
        let users: Vec<_> = x.users().iter().map(|u| u.user.as_str()).collect();
        assert_eq!(users, ["u1", "u2"]);
        assert_eq!(x.items(), &["a".to_string(), "b".to_string()]);
        assert_eq!(x.num_ratings(), 4);
    }

    #[test]
    fn everything_filtered_is_an_error() {
        let recs = vec![rec("u1", "a", 5, 1)];
        assert!(matches!(filter_min_counts(&recs, 5, 1), Err(TearsError::EmptyDataset)));
    }

    #[test]
    fn duplicate_pair_rejected() {
        let recs = vec![rec("u1", "a", 5, 1), rec("u1", "a", 3, 2)];
        assert!(matches!(
            Interactions::from_records(&recs),
            Err(TearsError::DuplicateRating { .. })
        ));
    }

    #[test]
    fn binarize_threshold_four() {
        let x = Interactions::from_records(&[rec("u", "a", 4, 0), rec("u", "b", 3, 0), rec("u", "c", 5, 0)]).unwrap();
        let y = binarize(&x, 4).unwrap();
        assert!(y.is_positive(4));
        assert!(!y.is_positive(3));
        assert!(y.is_positive(5));
        assert_eq!(y.positives(0, &[0, 1, 2]), vec![0, 2]);
        // raw ratings untouched
        assert_eq!(y.rating_row(0, &[0, 1, 2]).to_vec(), vec![4.0, 3.0, 5.0]);
        assert!(binarize(&x, 0).is_err());
    }

    #[test]
    fn numeric_ids_sort_numerically() {
        let x = Interactions::from_records(&[rec("10", "2", 4, 0), rec("9", "10", 3, 0)]).unwrap();
        assert_eq!(x.users()[0].user, "9");
        assert_eq!(x.items(), &["2".to_string(), "10".to_string()]);
        assert_eq!(x.user_index("10"), Some(1));
    }

    fn arb_records() -> impl Strategy<Value = Vec<RatingRecord>> {
        prop::collection::btree_set((0u8..12, 0u8..10), 1..80).prop_flat_map(|pairs| {
            let n = pairs.len();
            (Just(pairs), prop::collection::vec((1u8..=5, 0i64..100), n)).prop_map(|(pairs, vals)| {
                pairs
                    .into_iter()
                    .zip(vals)
                    .map(|((u, i), (r, t))| rec(&format!("u{u}"), &format!("i{i}"), r, t))
                    .collect()
            })
        })
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(recs in arb_records(), mu in 1usize..5, mi in 1usize..5) {
            if let Ok(x) = filter_min_counts(&recs, mu, mi) {
                let again = filter_min_counts(&x.to_records(), mu, mi).unwrap();
                prop_assert_eq!(x, again);
            }
        }

        #[test]
        fn binarize_is_idempotent_and_monotone(recs in arb_records(), r in 1u8..5) {
            let x = Interactions::from_records(&recs).unwrap();
            let a = binarize(&x, r).unwrap();
            prop_assert_eq!(&binarize(&a, r).unwrap(), &a);
            let b = binarize(&x, r + 1).unwrap();
            for rating in 1..=5u8 {
                prop_assert!(!b.is_positive(rating) || a.is_positive(rating));
            }
        }
    }
}
