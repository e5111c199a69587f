use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Interactions, ItemId, UserId};
use crate::util::rng;
use crate::{Result, TearsError};

pub const SPLIT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    Train,
    Validation,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserSplit {
    pub role: Role,
    /// Oldest first.
    pub input_items: Vec<ItemId>,
    /// Oldest first.
    pub eval_items: Vec<ItemId>,
}

/// User roles plus per-user input/eval partitions. Serialized as a versioned
/// JSON document so downstream runs can be reproduced from the file alone.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub version: u32,
    pub seed: u64,
    pub max_input: usize,
    pub users: BTreeMap<UserId, UserSplit>,
}

impl SplitPlan {
    pub fn role(&self, user: &str) -> Option<Role> {
        self.users.get(user).map(|s| s.role)
    }

    /// User ids with the given role, in the interactions' user order.
    pub fn users_with_role<'a>(&'a self, interactions: &'a Interactions, role: Role) -> Vec<usize> {
        interactions
            .users()
            .iter()
            .enumerate()
            .filter(|(_, u)| self.role(&u.user) == Some(role))
            .map(|(i, _)| i)
            .collect()
    }

    pub fn count(&self, role: Role) -> usize {
        self.users.values().filter(|s| s.role == role).count()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let s = serde_json::to_string_pretty(self)?;
        fs::write(path, s).map_err(|e| TearsError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = fs::read_to_string(path).map_err(|e| TearsError::io(path, e))?;
        let plan: SplitPlan = serde_json::from_str(&s)?;
        if plan.version != SPLIT_FORMAT_VERSION {
            return Err(TearsError::invalid(format!(
                "split plan version {} unsupported (expected {SPLIT_FORMAT_VERSION})",
                plan.version
            )));
        }
        Ok(plan)
    }
}

/// Samples `n_val` validation and `n_test` test users uniformly (seeded), and
/// partitions every user's history: more than `max_input` ratings gives the
/// `max_input` oldest as input and the rest as eval; otherwise the two most
/// recent are eval and the remainder input.
pub fn make_splits(
    interactions: &Interactions,
    n_val: usize,
    n_test: usize,
    max_input: usize,
    seed: u64,
) -> Result<SplitPlan> {
    let n_users = interactions.num_users();
    if n_val + n_test >= n_users {
        return Err(TearsError::invalid(format!(
            "n_val + n_test = {} must be below the user count {n_users}",
            n_val + n_test
        )));
    }
    if max_input < 3 {
        return Err(TearsError::invalid("max_input must be at least 3"));
    }
    let mut order: Vec<usize> = (0..n_users).collect();
    order.shuffle(&mut rng(seed));
    let mut roles = vec![Role::Train; n_users];
    for &u in &order[..n_val] {
        roles[u] = Role::Validation;
    }
    for &u in &order[n_val..n_val + n_test] {
        roles[u] = Role::Test;
    }
    let items = interactions.items();
    let mut users = BTreeMap::new();
    for (u, ur) in interactions.users().iter().enumerate() {
        let n = ur.ratings.len();
        if n < 3 {
            return Err(TearsError::invalid(format!(
                "user {} has only {n} ratings; at least 3 are needed",
                ur.user
            )));
        }
        let chrono: Vec<ItemId> = ur.chronological(items).into_iter().map(|r| items[r.0].clone()).collect();
        let cut = if n > max_input { max_input } else { n - 2 };
        users.insert(
            ur.user.clone(),
            UserSplit {
                role: roles[u],
                input_items: chrono[..cut].to_vec(),
                eval_items: chrono[cut..].to_vec(),
            },
        );
    }
    Ok(SplitPlan {
        version: SPLIT_FORMAT_VERSION,
        seed,
        max_input,
        users,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataio::RatingRecord;

    fn user_with(n: usize, id: &str) -> Vec<RatingRecord> {
        (0..n)
            .map(|i| RatingRecord {
                user: id.into(),
                item: format!("{i}"),
                rating: 4,
                timestamp: i as i64,
            })
            .collect()
    }

    fn toy() -> Interactions {
        let mut recs = user_with(60, "big");
        recs.extend(user_with(30, "mid"));
        for u in 0..10 {
            recs.extend(user_with(5, &format!("s{u}")));
        }
        Interactions::from_records(&recs).unwrap()
    }

    #[test]
    fn long_history_keeps_oldest_fifty() {
        let plan = make_splits(&toy(), 2, 2, 50, 7).unwrap();
        let s = &plan.users["big"];
        assert_eq!(s.input_items.len(), 50);
        assert_eq!(s.eval_items.len(), 10);
        assert_eq!(s.input_items[0], "0");
        assert_eq!(s.eval_items[0], "50");
    }

    #[test]
    fn short_history_holds_out_two_most_recent() {
        let plan = make_splits(&toy(), 2, 2, 50, 7).unwrap();
        let s = &plan.users["mid"];
        assert_eq!((s.input_items.len(), s.eval_items.len()), (28, 2));
        assert_eq!(s.eval_items, vec!["28".to_string(), "29".to_string()]);
    }

    #[test]
    fn timestamp_ties_break_by_item_id() {
        let recs: Vec<_> = ["3", "1", "2", "10"]
            .iter()
            .map(|i| RatingRecord {
                user: "u".into(),
                item: (*i).into(),
                rating: 5,
                timestamp: 0,
            })
            .chain(user_with(4, "v"))
            .collect();
        let x = Interactions::from_records(&recs).unwrap();
        let plan = make_splits(&x, 0, 1, 50, 1).unwrap();
        let s = &plan.users["u"];
        assert_eq!(s.input_items, vec!["1".to_string(), "2".to_string()]);
        assert_eq!(s.eval_items, vec!["3".to_string(), "10".to_string()]);
    }

    #[test]
    fn roles_counts_and_determinism() {
        let x = toy();
        let a = make_splits(&x, 3, 4, 50, 11).unwrap();
        let b = make_splits(&x, 3, 4, 50, 11).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.count(Role::Validation), 3);
        assert_eq!(a.count(Role::Test), 4);
        assert_eq!(a.count(Role::Train), 5);
        for s in a.users.values() {
            assert!(s.input_items.iter().all(|i| !s.eval_items.contains(i)));
            assert!(!s.eval_items.is_empty());
        }
    }

    #[test]
    fn too_few_ratings_is_an_error() {
        let x = Interactions::from_records(&user_with(2, "tiny")).unwrap();
        assert!(make_splits(&x, 0, 0, 50, 0).is_err());
    }

    #[test]
    fn rejects_oversized_holdout() {
        assert!(make_splits(&toy(), 6, 6, 50, 0).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let plan = make_splits(&toy(), 2, 2, 50, 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("split.json");
        plan.save(&p).unwrap();
        assert_eq!(SplitPlan::load(&p).unwrap(), plan);
    }
}
