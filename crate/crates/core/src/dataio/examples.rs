use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{Dataset, Role, SplitPlan, UserId};
use crate::{Result, TearsError};

/// One user's model-facing view of the data. All item references are catalog
/// indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserExample {
    pub user: UserId,
    /// Index into the interactions' user list.
    pub index: usize,
    /// Raw ratings of the input items.
    pub input: Vec<(usize, f64)>,
    /// Input items, oldest first; these are masked at ranking time.
    pub seen: Vec<usize>,
    /// Training targets: every positive of the user.
    pub targets: Vec<usize>,
    /// Held-out positives among the eval items.
    pub relevant: Vec<usize>,
    /// Eval items, oldest first.
    pub eval: Vec<usize>,
}

/// Builds examples for every user with `role`, in interactions order.
pub fn build_examples(dataset: &Dataset, plan: &SplitPlan, role: Role) -> Result<Vec<UserExample>> {
    let inter = &dataset.interactions;
    let lookup = |id: &String| dataset.catalog.index_of(id).ok_or_else(|| TearsError::UnknownItem(id.clone()));
    let mut out = Vec::new();
    for u in plan.users_with_role(inter, role) {
        let user = inter.users()[u].user.clone();
        let split = &plan.users[&user];
        let seen: Vec<usize> = split.input_items.iter().map(lookup).collect::<Result<_>>()?;
        let eval: Vec<usize> = split.eval_items.iter().map(lookup).collect::<Result<_>>()?;
        let input = seen
            .iter()
            .map(|&i| {
                inter
                    .rating_of(u, i)
                    .map(|r| (i, f64::from(r)))
                    .ok_or_else(|| TearsError::invalid(format!("split lists unrated item for user {user}")))
            })
            .collect::<Result<_>>()?;
        let all: Vec<usize> = inter.users()[u].ratings.iter().map(|r| r.0).collect();
        out.push(UserExample {
            targets: inter.positives(u, &all),
            relevant: inter.positives(u, &eval),
            user,
            index: u,
            input,
            seen,
            eval,
        });
    }
    Ok(out)
}

/// Dense `(batch, n_items)` rating rows.
pub fn dense_inputs(examples: &[&UserExample], n_items: usize) -> Array2<f64> {
    let mut x = Array2::zeros((examples.len(), n_items));
    for (b, e) in examples.iter().enumerate() {
        for &(i, r) in &e.input {
            x[[b, i]] = r;
        }
    }
    x
}

/// Dense binary `(batch, n_items)` target rows.
pub fn dense_targets(examples: &[&UserExample], n_items: usize) -> Array2<f64> {
    let mut y = Array2::zeros((examples.len(), n_items));
    for (b, e) in examples.iter().enumerate() {
        for &i in &e.targets {
            y[[b, i]] = 1.0;
        }
    }
    y
}
