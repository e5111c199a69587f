//! Ratings and catalog ingestion, filtering, implicit targets and
//! strong-generalization splits.

mod catalog;
mod examples;
mod interactions;
mod split;
pub mod synthetic;

pub use catalog::{load_catalog, CatalogFormat, Item, ItemCatalog};
pub use examples::{build_examples, dense_inputs, dense_targets, UserExample};
pub use interactions::{
    binarize, filter_min_counts, load_and_filter, load_ratings, Dataset, Interactions, RatingRecord,
    RatingsFormat, UserRatings,
};
pub use split::{make_splits, Role, SplitPlan, UserSplit, SPLIT_FORMAT_VERSION};

pub type UserId = String;
pub type ItemId = String;
/// Dense index into the genre vocabulary.
pub type GenreId = usize;

/// Splits a line on a (possibly multi-character) delimiter.
pub(crate) fn split_fields<'a>(line: &'a str, delim: &str) -> Vec<&'a str> {
    line.split(delim).collect()
}
