//! Scrutable recommendation with editable natural-language user summaries.
//!
//! A frozen autoencoder encoder maps a user's rating history onto a diagonal
//! Gaussian latent. A text encoder maps the user's summary onto the same
//! latent space, aligned with a closed-form Gaussian transport cost, and a
//! shared decoder turns any convex mix of the two latents into a ranking.
//! Editing the summary therefore edits the recommendations.
//!
//! Module map:
//!
//! * [`dataio`]: catalogs, ratings, filtering, implicit targets, splits.
//! * [`summaries`]: prompt pipelines, LLM client, offline synthesizer, text statistics.
//! * [`models`]: backbones, text and genre encoders, shared decoder, checkpoints.
//! * [`training`]: the three-term objective and the training loop.
//! * [`ranking`]: latent mixing, guidance arithmetic, masked top-k lists.
//! * [`metrics`]: recall, NDCG, genre-wise NDCG, deltas and aggregation.
//! * [`bench`]: the controllability task runners and the alpha sweep.
//! * [`pipeline`]: end-to-end experiment wiring.

pub mod bench;
pub mod dataio;
pub mod error;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod par;
pub mod pipeline;
pub mod ranking;
pub mod summaries;
pub mod training;
mod util;

pub use error::{Result, TearsError};
pub use util::derive_seed;
